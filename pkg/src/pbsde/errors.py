"""Exception types shared across the solver modules."""


class InvalidParameterError(ValueError):
    """A numeric precondition (grid, intensity, bound, size guard) was violated."""


class NumericDomainError(ArithmeticError):
    """A driver or recursion produced a non-finite value.

    Carries the time step and lattice node where the value first went bad.
    """

    def __init__(self, message: str, step: int, node: int):
        super().__init__(f"{message} at step {step}, node {node}")
        self.step = step
        self.node = node


class ConfigError(ValueError):
    """An experiment configuration failed validation.

    ``path`` is the dotted field path (e.g. ``poisson.intensity``) that
    triggered the failure, so CLI diagnostics can point at the offending key.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
