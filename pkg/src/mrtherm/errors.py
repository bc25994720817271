"""Exception hierarchy shared by all modules."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


class ConfigError(DomainError):
    """A configuration document failed validation.

    The offending key path is kept in ``field`` so callers can report it.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericalError(ArithmeticError):
    """A numerical procedure produced an unusable result."""


class SolverDivergence(NumericalError):
    """The explicit bioheat integration blew up."""
