"""Exception types shared by the pricing engines."""


class TermStructError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(TermStructError, ValueError):
    """A model or payoff parameter is missing or outside its admissible range."""

    def __init__(self, parameter: str, message: str):
        self.parameter = parameter
        super().__init__(f"{parameter}: {message}")


class DomainError(TermStructError, ValueError):
    """A function was evaluated outside the set where it is defined."""


class UnsupportedModelError(TermStructError):
    """The requested operation does not apply to the given model."""


class RefusedRunError(TermStructError):
    """A solve was refused because its preconditions do not hold."""


class StabilityError(RefusedRunError):
    """An explicit or weakly implicit theta scheme violates its CFL bound."""

    def __init__(self, ratio: float, limit: float = 1.0):
        self.ratio = ratio
        super().__init__(
            f"CFL ratio {ratio:.6g} exceeds {limit:g}; refine the time grid or use theta >= 0.5"
        )


class DivergenceError(TermStructError, ArithmeticError):
    """The backward sweep produced non-finite values."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite solution values at time step {step}")


class ConfigError(TermStructError, ValueError):
    """A run configuration failed validation; ``errors`` lists field paths."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
