"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: DataError -> 2, NumericalError -> 3.
"""


class AlssnnError(Exception):
    """Base class for all package-specific errors."""


class DataError(AlssnnError):
    """Malformed files, dimension mismatches, invalid dataset contents."""


class NumericalError(AlssnnError):
    """Rank deficiency, divergence, infeasibility and friends."""


class DivergenceError(NumericalError):
    """A free-run simulation left the divergence bound.

    Attributes
    ----------
    step : int
        First step index at which the state norm exceeded the bound.
    """

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"simulation diverged at step {step}")


class InfeasibleError(NumericalError):
    """No stability certificate found; carries the best candidate's diagnostics."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
