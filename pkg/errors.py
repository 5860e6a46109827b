from __future__ import annotations


class EkmanError(Exception):
    """
    Base class of every error raised by the Ekman layer tools.
    error_class is the machine-readable failure class shown by the CLI.
    """

    error_class: str = "numerical"

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message

    def __str__(self) -> str:
        return self.message


class ConfigError(EkmanError, ValueError):
    """
    Raised when a scenario configuration is invalid.
    Holds every problem found, not just the first one.
    """

    error_class = "config"
    errors: list[str]

    def __init__(self, errors: list[str]) -> None:
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


class SurfaceError(EkmanError, ValueError):
    """
    Raised for unknown presets and for sampled surfaces that are not periodic.
    """

    error_class = "surface"
    location: tuple[int, int] | None

    def __init__(self, message: str, location: tuple[int, int] | None = None) -> None:
        if location is not None:
            message = f"{message} at grid index (i={location[0]}, j={location[1]})"
        super().__init__(message)
        self.location = location


class GridError(EkmanError, ValueError):
    """
    Raised when grids are invalid or do not match.
    """

    error_class = "usage"


class CflViolationError(EkmanError):
    """
    Raised when the requested time step breaks the advective CFL bound.
    """

    error_class = "numerical"
    required_dt: float

    def __init__(self, dt: float, required_dt: float) -> None:
        super().__init__(f"time step dt={dt:.6g} violates the CFL bound, use dt <= {required_dt:.6g}")
        self.required_dt = required_dt


class NumericalBlowupError(EkmanError):
    """
    Raised when NaN or inf appears in a state. snapshot is the last finite state.
    """

    error_class = "numerical"

    def __init__(self, message: str, snapshot: object = None) -> None:
        super().__init__(message)
        self.snapshot = snapshot


class QuadratureError(EkmanError):
    """
    Raised when a layer profile has not decayed at the end of the stretched axis.
    """

    error_class = "numerical"
    z_max: float

    def __init__(self, z_max: float, tail: float, tolerance: float) -> None:
        super().__init__(
            f"layer profile tail {tail:.3e} exceeds tolerance {tolerance:.1e} at z_max={z_max:g}, increase z_max"
        )
        self.z_max = z_max


class CorrectorSupportError(EkmanError):
    """
    Raised when a divergence defect is not supported away from the walls.
    """

    error_class = "numerical"


class ResidualBlowupError(EkmanError):
    """
    Raised when the evaluated residual is of the size of its singular terms.
    """

    error_class = "numerical"
    term: str

    def __init__(self, term: str, ratio: float) -> None:
        super().__init__(
            f"residual does not cancel its singular terms (ratio {ratio:.3e}), largest term: {term}"
        )
        self.term = term


class HorizonError(EkmanError, ValueError):
    """
    Raised when a trajectory is too short or too sparse for rate fitting.
    """

    error_class = "usage"


class VerificationFailure(EkmanError):
    """
    Raised in strict mode when a verification assertion fails.
    """

    error_class = "verification"


class FieldIOError(EkmanError):
    """
    Raised when an input or output file cannot be read, parsed or written.
    """

    error_class = "io"


class UsageError(EkmanError, ValueError):
    """
    Raised for malformed command lines and requests the scenario cannot serve.
    """

    error_class = "usage"
