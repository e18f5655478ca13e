"""Exception types shared across the package."""


class SkewprodError(Exception):
    pass


class ConfigurationError(SkewprodError, ValueError):
    """Invalid parameters, distribution descriptors or config files."""


class WindowError(SkewprodError, IndexError):
    """A computation needed payloads outside the sampled orbit window."""

    def __init__(self, message, required_radius=None):
        if required_radius is not None:
            message = f"{message} (requires window radius N >= {required_radius})"
        super().__init__(message)
        self.required_radius = required_radius


class NumericalDomainError(SkewprodError, FloatingPointError):
    """A fibre map produced NaN."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} at step {step}"
        super().__init__(message)
        self.step = step


class DomainError(SkewprodError, ValueError):
    pass


class EmptySubsectionError(SkewprodError):
    pass


class OracleInapplicableError(SkewprodError):
    pass


class DegenerateFibreError(SkewprodError):
    """Pullback clouds escaped to infinity; the seed box missed the attractor."""


class TruncationWarning(UserWarning):
    """A supremum over n was attained at the truncation boundary N_max."""
