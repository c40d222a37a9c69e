class CondLKError(Exception):
    """Base class for all errors raised by condlk."""


class HomographyDivideByZero(CondLKError):
    pass


class FamilyMismatch(CondLKError):
    pass


class SingularWarp(CondLKError):
    pass


class DegenerateConfiguration(CondLKError):
    pass


class WrongChannelCount(CondLKError):
    pass


class ShapeMismatch(CondLKError):
    pass


class RankDeficient(CondLKError):
    """The steepest-descent matrix lacks full column rank (aperture problem)."""


class SingularSystem(CondLKError):
    pass


class UnderdeterminedSite(CondLKError):
    def __init__(self, site, message=None):
        self.site = site
        super().__init__(message or f"per-site normal matrix singular at site {site}")


class SingularHessian(CondLKError):
    pass


class LMStalled(CondLKError):
    pass


class EmptyIntersection(CondLKError):
    pass


class LayerError(CondLKError):
    """Wraps a trainer failure with the index of the layer being trained."""

    def __init__(self, layer, cause):
        self.layer = layer
        self.cause = cause
        super().__init__(f"layer {layer}: {type(cause).__name__}: {cause}")
