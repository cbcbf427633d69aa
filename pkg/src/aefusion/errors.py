"""Exception hierarchy shared across the package."""


class FusionError(Exception):
    """Base class for all errors raised by aefusion."""


class IngestionError(FusionError):
    """Malformed input table (missing or non-numeric cell)."""


class DuplicateLocationError(FusionError):
    pass


class ArityError(FusionError):
    """Too few data products to fuse."""


class ValidationError(FusionError):
    """Data violate an invariant, e.g. negative values under a RELU link."""


class ConfigurationError(FusionError):
    pass


class StructuralError(FusionError):
    """Arrays whose shapes do not agree with the architecture or grid."""


class NumericalOverflowError(FusionError, ArithmeticError):
    def __init__(self, layer, message=None):
        self.layer = layer
        super().__init__(message or f"non-finite value produced at layer {layer}")


class DomainError(FusionError, ValueError):
    pass


class InsufficientSamplesError(FusionError):
    pass


class UndefinedMetricError(FusionError):
    pass
