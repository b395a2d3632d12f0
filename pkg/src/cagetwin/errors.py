"""Exception hierarchy shared by all subsystems."""


class CageTwinError(Exception):
    """Base class for every error raised by the package."""


class DimensionMismatch(CageTwinError, ValueError):
    pass


class NotPositiveDefinite(CageTwinError, ArithmeticError):
    pass


class FitFailure(CageTwinError, RuntimeError):
    def __init__(self, message, level=None):
        if level is not None:
            message = f"level {level}: {message}"
        super().__init__(message)
        self.level = level


class DegenerateData(CageTwinError, ValueError):
    pass


class NestedViolation(CageTwinError, ValueError):
    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)


class EmptyLevel(CageTwinError, ValueError):
    pass


class LevelOrderError(CageTwinError, ValueError):
    pass


class InvalidSampleCount(CageTwinError, ValueError):
    pass


class InconsistentNodeCount(CageTwinError, ValueError):
    pass


class EmptyScenario(CageTwinError, ValueError):
    pass


class NumericalFailure(CageTwinError, ArithmeticError):
    pass


class AllZeroVariance(CageTwinError, ValueError):
    pass


class InvalidGeometry(CageTwinError, ValueError):
    pass


class InvalidParams(CageTwinError, ValueError):
    pass


class InvalidRange(CageTwinError, ValueError):
    pass


class InvalidSensorIndex(CageTwinError, IndexError):
    pass


class NoConvergence(CageTwinError, ArithmeticError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class AsymmetricInput(CageTwinError, ValueError):
    pass


class Divergence(CageTwinError, ArithmeticError):
    def __init__(self, epoch):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class EmptyDataset(CageTwinError, ValueError):
    pass


class UnreadableSource(CageTwinError, OSError):
    pass


class SchemaViolation(CageTwinError, ValueError):
    pass


class ModelMissing(CageTwinError, KeyError):
    pass


class InsufficientHfData(CageTwinError, ValueError):
    pass


class StageFailure(CageTwinError, RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class LengthMismatch(CageTwinError, ValueError):
    pass


class CorruptBundle(CageTwinError, ValueError):
    pass


class VersionUnsupported(CageTwinError, ValueError):
    pass


class PredictionError(CageTwinError, RuntimeError):
    def __init__(self, quantity, cause):
        super().__init__(f"prediction failed for {quantity}: {cause}")
        self.quantity = quantity
        self.cause = cause
