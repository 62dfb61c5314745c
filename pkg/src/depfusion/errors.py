"""Exception hierarchy shared across the pipeline."""


class DepfusionError(Exception):
    """Base class for all pipeline errors."""


class DegenerateLandmarksError(DepfusionError, ValueError):
    pass


class InvalidInputError(DepfusionError, ValueError):
    pass


class InvalidCropError(DepfusionError, ValueError):
    pass


class DetectorBackendError(DepfusionError, RuntimeError):
    pass


class NoFaceError(DepfusionError, LookupError):
    pass


class LabelError(DepfusionError, ValueError):
    pass


class ManifestError(DepfusionError, ValueError):
    """Raised with a list of offending entries in ``offenders``."""

    def __init__(self, message, offenders=()):
        self.offenders = list(offenders)
        if self.offenders:
            message = f"{message}: {', '.join(map(str, self.offenders))}"
        super().__init__(message)


class ParameterError(DepfusionError, ValueError):
    pass


class NumericError(DepfusionError, FloatingPointError):
    pass


class InitializationError(DepfusionError, RuntimeError):
    pass


class CheckpointError(DepfusionError, RuntimeError):
    pass


class ConfigurationError(DepfusionError, RuntimeError):
    pass


class PairingError(DepfusionError, ValueError):
    pass


class ProtocolError(DepfusionError, ValueError):
    pass


class NoPredictionError(DepfusionError, ValueError):
    pass
