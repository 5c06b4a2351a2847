"""Exception hierarchy shared by every module."""


class FactorizeNetError(Exception):
    pass


class RejectedInputError(FactorizeNetError, ValueError):
    """Input tensor has the wrong shape, range or content for the operation."""


class ConfigurationError(FactorizeNetError, ValueError):
    """A layer, architecture or pipeline was configured inconsistently."""


class IngestionError(FactorizeNetError, IOError):
    """A dataset file is missing or truncated."""

    def __init__(self, message, path=None, offset=None):
        detail = message
        if path is not None:
            detail += f" [file={path}"
            if offset is not None:
                detail += f", offset={offset}"
            detail += "]"
        super().__init__(detail)
        self.path = None if path is None else str(path)
        self.offset = offset


class CorruptRecordError(IngestionError):
    pass


class CorruptCheckpointError(FactorizeNetError, IOError):
    pass


class TrainingDivergedError(FactorizeNetError, RuntimeError):
    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"{message} (first non-finite activation at {layer})")
        self.layer = layer
