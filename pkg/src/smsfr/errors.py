"""Exception types raised across the package."""


class SmsfrError(Exception):
    """Base class for all package errors."""


class ParseError(SmsfrError, ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class DuplicateDateError(SmsfrError, ValueError):
    pass


class ValidationError(SmsfrError, ValueError):
    pass


class DomainError(SmsfrError, ValueError):
    pass


class FeatureError(SmsfrError, ValueError):
    pass


class CapacityError(SmsfrError, ValueError):
    pass


class EncodingError(SmsfrError, ValueError):
    pass


class ImageFormatError(SmsfrError, ValueError):
    pass


class ShapeError(SmsfrError, ValueError):
    pass


class ConfigError(SmsfrError, ValueError):
    pass


class CheckpointFormatError(SmsfrError, ValueError):
    pass


class IncompatibleVersionError(CheckpointFormatError):
    pass


class TrainingError(SmsfrError, RuntimeError):
    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        self.epoch = epoch
        self.batch = batch
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if batch is not None:
            where.append(f"batch {batch}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
