class InvalidArgumentError(ValueError):
    pass


class DatasetFormatError(ValueError):
    """Raised when a dataset file or manifest does not match the canonical format."""


class TrainingError(RuntimeError):
    """Raised when training diverges (non-finite loss)."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
