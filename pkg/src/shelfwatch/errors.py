"""Exception types shared across modules."""


class ShelfwatchError(Exception):
    """Base class for every error raised by shelfwatch."""


class FileMissing(ShelfwatchError, FileNotFoundError):
    """An input file does not exist."""

    def __init__(self, path):
        self.path = path
        super().__init__(f"file not found: {path}")
