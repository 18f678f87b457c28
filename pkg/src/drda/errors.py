"""Exception hierarchy. ``DataError`` subclasses map to CLI exit code 2."""


class DrdaError(Exception):
    pass


class DataError(DrdaError):
    """Bad input data: malformed files, misaligned corpora, invalid ids."""


class AlignmentError(DataError):
    pass


class EncodingError(DataError):
    def __init__(self, path, line_no, reason=""):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: invalid UTF-8 {reason}".rstrip())


class ParseError(DataError):
    def __init__(self, message, line_no=None, path=None):
        self.line_no = line_no
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line_no is not None:
            where += f"{line_no}:"
        super().__init__(f"{where} {message}".strip())


class TrainingError(DataError):
    pass


class SizeError(DataError):
    """Requested vocabulary size is not realizable by the model."""


class VocabularyError(DataError):
    pass


class DomainError(DrdaError, ValueError):
    """Input outside an operation's mathematical domain."""


class ShapeError(DrdaError, ValueError):
    pass


class ConfigError(DrdaError, ValueError):
    pass
