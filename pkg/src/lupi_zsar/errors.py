"""Exception hierarchy.

Each family maps to a CLI exit code: configuration problems exit 1, bad
input data exits 2 and numerical failures (non-finite values) exit 3.
"""


class ZSARError(Exception):
    exit_code = 1


class ConfigError(ZSARError, ValueError):
    exit_code = 1


class DataError(ZSARError, ValueError):
    exit_code = 2


class EmbeddingFormatError(DataError):
    """Malformed word-embedding text file."""


class EmptyLabelError(DataError):
    pass


class UnresolvablePhraseError(DataError):
    def __init__(self, tokens, context=None):
        self.tokens = list(tokens)
        self.context = context
        msg = f"no token resolvable in embedding table: {self.tokens}"
        if context is not None:
            msg = f"{context}: {msg}"
        super().__init__(msg)


class MissingPIError(DataError):
    """A class has no object detections to derive privileged information from."""


class CheckpointError(DataError):
    pass


class NumericalError(ZSARError, ArithmeticError):
    exit_code = 3


class ShapeError(ZSARError, ValueError):
    exit_code = 1


class StaleGraphError(ZSARError, RuntimeError):
    exit_code = 1
