"""Exception types shared across the package.

Every error raised on a documented contract violation derives from
:class:`CrossmediaError`, so CLI code can separate data problems
(exit code 1) from programming errors.
"""


class CrossmediaError(Exception):
    """Base class for all contract violations raised by this package."""


class MalformedLine(CrossmediaError):
    """A structurally invalid line in an input file."""

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class DimensionMismatch(CrossmediaError):
    """Vectors of different lengths were combined."""


class EmptyAfterPreprocessing(CrossmediaError):
    """Query text normalized to zero tokens."""


class EmptyQuery(CrossmediaError):
    """An operation requiring a non-empty query received an empty one."""


class EmptyQueryEncoding(CrossmediaError):
    """No query word is covered by the model vocabulary."""


class AllWordsOutOfVocabulary(CrossmediaError):
    """No query word has an embedding vector."""


class NoResolvableLabel(CrossmediaError):
    """No predicted label could be embedded."""


class ZeroVector(CrossmediaError):
    """Cosine similarity of a zero-norm vector is undefined."""


class PairSetMismatch(CrossmediaError):
    """Score tables do not cover an identical (query, image) pair set."""


class EmptyJudgments(CrossmediaError):
    """No relevance judgments available for the requested queries."""


class QuerySetMismatch(CrossmediaError):
    """Paired per-query score sets do not share the same query ids."""


class InvalidGrade(CrossmediaError):
    """A relevance grade outside {0, 2, 3}."""


class ConfigError(CrossmediaError):
    """Invalid configuration value."""
