"""Exception hierarchy shared by all pipeline stages."""

from __future__ import annotations


class CastgraphError(Exception):
    """Base class for all errors raised by this package."""


class MissingFile(CastgraphError):
    def __init__(self, path):
        super().__init__(f"required file missing: {path}")
        self.path = str(path)


class MalformedRecord(CastgraphError):
    def __init__(self, source, line, reason):
        super().__init__(f"{source}:{line}: {reason}")
        self.source = str(source)
        self.line = line
        self.reason = reason


class DimensionMismatch(CastgraphError):
    def __init__(self, expected, got, context=""):
        detail = f" ({context})" if context else ""
        super().__init__(f"expected dimension {expected}, got {got}{detail}")
        self.expected = expected
        self.got = got


class DanglingReference(CastgraphError):
    def __init__(self, ref_id, context=""):
        detail = f" in {context}" if context else ""
        super().__init__(f"unresolved reference {ref_id!r}{detail}")
        self.ref_id = ref_id


class ZeroVector(CastgraphError):
    pass


class TooFewPoints(CastgraphError):
    def __init__(self, n, required):
        super().__init__(f"need at least {required} points, got {n}")
        self.n = n
        self.required = required


class NoSegments(CastgraphError):
    pass


class LengthMismatch(CastgraphError):
    def __init__(self, len_a, len_b):
        super().__init__(f"label vectors differ in length: {len_a} vs {len_b}")


class KeyMismatch(CastgraphError):
    pass


class EmptyReference(CastgraphError):
    pass


class InsufficientHistory(CastgraphError):
    pass


class InfeasibleConfig(CastgraphError):
    pass


class PipelineStageError(CastgraphError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
