"""
Exception hierarchy for the sparse recovery toolkit.
Every error raised by the library derives from SparseRecoveryError.
"""


class SparseRecoveryError(Exception):
    """Base class for all library errors"""


class InvalidArgumentError(SparseRecoveryError, ValueError):
    """A parameter is outside its documented range"""


class DimensionMismatchError(SparseRecoveryError, ValueError):
    """Vector or matrix shapes do not agree"""

    def __init__(self, what: str, expected, got):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected {expected}, got {got}")


class AtomIndexError(SparseRecoveryError, IndexError):
    """Atom index outside [0, m)"""

    def __init__(self, index: int, m: int):
        self.index = index
        self.m = m
        super().__init__(f"atom index {index} out of range for m={m}")


class SolverDivergedError(SparseRecoveryError):
    """Objective became non-finite during an iteration"""


class CapacityExceededError(SparseRecoveryError):
    """A precomputation would exceed its configured size cap"""


class MatrixFormatError(SparseRecoveryError):
    """A matrix file is malformed or has the wrong magic/version"""
