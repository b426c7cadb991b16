"""
Dense linear-algebra kernels shared by every solver.
"""
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .errors import DimensionMismatchError, InvalidArgumentError
from .schemas import DesignMatrix, Residual, SparseSolution


def as_vector(v, length: int, what: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array of the given length"""
    arr = np.asarray(v, dtype=np.float64).reshape(-1)
    if arr.size != length:
        raise DimensionMismatchError(what, length, arr.size)
    return arr


def _check_solution(A: DesignMatrix, x: SparseSolution) -> None:
    if x.m != A.m:
        raise DimensionMismatchError("solution length", A.m, x.m)


def matvec(A: DesignMatrix, x: SparseSolution) -> np.ndarray:
    """
    Compute Ax touching only the columns in x.support.

    Returns:
        Length-n vector
    """
    _check_solution(A, x)
    if x.nnz == 0:
        return np.zeros(A.n)
    return A.columns(x.support) @ x.values


def correlate(A: DesignMatrix, r: Union[Residual, np.ndarray]) -> np.ndarray:
    """g = A^T r"""
    vec = r.vec if isinstance(r, Residual) else r
    vec = as_vector(vec, A.n, "residual")
    return A.data.T @ vec


def residual(A: DesignMatrix, b: np.ndarray, x: SparseSolution) -> Residual:
    b = as_vector(b, A.n, "b")
    return Residual(b - matvec(A, x))


def objective(A: DesignMatrix, b: np.ndarray, x: SparseSolution, lam: float) -> float:
    """
    f(x) = lam*||x||_1 + 0.5*||b - Ax||^2.

    Args:
        A: design matrix
        b: measurement vector
        x: sparse coefficients
        lam: l1 weight, >= 0

    Returns:
        Objective value; 0.5*||b||^2 for x = 0
    """
    if lam < 0:
        raise InvalidArgumentError(f"lambda must be >= 0, got {lam}")
    r = residual(A, b, x).vec
    return float(lam * x.l1_norm() + 0.5 * (r @ r))


def restricted_lstsq(
    A: DesignMatrix, b: np.ndarray, indices: Sequence[int]
) -> Tuple[np.ndarray, int]:
    """
    Least-squares coefficients over the columns in ``indices``.

    Returns:
        (coefficients, numerical rank of A_I); minimum-norm when rank deficient
    """
    b = as_vector(b, A.n, "b")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return np.empty(0), 0
    coef, _, rank, _ = linalg.lstsq(A.columns(idx), b, lapack_driver="gelsd")
    return coef, int(rank)


def top_k(magnitudes: np.ndarray, k: int) -> np.ndarray:
    """
    Indices of the k largest entries; ties go to the lower index.
    Entries equal to -inf are never returned.
    """
    mag = np.asarray(magnitudes, dtype=np.float64)
    idx = np.flatnonzero(mag > -np.inf)
    order = idx[np.lexsort((idx, -mag[idx]))]
    return order[: max(int(k), 0)]


@dataclass
class FlopCounter:
    """
    Floating-point operation tally for one decode.
    correlation counts the per-iteration work of forming A^T residual;
    setup counts one-off work such as A^T b or the Gram matrix.
    """
    correlation: int = 0
    setup: int = 0
    correlation_calls: int = 0

    def add_correlation(self, flops: int) -> None:
        self.correlation += int(flops)
        self.correlation_calls += 1

    def add_setup(self, flops: int) -> None:
        self.setup += int(flops)

    @property
    def total(self) -> int:
        return self.correlation + self.setup

    def __add__(self, other: "FlopCounter") -> "FlopCounter":
        return FlopCounter(
            self.correlation + other.correlation,
            self.setup + other.setup,
            self.correlation_calls + other.correlation_calls,
        )
