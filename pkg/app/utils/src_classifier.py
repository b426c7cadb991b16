"""
Sparse-representation classification over a labeled training dictionary.

A test vector is coded over the training columns (bgmp, bomp, pg-lasso, l2,
l2l2) and assigned the class whose coefficients alone reconstruct it with the
smallest residual.
"""
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from .baselines import L2Predictor, RidgePredictor, pg_lasso_full
from .batch import BOMP_DEFAULT_K, GramCache, bgmp_solve, bomp_solve, build_gram
from .errors import DimensionMismatchError, InvalidArgumentError, SparseRecoveryError
from .harness import default_lambda
from .schemas import ClassifyReport, DesignMatrix, GmpConfig, SparseSolution, StopRule

CLASSIFIER_SOLVERS = ("bgmp", "bomp", "pg-lasso", "l2", "l2l2")


@dataclass
class ClassifierConfig:
    """Coding settings; defaults follow the face-recognition protocol (rho=10, k<=600, 1e-6 residual stop)"""
    gmp: GmpConfig = field(default_factory=lambda: GmpConfig(rho=10, max_atoms=600))
    residual_tol: float = 1e-6
    bomp_k: int = BOMP_DEFAULT_K
    ridge_lambda: float = 1e-3
    lasso_lambda: Optional[float] = None
    workers: int = 1

    def stops(self) -> List[StopRule]:
        return [StopRule.relative_residual(self.residual_tol), StopRule.relative_delta(self.gmp.epsilon)]


@dataclass(eq=False)
class LabeledDictionary:
    """Training columns with one class id per column"""
    A: DesignMatrix
    labels: np.ndarray
    class_index: Dict[Any, np.ndarray] = field(init=False)

    def __post_init__(self):
        self.labels = np.asarray(self.labels).reshape(-1)
        if self.labels.size != self.A.m:
            raise DimensionMismatchError("labels", self.A.m, self.labels.size)
        classes = sorted(set(self.labels.tolist()))
        if len(classes) < 2:
            raise InvalidArgumentError(f"need at least 2 classes, got {len(classes)}")
        self.class_index = {c: np.flatnonzero(self.labels == c) for c in classes}

    @classmethod
    def from_columns(cls, X: np.ndarray, labels: Sequence, normalize: bool = True) -> "LabeledDictionary":
        """Build from raw training columns, l2-normalizing them unless told otherwise"""
        A = DesignMatrix(X)
        return cls(A.normalized() if normalize else A, np.asarray(labels))

    @property
    def classes(self) -> List[Any]:
        return list(self.class_index)


def _stride(rate: Union[float, str, Fraction]) -> int:
    frac = rate if isinstance(rate, Fraction) else Fraction(str(rate)).limit_denominator(10**6)
    if not 0 < frac <= 1:
        raise InvalidArgumentError(f"rate must lie in (0, 1], got {rate}")
    return math.ceil(1 / frac)


def downsample(X: np.ndarray, shape: Tuple[int, int], rate: Union[float, str, Fraction]) -> np.ndarray:
    """
    Strided decimation of vectorized h x w images (row-major), one per column.

    Args:
        X: (h*w) x N matrix
        shape: (h, w)
        rate: sampling rate in (0, 1]; every ceil(1/rate)-th row and column is kept

    Returns:
        (h'*w') x N matrix, h' = ceil(h / stride)
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    h, w = int(shape[0]), int(shape[1])
    if X.shape[0] != h * w:
        raise DimensionMismatchError("image length", h * w, X.shape[0])
    stride = _stride(rate)
    grids = X.T.reshape(-1, h, w)[:, ::stride, ::stride]
    if grids.shape[1] == 0 or grids.shape[2] == 0:
        raise InvalidArgumentError(f"rate {rate} leaves an empty grid for {h}x{w}")
    return grids.reshape(grids.shape[0], -1).T.copy()


def split_train_test(
    X: np.ndarray, labels: Sequence, train_frac: float, seed: int = 0
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-class random split keeping round(train_frac * count) columns for training"""
    if not 0 < train_frac < 1:
        raise InvalidArgumentError(f"train_frac must lie in (0, 1), got {train_frac}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in sorted(set(labels.tolist())):
        members = rng.permutation(np.flatnonzero(labels == c))
        n_train = min(max(1, int(round(train_frac * members.size))), max(members.size - 1, 1))
        train_idx.extend(members[:n_train])
        test_idx.extend(members[n_train:])
    train_idx = np.sort(np.asarray(train_idx, dtype=np.int64))
    test_idx = np.sort(np.asarray(test_idx, dtype=np.int64))
    return X[:, train_idx], labels[train_idx], X[:, test_idx], labels[test_idx]


def synthetic_subspace_dataset(
    n_classes: int = 5,
    dim: int = 200,
    subspace_dim: int = 4,
    n_train: int = 40,
    n_test: int = 20,
    noise: float = 0.01,
    duplicate_frac: float = 0.0,
    duplicate_noise: float = 1e-4,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Classes living on random low-dimensional subspaces.

    Test columns are subspace points plus Gaussian noise of relative size ``noise``.
    duplicate_frac of each class's training columns are replaced by tiny
    perturbations of other training columns of that class, which makes A^T A
    badly conditioned.

    Returns:
        (X_train, y_train, X_test, y_test)
    """
    rng = np.random.default_rng(seed)
    train_cols, train_labels, test_cols, test_labels = [], [], [], []
    for c in range(n_classes):
        basis, _ = np.linalg.qr(rng.standard_normal((dim, subspace_dim)))
        train = basis @ rng.standard_normal((subspace_dim, n_train))
        n_dup = int(round(duplicate_frac * n_train))
        if n_dup:
            sources = rng.choice(n_train - n_dup, size=n_dup)
            originals = train[:, sources]
            jitter = rng.standard_normal(originals.shape) / np.sqrt(dim)
            train[:, n_train - n_dup :] = originals + duplicate_noise * np.linalg.norm(originals, axis=0) * jitter
        test = basis @ rng.standard_normal((subspace_dim, n_test))
        test += noise * np.linalg.norm(test, axis=0) * rng.standard_normal(test.shape) / np.sqrt(dim)
        train_cols.append(train)
        test_cols.append(test)
        train_labels.extend([c] * n_train)
        test_labels.extend([c] * n_test)
    return np.hstack(train_cols), np.asarray(train_labels), np.hstack(test_cols), np.asarray(test_labels)


class SparseRepresentationClassifier:
    """
    Residual-rule classifier. fit() precomputes whatever the solver can share
    across samples (Gram cache, pseudo-inverse or ridge operator).
    """

    def __init__(self, dictionary: LabeledDictionary, solver: str = "bgmp", cfg: Optional[ClassifierConfig] = None):
        if solver not in CLASSIFIER_SOLVERS:
            raise InvalidArgumentError(f"solver must be one of {CLASSIFIER_SOLVERS}, got {solver!r}")
        self.dictionary = dictionary
        self.solver = solver
        self.cfg = cfg or ClassifierConfig()
        self.cache: Optional[GramCache] = None
        self.predictor = None

    def fit(self) -> "SparseRepresentationClassifier":
        A = self.dictionary.A
        if self.solver in ("bgmp", "bomp"):
            self.cache = build_gram(A)
        elif self.solver == "l2":
            self.predictor = L2Predictor().fit(A)
        elif self.solver == "l2l2":
            self.predictor = RidgePredictor(self.cfg.ridge_lambda).fit(A)
        return self

    def code(self, y: np.ndarray) -> Tuple[np.ndarray, int]:
        """Coefficients of y over the dictionary and the sparsity to report"""
        A = self.dictionary.A
        if self.solver in ("bgmp", "bomp") and self.cache is None:
            self.fit()
        if self.solver in ("l2", "l2l2") and self.predictor is None:
            self.fit()

        if self.solver == "bgmp":
            Atb, bnorm2 = self.cache.signal(y)
            x, _ = bgmp_solve(self.cache, Atb, bnorm2, self.cfg.gmp, self.cfg.stops())
            return x.to_dense(), x.nnz
        if self.solver == "bomp":
            Atb, _ = self.cache.signal(y)
            x = bomp_solve(self.cache, Atb, min(self.cfg.bomp_k, A.n))
            return x.to_dense(), x.nnz
        if self.solver == "pg-lasso":
            lam = self.cfg.lasso_lambda or default_lambda(A, y)
            if lam <= 0:
                return np.zeros(A.m), 0
            x = pg_lasso_full(A, y, lam)
            return x.to_dense(), x.nnz
        return self.predictor.predict(y), A.m

    def class_residuals(self, y: np.ndarray, coef: np.ndarray) -> Dict[Any, float]:
        A = self.dictionary.A.data
        return {
            c: float(np.linalg.norm(y - A[:, idx] @ coef[idx]))
            for c, idx in self.dictionary.class_index.items()
        }

    def classify(self, y: np.ndarray) -> Tuple[Any, np.ndarray]:
        """
        Returns:
            (predicted class, coefficient vector); ties go to the first class in sorted order
        """
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.size != self.dictionary.A.n:
            raise DimensionMismatchError("test vector", self.dictionary.A.n, y.size)
        coef, _ = self.code(y)
        residuals = self.class_residuals(y, coef)
        best = min(residuals, key=lambda c: residuals[c])
        return best, coef

    def evaluate(self, X_test: np.ndarray, y_test: Sequence) -> Tuple[ClassifyReport, pd.DataFrame]:
        """
        Classify every test column; failures count as misclassifications.

        Returns:
            (ClassifyReport, per-sample predictions frame)
        """
        X_test = np.asarray(X_test, dtype=np.float64)
        if X_test.ndim == 1:
            X_test = X_test[:, None]
        y_test = np.asarray(y_test).reshape(-1)
        if X_test.shape[1] == 0:
            raise InvalidArgumentError("test set is empty")
        if y_test.size != X_test.shape[1]:
            raise DimensionMismatchError("test labels", X_test.shape[1], y_test.size)
        self.fit()

        def one(i: int):
            started = time.perf_counter()
            try:
                y = X_test[:, i]
                coef, sparsity = self.code(y)
                residuals = self.class_residuals(y, coef)
                pred = min(residuals, key=lambda c: residuals[c])
                error = None
            except (SparseRecoveryError, np.linalg.LinAlgError) as e:
                logger.warning(f"sample {i}: {self.solver} failed: {e}")
                pred, sparsity, error = None, 0, str(e)
            return pred, sparsity, 1e3 * (time.perf_counter() - started), error

        started = time.perf_counter()
        if self.cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                outputs = list(pool.map(one, range(X_test.shape[1])))
        else:
            outputs = [one(i) for i in range(X_test.shape[1])]
        total_ms = 1e3 * (time.perf_counter() - started)

        predictions = pd.DataFrame({
            "sample_id": np.arange(X_test.shape[1]),
            "true_class": y_test,
            "predicted_class": [o[0] for o in outputs],
            "sparsity": [o[1] for o in outputs],
            "wall_ms": [o[2] for o in outputs],
            "error": [o[3] for o in outputs],
        })
        predictions["correct"] = predictions["predicted_class"] == predictions["true_class"]

        per_class = {
            c: float(group["correct"].mean()) for c, group in predictions.groupby("true_class", sort=True)
        }
        n_correct = int(predictions["correct"].sum())
        report = ClassifyReport(
            solver=self.solver,
            accuracy=n_correct / len(predictions),
            mean_sparsity=float(predictions["sparsity"].mean()),
            per_class_accuracy=per_class,
            total_wall_ms=total_ms,
            n_samples=len(predictions),
            n_correct=n_correct,
            n_failed=int(predictions["error"].notna().sum()),
        )
        logger.info(f"{self.solver}: accuracy {report.accuracy:.3f} over {report.n_samples} samples")
        return report, predictions


def classify(
    dictionary: LabeledDictionary, y: np.ndarray, solver: str = "bgmp", cfg: Optional[ClassifierConfig] = None
) -> Tuple[Any, np.ndarray]:
    """Classify a single vector; see SparseRepresentationClassifier.classify"""
    return SparseRepresentationClassifier(dictionary, solver, cfg).fit().classify(y)


def evaluate(
    dictionary: LabeledDictionary,
    X_test: np.ndarray,
    y_test: Sequence,
    solver: str = "bgmp",
    cfg: Optional[ClassifierConfig] = None,
) -> ClassifyReport:
    """Accuracy, mean sparsity and timing of one solver on a labeled test set"""
    report, _ = SparseRepresentationClassifier(dictionary, solver, cfg).evaluate(X_test, y_test)
    return report
