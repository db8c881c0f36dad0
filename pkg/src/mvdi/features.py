"""Feature post-processing and classification: per-group feature
concatenation, PCA reduction, one-vs-rest linear SVMs with
cross-validated penalty selection, and the softmax-sum fusion baseline.

The SVM trains L2-regularized hinge loss with the loss averaged per
sample (so duplicating the training set leaves the decision function
unchanged), by deterministic seeded dual coordinate descent run to a
primal-dual gap tolerance or an epoch cap. A constant bias feature is
appended internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import serialize
from .errors import NumericError

DEFAULT_C_GRID = (2.0**-5, 2.0**-3, 2.0**-1, 2.0, 2.0**3, 2.0**5)


# ---------------------------------------------------------------------------
# Concatenation
# ---------------------------------------------------------------------------

def concat_group_features(per_group: dict[int, np.ndarray]) -> np.ndarray:
    """Concatenate per-group vectors in ascending group id, so the layout
    never depends on dict insertion order."""
    if not per_group:
        raise ValueError("no group features given")
    return np.concatenate(
        [np.asarray(per_group[g], dtype=np.float64).ravel() for g in sorted(per_group)]
    )


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    eigenvalues: np.ndarray | None = None  # (k,), descending
    whiten: bool = False

    @property
    def k(self) -> int:
        return self.components.shape[0]


def _fix_signs(components: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Deterministic sign convention: first entry of magnitude > tol in
    each component is made positive."""
    out = components.copy()
    for row in out:
        for value in row:
            if abs(value) > tol:
                if value < 0:
                    row *= -1.0
                break
    return out


def pca_fit(X: np.ndarray, k: int, gram_threshold: int = 2048, whiten: bool = False) -> PcaModel:
    """Top-k principal components of the sample covariance, eigenvalues
    descending. Uses the d x d covariance for d <= gram_threshold and the
    n x n Gram matrix otherwise (identical subspaces). Whitening (off by
    default) rescales projections to unit variance."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 samples")
    if not 1 <= k <= min(d, n - 1):
        raise ValueError(f"k={k} out of range [1, min(d, n-1)={min(d, n - 1)}]")
    mean = X.mean(axis=0)
    centered = X - mean
    scale = float(np.abs(centered).max())
    if scale == 0.0:
        raise ValueError("degenerate data: all rows identical (rank 0)")

    if d <= gram_threshold:
        cov = centered.T @ centered / (n - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1][:k]
        lam = eigvals[order]
        components = eigvecs[:, order].T
    else:
        gram = centered @ centered.T / (n - 1)
        eigvals, eigvecs = np.linalg.eigh(gram)
        order = np.argsort(eigvals)[::-1][:k]
        lam = eigvals[order]
        if lam[-1] <= 0:
            raise ValueError(f"k={k} exceeds the data rank")
        components = (centered.T @ eigvecs[:, order] / np.sqrt((n - 1) * lam)).T
    if whiten and lam[-1] <= 0:
        raise ValueError(f"whitening needs k within the data rank; k={k} too large")
    return PcaModel(
        mean=mean,
        components=_fix_signs(np.ascontiguousarray(components)),
        eigenvalues=np.maximum(lam, 0.0),
        whiten=whiten,
    )


def pca_transform(model: PcaModel, x: np.ndarray) -> np.ndarray:
    """Project one vector or a (n, d) matrix: components @ (x - mean),
    divided by sqrt(eigenvalue) per component when whitening is on."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise ValueError(
            f"dimension mismatch: model d={model.mean.shape[0]}, input {x.shape[-1]}"
        )
    projected = (x - model.mean) @ model.components.T
    if model.whiten:
        projected = projected / np.sqrt(model.eigenvalues)
    return projected


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Scale each row (or a single vector) to unit Euclidean length;
    zero vectors pass through unchanged."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.where(norms > 0, x / np.where(norms > 0, norms, 1.0), x)


def save_pca(model: PcaModel, path) -> None:
    eigenvalues = (
        model.eigenvalues if model.eigenvalues is not None else np.zeros(model.k)
    )
    serialize.write_blocks(
        path,
        {"kind": "pca", "whiten": bool(model.whiten)},
        [model.mean, model.components, eigenvalues],
    )


def load_pca(path) -> PcaModel:
    meta, blocks = serialize.read_blocks(path)
    if meta.get("kind") != "pca":
        raise ValueError(f"{path}: not a PCA model file")
    return PcaModel(
        mean=blocks[0],
        components=blocks[1],
        eigenvalues=blocks[2],
        whiten=bool(meta.get("whiten", False)),
    )


# ---------------------------------------------------------------------------
# Linear SVM (one-vs-rest, dual coordinate descent)
# ---------------------------------------------------------------------------

@dataclass
class SvmModel:
    weights: np.ndarray  # (num_classes, d)
    biases: np.ndarray  # (num_classes,)
    C: float

    def decision_values(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.weights.shape[1]:
            raise ValueError(
                f"dimension mismatch: model d={self.weights.shape[1]}, "
                f"input {x.shape[-1]}"
            )
        return x @ self.weights.T + self.biases


def _binary_svm(
    X: np.ndarray,
    y: np.ndarray,
    C: float,
    rng: np.random.Generator,
    gap_tol: float,
    max_epochs: int,
) -> np.ndarray:
    """Dual coordinate descent for min_w 0.5||w||^2 + (C/n) sum hinge_i
    with y in {-1, +1}; X already carries the bias column. Returns w."""
    n, d = X.shape
    bound = C / n
    q_diag = (X * X).sum(axis=1)
    alpha = np.zeros(n)
    w = np.zeros(d)
    for _ in range(max_epochs):
        order = rng.permutation(n)
        for i in order:
            if q_diag[i] <= 0:
                continue
            g = y[i] * (X[i] @ w) - 1.0
            new_alpha = min(max(alpha[i] - g / q_diag[i], 0.0), bound)
            delta = new_alpha - alpha[i]
            if delta != 0.0:
                alpha[i] = new_alpha
                w += delta * y[i] * X[i]
        margins = 1.0 - y * (X @ w)
        primal = 0.5 * float(w @ w) + bound * float(margins[margins > 0].sum())
        dual = float(alpha.sum()) - 0.5 * float(w @ w)
        if not math.isfinite(primal):
            raise NumericError("SVM objective became non-finite")
        if primal - dual < gap_tol:
            break
    return w


def svm_train(
    X: np.ndarray,
    y: np.ndarray,
    C: float,
    seed: int = 0,
    gap_tol: float = 1e-4,
    max_epochs: int = 1000,
) -> SvmModel:
    """One-vs-rest linear SVMs, one binary problem per class, each solved
    by seeded dual coordinate descent to primal-dual gap < gap_tol or the
    epoch cap."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, d) aligned with y")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("need at least 2 classes")
    num_classes = int(classes.max()) + 1
    if C <= 0:
        raise ValueError("C must be > 0")

    augmented = np.hstack([X, np.ones((X.shape[0], 1))])
    weights = np.zeros((num_classes, X.shape[1]))
    biases = np.zeros(num_classes)
    for cls in range(num_classes):
        if cls not in classes:
            continue
        target = np.where(y == cls, 1.0, -1.0)
        rng = np.random.default_rng([seed, cls])
        w = _binary_svm(augmented, target, C, rng, gap_tol, max_epochs)
        weights[cls] = w[:-1]
        biases[cls] = w[-1]
    return SvmModel(weights=weights, biases=biases, C=float(C))


def svm_predict(model: SvmModel, x: np.ndarray) -> tuple[int, np.ndarray]:
    """Argmax of the one-vs-rest scores; exact ties go to the lowest
    class index."""
    scores = model.decision_values(x)
    if scores.ndim != 1:
        raise ValueError("svm_predict takes a single vector")
    return int(np.argmax(scores)), scores


def svm_predict_batch(model: SvmModel, X: np.ndarray) -> np.ndarray:
    return np.argmax(model.decision_values(X), axis=1)


@dataclass
class CvResult:
    best_c: float
    fold_scores: dict[float, list[float]]
    stratified: bool


def _stratified_folds(y: np.ndarray, folds: int, rng: np.random.Generator):
    """Deal each class's shuffled samples round-robin over folds. Falls
    back to plain dealing when some class has fewer samples than folds."""
    n = y.shape[0]
    assignment = np.zeros(n, dtype=np.int64)
    counts = np.bincount(y)
    stratified = bool((counts[counts > 0] >= folds).all())
    if stratified:
        for cls in np.nonzero(counts)[0]:
            idx = np.nonzero(y == cls)[0]
            idx = idx[rng.permutation(idx.size)]
            assignment[idx] = np.arange(idx.size) % folds
    else:
        idx = rng.permutation(n)
        assignment[idx] = np.arange(n) % folds
    return assignment, stratified


def svm_cv_select(
    X: np.ndarray,
    y: np.ndarray,
    c_grid=DEFAULT_C_GRID,
    folds: int = 5,
    seed: int = 0,
    gap_tol: float = 1e-4,
    max_epochs: int = 1000,
) -> CvResult:
    """Pick the penalty C with the best mean validation accuracy over
    seeded stratified folds; ties resolve to the smaller C."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if X.shape[0] < folds:
        raise ValueError("need at least as many samples as folds")
    rng = np.random.default_rng([seed, 91])
    assignment, stratified = _stratified_folds(y, folds, rng)

    fold_scores: dict[float, list[float]] = {}
    for C in sorted(c_grid):
        scores = []
        for fold in range(folds):
            val = assignment == fold
            if val.sum() == 0 or np.unique(y[~val]).size < 2:
                continue
            model = svm_train(
                X[~val], y[~val], C, seed=seed, gap_tol=gap_tol, max_epochs=max_epochs
            )
            predictions = svm_predict_batch(model, X[val])
            scores.append(float((predictions == y[val]).mean()))
        fold_scores[float(C)] = scores

    best_c = None
    best_mean = -1.0
    for C in sorted(fold_scores):
        mean = float(np.mean(fold_scores[C])) if fold_scores[C] else 0.0
        if mean > best_mean + 1e-12:
            best_mean = mean
            best_c = C
    return CvResult(best_c=best_c, fold_scores=fold_scores, stratified=stratified)


def save_svm(model: SvmModel, path) -> None:
    serialize.write_blocks(
        path, {"kind": "svm", "C": model.C}, [model.weights, model.biases]
    )


def load_svm(path) -> SvmModel:
    meta, blocks = serialize.read_blocks(path)
    if meta.get("kind") != "svm":
        raise ValueError(f"{path}: not an SVM model file")
    return SvmModel(weights=blocks[0], biases=blocks[1], C=float(meta["C"]))


# ---------------------------------------------------------------------------
# Softmax-sum fusion
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def softmax_sum_fusion(per_group_logits: dict[int, np.ndarray]) -> tuple[int, np.ndarray]:
    """Sum the per-group softmax score vectors and take the argmax (ties
    to the lowest class index)."""
    if not per_group_logits:
        raise ValueError("no group logits given")
    groups = sorted(per_group_logits)
    length = np.asarray(per_group_logits[groups[0]]).shape[0]
    fused = np.zeros(length)
    for g in groups:
        logits = np.asarray(per_group_logits[g], dtype=np.float64)
        if logits.shape != (length,):
            raise ValueError("all groups must produce equal-length logits")
        fused += softmax(logits)
    return int(np.argmax(fused)), fused
