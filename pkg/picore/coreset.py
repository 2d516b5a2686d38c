"""
Coreset selectors.

Gradient-based selectors (CRAIG, GradMatch, AdaCore, EL2N, GraNd) work on a
FeatureMatrix whose columns are per-sample last-layer gradients; the input
space baselines (k-means, cosine, herding, random) work on flattened inputs,
one row per sample. Ties are always broken towards the lowest index.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import nnls
from scipy.spatial.distance import pdist, squareform
from sklearn.cluster import KMeans

from .errors import BudgetOutOfRange, ConfigError, UnknownAlgorithm, ZeroVector

logger = logging.getLogger(__name__)

GRADIENT_SELECTORS = ("craig", "gradmatch", "adacore", "el2n", "grand")
INPUT_SELECTORS = ("kmeans", "cosine", "herding", "random")
ALGORITHMS = GRADIENT_SELECTORS + INPUT_SELECTORS


@dataclass
class FeatureMatrix:
    columns: np.ndarray
    per_sample_loss: np.ndarray
    source: str = "physics"

    def __post_init__(self):
        self.columns = np.atleast_2d(np.asarray(self.columns, dtype=np.float64))
        self.per_sample_loss = np.asarray(self.per_sample_loss, dtype=np.float64)
        d, n = self.columns.shape
        if n < 1 or d < 1:
            raise ConfigError(f"feature matrix must be non-empty, got shape {self.columns.shape}")
        if self.per_sample_loss.shape != (n,):
            raise ConfigError("per-sample losses do not align with the feature columns")
        if not (np.all(np.isfinite(self.columns)) and np.all(np.isfinite(self.per_sample_loss))):
            raise ConfigError("feature matrix contains non-finite entries")

    @property
    def n(self) -> int:
        return self.columns.shape[1]

    @property
    def d(self) -> int:
        return self.columns.shape[0]

    @classmethod
    def from_columns(cls, columns: np.ndarray, source: str = "physics") -> "FeatureMatrix":
        columns = np.atleast_2d(np.asarray(columns, dtype=np.float64))
        return cls(columns, np.zeros(columns.shape[1]), source)


@dataclass
class CoresetSelection:
    indices: list[int]
    weights: list[float]
    algorithm: str
    beta: float
    seed: int | None = None
    topped_up: int = 0
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.indices = [int(i) for i in self.indices]
        self.weights = [float(w) for w in self.weights]
        if len(self.indices) != len(self.weights):
            raise ConfigError("indices and weights differ in length")
        if len(set(self.indices)) != len(self.indices):
            raise ConfigError("selected indices must be distinct")
        if any(w <= 0 for w in self.weights):
            raise ConfigError("selection weights must be positive")

    def __len__(self) -> int:
        return len(self.indices)

    def json_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "CoresetSelection":
        return cls(**data)


def budget(beta: float, n: int) -> int:
    """ceil(beta * n), tolerant of floating-point noise in beta * n."""
    if not 0 < beta <= 1:
        raise BudgetOutOfRange(f"beta must lie in (0, 1], got {beta}")
    return max(1, math.ceil(round(beta * n, 9)))


def _check_budget(k: int, n: int) -> None:
    if not 1 <= k <= n:
        raise BudgetOutOfRange(f"budget {k} outside [1, {n}]")


def _uniform(indices: list[int], n: int) -> list[float]:
    return [n / len(indices)] * len(indices)


def _top_k(scores: np.ndarray, k: int) -> list[int]:
    return np.argsort(-scores, kind="stable")[:k].tolist()


def similarity_matrix(features: FeatureMatrix) -> np.ndarray:
    """s_ij = M - ||g_i - g_j||, with M the largest pairwise distance."""
    if features.n == 1:
        return np.zeros((1, 1))
    dist = squareform(pdist(features.columns.T))
    return dist.max() - dist


def facility_location(sim: np.ndarray, selected: list[int] | np.ndarray) -> float:
    selected = list(selected)
    if not selected:
        return 0.0
    return float(sim[:, selected].max(axis=1).sum())


def default_subsample(n: int, k: int, epsilon: float = 0.01) -> int:
    return min(n, math.ceil(n / k * math.log(1 / epsilon)))


def _greedy_facility_location(
    sim: np.ndarray, k: int, subsample: int, rng: np.random.Generator
) -> list[int]:
    n = sim.shape[0]
    selected: list[int] = []
    covered = np.zeros(n)
    available = np.ones(n, dtype=bool)
    for _ in range(k):
        remaining = np.flatnonzero(available)
        if subsample < len(remaining):
            candidates = np.sort(rng.choice(remaining, size=subsample, replace=False))
        else:
            candidates = remaining
        gains = np.maximum(sim[:, candidates] - covered[:, None], 0).sum(axis=0)
        pick = int(candidates[np.argmax(gains)])
        selected.append(pick)
        available[pick] = False
        covered = np.maximum(covered, sim[:, pick])
    return selected


def _cluster_weights(sim: np.ndarray, selected: list[int]) -> list[float]:
    nearest = np.argmax(sim[:, selected], axis=1)
    # a selected point always represents itself
    nearest[selected] = np.arange(len(selected))
    counts = np.bincount(nearest, minlength=len(selected))
    return counts.astype(float).tolist()


def _craig_on(
    columns: np.ndarray, k: int, subsample: int | None, rng_seed: int
) -> tuple[list[int], list[float]]:
    n = columns.shape[1]
    _check_budget(k, n)
    sim = similarity_matrix(FeatureMatrix.from_columns(columns))
    subsample = subsample or default_subsample(n, k)
    rng = np.random.default_rng(rng_seed)
    selected = _greedy_facility_location(sim, k, subsample, rng)
    return selected, _cluster_weights(sim, selected)


def select_craig(
    features: FeatureMatrix, k: int, subsample: int | None = None, rng_seed: int = 0
) -> CoresetSelection:
    indices, weights = _craig_on(features.columns, k, subsample, rng_seed)
    return CoresetSelection(
        indices, weights, "craig", k / features.n, rng_seed,
        extra={"subsample": subsample or default_subsample(features.n, k)},
    )


def omp_nonnegative(
    A: np.ndarray, b: np.ndarray, k: int, ridge: float = 1e-4, tol: float = 1e-10
) -> tuple[list[int], np.ndarray, list[float]]:
    """
    Orthogonal matching pursuit with a non-negative ridge refit.
    Returns the support, its weights and the residual norm after each refit.
    """
    d, n = A.shape
    support: list[int] = []
    x = np.zeros(0)
    r = b.copy()
    history: list[float] = []
    for _ in range(k):
        if np.linalg.norm(r) <= tol:
            break
        corr = A.T @ r
        corr[support] = -np.inf
        j = int(np.argmax(corr))
        if corr[j] <= 0:
            logger.debug("no column correlates positively with the residual, stopping early")
            break
        support.append(j)
        A_s = A[:, support]
        if ridge > 0:
            lhs = np.vstack([A_s, np.sqrt(ridge) * np.eye(len(support))])
            rhs = np.concatenate([b, np.zeros(len(support))])
        else:
            lhs, rhs = A_s, b
        x, _ = nnls(lhs, rhs)
        r = b - A_s @ x
        history.append(float(np.linalg.norm(r)))
        logger.debug(f"omp step {len(support)}: residual {history[-1]:.3e}")
    return support, x, history


def select_gradmatch(
    features: FeatureMatrix,
    k: int,
    ridge: float = 1e-4,
    target: np.ndarray | None = None,
) -> CoresetSelection:
    """Matches the mean gradient (or target) with at most k non-negatively weighted columns."""
    A = features.columns
    _check_budget(k, features.n)
    if ridge < 0:
        raise ConfigError("ridge must be non-negative")
    b = A.mean(axis=1) if target is None else np.asarray(target, dtype=np.float64)
    support, x, history = omp_nonnegative(A, b, k, ridge)
    keep = [(i, w) for i, w in zip(support, x) if w > 0]
    if len(keep) < k:
        logger.debug(f"gradmatch kept {len(keep)} of {k} columns after pruning zero weights")
    return CoresetSelection(
        [i for i, _ in keep], [w for _, w in keep], "gradmatch", k / features.n,
        extra={"residuals": history},
    )


def hutchinson_diag(
    hvp: Callable[[np.ndarray], np.ndarray], d: int, probes: int = 10, rng_seed: int = 0
) -> np.ndarray:
    """Estimates diag(H) as the mean of z * Hz over Rademacher probes z."""
    if probes < 1:
        raise ConfigError("need at least one probe")
    rng = np.random.default_rng(rng_seed)
    total = np.zeros(d)
    for _ in range(probes):
        z = rng.integers(0, 2, size=d) * 2.0 - 1.0
        total += z * np.asarray(hvp(z))
    return total / probes


def select_adacore(
    features: FeatureMatrix,
    k: int,
    hess_diag: np.ndarray,
    eps: float = 1e-6,
    subsample: int | None = None,
    rng_seed: int = 0,
) -> CoresetSelection:
    hess_diag = np.asarray(hess_diag, dtype=np.float64)
    if hess_diag.shape != (features.d,):
        raise ConfigError(f"hessian diagonal has shape {hess_diag.shape}, expected ({features.d},)")
    scaled = features.columns / (np.abs(hess_diag) + eps)[:, None]
    indices, weights = _craig_on(scaled, k, subsample, rng_seed)
    return CoresetSelection(indices, weights, "adacore", k / features.n, rng_seed)


def select_el2n(per_sample_loss: np.ndarray, k: int) -> CoresetSelection:
    scores = np.asarray(per_sample_loss, dtype=np.float64)
    _check_budget(k, len(scores))
    indices = _top_k(scores, k)
    return CoresetSelection(indices, _uniform(indices, len(scores)), "el2n", k / len(scores))


def select_grand(features: FeatureMatrix, k: int) -> CoresetSelection:
    _check_budget(k, features.n)
    indices = _top_k(np.linalg.norm(features.columns, axis=0), k)
    return CoresetSelection(indices, _uniform(indices, features.n), "grand", k / features.n)


def select_kmeans(inputs: np.ndarray, k: int, iters: int = 100, rng_seed: int = 0) -> CoresetSelection:
    """The data point nearest to each k-means centre (distinct points)."""
    X = np.asarray(inputs, dtype=np.float64)
    n = X.shape[0]
    _check_budget(k, n)
    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=iters, random_state=rng_seed)
    km.fit(X)
    taken: set[int] = set()
    indices = []
    for center in km.cluster_centers_:
        order = np.argsort(np.linalg.norm(X - center, axis=1), kind="stable")
        pick = next(int(i) for i in order if int(i) not in taken)
        taken.add(pick)
        indices.append(pick)
    return CoresetSelection(indices, _uniform(indices, n), "kmeans", k / n, rng_seed)


def select_cosine(inputs: np.ndarray, k: int) -> CoresetSelection:
    """Greedy diversity: repeatedly add the point least similar to anything already chosen."""
    X = np.asarray(inputs, dtype=np.float64)
    n = X.shape[0]
    _check_budget(k, n)
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ZeroVector("cosine selection needs non-zero inputs")
    U = X / norms[:, None]
    first = int(np.argmax(norms))
    indices = [first]
    max_sim = U @ U[first]
    available = np.ones(n, dtype=bool)
    available[first] = False
    while len(indices) < k:
        candidates = np.flatnonzero(available)
        pick = int(candidates[np.argmin(max_sim[candidates])])
        indices.append(pick)
        available[pick] = False
        max_sim = np.maximum(max_sim, U @ U[pick])
    return CoresetSelection(indices, _uniform(indices, n), "cosine", k / n)


def select_herding(inputs: np.ndarray, k: int) -> CoresetSelection:
    X = np.asarray(inputs, dtype=np.float64)
    n = X.shape[0]
    _check_budget(k, n)
    mu = X.mean(axis=0)
    w = mu.copy()
    available = np.ones(n, dtype=bool)
    indices: list[int] = []
    for _ in range(k):
        candidates = np.flatnonzero(available)
        pick = int(candidates[np.argmax(X[candidates] @ w)])
        indices.append(pick)
        available[pick] = False
        w += mu - X[pick]
    return CoresetSelection(indices, _uniform(indices, n), "herding", k / n)


def select_random(n: int, k: int, rng_seed: int = 0) -> CoresetSelection:
    _check_budget(k, n)
    rng = np.random.default_rng(rng_seed)
    indices = rng.choice(n, size=k, replace=False).tolist()
    return CoresetSelection(indices, _uniform(indices, n), "random", k / n, rng_seed)


def select(
    algorithm: str,
    k: int,
    features: FeatureMatrix | None = None,
    inputs: np.ndarray | None = None,
    hess_diag: np.ndarray | None = None,
    rng_seed: int = 0,
    **options: Any,
) -> CoresetSelection:
    """Dispatches to a selector by name; features or inputs must be supplied as it requires."""
    if algorithm not in ALGORITHMS:
        raise UnknownAlgorithm(f"unknown algorithm {algorithm!r}, expected one of {ALGORITHMS}")
    if algorithm in GRADIENT_SELECTORS and features is None:
        raise ConfigError(f"{algorithm} needs per-sample features")
    if algorithm in INPUT_SELECTORS and inputs is None:
        raise ConfigError(f"{algorithm} needs the flattened inputs")

    if algorithm == "craig":
        sel = select_craig(features, k, options.get("subsample"), rng_seed)
    elif algorithm == "gradmatch":
        sel = select_gradmatch(features, k, options.get("ridge", 1e-4))
    elif algorithm == "adacore":
        if hess_diag is None:
            raise ConfigError("adacore needs a hessian diagonal")
        sel = select_adacore(
            features, k, hess_diag, options.get("eps", 1e-6), options.get("subsample"), rng_seed
        )
    elif algorithm == "el2n":
        sel = select_el2n(features.per_sample_loss, k)
    elif algorithm == "grand":
        sel = select_grand(features, k)
    elif algorithm == "kmeans":
        sel = select_kmeans(inputs, k, options.get("iters", 100), rng_seed)
    elif algorithm == "cosine":
        sel = select_cosine(inputs, k)
    elif algorithm == "herding":
        sel = select_herding(inputs, k)
    else:
        sel = select_random(len(inputs), k, rng_seed)
    sel.seed = rng_seed
    return sel


def test_budget_rounding():
    assert budget(0.2, 10) == 2
    assert budget(0.3, 10) == 3
    assert budget(0.2, 256) == 52
    assert budget(1.0, 7) == 7
