from itertools import combinations

import numpy as np
import pytest
from scipy.optimize import nnls

from picore.coreset import (
    CoresetSelection,
    FeatureMatrix,
    budget,
    facility_location,
    hutchinson_diag,
    omp_nonnegative,
    select,
    select_adacore,
    select_cosine,
    select_craig,
    select_el2n,
    select_gradmatch,
    select_grand,
    select_herding,
    select_kmeans,
    select_random,
    similarity_matrix,
)
from picore.errors import BudgetOutOfRange, ConfigError, UnknownAlgorithm, ZeroVector


def random_features(n: int, d: int = 5, seed: int = 0) -> FeatureMatrix:
    rng = np.random.default_rng(seed)
    return FeatureMatrix(rng.normal(size=(d, n)), rng.random(n))


def test_similarity_matrix_by_hand():
    features = FeatureMatrix.from_columns(np.array([[0.0, 3.0, 0.0], [0.0, 0.0, 4.0]]))
    sim = similarity_matrix(features)
    # distances 3, 4 and 5, so M = 5
    expected = np.array([[5.0, 2.0, 1.0], [2.0, 5.0, 0.0], [1.0, 0.0, 5.0]])
    assert np.allclose(sim, expected)


def test_budget():
    assert budget(0.1, 256) == 26
    assert budget(1e-9, 5) == 1
    with pytest.raises(BudgetOutOfRange):
        budget(0.0, 10)
    with pytest.raises(BudgetOutOfRange):
        budget(1.5, 10)


def test_craig_within_greedy_bound_of_optimum():
    bound = 1 - 1 / np.e
    for seed in range(50):
        features = random_features(10, seed=seed)
        sim = similarity_matrix(features)
        sel = select_craig(features, 3, subsample=10, rng_seed=seed)
        best = max(facility_location(sim, s) for s in combinations(range(10), 3))
        assert facility_location(sim, sel.indices) >= bound * best - 1e-12


def test_craig_weights_count_cluster_members():
    for seed in range(10):
        features = random_features(12, seed=seed)
        sel = select_craig(features, 4, rng_seed=seed)
        assert len(set(sel.indices)) == 4
        assert sum(sel.weights) == 12
        assert all(w >= 1 for w in sel.weights)


def test_craig_mirrored_gradients():
    g = np.array([1.0, 2.0])
    features = FeatureMatrix.from_columns(np.stack([g, g, -g], axis=1))
    one = select_craig(features, 1, subsample=3)
    assert one.indices == [0]
    assert one.weights == [3.0]
    two = select_craig(features, 2, subsample=3)
    assert two.indices == [0, 2]
    assert two.weights == [2.0, 1.0]


def test_facility_location_is_submodular():
    rng = np.random.default_rng(0)
    for case in range(100):
        features = random_features(8, seed=case)
        sim = similarity_matrix(features)
        B = [int(i) for i in rng.choice(7, size=4, replace=False)]
        A = B[: int(rng.integers(0, 4))]
        x = next(i for i in range(8) if i not in B)
        gain_a = facility_location(sim, A + [x]) - facility_location(sim, A)
        gain_b = facility_location(sim, B + [x]) - facility_location(sim, B)
        assert gain_a >= gain_b - 1e-12


def test_craig_is_deterministic_with_subsampling():
    features = random_features(40, seed=1)
    a = select_craig(features, 5, subsample=8, rng_seed=4)
    b = select_craig(features, 5, subsample=8, rng_seed=4)
    assert a == b
    assert a.extra["subsample"] == 8


def unit_columns(d: int, n: int, seed: int = 0) -> np.ndarray:
    A = np.random.default_rng(seed).normal(size=(d, n))
    return A / np.linalg.norm(A, axis=0)


def test_gradmatch_recovers_scaled_column():
    A = unit_columns(6, 5)
    sel = select_gradmatch(FeatureMatrix.from_columns(A), 3, ridge=0.0, target=2 * A[:, 3])
    assert sel.indices == [3]
    assert sel.weights == pytest.approx([2.0])


def test_gradmatch_recovers_two_sparse_target():
    Q, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(20, 8)))
    b = 1.5 * Q[:, 1] + 0.5 * Q[:, 4]
    support, x, history = omp_nonnegative(Q, b, 2, ridge=0.0)
    assert support == [1, 4]
    assert x == pytest.approx([1.5, 0.5])
    assert history[-1] < 1e-12


def test_omp_residual_is_non_increasing():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(10, 30))
    b = A[:, :12] @ rng.random(12)
    _, _, history = omp_nonnegative(A, b, 6, ridge=0.0)
    assert all(later <= earlier + 1e-12 for earlier, later in zip(history, history[1:]))


def test_gradmatch_full_budget_matches_nnls():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d, n = (8, 5) if seed % 2 else (6, 10)
        A, b = rng.normal(size=(d, n)), rng.normal(size=d)
        sel = select_gradmatch(FeatureMatrix.from_columns(A), n, ridge=0.0, target=b)
        _, best = nnls(A, b)
        residual = sel.extra["residuals"][-1] if sel.extra["residuals"] else np.linalg.norm(b)
        assert residual <= best + 1e-9


def test_gradmatch_default_target_is_mean_gradient():
    features = random_features(20, seed=3)
    sel = select_gradmatch(features, 5)
    assert 1 <= len(sel) <= 5
    assert all(w > 0 for w in sel.weights)
    assert len(sel.extra["residuals"]) >= len(sel)


def test_hutchinson_exact_on_diagonal():
    diag = np.array([1.0, -2.0, 3.5, 0.0])
    estimate = hutchinson_diag(lambda v: diag * v, 4, probes=3)
    assert np.allclose(estimate, diag)
    assert np.allclose(hutchinson_diag(lambda v: v, 6, probes=1), 1.0)


def test_hutchinson_concentrates():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(8, 8))
    H = (M + M.T) / 2
    estimate = hutchinson_diag(lambda v: H @ v, 8, probes=4000, rng_seed=1)
    assert np.abs(estimate - np.diag(H)).max() < 0.3


def test_adacore_with_flat_curvature_is_craig():
    features = random_features(15, seed=5)
    craig = select_craig(features, 4, subsample=15, rng_seed=2)
    adacore = select_adacore(features, 4, np.ones(features.d), eps=0.0, subsample=15, rng_seed=2)
    assert adacore.indices == craig.indices
    assert adacore.weights == craig.weights


def test_adacore_undoes_coordinate_scaling():
    G = np.array([[0.0, 0.02, -0.03], [0.0, 1.0, 2.0]])
    stretched = G * np.array([[100.0], [1.0]])
    assert select_craig(FeatureMatrix.from_columns(G), 1, subsample=3).indices == [1]
    assert select_craig(FeatureMatrix.from_columns(stretched), 1, subsample=3).indices == [0]
    sel = select_adacore(
        FeatureMatrix.from_columns(stretched), 1, np.array([100.0, 1.0]), eps=0.0, subsample=3
    )
    assert sel.indices == [1]


def test_adacore_keeps_one_of_duplicated_columns():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(4, 6))
        features = FeatureMatrix.from_columns(np.hstack([A, A[:, 2:3]]))
        sel = select_adacore(features, 3, rng.uniform(0.1, 10.0, 4), subsample=7, rng_seed=seed)
        assert not {2, 6} <= set(sel.indices)
        assert sum(sel.weights) == 7


def test_adacore_rejects_misshaped_diagonal():
    features = random_features(5)
    with pytest.raises(ConfigError):
        select_adacore(features, 2, np.ones(features.d + 1))


def test_el2n_picks_largest_losses():
    sel = select_el2n(np.array([0.1, 0.5, 0.3, 0.5]), 2)
    assert sel.indices == [1, 3]
    assert sel.weights == [2.0, 2.0]
    everything = select_el2n(np.array([0.1, 0.5, 0.3]), 3)
    assert everything.indices == [1, 2, 0]
    assert everything.weights == [1.0, 1.0, 1.0]


def test_el2n_agrees_with_sorting():
    rng = np.random.default_rng(0)
    for _ in range(100):
        losses = rng.random(int(rng.integers(5, 40)))
        k = int(rng.integers(1, len(losses) + 1))
        expected = sorted(range(len(losses)), key=lambda i: -losses[i])[:k]
        assert select_el2n(losses, k).indices == expected


def test_grand_picks_largest_gradients():
    columns = np.array([[1.0, 0.0, 3.0, 0.5], [0.0, 2.0, 0.0, 0.5]])
    sel = select_grand(FeatureMatrix.from_columns(columns), 2)
    assert sel.indices == [2, 1]


def test_grand_agrees_with_sorting():
    rng = np.random.default_rng(1)
    for _ in range(100):
        columns = rng.normal(size=(int(rng.integers(1, 6)), int(rng.integers(5, 40))))
        k = int(rng.integers(1, columns.shape[1] + 1))
        norms = [float(np.sqrt(np.sum(c**2))) for c in columns.T]
        expected = set(sorted(range(len(norms)), key=lambda i: -norms[i])[:k])
        assert set(select_grand(FeatureMatrix.from_columns(columns), k).indices) == expected


def test_kmeans_covers_both_clusters():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(0.0, 0.1, size=(10, 3)), rng.normal(10.0, 0.1, size=(10, 3))])
    sel = select_kmeans(X, 2, rng_seed=1)
    assert sorted(i // 10 for i in sel.indices) == [0, 1]
    assert sel.weights == [10.0, 10.0]


def test_kmeans_separates_clusters_across_seeds():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        X = np.vstack([rng.normal(0.0, 0.1, size=(10, 3)), rng.normal(10.0, 0.1, size=(10, 3))])
        sel = select_kmeans(X, 2, rng_seed=seed)
        hits += sorted(i // 10 for i in sel.indices) == [0, 1]
    assert hits >= 99


def test_kmeans_with_full_budget_takes_everything():
    X = np.random.default_rng(1).normal(size=(6, 2))
    sel = select_kmeans(X, 6)
    assert sorted(sel.indices) == list(range(6))


def test_cosine_orthogonal_inputs():
    X = np.diag([3.0, 2.0, 1.0])
    assert select_cosine(X, 3).indices == [0, 1, 2]


def test_cosine_skips_duplicates():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert select_cosine(np.stack([a, a, b]), 2).indices == [0, 2]
    X = np.random.default_rng(3).normal(size=(10, 4))
    assert select_cosine(X, 4).indices == select_cosine(7.0 * X, 4).indices
    with pytest.raises(ZeroVector):
        select_cosine(np.zeros((3, 2)), 1)


def test_herding():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.6]])
    assert select_herding(X, 1).indices == [2]
    same = np.ones((3, 2))
    assert select_herding(same, 3).indices == [0, 1, 2]
    rng = np.random.default_rng(0)
    points = rng.normal(size=(400, 5))
    sel = select_herding(points, 40)
    assert np.linalg.norm(points[sel.indices].mean(axis=0) - points.mean(axis=0)) < 0.25


def test_random_selection():
    sel = select_random(20, 5, rng_seed=3)
    assert len(set(sel.indices)) == 5
    assert sel == select_random(20, 5, rng_seed=3)
    assert sel.weights == [4.0] * 5


def test_select_dispatch():
    features = random_features(10)
    inputs = np.random.default_rng(0).normal(size=(10, 4))
    sel = select("grand", 3, features=features, rng_seed=7)
    assert sel.algorithm == "grand"
    assert sel.seed == 7
    assert sel.beta == pytest.approx(0.3)
    assert select("herding", 2, inputs=inputs).algorithm == "herding"
    with pytest.raises(UnknownAlgorithm):
        select("lottery", 3, features=features)
    with pytest.raises(ConfigError):
        select("craig", 3, inputs=inputs)
    with pytest.raises(ConfigError):
        select("adacore", 3, features=features)
    with pytest.raises(BudgetOutOfRange):
        select("el2n", 11, features=features)


def test_selection_validation():
    with pytest.raises(ConfigError):
        CoresetSelection([1, 1], [1.0, 1.0], "craig", 0.2)
    with pytest.raises(ConfigError):
        CoresetSelection([1], [0.0], "craig", 0.1)
    sel = CoresetSelection([2, 0], [1.5, 2.5], "gradmatch", 0.2, extra={"residuals": [0.1]})
    assert CoresetSelection.from_json_dict(sel.json_dict()) == sel
