import numpy as np
import pytest

from lineloss.cleaning import (build_candidate_set, clean_scada, dbscan_cluster, detect_outliers,
                               forest_fit, iterative_impute, linear_interp_init, lof_score)
from lineloss.cleaning.outliers import NOISE, cluster_lof
from lineloss.cleaning.scada import CleaningParams, flag_cells
from lineloss.errors import ContractError
from lineloss.features import ScadaSeries


def brute_lof(x, k):
    """All-points LOF from a dense distance matrix (independent of the KD-tree path)."""
    x = np.asarray(x, float)
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    nb = np.argsort(d, axis=1, kind="stable")[:, :k]
    kdist = d[np.arange(len(x)), nb[:, -1]]
    reach = np.maximum(kdist[nb], d[np.arange(len(x))[:, None], nb])
    lrd = 1.0 / np.maximum(reach.mean(axis=1), 1e-12)
    return lrd[nb].mean(axis=1) / lrd


def brute_dbscan_components(z, eps, min_pts):
    """Clusters as sets via connected components over core points (order-free)."""
    d = np.sqrt(((z[:, None] - z[None]) ** 2).sum(-1))
    nbr = d <= eps
    core = nbr.sum(1) >= min_pts
    comp = -np.ones(len(z), int)
    c = 0
    for i in range(len(z)):
        if core[i] and comp[i] < 0:
            stack = [i]
            comp[i] = c
            while stack:
                p = stack.pop()
                for q in np.flatnonzero(nbr[p] & core):
                    if comp[q] < 0:
                        comp[q] = c
                        stack.append(q)
            c += 1
    return {frozenset(np.flatnonzero(comp == k)) for k in range(c)}, core


# -- DBSCAN / candidates / LOF ------------------------------------------------------

def test_dbscan_identical_points_one_cluster():
    labels = dbscan_cluster(np.ones((10, 2)), min_pts=3)
    assert set(labels) == {0}


def test_dbscan_far_points_are_noise():
    x = np.arange(5.0)[:, None] * 10
    assert np.all(dbscan_cluster(x, eps=1.0, min_pts=2, standardize=False) == NOISE)


def test_dbscan_core_components_match_oracle():
    rng = np.random.default_rng(2)
    z = np.vstack([rng.normal(0, 0.3, (40, 2)), rng.normal(0, 0.3, (40, 2)) + 30, rng.uniform(-5, 35, (5, 2))])
    eps, min_pts = 0.5, 4
    labels = dbscan_cluster(z, eps=eps, min_pts=min_pts, standardize=False)
    comps, core = brute_dbscan_components(z, eps, min_pts)
    got = {frozenset(np.flatnonzero(core & (labels == c))) for c in set(labels) - {NOISE}}
    assert got == comps
    assert len(comps) >= 2


def test_candidate_set_rules():
    # symmetric pair around center 0 with radius 1: both admitted under >=
    c = build_candidate_set(np.array([[-1.0], [1.0]]), np.array([0, 0]))
    assert list(c.indices) == [0, 1]
    # identical points: radius 0 admits nobody
    assert len(build_candidate_set(np.zeros((4, 2)), np.zeros(4, int))) == 0
    # noise always admitted
    c = build_candidate_set(np.array([[0.0], [0.1], [9.0]]), np.array([0, 0, NOISE]))
    assert 2 in c.indices
    assert np.isnan(c.distances[list(c.indices).index(2)])


def test_lof_simple_cases():
    assert np.allclose(lof_score([0, 1], np.array([[0.0], [1.0]]), k=1), 1.0)
    g = np.array([[i, j] for i in range(9) for j in range(9)], float)
    centre = 4 * 9 + 4
    assert 0.9 <= lof_score([centre], g, k=4)[0] <= 1.1
    pts = np.vstack([np.random.default_rng(0).normal(0, 1, (50, 2)), [[100.0, 100.0]]])
    assert lof_score([50], pts, k=5)[0] > 5


def test_lof_candidate_scores_equal_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(5):
        x = np.vstack([rng.normal(0, 1, (120, 2)), rng.uniform(-8, 8, (8, 2))])
        cand = np.sort(rng.choice(len(x), 30, replace=False))
        np.testing.assert_allclose(lof_score(cand, x, k=10), brute_lof(x, 10)[cand], rtol=0, atol=1e-9)


def test_lof_handles_duplicates():
    x = np.vstack([np.zeros((12, 2)), [[1.0, 1.0]]])
    s = lof_score(np.arange(13), x, k=3)
    assert np.all(np.isfinite(s))


def test_detect_outliers_examples():
    assert list(detect_outliers([1, 1, 1, 1, 100])) == []   # 100 < mean + 4 sd for n=5
    s = np.r_[np.ones(30), 100.0]
    assert list(detect_outliers(s)) == [30]
    assert list(detect_outliers([2.0, 2.0, 2.0])) == []
    assert list(detect_outliers([7.0])) == []
    with pytest.raises(ContractError):
        detect_outliers([])


def test_detect_outliers_arithmetic_oracle():
    s = np.array([1, 1, 1, 1, 100.0])
    thr = s.mean() + 4 * np.sqrt(((s - s.mean()) ** 2).mean())
    assert thr == pytest.approx(179.2)
    # With population SD no point of a 5-sample set can sit 4 SD out:
    # the largest attainable z-score is sqrt(n - 1) = 2.
    assert (s.max() - s.mean()) / s.std() == pytest.approx(2.0)
    assert detect_outliers(s).size == 0


def test_cluster_lof_is_scale_invariant():
    rng = np.random.default_rng(4)
    x = np.vstack([rng.normal(0, 1, (200, 2)), [[15.0, -15.0]]])
    a = cluster_lof(x, k=10)[2]
    b = cluster_lof(x * 1000.0, k=10)[2]
    assert 200 in a
    np.testing.assert_array_equal(a, b)


# -- forest -----------------------------------------------------------------------

def test_forest_constant_and_stump():
    x = np.random.default_rng(0).normal(size=(40, 3))
    np.testing.assert_allclose(forest_fit(x, np.full(40, 3.5), n_trees=5).predict(x), 3.5)
    y = x[:, 0] * 2
    np.testing.assert_allclose(forest_fit(x, y, n_trees=5, max_depth=0).predict(x), y.mean())


def test_forest_learns_linear_map():
    x = np.linspace(0, 10, 400)[:, None]
    y = 2 * x[:, 0]
    f = forest_fit(x[::2], y[::2], n_trees=30, seed=1)
    err = np.sqrt(np.mean((f.predict(x[1::2]) - y[1::2]) ** 2))
    assert err < 0.1 * y.std()


def test_forest_leaves_respect_min_leaf():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=(200, 4)), rng.normal(size=200)
    f = forest_fit(x, y, n_trees=3, min_leaf=7, seed=0)
    for t in f.trees:
        leaf = t.apply(x)
        assert np.bincount(leaf)[np.unique(leaf)].min() >= 1
        assert t.count[t.leaves].min() >= 7


def test_forest_contract_errors():
    with pytest.raises(ContractError):
        forest_fit(np.empty((0, 2)), np.empty(0))
    with pytest.raises(ContractError):
        forest_fit(np.array([[np.nan]] * 6), np.ones(6))


# -- imputation -------------------------------------------------------------------

def test_linear_interp_examples():
    np.testing.assert_array_equal(linear_interp_init(np.array([1.0, np.nan, 3.0])), [1, 2, 3])
    np.testing.assert_array_equal(linear_interp_init(np.array([np.nan, 5.0, 5.0])), [5, 5, 5])
    x = np.arange(4.0)
    np.testing.assert_array_equal(linear_interp_init(x), x)


def test_impute_no_missing_is_identity():
    x = np.random.default_rng(0).normal(size=(30, 3))
    out, rep = iterative_impute(x)
    np.testing.assert_array_equal(out, x)
    assert rep.iterations_used == 0


def test_impute_duplicate_feature_recovered():
    rng = np.random.default_rng(8)
    t = np.arange(300)
    a = np.sin(t / 7.0) + 0.3 * rng.normal(size=300)
    table = np.column_stack([a, a.copy(), np.cos(t / 11.0)])
    miss = rng.random(300) < 0.2
    table[miss, 1] = np.nan
    out, rep = iterative_impute(table, n_trees=20, seed=0)
    err = np.abs(out[miss, 1] - a[miss])
    assert np.median(err) < 0.1 * a.std()
    np.testing.assert_array_equal(out[~miss], np.column_stack([a, a, np.cos(t / 11.0)])[~miss])
    assert rep.imputed_mask[:, 1].sum() == miss.sum()


def test_fully_missing_column_uses_donors():
    rng = np.random.default_rng(1)
    base = [rng.normal(size=(80, 1)) for _ in range(3)]
    tables = [np.column_stack([b, 2 * b[:, 0] + 1, rng.normal(size=80)]) for b in base]
    target = tables[0].copy()
    target[:, 1] = np.nan
    out, rep = iterative_impute(target, n_trees=10, donors=tables[1:])
    assert rep.transposed_columns == (1,)
    assert np.corrcoef(out[:, 1], tables[0][:, 1])[0, 1] > 0.9
    _, rep2 = iterative_impute(target, n_trees=10)
    assert rep2.fallback_columns == (1,)


def test_clean_scada_keeps_observed_and_fills_gaps():
    rng = np.random.default_rng(0)
    t = 120
    ts = np.datetime64("2017-01-01T00:00") + np.arange(t).astype("timedelta64[h]")
    elec = rng.normal(10, 1, size=(2, t, 11))
    elec[0, 50, 3] = 500.0              # spike
    dirty = elec.copy()
    holes = rng.random(dirty.shape) < 0.05
    dirty[holes] = np.nan
    s = ScadaSeries(ts, dirty, np.ones(t))
    cleaned, rep = clean_scada(s, CleaningParams(n_trees=5, max_rounds=2))
    assert not np.isnan(cleaned.electrical).any()
    keep = ~holes & ~rep.outlier_flags
    np.testing.assert_array_equal(cleaned.electrical[keep], dirty[keep])
    assert rep.outlier_flags[0, 50, 3]
    assert not (rep.imputed_mask & ~np.isnan(dirty) & ~rep.outlier_flags).any()


def test_flag_cells_picks_deviant_channel():
    rng = np.random.default_rng(0)
    tab = rng.normal(size=(100, 4))
    tab[10, 2] = 30
    f = flag_cells(tab, np.array([10]))
    assert f[10].tolist() == [False, False, True, False]
