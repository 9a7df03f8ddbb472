import math
from itertools import combinations

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import mutual_info_score

import bagrank.metafunctions as mf
from bagrank.seeding import rng_from


# -- entropy / mutual information -----------------------------------------------


def test_entropy_hand_values():
    assert mf.entropy([0, 0, 1, 1]) == pytest.approx(1.0)
    assert mf.entropy([0, 0, 0]) == 0.0
    assert mf.entropy([0, 1, 2, 3]) == pytest.approx(2.0)
    assert mf.entropy([]) is None
    assert mf.entropy([-1, -1]) is None


def test_entropy_ignores_missing_codes():
    assert mf.entropy([0, 1, -1, 0, 1]) == pytest.approx(1.0)


@pytest.mark.parametrize("trial", range(10))
def test_entropy_matches_scipy(trial):
    rng = rng_from("entropy", trial)
    codes = rng.integers(0, 5, size=50)
    counts = np.bincount(codes)
    expected = scipy.stats.entropy(counts[counts > 0], base=2)
    assert mf.entropy(codes) == pytest.approx(expected, rel=1e-12)


@given(st.lists(st.integers(0, 7), min_size=1, max_size=60))
def test_entropy_bounds(codes):
    h = mf.entropy(codes)
    assert 0.0 <= h <= math.log2(len(set(codes))) + 1e-12


def test_mutual_information_hand_values():
    a = [0, 0, 1, 1]
    assert mf.mutual_information(a, a) == pytest.approx(1.0)
    assert mf.mutual_information(a, [0, 1, 0, 1]) == pytest.approx(0.0)
    assert mf.mutual_information([], []) is None


@pytest.mark.parametrize("trial", range(10))
def test_mutual_information_matches_sklearn(trial):
    rng = rng_from("mi", trial)
    a = rng.integers(0, 4, size=80)
    b = (a + rng.integers(0, 3, size=80)) % 5
    expected = mutual_info_score(a, b) / math.log(2)
    assert mf.mutual_information(a, b) == pytest.approx(expected, abs=1e-12)


@given(
    st.lists(st.integers(0, 4), min_size=2, max_size=40),
    st.integers(0, 2**32 - 1),
)
def test_mutual_information_symmetric_nonnegative(a, seed):
    b = rng_from("mi-pair", seed).integers(0, 4, size=len(a))
    ab = mf.mutual_information(a, b)
    assert ab == pytest.approx(mf.mutual_information(b, a), abs=1e-12)
    assert ab >= 0.0
    assert ab <= min(mf.entropy(a), mf.entropy(b)) + 1e-9


def test_mutual_information_joint_missing():
    # pairs with a missing half are dropped before counting
    a = [0, 0, 1, 1, -1, 0]
    b = [0, 0, 1, 1, 1, -1]
    assert mf.mutual_information(a, b) == pytest.approx(1.0)


# -- skewness / pearson / eta squared ---------------------------------------------


def test_skewness_hand_values():
    assert mf.skewness([1.0, 2.0, 3.0]) == pytest.approx(0.0)
    assert mf.skewness([1.0, 1.0, 1.0]) is None
    assert mf.skewness([1.0, 2.0]) is None
    assert mf.skewness([0.0, 0.0, 0.0, 10.0]) > 0.0


@pytest.mark.parametrize("trial", range(10))
def test_skewness_matches_scipy(trial):
    rng = rng_from("skew", trial)
    x = rng.normal(size=40) ** 3
    assert mf.skewness(x) == pytest.approx(scipy.stats.skew(x), rel=1e-10)


def test_skewness_ignores_nan():
    x = [1.0, np.nan, 2.0, 3.0, np.nan]
    assert mf.skewness(x) == pytest.approx(scipy.stats.skew([1.0, 2.0, 3.0]))


def test_pearson_hand_values():
    assert mf.pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert mf.pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert mf.pearson([1, 1, 1], [1, 2, 3]) is None
    assert mf.pearson([1.0], [2.0]) is None


@pytest.mark.parametrize("trial", range(10))
def test_pearson_matches_scipy(trial):
    rng = rng_from("pearson", trial)
    x = rng.normal(size=30)
    y = 0.3 * x + rng.normal(size=30)
    expected = scipy.stats.pearsonr(x, y).statistic
    assert mf.pearson(x, y) == pytest.approx(expected, rel=1e-10)


def test_pearson_drops_incomplete_pairs():
    x = [1.0, 2.0, np.nan, 3.0]
    y = [2.0, 4.0, 5.0, 6.0]
    assert mf.pearson(x, y) == pytest.approx(1.0)


def eta_squared_oracle(x, cls):
    x = np.asarray(x, dtype=np.float64)
    cls = np.asarray(cls)
    grand = x.mean()
    ssb = sum(
        (cls == g).sum() * (x[cls == g].mean() - grand) ** 2
        for g in np.unique(cls)
    )
    sst = ((x - grand) ** 2).sum()
    return ssb / sst


def test_eta_squared_hand_values():
    assert mf.eta_squared([0, 0, 1, 1], [0, 0, 1, 1]) == pytest.approx(1.0)
    assert mf.eta_squared([0, 1, 0, 1], [0, 0, 1, 1]) == pytest.approx(0.0)
    assert mf.eta_squared([1, 2, 3], [0, 0, 0]) is None
    assert mf.eta_squared([1, 1, 1, 1], [0, 0, 1, 1]) is None


@pytest.mark.parametrize("trial", range(10))
def test_eta_squared_matches_oracle(trial):
    rng = rng_from("eta", trial)
    cls = rng.integers(0, 3, size=60)
    x = rng.normal(size=60) + 0.5 * cls
    x[rng.random(60) < 0.1] = np.nan
    ok = ~np.isnan(x)
    expected = eta_squared_oracle(x[ok], cls[ok])
    assert mf.eta_squared(x, cls) == pytest.approx(expected, rel=1e-10)


def test_eta_squared_in_unit_interval():
    rng = rng_from("eta-bounds")
    for _ in range(20):
        x = rng.normal(size=25)
        cls = rng.integers(0, 4, size=25)
        v = mf.eta_squared(x, cls)
        if v is not None:
            assert 0.0 <= v <= 1.0


# -- maximal information coefficient ------------------------------------------------


def test_equipartition_rows_hand_values():
    v = np.array([1.0, 2.0, 3.0, 4.0])
    assert list(mf._equipartition_rows(v, 2)) == [0, 0, 1, 1]
    tied = np.array([1.0, 2.0, 2.0, 3.0])
    assert list(mf._equipartition_rows(tied, 2)) == [0, 0, 0, 1]


def best_column_mi_bruteforce(u, rows, a):
    """Exhaustive search over contiguous column partitions of sorted u."""
    order = np.argsort(u, kind="stable")
    u, r = u[order], rows[order]
    n = u.size
    cutpos = [i + 1 for i in range(n - 1) if u[i] < u[i + 1]]
    best = 0.0
    for ncuts in range(0, a):
        for cuts in combinations(cutpos, ncuts):
            edges = [0, *cuts, n]
            labels = np.zeros(n, dtype=np.int64)
            for ci, (s, e) in enumerate(zip(edges[:-1], edges[1:])):
                labels[s:e] = ci
            best = max(best, mf.mutual_information(labels, r))
    return best


def mic_bruteforce(x, y):
    def oriented(u, v):
        order = np.lexsort((v, u))
        u, v = u[order], v[order]
        n = u.size
        if u.min() == u.max() or v.min() == v.max():
            return None
        budget = max(int(np.floor(n**0.6)), 4)
        best = 0.0
        for b in range(2, budget // 2 + 1):
            rows = mf._equipartition_rows(v, b)
            for a in range(2, budget // b + 1):
                raw = best_column_mi_bruteforce(u, rows, a)
                best = max(best, raw / math.log2(min(a, b)))
        return min(best, 1.0)

    first = oriented(np.asarray(x, float), np.asarray(y, float))
    second = oriented(np.asarray(y, float), np.asarray(x, float))
    if first is None or second is None:
        return None
    return max(first, second)


@pytest.mark.parametrize("trial", range(12))
def test_mic_matches_exhaustive_search(trial):
    rng = rng_from("mic-oracle", trial)
    n = int(rng.integers(8, 21))
    # few distinct values per axis keeps every cut position below the
    # clump cap, so the dynamic program must equal the exhaustive search
    x = rng.integers(0, 7, size=n).astype(np.float64)
    y = ((x + rng.integers(0, 3, size=n)) % 5).astype(np.float64)
    expected = mic_bruteforce(x, y)
    got = mf.mic(x, y)
    if expected is None:
        assert got is None
    else:
        assert got == pytest.approx(expected, abs=1e-9)


def test_mic_perfect_line_is_one():
    x = np.arange(40, dtype=np.float64)
    assert mf.mic(x, 3.0 * x - 5.0) == pytest.approx(1.0)


def test_mic_noiseless_parabola_is_high():
    x = np.linspace(-2, 2, 60)
    assert mf.mic(x, x * x) >= 0.8


def test_mic_independent_noise_is_low():
    rng = rng_from("mic-noise")
    x = rng.normal(size=120)
    y = rng.normal(size=120)
    assert mf.mic(x, y) < 0.5


def test_mic_symmetric_and_permutation_invariant():
    rng = rng_from("mic-sym")
    x = rng.normal(size=70)
    y = x**2 + rng.normal(size=70)
    assert mf.mic(x, y) == mf.mic(y, x)
    perm = rng.permutation(70)
    assert mf.mic(x[perm], y[perm]) == mf.mic(x, y)


def test_mic_degenerate_inputs():
    assert mf.mic([1.0, 1.0, 1.0, 1.0], [1.0, 2.0, 3.0, 4.0]) is None
    assert mf.mic([1.0, 2.0], [1.0, 2.0]) is None
    x = [1.0, np.nan, 2.0]
    assert mf.mic(x, x) is None  # 2 complete pairs


def test_mic_subsample_deterministic_and_bounded():
    rng = rng_from("mic-big")
    x = rng.normal(size=1000)
    y = np.sin(x) + 0.1 * rng.normal(size=1000)
    v1 = mf.mic(x, y)
    v2 = mf.mic(x, y)
    assert v1 == v2
    assert 0.0 <= v1 <= 1.0
    perm = rng.permutation(1000)
    assert mf.mic(x[perm], y[perm]) == v1


# -- class overlap (r-value) --------------------------------------------------------


def test_r_value_separated_clusters_zero():
    x = np.concatenate([np.arange(10.0), np.arange(10.0) + 1000.0])[:, None]
    y = np.array([0] * 10 + [1] * 10)
    assert mf.r_value(x, y) == [0.0, 0.0]


def test_r_value_engulfed_class_is_one():
    centers = np.arange(5) * 50.0
    x0 = centers[:, None]
    x1 = (centers[:, None] + np.linspace(-0.7, 0.7, 7)[None, :]).reshape(-1, 1)
    x = np.vstack([x0, x1])
    y = np.array([0] * 5 + [1] * 35)
    vals = mf.r_value(x, y)
    assert vals[0] == 1.0  # every class-0 point sits inside class-1 points


def test_r_value_theta_is_strict():
    x = np.array([0.0, 100.0, 101.0, 1.0, 2.0, 3.0])[:, None]
    y = np.array([0, 0, 0, 1, 1, 1])
    assert mf.r_value(x, y, k=3, theta=2) == [pytest.approx(1 / 3), 0.0]
    assert mf.r_value(x, y, k=3, theta=3) == [0.0, 0.0]


def test_r_value_distance_ties_included():
    x = np.array([0.0, 10.0, 10.0, 10.0, 10.0])[:, None]
    y = np.array([0, 1, 1, 1, 1])
    # all four class-1 points tie at the k-th distance; a plain top-k
    # cutoff would keep 3 of them and 3 is not > theta=3
    assert mf.r_value(x, y, k=3, theta=3) == [1.0, 0.0]


def test_r_value_pair_count_and_row_order():
    rng = rng_from("rv-perm")
    x = rng.normal(size=(45, 3))
    y = rng.integers(0, 3, size=45)
    vals = mf.r_value(x, y)
    assert len(vals) == 6
    perm = rng.permutation(45)
    assert mf.r_value(x[perm], y[perm]) == vals


# -- rank values / post-processing ---------------------------------------------------


def test_rank_values_sorted_by_dataset():
    table = {"b": {"w1": 2.0}, "a": {"w1": 5.0}, "c": {"w2": 1.0}}
    assert mf.rank_values("w1", table) == [5.0, 2.0]
    assert mf.rank_values("w2", table) == [1.0]
    assert mf.rank_values("w3", table) == []


def test_postprocess_hand_values():
    vals = [1.0, 2.0, 3.0, 4.0]
    assert mf.postprocess(vals, "avg") == pytest.approx(2.5)
    assert mf.postprocess(vals, "max") == 4.0
    assert mf.postprocess(vals, "min") == 1.0
    assert mf.postprocess(vals, "var") == pytest.approx(1.25)
    assert mf.postprocess(vals, "sd") == pytest.approx(math.sqrt(1.25))


def test_postprocess_histogram_uniform():
    vals = np.arange(10, dtype=np.float64)
    for h in range(1, 11):
        assert mf.postprocess(vals, f"hist{h}") == pytest.approx(0.1)


def test_postprocess_degenerate_cases():
    assert mf.postprocess([], "avg") is None
    assert mf.postprocess([5.0], "sd") is None
    assert mf.postprocess([5.0], "var") is None
    assert mf.postprocess([5.0], "avg") == 5.0
    assert mf.postprocess([2.0, 2.0], "hist1") == 1.0
    assert mf.postprocess([2.0, 2.0], "hist7") == 0.0


def test_postprocess_rejects_bad_input():
    with pytest.raises(ValueError):
        mf.postprocess([1.0, np.nan], "avg")
    with pytest.raises(ValueError):
        mf.postprocess([1.0], "hist11")
    with pytest.raises(ValueError):
        mf.postprocess([1.0], "median")


@settings(max_examples=40)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30))
def test_postprocess_histogram_sums_to_one(vals):
    total = sum(mf.postprocess(vals, f"hist{h}") for h in range(1, 11))
    assert total == pytest.approx(1.0)


def test_posts_tuple():
    assert len(mf.POSTS) == 15
    assert mf.POSTS[:5] == ("avg", "max", "min", "sd", "var")
    assert mf.POSTS[5] == "hist1" and mf.POSTS[-1] == "hist10"
