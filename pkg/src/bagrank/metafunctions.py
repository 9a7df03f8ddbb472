"""Statistical meta-functions over dataset columns.

Every function returns a float or None for undefined inputs (all
missing, constant where spread is required, too few values). All
functions are invariant to row permutation: count-based kernels work on
integer tables, and floating-point reductions run over value-sorted
copies so summation order never depends on row order.
"""

from __future__ import annotations

import numpy as np

MIC_SUBSAMPLE_CAP = 256
MIC_CLUMP_FACTOR = 5
R_VALUE_K = 7
R_VALUE_THETA = 2


def _clean_numeric(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[~np.isnan(x)]


def _joint_nonmissing(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ok = ~(np.isnan(x) | np.isnan(y))
    return x[ok], y[ok]


def entropy(values) -> float | None:
    """Shannon entropy in bits of the empirical distribution.

    Accepts integer codes; negative codes mean missing.
    """
    codes = np.asarray(values, dtype=np.int64)
    codes = codes[codes >= 0]
    if codes.size == 0:
        return None
    counts = np.bincount(codes)
    counts = counts[counts > 0]
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def mutual_information(a, b) -> float | None:
    """I(A;B) in bits from the joint distribution of jointly observed pairs."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    ok = (a >= 0) & (b >= 0)
    a, b = a[ok], b[ok]
    if a.size == 0:
        return None
    na = int(a.max()) + 1
    nb = int(b.max()) + 1
    joint = np.bincount(a * nb + b, minlength=na * nb).reshape(na, nb)
    n = joint.sum()
    pa = joint.sum(axis=1) / n
    pb = joint.sum(axis=0) / n
    pj = joint / n
    mask = pj > 0
    mi = (pj[mask] * np.log2(pj[mask] / np.outer(pa, pb)[mask])).sum()
    return float(max(mi, 0.0))


def skewness(x) -> float | None:
    """m3 / m2^1.5 with population moments; needs >= 3 values and spread."""
    v = np.sort(_clean_numeric(x))
    if v.size < 3:
        return None
    centered = v - v.mean()
    m2 = (centered * centered).mean()
    if m2 <= 0:
        return None
    m3 = (centered * centered * centered).mean()
    return float(m3 / m2**1.5)


def pearson(x, y) -> float | None:
    x, y = _joint_nonmissing(x, y)
    if x.size < 2:
        return None
    order = np.lexsort((y, x))
    x, y = x[order], y[order]
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = (xc * xc).sum()
    syy = (yc * yc).sum()
    if sxx <= 0 or syy <= 0:
        return None
    r = (xc * yc).sum() / np.sqrt(sxx * syy)
    return float(min(max(r, -1.0), 1.0))


def eta_squared(x, cls) -> float | None:
    """Between-group over total sum of squares of x grouped by class."""
    x = np.asarray(x, dtype=np.float64)
    cls = np.asarray(cls, dtype=np.int64)
    ok = ~np.isnan(x) & (cls >= 0)
    x, cls = x[ok], cls[ok]
    if x.size == 0:
        return None
    order = np.lexsort((x, cls))
    x, cls = x[order], cls[order]
    groups = np.unique(cls)
    if groups.size < 2:
        return None
    grand = x.mean()
    centered = x - grand
    ss_total = (centered * centered).sum()
    if ss_total <= 0:
        return None
    ss_between = 0.0
    for g in groups:
        xg = x[cls == g]
        ss_between += xg.size * (xg.mean() - grand) ** 2
    return float(min(max(ss_between / ss_total, 0.0), 1.0))


def _equipartition_rows(v: np.ndarray, b: int) -> np.ndarray:
    """Equal-frequency row labels in [0, b); equal values share a row."""
    n = v.shape[0]
    vs = np.sort(v)
    positions = (np.arange(1, b) * n) // b
    edges = vs[np.maximum(positions - 1, 0)]
    return np.searchsorted(edges, v, side="left")


def _optimized_axis_mi(u: np.ndarray, rows: np.ndarray, a: int, b: int,
                       clump_factor: int) -> float:
    """Best I(P;Q) over partitions of the u axis into at most `a` columns,
    given fixed row labels. Dynamic program over clumps; column score is
    additive so each level is a max-plus reduction."""
    n = u.shape[0]
    order = np.argsort(u, kind="stable")
    u = u[order]
    r = rows[order]
    # cut after position p allowed only between distinct u values
    cuts = np.flatnonzero(u[:-1] < u[1:])
    cap = clump_factor * a
    if cuts.size + 1 > cap:
        targets = np.arange(1, cap) * n / cap
        pick = np.searchsorted(cuts + 1, targets, side="left")
        pick = np.clip(pick, 0, cuts.size - 1)
        cuts = np.unique(cuts[pick])
    bounds = np.concatenate(([0], cuts + 1, [n]))  # clump edges, m clumps
    m = bounds.size - 1
    onehot = np.zeros((n, b))
    onehot[np.arange(n), r] = 1.0
    cum = np.zeros((m + 1, b))
    cum[1:] = np.cumsum(np.add.reduceat(onehot, bounds[:-1], axis=0), axis=0)
    csum = cum.sum(axis=1)

    def phi(z):
        out = np.zeros_like(z)
        pos = z > 0
        out[pos] = z[pos] * np.log2(z[pos])
        return out

    # g[s, e] = column score of clumps (s, e]; s >= e rows give an empty
    # column (score 0) and s > e must never win, so mask them out
    diff = cum[None, :, :] - cum[:, None, :]  # (s, e, b)
    tot = csum[None, :] - csum[:, None]
    g = (phi(diff).sum(axis=2) - phi(tot)) / n
    g[np.tril_indices(m + 1, k=-1)] = -np.inf
    row_counts = cum[m]
    h_rows = float(np.log2(n) - phi(row_counts).sum() / n)
    best = np.full(m + 1, -np.inf)
    best[0] = 0.0  # zero clumps consumed, zero columns
    top = -np.inf
    for _t in range(a):
        cand = best[:, None] + g
        best = cand.max(axis=0)
        top = max(top, best[m] + h_rows)
    return max(top, 0.0)


def _mic_oriented(u: np.ndarray, v: np.ndarray, cap: int,
                  clump_factor: int) -> float | None:
    """One orientation: rows equipartition v, columns optimized over u.
    Subsample (if needed) is chosen on (u, v)-lexsorted values."""
    n = u.shape[0]
    order = np.lexsort((v, u))
    u, v = u[order], v[order]
    if n > cap:
        idx = np.unique(np.round(np.linspace(0, n - 1, cap)).astype(np.int64))
        u, v = u[idx], v[idx]
        n = u.shape[0]
    if u.min() == u.max() or v.min() == v.max():
        return None
    budget = max(int(np.floor(n**0.6)), 4)
    best = 0.0
    for b in range(2, budget // 2 + 1):
        rows = _equipartition_rows(v, b)
        for a in range(2, budget // b + 1):
            mi = _optimized_axis_mi(u, rows, a, b, clump_factor)
            best = max(best, mi / np.log2(min(a, b)))
    return float(min(best, 1.0))


def mic(x, y, cap: int = MIC_SUBSAMPLE_CAP,
        clump_factor: int = MIC_CLUMP_FACTOR) -> float | None:
    """Maximal information coefficient, grid budget a*b <= n^0.6.

    One axis is equal-frequency partitioned, the other optimized by
    dynamic programming; both orientations are searched so the result is
    symmetric in (x, y).
    """
    x, y = _joint_nonmissing(x, y)
    if x.size < 4:
        return None
    first = _mic_oriented(x, y, cap, clump_factor)
    second = _mic_oriented(y, x, cap, clump_factor)
    if first is None or second is None:
        return None
    return max(first, second)


def r_value(encoded: np.ndarray, target: np.ndarray, k: int = R_VALUE_K,
            theta: int = R_VALUE_THETA) -> list[float]:
    """Class-overlap values, one per ordered class pair (i, j): the
    fraction of class-i instances with more than `theta` of their k
    nearest neighbours (within classes i and j, self excluded) lying in
    class j. Neighbourhoods include all points tied with the k-th
    distance, keeping the value independent of row order.
    """
    encoded = np.asarray(encoded, dtype=np.float64)
    target = np.asarray(target, dtype=np.int64)
    classes = np.unique(target[target >= 0])
    values = []
    for ci in classes:
        for cj in classes:
            if ci == cj:
                continue
            rows_i = np.flatnonzero(target == ci)
            rows_j = np.flatnonzero(target == cj)
            pool = np.concatenate([rows_i, rows_j])
            a = encoded[rows_i]
            p = encoded[pool]
            d2 = (
                (a * a).sum(axis=1)[:, None]
                + (p * p).sum(axis=1)[None, :]
                - 2.0 * a @ p.T
            )
            d2[np.arange(rows_i.size), np.arange(rows_i.size)] = np.inf
            kk = min(k, pool.size - 1)
            kth = np.sort(d2, axis=1)[:, kk - 1]
            in_j = np.zeros(pool.size, dtype=bool)
            in_j[rows_i.size:] = True
            member = d2 <= kth[:, None]
            count_j = (member & in_j[None, :]).sum(axis=1)
            values.append(float((count_j > theta).mean()))
    return values


def rank_values(workflow: str, rank_table: dict[str, dict[str, float]]
                ) -> list[float]:
    """The workflow's rank on each training dataset (dataset id order)."""
    out = []
    for dataset_id in sorted(rank_table):
        r = rank_table[dataset_id].get(workflow)
        if r is not None:
            out.append(float(r))
    return out


POSTS = ("avg", "max", "min", "sd", "var") + tuple(
    f"hist{i}" for i in range(1, 11)
)


def postprocess(values, post: str) -> float | None:
    """Summarize a value multiset; None when the statistic is undefined."""
    vals = np.sort(np.asarray(list(values), dtype=np.float64))
    if vals.size and np.isnan(vals).any():
        raise ValueError("postprocess input must be NaN-free")
    if vals.size == 0:
        return None
    if post == "avg":
        return float(vals.mean())
    if post == "max":
        return float(vals.max())
    if post == "min":
        return float(vals.min())
    if post in ("sd", "var"):
        if vals.size < 2:
            return None
        var = float(vals.var())
        return var if post == "var" else float(np.sqrt(var))
    if post.startswith("hist"):
        h = int(post[4:])
        if not 1 <= h <= 10:
            raise ValueError(f"bad histogram bin: {post}")
        lo, hi = float(vals[0]), float(vals[-1])
        if hi <= lo:
            return 1.0 if h == 1 else 0.0
        counts, _ = np.histogram(vals, bins=10, range=(lo, hi))
        return float(counts[h - 1] / vals.size)
    raise ValueError(f"unknown post-processor: {post}")
