"""Base learners: CART trees, Gaussian/categorical naive Bayes, majority class.

Trees split on Gini impurity with numeric thresholds and
single-category-vs-rest categorical splits. Rows missing the split
feature follow the branch that received more observed training rows.
All learners predict integer class codes into the dataset's label set.
"""

from __future__ import annotations

import numpy as np

from .datasets import Dataset

UNLIMITED = -1


def gini(counts: np.ndarray) -> float:
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - (p * p).sum())


def _sweep_numeric(vals, labels, n_classes, n_node, min_leaf):
    """Best threshold split on one numeric column.

    Returns (gain, threshold) or None. Gain is the impurity decrease over
    observed rows, scaled by the observed fraction so features with many
    missing entries are penalized.
    """
    ok = ~np.isnan(vals)
    m = int(ok.sum())
    if m < 2 * min_leaf:
        return None
    v = vals[ok]
    y = labels[ok]
    order = np.argsort(v, kind="stable")
    v = v[order]
    y = y[order]
    onehot = np.zeros((m, n_classes))
    onehot[np.arange(m), y] = 1.0
    left = np.cumsum(onehot, axis=0)[:-1]  # counts left of each boundary
    total = left[-1] + onehot[-1]
    boundary = v[:-1] < v[1:]
    n_left = np.arange(1, m)
    valid = boundary & (n_left >= min_leaf) & (m - n_left >= min_leaf)
    if not valid.any():
        return None
    right = total[None, :] - left
    gini_l = 1.0 - (left * left).sum(axis=1) / (n_left * n_left)
    gini_r = 1.0 - (right * right).sum(axis=1) / ((m - n_left) * (m - n_left))
    child = (n_left * gini_l + (m - n_left) * gini_r) / m
    child = np.where(valid, child, np.inf)
    parent = gini(total)
    best = int(np.argmin(child))
    gain = (m / n_node) * (parent - child[best])
    thr = (v[best] + v[best + 1]) / 2.0
    if thr >= v[best + 1]:  # float midpoint collapse
        thr = v[best]
    return gain, thr


def _sweep_categorical(codes, labels, n_classes, n_node, min_leaf):
    """Best single-category-vs-rest split on one categorical column."""
    ok = codes >= 0
    m = int(ok.sum())
    if m < 2 * min_leaf:
        return None
    c = codes[ok]
    y = labels[ok]
    n_cats = int(c.max()) + 1
    counts = np.bincount(c * n_classes + y, minlength=n_cats * n_classes)
    counts = counts.reshape(n_cats, n_classes).astype(np.float64)
    total = counts.sum(axis=0)
    n_in = counts.sum(axis=1)
    present = n_in > 0
    n_out = m - n_in
    valid = present & (n_in >= min_leaf) & (n_out >= min_leaf)
    if not valid.any():
        return None
    out = total[None, :] - counts
    with np.errstate(invalid="ignore", divide="ignore"):
        gini_in = 1.0 - (counts * counts).sum(axis=1) / (n_in * n_in)
        gini_out = 1.0 - (out * out).sum(axis=1) / (n_out * n_out)
    child = (n_in * np.nan_to_num(gini_in) + n_out * np.nan_to_num(gini_out)) / m
    child = np.where(valid, child, np.inf)
    parent = gini(total)
    best = int(np.argmin(child))
    gain = (m / n_node) * (parent - child[best])
    return gain, best


class Tree:
    """Flat-array binary tree. Internal node i splits feature[i]; leaves
    have feature[i] == -1 and carry the class distribution."""

    def __init__(self, n_classes: int):
        self.n_classes = n_classes
        self.feature: list[int] = []
        self.threshold: list[float] = []  # split category code for categorical
        self.is_cat: list[bool] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.miss_left: list[bool] = []
        self.dist: list[np.ndarray] = []

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.is_cat.append(False)
        self.left.append(-1)
        self.right.append(-1)
        self.miss_left.append(True)
        self.dist.append(None)
        return len(self.feature) - 1

    def predict_all(self, ds: Dataset, rows=None) -> np.ndarray:
        idx = np.arange(ds.n_rows) if rows is None else np.asarray(rows)
        cols = [c.values for c in ds.columns]
        out = np.empty(idx.shape[0], dtype=np.int64)
        stack = [(0, np.arange(idx.shape[0]))]
        while stack:
            node, pos = stack.pop()
            if pos.size == 0:
                continue
            f = self.feature[node]
            if f < 0:
                out[pos] = int(np.argmax(self.dist[node]))
                continue
            vals = cols[f][idx[pos]]
            if self.is_cat[node]:
                missing = vals < 0
                go_left = vals == int(self.threshold[node])
            else:
                missing = np.isnan(vals)
                go_left = vals <= self.threshold[node]
            go_left = np.where(missing, self.miss_left[node], go_left)
            stack.append((self.left[node], pos[go_left]))
            stack.append((self.right[node], pos[~go_left]))
        return out

    def predict(self, ds: Dataset, row: int) -> int:
        return int(self.predict_all(ds, np.array([row]))[0])

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def max_depth(self) -> int:
        depth = {0: 0}
        best = 0
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
                best = max(best, depth[i] + 1)
        return best


def best_split(ds: Dataset, rows: np.ndarray, labels: np.ndarray, n_classes: int,
               min_leaf: int):
    """Highest-gain split over all features; ties take the lowest feature
    id (and lowest threshold within a feature). None if no valid split."""
    n_node = rows.shape[0]
    best = None
    for f, col in enumerate(ds.columns):
        sub = col.values[rows]
        if col.kind == "numeric":
            res = _sweep_numeric(sub, labels, n_classes, n_node, min_leaf)
        else:
            res = _sweep_categorical(sub, labels, n_classes, n_node, min_leaf)
        if res is None:
            continue
        gain, thr = res
        if best is None or gain > best[0]:
            best = (gain, f, thr)
    return best


def fit_tree(ds: Dataset, rows, max_depth: int = UNLIMITED, min_leaf: int = 2,
             seed: int = 0) -> Tree:
    """Grow a CART tree on the given rows.

    Zero-gain splits are taken when no positive-gain split exists, so
    parity-style structure is still reachable at depth 2. The seed is
    accepted for interface stability; growth itself is deterministic.
    """
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("fit_tree needs at least one row")
    n_classes = ds.n_classes
    tree = Tree(n_classes)
    root = tree.add_node()
    stack = [(root, rows, 0)]
    while stack:
        node, node_rows, depth = stack.pop()
        labels = ds.target[node_rows]
        counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
        tree.dist[node] = counts / counts.sum()
        if counts.max() == counts.sum():  # pure
            continue
        if max_depth != UNLIMITED and depth >= max_depth:
            continue
        found = best_split(ds, node_rows, labels, n_classes, min_leaf)
        if found is None:
            continue
        _, f, thr = found
        col = ds.columns[f]
        vals = col.values[node_rows]
        if col.kind == "categorical":
            missing = vals < 0
            go_left = vals == int(thr)
        else:
            missing = np.isnan(vals)
            go_left = vals <= thr
        n_left = int((go_left & ~missing).sum())
        n_right = int((~go_left & ~missing).sum())
        miss_left = n_left >= n_right
        go_left = np.where(missing, miss_left, go_left)
        tree.feature[node] = f
        tree.threshold[node] = float(thr)
        tree.is_cat[node] = col.kind == "categorical"
        tree.miss_left[node] = miss_left
        left = tree.add_node()
        right = tree.add_node()
        tree.left[node] = left
        tree.right[node] = right
        stack.append((left, node_rows[go_left], depth + 1))
        stack.append((right, node_rows[~go_left], depth + 1))
    return tree


def fit_stump(ds: Dataset, rows, depth: int) -> Tree:
    if depth not in (1, 2, 3):
        raise ValueError("stump depth must be 1, 2 or 3")
    return fit_tree(ds, rows, max_depth=depth, min_leaf=1)


class NaiveBayes:
    """Gaussian numeric likelihoods, Laplace-smoothed categorical
    frequencies, empirical class priors. Missing features are skipped."""

    def __init__(self, ds: Dataset, rows: np.ndarray):
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == 0:
            raise ValueError("naive bayes needs at least one row")
        n_classes = ds.n_classes
        labels = ds.target[rows]
        counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
        with np.errstate(divide="ignore"):
            self.log_prior = np.where(
                counts > 0, np.log(counts / counts.sum()), -np.inf
            )
        self.n_classes = n_classes
        self.num_mean, self.num_var = [], []
        for col in ds.numeric_columns():
            mean = np.zeros(n_classes)
            var = np.full(n_classes, 1e-9)
            vals = col.values[rows]
            for k in range(n_classes):
                v = np.sort(vals[(labels == k) & ~np.isnan(vals)])
                if v.size:
                    mean[k] = v.mean()
                    var[k] = max(v.var(), 1e-9)
            self.num_mean.append(mean)
            self.num_var.append(var)
        self.cat_logp = []
        for col, width in zip(
            ds.categorical_columns(),
            [len(c.vocabulary) for c in ds.categorical_columns()],
        ):
            vals = col.values[rows]
            table = np.ones((max(width, 1), n_classes))  # Laplace alpha=1
            ok = vals >= 0
            np.add.at(table, (vals[ok], labels[ok]), 1.0)
            self.cat_logp.append(np.log(table / table.sum(axis=0, keepdims=True)))

    def predict_all(self, ds: Dataset, rows=None) -> np.ndarray:
        idx = np.arange(ds.n_rows) if rows is None else np.asarray(rows)
        score = np.tile(self.log_prior, (idx.shape[0], 1))
        for i, col in enumerate(ds.numeric_columns()):
            vals = col.values[idx]
            ok = ~np.isnan(vals)
            if not ok.any():
                continue
            x = vals[ok, None]
            mean, var = self.num_mean[i], self.num_var[i]
            ll = -0.5 * (np.log(2 * np.pi * var) + (x - mean) ** 2 / var)
            score[ok] += ll
        for i, col in enumerate(ds.categorical_columns()):
            vals = col.values[idx]
            ok = vals >= 0
            if not ok.any():
                continue
            score[ok] += self.cat_logp[i][vals[ok]]
        return np.argmax(score, axis=1).astype(np.int64)

    def predict(self, ds: Dataset, row: int) -> int:
        return int(self.predict_all(ds, np.array([row]))[0])


class MajorityClass:
    """Constant predictor of the modal training class (ties by label order)."""

    def __init__(self, ds: Dataset, rows: np.ndarray):
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == 0:
            raise ValueError("majority class needs at least one row")
        counts = np.bincount(ds.target[rows], minlength=ds.n_classes)
        self.label = int(np.argmax(counts))

    def predict_all(self, ds: Dataset, rows=None) -> np.ndarray:
        n = ds.n_rows if rows is None else np.asarray(rows).shape[0]
        return np.full(n, self.label, dtype=np.int64)

    def predict(self, ds: Dataset, row: int) -> int:
        return self.label


def fit_naive_bayes(ds: Dataset, rows) -> NaiveBayes:
    return NaiveBayes(ds, rows)


def fit_majority(ds: Dataset, rows) -> MajorityClass:
    return MajorityClass(ds, rows)


def accuracy(true_labels: np.ndarray, predicted: np.ndarray) -> float:
    true_labels = np.asarray(true_labels)
    predicted = np.asarray(predicted)
    if true_labels.shape[0] == 0:
        raise ValueError("accuracy of empty label sequence")
    return float((true_labels == predicted).mean())


def cohen_kappa(true_labels: np.ndarray, predicted: np.ndarray) -> float:
    """Chance-corrected agreement. Degenerate marginals (p_e = 1) give
    1 for perfect agreement and 0 otherwise."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if true_labels.shape[0] == 0 or true_labels.shape != predicted.shape:
        raise ValueError("label sequences must be equal nonzero length")
    n = true_labels.shape[0]
    k = int(max(true_labels.max(), predicted.max())) + 1
    p_o = float((true_labels == predicted).mean())
    row = np.bincount(true_labels, minlength=k) / n
    col = np.bincount(predicted, minlength=k) / n
    p_e = float((row * col).sum())
    if 1.0 - p_e < 1e-12:
        return 1.0 if p_o >= 1.0 - 1e-12 else 0.0
    return (p_o - p_e) / (1.0 - p_e)
