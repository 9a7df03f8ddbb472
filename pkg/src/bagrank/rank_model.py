"""Gradient-boosted pairwise ranking model.

Second-order boosting of regression trees on a pairwise logistic
objective over dataset groups. Split gain and leaf weights follow the
standard second-order formulation: gain is the improvement of
0.5 * G^2/(H + lambda), leaves take -G/(H + lambda). Rows missing a
split feature are tried on both sides of every candidate and the side
with the higher gain is stored as that node's default direction.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .seeding import rng_from


@dataclass(frozen=True)
class RankerConfig:
    rounds: int = 200
    max_depth: int = 4
    eta: float = 0.1
    lambda_reg: float = 1.0
    min_child_weight: float = 1.0
    subsample: float = 1.0
    base_score: float = 0.0
    seed: int = 0


def pairwise_gradients(scores: np.ndarray, labels: np.ndarray):
    """Per-example gradient and hessian of the pairwise logistic loss
    within one group. For each pair (i, j) with y_i > y_j and
    s = score_i - score_j: g_i += -sigmoid(-s), g_j -= the same, and
    both hessians gain sigmoid(s) * sigmoid(-s)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape[0] < 2:
        return np.zeros_like(s), np.zeros_like(s)
    diff = s[:, None] - s[None, :]
    wins = y[:, None] > y[None, :]
    lam = -expit(-diff)
    rho = expit(diff) * expit(-diff)
    lam = np.where(wins, lam, 0.0)
    rho = np.where(wins, rho, 0.0)
    g = lam.sum(axis=1) - lam.sum(axis=0)
    h = rho.sum(axis=1) + rho.sum(axis=0)
    return g, h


def pairwise_loss(scores: np.ndarray, labels: np.ndarray) -> float:
    """Sum over pairs (y_i > y_j) of log(1 + exp(-(s_i - s_j)))."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    diff = s[:, None] - s[None, :]
    wins = y[:, None] > y[None, :]
    if not wins.any():
        return 0.0
    return float(np.logaddexp(0.0, -diff[wins]).sum())


class RegressionTree:
    """Flat-array tree over a float matrix with NaN as missing."""

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.default_left: list[bool] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []  # leaf weight
        self.gain: list[float] = []  # split gain, 0 for leaves

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.default_left.append(True)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.gain.append(0.0)
        return len(self.feature) - 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if rows.size == 0:
                continue
            f = self.feature[node]
            if f < 0:
                out[rows] = self.value[node]
                continue
            vals = X[rows, f]
            missing = np.isnan(vals)
            go_left = np.where(missing, self.default_left[node],
                               vals <= self.threshold[node])
            stack.append((self.left[node], rows[go_left]))
            stack.append((self.right[node], rows[~go_left]))
        return out

    def to_dict(self) -> dict:
        return {
            "feature": list(self.feature),
            "threshold": [float(t) for t in self.threshold],
            "default_left": list(self.default_left),
            "left": list(self.left),
            "right": list(self.right),
            "value": [float(v) for v in self.value],
            "gain": [float(g) for g in self.gain],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RegressionTree":
        tree = cls()
        tree.feature = [int(x) for x in doc["feature"]]
        tree.threshold = [float(x) for x in doc["threshold"]]
        tree.default_left = [bool(x) for x in doc["default_left"]]
        tree.left = [int(x) for x in doc["left"]]
        tree.right = [int(x) for x in doc["right"]]
        tree.value = [float(x) for x in doc["value"]]
        tree.gain = [float(x) for x in doc["gain"]]
        return tree


def _best_split_for_feature(vals, g, h, lam, mcw, parent_score):
    """Best (gain, threshold, default_left) on one feature, or None.

    Missing rows are assigned to whichever side yields more gain; at
    equal gain the left side wins (matters only when nothing is missing).
    """
    missing = np.isnan(vals)
    v = vals[~missing]
    if v.shape[0] < 2:
        return None
    order = np.argsort(v, kind="stable")
    v = v[order]
    gs = g[~missing][order]
    hs = h[~missing][order]
    g_missing = g[missing].sum()
    h_missing = h[missing].sum()
    g_total = gs.sum() + g_missing
    h_total = hs.sum() + h_missing
    cg = np.cumsum(gs)[:-1]
    ch = np.cumsum(hs)[:-1]
    boundary = v[:-1] < v[1:]
    if not boundary.any():
        return None
    gl, hl = cg, ch
    gr = (g_total - g_missing) - gl
    hr = (h_total - h_missing) - hl

    def side_score(G, H):
        return G * G / (H + lam)

    # variant 0: missing go left; variant 1: missing go right
    gain_l = 0.5 * (side_score(gl + g_missing, hl + h_missing)
                    + side_score(gr, hr) - parent_score)
    gain_r = 0.5 * (side_score(gl, hl)
                    + side_score(gr + g_missing, hr + h_missing) - parent_score)
    ok_l = boundary & (hl + h_missing >= mcw) & (hr >= mcw)
    ok_r = boundary & (hl >= mcw) & (hr + h_missing >= mcw)
    gain_l = np.where(ok_l, gain_l, -np.inf)
    gain_r = np.where(ok_r, gain_r, -np.inf)
    stacked = np.stack([gain_l, gain_r], axis=1)  # threshold-major order
    flat = int(np.argmax(stacked))
    best_gain = float(stacked.ravel()[flat])
    if not np.isfinite(best_gain):
        return None
    idx, variant = divmod(flat, 2)
    thr = (v[idx] + v[idx + 1]) / 2.0
    if thr >= v[idx + 1]:
        thr = float(v[idx])
    return best_gain, float(thr), variant == 0


def fit_tree_to_gradients(X: np.ndarray, g: np.ndarray, h: np.ndarray,
                          max_depth: int, min_child_weight: float,
                          lambda_reg: float) -> RegressionTree:
    X = np.asarray(X, dtype=np.float64)
    tree = RegressionTree()
    root = tree.add_node()
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        G = g[rows].sum()
        H = h[rows].sum()
        denom = H + lambda_reg
        tree.value[node] = 0.0 if denom <= 0 else float(-G / denom)
        if depth >= max_depth or rows.size < 2:
            continue
        parent_score = G * G / denom if denom > 0 else 0.0
        best = None
        for f in range(X.shape[1]):
            found = _best_split_for_feature(
                X[rows, f], g[rows], h[rows], lambda_reg, min_child_weight,
                parent_score,
            )
            if found is None:
                continue
            if best is None or found[0] > best[0]:
                best = (found[0], f, found[1], found[2])
        if best is None or best[0] <= 0:
            continue
        gain, f, thr, default_left = best
        vals = X[rows, f]
        missing = np.isnan(vals)
        go_left = np.where(missing, default_left, vals <= thr)
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.default_left[node] = default_left
        tree.gain[node] = gain
        left = tree.add_node()
        right = tree.add_node()
        tree.left[node] = left
        tree.right[node] = right
        stack.append((left, rows[go_left], depth + 1))
        stack.append((right, rows[~go_left], depth + 1))
    return tree


@dataclass
class GBRanker:
    config: RankerConfig
    feature_names: list[str]
    trees: list[RegressionTree] = field(default_factory=list)
    train_losses: list[float] = field(default_factory=list)

    @property
    def manifest_hash(self) -> str:
        return feature_manifest_hash(self.feature_names)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValueError(
                f"expected {len(self.feature_names)} features, got {X.shape}"
            )
        scores = np.full(X.shape[0], self.config.base_score)
        for tree in self.trees:
            scores += self.config.eta * tree.predict(X)
        return scores

    def to_dict(self) -> dict:
        cfg = self.config
        return {
            "config": {
                "rounds": cfg.rounds,
                "max_depth": cfg.max_depth,
                "eta": cfg.eta,
                "lambda_reg": cfg.lambda_reg,
                "min_child_weight": cfg.min_child_weight,
                "subsample": cfg.subsample,
                "base_score": cfg.base_score,
                "seed": cfg.seed,
            },
            "feature_names": list(self.feature_names),
            "manifest_hash": self.manifest_hash,
            "trees": [t.to_dict() for t in self.trees],
            "train_losses": [float(x) for x in self.train_losses],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GBRanker":
        model = cls(
            config=RankerConfig(**doc["config"]),
            feature_names=list(doc["feature_names"]),
            trees=[RegressionTree.from_dict(t) for t in doc["trees"]],
            train_losses=[float(x) for x in doc.get("train_losses", [])],
        )
        if doc.get("manifest_hash") != model.manifest_hash:
            raise ValueError("feature manifest hash mismatch")
        return model


def feature_manifest_hash(names: list[str]) -> str:
    payload = json.dumps(list(names)).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def score(model: GBRanker, x) -> float:
    """Score a single feature vector (NaN = missing)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (len(model.feature_names),):
        raise ValueError(
            f"vector length {x.shape} does not match manifest "
            f"({len(model.feature_names)} features)"
        )
    return float(model.predict(x[None, :])[0])


def train(X: np.ndarray, y: np.ndarray, group_ids, config: RankerConfig,
          feature_names: list[str], track_loss: bool = False) -> GBRanker:
    """Boosted training over dataset groups.

    Gradients are computed group by group at the current scores; one tree
    fits all rows (optionally row-subsampled) per round.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ids = np.asarray(group_ids)
    if X.shape[0] != y.shape[0] or X.shape[0] != ids.shape[0]:
        raise ValueError("X, y and group_ids must align")
    if X.shape[0] == 0:
        raise ValueError("empty meta-dataset")
    groups = list(dict.fromkeys(ids.tolist()))
    if len(groups) < 2:
        raise ValueError("need at least 2 dataset groups")
    slices = [np.flatnonzero(ids == gid) for gid in groups]
    for gid, rows in zip(groups, slices):
        if rows.size == 0:
            raise ValueError(f"empty group {gid}")
    model = GBRanker(config=config, feature_names=list(feature_names))
    scores = np.full(X.shape[0], config.base_score)
    n = X.shape[0]
    for rnd in range(config.rounds):
        g = np.zeros(n)
        h = np.zeros(n)
        for rows in slices:
            gg, hh = pairwise_gradients(scores[rows], y[rows])
            g[rows] = gg
            h[rows] = hh
        if config.subsample < 1.0:
            rng = rng_from(config.seed, "subsample", rnd)
            take = max(int(math.floor(config.subsample * n)), 1)
            sub = np.sort(rng.permutation(n)[:take])
        else:
            sub = np.arange(n)
        tree = fit_tree_to_gradients(
            X[sub], g[sub], h[sub], config.max_depth,
            config.min_child_weight, config.lambda_reg,
        )
        model.trees.append(tree)
        scores += config.eta * tree.predict(X)
        if track_loss:
            total = sum(
                pairwise_loss(scores[rows], y[rows]) for rows in slices
            )
            model.train_losses.append(float(total))
    return model


def train_meta(meta, config: RankerConfig, track_loss: bool = False) -> GBRanker:
    """Convenience wrapper over a MetaDataset-like object."""
    return train(meta.X, meta.y, meta.group_ids, config, meta.feature_names,
                 track_loss)


def rank_workflows(model: GBRanker, vectors: dict[str, np.ndarray]
                   ) -> list[tuple[str, float]]:
    """Order workflow ids by descending score; ties fall back to id order."""
    ids = sorted(vectors)
    if len(ids) != len(vectors):
        raise ValueError("duplicate workflow ids")
    X = np.asarray([np.asarray(vectors[w], dtype=np.float64) for w in ids])
    scores = model.predict(X)
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [(ids[i], float(scores[i])) for i in order]


def feature_gain(model: GBRanker) -> dict[str, float]:
    """Total split gain per feature, normalized to sum to 1."""
    totals = np.zeros(len(model.feature_names))
    for tree in model.trees:
        for i in range(tree.n_nodes):
            if tree.feature[i] >= 0:
                totals[tree.feature[i]] += tree.gain[i]
    s = totals.sum()
    if s > 0:
        totals = totals / s
    return {name: float(v) for name, v in zip(model.feature_names, totals)}


def save_model(model: GBRanker, path: str, extra: dict | None = None):
    doc = {"model": model.to_dict()}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> tuple[GBRanker, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    model = GBRanker.from_dict(doc["model"])
    extra = {k: v for k, v in doc.items() if k != "model"}
    return model, extra
