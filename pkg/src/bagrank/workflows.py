"""Bagging workflows: generation, pruning, and integration.

A workflow is (number of trees) x (pruning method + cut point) x
(integration method). The full grid holds 63 configurations. Pruning
reorders the ensemble greedily and keeps a prefix; integration is
plurality voting or a dynamic method (OLA, KNORA-E) driven by a
selection pool of training instances.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .datasets import Dataset, EncodedView, bootstrap_indices, encode, fit_encoder
from .learners import Tree, cohen_kappa, fit_tree
from .seeding import derive_seed

N_MODELS_GRID = (50, 100, 200)
PRUNING_GRID = ("none", "mdsq", "bb")
CUT_GRID = (0.25, 0.5, 0.75)
INTEGRATION_GRID = ("vote", "ola", "knora_e")

DEFAULT_K = 7
DEFAULT_MDSQ_P = 0.075

_INTEGRATION_TOKEN = {"vote": "none", "ola": "ola", "knora_e": "knora-e"}
_TOKEN_INTEGRATION = {v: k for k, v in _INTEGRATION_TOKEN.items()}
_CUT_TOKEN = {0.25: "0.25", 0.5: "0.5", 0.75: "0.75"}

_ID_RE = re.compile(
    r"^(50|100|200)(none|mdsq|bb)(0\.25|0\.5|0\.75)?(none|ola|knora-e)$"
)


@dataclass(frozen=True)
class WorkflowConfig:
    n_models: int
    pruning: str
    cut_point: float | None
    integration: str

    def __post_init__(self):
        if self.n_models not in N_MODELS_GRID:
            raise ValueError(f"bad n_models: {self.n_models}")
        if self.pruning not in PRUNING_GRID:
            raise ValueError(f"bad pruning: {self.pruning}")
        if self.integration not in INTEGRATION_GRID:
            raise ValueError(f"bad integration: {self.integration}")
        if self.pruning == "none":
            if self.cut_point is not None:
                raise ValueError("cut_point only valid with pruning")
        elif self.cut_point not in CUT_GRID:
            raise ValueError(f"bad cut_point: {self.cut_point}")

    @property
    def n_kept(self) -> int:
        if self.pruning == "none":
            return self.n_models
        return math.ceil((1.0 - self.cut_point) * self.n_models)


def workflow_id(c: WorkflowConfig) -> str:
    cut = "" if c.cut_point is None else _CUT_TOKEN[c.cut_point]
    return f"{c.n_models}{c.pruning}{cut}{_INTEGRATION_TOKEN[c.integration]}"


def parse_workflow_id(text: str) -> WorkflowConfig:
    m = _ID_RE.match(text)
    if m is None:
        raise ValueError(f"malformed workflow id: {text!r}")
    n, pruning, cut, integ = m.groups()
    if (pruning == "none") != (cut is None):
        raise ValueError(f"malformed workflow id: {text!r}")
    return WorkflowConfig(
        int(n), pruning, None if cut is None else float(cut), _TOKEN_INTEGRATION[integ]
    )


def enumerate_workflows() -> list[WorkflowConfig]:
    """All 63 configurations, sorted by canonical id."""
    configs = []
    for n in N_MODELS_GRID:
        for pruning in PRUNING_GRID:
            cuts = (None,) if pruning == "none" else CUT_GRID
            for cut in cuts:
                for integ in INTEGRATION_GRID:
                    configs.append(WorkflowConfig(n, pruning, cut, integ))
    return sorted(configs, key=workflow_id)


def signature_matrix(pool_pred: np.ndarray, pool_labels: np.ndarray) -> np.ndarray:
    """+1 where the model classifies the pool instance correctly, else -1."""
    return np.where(pool_pred == np.asarray(pool_labels)[:, None], 1, -1).astype(
        np.int64
    )


def prune_mdsq(sig: np.ndarray, keep: int, p: float = DEFAULT_MDSQ_P) -> np.ndarray:
    """Margin-distance greedy ordering.

    At each step, add the model whose inclusion brings the mean signature
    vector of the selected set closest (Euclidean) to the constant
    reference point (p, ..., p). Scores are reduced to exact integer dot
    products so tie-breaking by lowest model index is reproducible.
    """
    sig = np.asarray(sig, dtype=np.float64)
    n_pool, n_models = sig.shape
    if not 1 <= keep <= n_models:
        raise ValueError(f"keep must be in [1, {n_models}]")
    # gram entries and column sums are integers, exact in float64
    gram = sig.T @ sig
    colsum = sig.sum(axis=0)
    acc = np.zeros(n_models)  # dot of each column with the selected-set sum
    selected = np.zeros(n_models, dtype=bool)
    order = np.empty(n_models, dtype=np.int64)
    for step in range(keep):
        t = step + 1
        score = 2.0 * acc - (2.0 * p * t) * colsum
        score[selected] = np.inf
        chosen = int(np.argmin(score))
        order[step] = chosen
        selected[chosen] = True
        acc += gram[:, chosen]
    return order[:keep]


def prune_bb(pool_labels: np.ndarray, prediction_table: np.ndarray,
             keep: int) -> np.ndarray:
    """Boosting-based greedy reordering without retraining.

    Instance weights start uniform; each round the unselected model with
    the lowest weighted error is taken and weights move toward the
    instances it got wrong. If every remaining model errs at >= 0.5,
    weights reset to uniform before the pick.
    """
    labels = np.asarray(pool_labels)
    table = np.asarray(prediction_table)
    n_pool, n_models = table.shape
    if not 1 <= keep <= n_models:
        raise ValueError(f"keep must be in [1, {n_models}]")
    incorrect = (table != labels[:, None]).astype(np.float64)
    weights = np.full(n_pool, 1.0 / n_pool)
    selected = np.zeros(n_models, dtype=bool)
    order = np.empty(keep, dtype=np.int64)
    for step in range(keep):
        eps = weights @ incorrect
        eps[selected] = np.inf
        if np.min(eps) >= 0.5:
            weights = np.full(n_pool, 1.0 / n_pool)
            eps = weights @ incorrect
            eps[selected] = np.inf
        chosen = int(np.argmin(eps))
        order[step] = chosen
        selected[chosen] = True
        e = min(max(float(eps[chosen]), 1e-6), 1.0 - 1e-6)
        alpha = 0.5 * math.log((1.0 - e) / e)
        weights = weights * np.exp(alpha * (2.0 * incorrect[:, chosen] - 1.0))
        weights = weights / weights.sum()
    return order


@dataclass
class FittedWorkflow:
    config: WorkflowConfig
    models: list  # post-pruning, in selection order
    pool_matrix: np.ndarray  # encoded pool instances
    pool_labels: np.ndarray
    pool_pred: np.ndarray  # |pool| x |models|
    class_labels: tuple
    encoder: EncodedView

    def __post_init__(self):
        if len(self.models) != self.config.n_kept:
            raise ValueError("model count does not match configured pruning")
        if self.pool_pred.shape != (self.pool_matrix.shape[0], len(self.models)):
            raise ValueError("prediction table shape mismatch")


def fit_ensemble(d: Dataset, train_rows: np.ndarray, n_models: int,
                 seed: int) -> list[Tree]:
    """Bootstrap + fully grown trees; model i's sample depends only on
    (seed, i), so smaller ensembles are prefixes of larger ones."""
    train_rows = np.asarray(train_rows, dtype=np.int64)
    trees = []
    for i in range(n_models):
        model_seed = derive_seed(seed, "model", i)
        sample = train_rows[bootstrap_indices(train_rows.shape[0], model_seed)]
        trees.append(fit_tree(d, sample, min_leaf=2, seed=model_seed))
    return trees


def prediction_table(models, d: Dataset, rows: np.ndarray) -> np.ndarray:
    if not models:
        raise ValueError("no models")
    return np.stack([m.predict_all(d, rows) for m in models], axis=1)


def fit_workflow(c: WorkflowConfig, d: Dataset, train_rows, seed: int,
                 mdsq_p: float = DEFAULT_MDSQ_P) -> FittedWorkflow:
    train_rows = np.asarray(train_rows, dtype=np.int64)
    if np.unique(d.target[train_rows]).shape[0] < 2:
        raise ValueError("training rows must contain at least 2 classes")
    trees = fit_ensemble(d, train_rows, c.n_models, seed)
    pool_labels = d.target[train_rows]
    table = prediction_table(trees, d, train_rows)
    if c.pruning == "mdsq":
        order = prune_mdsq(signature_matrix(table, pool_labels), c.n_kept, mdsq_p)
    elif c.pruning == "bb":
        order = prune_bb(pool_labels, table, c.n_kept)
    else:
        order = np.arange(c.n_models)
    encoder = fit_encoder(d.subset(train_rows))
    pool_matrix = encode(d.subset(train_rows), encoder)
    return FittedWorkflow(
        config=c,
        models=[trees[i] for i in order],
        pool_matrix=pool_matrix,
        pool_labels=pool_labels,
        pool_pred=table[:, order],
        class_labels=d.class_labels,
        encoder=encoder,
    )


def _knn_indices(pool_matrix: np.ndarray, query_matrix: np.ndarray,
                 k: int) -> np.ndarray:
    """Indices of the k nearest pool rows per query row, nearest first.
    Distance ties resolve to the lower pool index."""
    d2 = (
        (query_matrix * query_matrix).sum(axis=1)[:, None]
        + (pool_matrix * pool_matrix).sum(axis=1)[None, :]
        - 2.0 * query_matrix @ pool_matrix.T
    )
    k = min(k, pool_matrix.shape[0])
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def _plurality(preds: np.ndarray, n_classes: int,
               member_mask: np.ndarray | None = None) -> np.ndarray:
    """Row-wise plurality vote; ties take the lowest class code."""
    n, m = preds.shape
    flat = np.arange(n)[:, None] * n_classes + preds
    w = None if member_mask is None else member_mask.astype(np.float64).ravel()
    counts = np.bincount(flat.ravel(), weights=w, minlength=n * n_classes)
    return counts.reshape(n, n_classes).argmax(axis=1).astype(np.int64)


def _ola_kernel(correct_nb: np.ndarray, query_pred: np.ndarray) -> np.ndarray:
    """correct_nb: (n_query, k, n_models) 0/1; pick the locally most
    accurate model per query (ties: lowest model position)."""
    acc = correct_nb.mean(axis=1)
    choice = acc.argmax(axis=1)
    return query_pred[np.arange(query_pred.shape[0]), choice]


def _knorae_kernel(correct_nb: np.ndarray, query_pred: np.ndarray,
                   n_classes: int) -> np.ndarray:
    """Oracle selection: models correct on all j nearest neighbors for the
    largest feasible j <= k; no oracle at j=1 falls back to all models."""
    n, k, m = correct_nb.shape
    prefix = np.cumprod(correct_nb, axis=1)  # correct on all first-j neighbors
    nonempty = prefix.any(axis=2)
    has_oracle = nonempty.any(axis=1)
    j_star = k - 1 - np.argmax(nonempty[:, ::-1], axis=1)
    mask = np.take_along_axis(
        prefix, j_star[:, None, None], axis=1
    ).reshape(n, m)
    mask[~has_oracle] = 1
    return _plurality(query_pred, n_classes, member_mask=mask)


def predict_vote(w: FittedWorkflow, d: Dataset, rows=None) -> np.ndarray:
    preds = prediction_table(w.models, d, _rows_index(d, rows))
    return _plurality(preds, len(w.class_labels))


def predict_ola(w: FittedWorkflow, d: Dataset, rows=None,
                k: int = DEFAULT_K) -> np.ndarray:
    rows = _rows_index(d, rows)
    query = encode(d.subset(rows), w.encoder)
    nb = _knn_indices(w.pool_matrix, query, k)
    correct = (w.pool_pred == w.pool_labels[:, None]).astype(np.float64)
    preds = prediction_table(w.models, d, rows)
    return _ola_kernel(correct[nb], preds)


def predict_knorae(w: FittedWorkflow, d: Dataset, rows=None,
                   k: int = DEFAULT_K) -> np.ndarray:
    rows = _rows_index(d, rows)
    query = encode(d.subset(rows), w.encoder)
    nb = _knn_indices(w.pool_matrix, query, k)
    correct = (w.pool_pred == w.pool_labels[:, None]).astype(np.int64)
    preds = prediction_table(w.models, d, rows)
    return _knorae_kernel(correct[nb], preds, len(w.class_labels))


def predict_workflow(w: FittedWorkflow, d: Dataset, rows=None,
                     k: int = DEFAULT_K) -> np.ndarray:
    if w.config.integration == "vote":
        return predict_vote(w, d, rows)
    if w.config.integration == "ola":
        return predict_ola(w, d, rows, k)
    return predict_knorae(w, d, rows, k)


def _rows_index(d: Dataset, rows) -> np.ndarray:
    if rows is None:
        return np.arange(d.n_rows)
    return np.asarray(rows, dtype=np.int64)


def evaluate_workflow_cv(c: WorkflowConfig, d: Dataset, folds: np.ndarray,
                         seed: int, k: int = DEFAULT_K):
    """Cross-validated kappa for one configuration.

    Returns (mean_kappa, fold_kappas, flags); a fold whose training part
    has fewer than 2 classes is skipped (NaN kappa, flagged) and the mean
    is taken over the rest.
    """
    folds = np.asarray(folds)
    n_folds = int(folds.max()) + 1
    fold_kappas = np.full(n_folds, np.nan)
    flags = []
    for f in range(n_folds):
        test_rows = np.flatnonzero(folds == f)
        train_rows = np.flatnonzero(folds != f)
        if np.unique(d.target[train_rows]).shape[0] < 2:
            flags.append(f"fold {f} skipped: single-class training part")
            continue
        w = fit_workflow(c, d, train_rows, derive_seed(seed, "fold", f))
        preds = predict_workflow(w, d, test_rows, k)
        fold_kappas[f] = cohen_kappa(d.target[test_rows], preds)
    ok = ~np.isnan(fold_kappas)
    mean = float(fold_kappas[ok].mean()) if ok.any() else float("nan")
    return mean, fold_kappas, flags


def evaluate_all_workflows(d: Dataset, folds: np.ndarray, seed: int,
                           k: int = DEFAULT_K,
                           mdsq_p: float = DEFAULT_MDSQ_P) -> dict:
    """CV kappas for the whole 63-workflow grid at once.

    Fits each fold's 200-tree pool a single time and reuses predictions,
    pruning orders, and neighbor indices across configurations. Produces
    the same numbers as evaluate_workflow_cv per configuration because
    model seeds depend only on (fold seed, model index) and both pruning
    procedures are prefix-stable in `keep`.
    """
    folds = np.asarray(folds)
    n_folds = int(folds.max()) + 1
    configs = enumerate_workflows()
    out = {
        workflow_id(c): {
            "config": c,
            "fold_kappas": np.full(n_folds, np.nan),
            "flags": [],
        }
        for c in configs
    }
    for f in range(n_folds):
        test_rows = np.flatnonzero(folds == f)
        train_rows = np.flatnonzero(folds != f)
        if np.unique(d.target[train_rows]).shape[0] < 2:
            for rec in out.values():
                rec["flags"].append(f"fold {f} skipped: single-class training part")
            continue
        fold_seed = derive_seed(seed, "fold", f)
        trees = fit_ensemble(d, train_rows, max(N_MODELS_GRID), fold_seed)
        pool_labels = d.target[train_rows]
        y_test = d.target[test_rows]
        pool_table = prediction_table(trees, d, train_rows)
        test_table = prediction_table(trees, d, test_rows)
        encoder = fit_encoder(d.subset(train_rows))
        nb = _knn_indices(
            encode(d.subset(train_rows), encoder),
            encode(d.subset(test_rows), encoder),
            k,
        )
        correct = (pool_table == pool_labels[:, None]).astype(np.int64)
        correct_nb = correct[nb]
        orders = {}
        for n in N_MODELS_GRID:
            sig = signature_matrix(pool_table[:, :n], pool_labels)
            orders[("mdsq", n)] = prune_mdsq(sig, n, mdsq_p)
            orders[("bb", n)] = prune_bb(pool_labels, pool_table[:, :n], n)
        for c in configs:
            if c.pruning == "none":
                members = np.arange(c.n_models)
            else:
                members = orders[(c.pruning, c.n_models)][: c.n_kept]
            sub_test = test_table[:, members]
            if c.integration == "vote":
                preds = _plurality(sub_test, d.n_classes)
            elif c.integration == "ola":
                preds = _ola_kernel(
                    correct_nb[:, :, members].astype(np.float64), sub_test
                )
            else:
                preds = _knorae_kernel(correct_nb[:, :, members], sub_test,
                                       d.n_classes)
            out[workflow_id(c)]["fold_kappas"][f] = cohen_kappa(y_test, preds)
    for rec in out.values():
        ok = ~np.isnan(rec["fold_kappas"])
        rec["mean_kappa"] = (
            float(rec["fold_kappas"][ok].mean()) if ok.any() else float("nan")
        )
    return out


def _tree_to_node(tree: Tree, i: int) -> dict:
    if tree.feature[i] < 0:
        return {"leaf": True, "distribution": [float(x) for x in tree.dist[i]]}
    node = {
        "leaf": False,
        "feature": int(tree.feature[i]),
        "categorical": bool(tree.is_cat[i]),
        "missing_left": bool(tree.miss_left[i]),
        "left": _tree_to_node(tree, tree.left[i]),
        "right": _tree_to_node(tree, tree.right[i]),
    }
    if tree.is_cat[i]:
        node["category"] = int(tree.threshold[i])
    else:
        node["threshold"] = float(tree.threshold[i])
    return node


def tree_to_dict(tree: Tree) -> dict:
    return {"n_classes": tree.n_classes, "root": _tree_to_node(tree, 0)}


def _add_node(tree: Tree, spec_node: dict) -> int:
    i = tree.add_node()
    if spec_node["leaf"]:
        tree.dist[i] = np.asarray(spec_node["distribution"], dtype=np.float64)
        return i
    tree.feature[i] = spec_node["feature"]
    tree.is_cat[i] = spec_node["categorical"]
    tree.miss_left[i] = spec_node["missing_left"]
    tree.threshold[i] = float(
        spec_node["category"] if spec_node["categorical"] else spec_node["threshold"]
    )
    tree.dist[i] = np.zeros(tree.n_classes)
    tree.left[i] = _add_node(tree, spec_node["left"])
    tree.right[i] = _add_node(tree, spec_node["right"])
    return i


def tree_from_dict(doc: dict) -> Tree:
    tree = Tree(doc["n_classes"])
    _add_node(tree, doc["root"])
    return tree


def workflow_to_dict(w: FittedWorkflow) -> dict:
    return {
        "workflow": workflow_id(w.config),
        "class_labels": list(w.class_labels),
        "models": [tree_to_dict(t) for t in w.models],
        "pool_matrix": w.pool_matrix.tolist(),
        "pool_labels": [int(x) for x in w.pool_labels],
        "pool_predictions": w.pool_pred.tolist(),
        "encoder": {
            "means": w.encoder.means.tolist(),
            "sds": w.encoder.sds.tolist(),
            "n_numeric": w.encoder.n_numeric,
            "cat_widths": list(w.encoder.cat_widths),
            "width": w.encoder.width,
        },
    }


def workflow_from_dict(doc: dict) -> FittedWorkflow:
    enc = doc["encoder"]
    return FittedWorkflow(
        config=parse_workflow_id(doc["workflow"]),
        models=[tree_from_dict(t) for t in doc["models"]],
        pool_matrix=np.asarray(doc["pool_matrix"], dtype=np.float64),
        pool_labels=np.asarray(doc["pool_labels"], dtype=np.int64),
        pool_pred=np.asarray(doc["pool_predictions"], dtype=np.int64),
        class_labels=tuple(doc["class_labels"]),
        encoder=EncodedView(
            means=np.asarray(enc["means"], dtype=np.float64),
            sds=np.asarray(enc["sds"], dtype=np.float64),
            n_numeric=enc["n_numeric"],
            cat_widths=tuple(enc["cat_widths"]),
            width=enc["width"],
        ),
    )
