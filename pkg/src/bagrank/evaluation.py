"""Leave-one-dataset-out benchmark harness.

For each dataset: train the ranker on every other dataset's rows (rank
features recomputed from the training datasets only), predict a ranking
for the held-out dataset, then compare methods at the meta level (AP@k)
and the base level (realized kappa of the top-n recommendation) with
loss curves and Friedman/Nemenyi critical-difference statistics.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2 as chi2_dist
from scipy.stats import f as f_dist
from scipy.stats import rankdata

from .metadatabase import (
    MetadataStore,
    _atomic_write,
    assemble,
    fmt,
    rank_block_for_table,
)
from .rank_model import GBRanker, RankerConfig, train_meta

BAGGING_100 = "100nonenone"
METHOD_RANKER = "gbrank"
METHOD_AVG_RANK = "average_rank"
METHOD_BAGGING = "bagging100"
METHOD_ORACLE = "oracle"

# studentized range / sqrt(2) for the Nemenyi test, k = 2..10
Q_ALPHA = {
    0.05: (1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164),
    0.10: (1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920),
}


@dataclass
class LodoFold:
    dataset_id: str
    predicted: list[str]  # workflow ids, best first
    scores: dict[str, float]
    true_ranks: dict[str, float]
    mean_kappas: dict[str, float]
    train_dataset_ids: list[str]
    rank_block: dict | None = None
    model: GBRanker | None = None


@dataclass
class CdResult:
    methods: list[str]
    average_ranks: list[float]
    n_datasets: int
    alpha: float
    q_alpha: float
    cd: float
    chi2: float | None
    p_chi2: float | None
    f_stat: float | None
    p_f: float | None
    degenerate: bool


def _tables(store: MetadataStore):
    """(rank_table, kappa_table, dataset_ids, workflow_ids) from a store."""
    manifest = store.load_manifest()
    target = store.load_metatarget()
    perf = store.load_performance()
    ids = list(manifest["dataset_ids"])
    wids = sorted({w for _, w in target})
    rank_table = {d: {w: target[(d, w)]["rank"] for w in wids} for d in ids}
    kappa_table = {
        d: {w: perf[(d, w)]["mean_kappa"] for w in wids} for d in ids
    }
    return rank_table, kappa_table, ids, wids


def lodo(store: MetadataStore, config: RankerConfig,
         keep_models: bool = False) -> list[LodoFold]:
    """One fold per dataset, sorted by dataset id.

    The 15 rank metafeatures of both the training rows and the held-out
    rows are recomputed from the training datasets' ranks, so nothing
    about the held-out dataset's performance enters the fold.
    """
    rank_table, kappa_table, ids, wids = _tables(store)
    if len(ids) < 3:
        raise ValueError(f"leave-one-dataset-out needs >= 3 datasets, got {len(ids)}")
    folds = []
    for held in sorted(ids):
        train_ids = sorted(i for i in ids if i != held)
        train_ranks = {i: rank_table[i] for i in train_ids}
        assert held not in train_ranks
        rb = rank_block_for_table(train_ranks, wids)
        meta_train = assemble(store, train_ids, rank_block=rb)
        if held in set(meta_train.group_ids):
            raise AssertionError(f"leakage: {held} present in its own training fold")
        model = train_meta(meta_train, config)
        meta_held = assemble(store, [held], rank_block=rb)
        scores = model.predict(meta_held.X)
        pairs = sorted(
            zip(meta_held.workflow_ids, scores), key=lambda p: (-p[1], p[0])
        )
        predicted = [w for w, _ in pairs]
        if sorted(predicted) != wids:
            raise AssertionError("predicted ranking is not a workflow permutation")
        folds.append(
            LodoFold(
                dataset_id=held,
                predicted=predicted,
                scores={w: float(s) for w, s in pairs},
                true_ranks=dict(rank_table[held]),
                mean_kappas=dict(kappa_table[held]),
                train_dataset_ids=train_ids,
                rank_block=rb,
                model=model if keep_models else None,
            )
        )
    return folds


def ap_at_k(predicted: list[str], true_ranks: dict[str, float],
            k: int = 10) -> float:
    """Average precision of the top k against the ground-truth top k.

    Relevant = workflows whose rank is <= the k-th smallest rank value,
    so ties straddling the boundary are all included.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = sorted(true_ranks.values())
    threshold = ranks[min(k, len(ranks)) - 1]
    relevant = {w for w, r in true_ranks.items() if r <= threshold}
    hits = 0
    total = 0.0
    for i, w in enumerate(predicted[:k], start=1):
        if w in relevant:
            hits += 1
            total += hits / i
    return total / min(len(relevant), k)


def map_at_k(rankings: list[tuple[list[str], dict[str, float]]],
             k: int = 10) -> float:
    """Mean AP@k over (predicted, true_ranks) pairs."""
    if not rankings:
        raise ValueError("no rankings to average")
    return float(np.mean([ap_at_k(p, t, k) for p, t in rankings]))


def loss_curve_values(predicted: list[str],
                      kappas: dict[str, float]) -> np.ndarray:
    """loss(n) = best kappa overall - best kappa among the top n."""
    best = max(kappas.values())
    running = np.maximum.accumulate([kappas[w] for w in predicted])
    return best - running


def loss_curve(rankings: list[tuple[list[str], dict[str, float]]]) -> np.ndarray:
    """Mean loss curve over (predicted, kappas) pairs."""
    if not rankings:
        raise ValueError("no rankings to average")
    return np.mean([loss_curve_values(p, k) for p, k in rankings], axis=0)


def average_rank_baseline(rank_table: dict[str, dict[str, float]]
                          ) -> list[tuple[str, float]]:
    """Workflows by ascending mean rank over the training datasets;
    ties fall back to id order."""
    if not rank_table:
        raise ValueError("empty rank table")
    wids = sorted(next(iter(rank_table.values())))
    means = {
        w: float(np.mean([rank_table[d][w] for d in sorted(rank_table)]))
        for w in wids
    }
    return sorted(means.items(), key=lambda p: (p[1], p[0]))


def true_order(true_ranks: dict[str, float]) -> list[str]:
    return sorted(true_ranks, key=lambda w: (true_ranks[w], w))


def oracle_and_bagging100(kappa_table: dict[str, dict[str, float]],
                          dataset_id: str) -> tuple[float, float]:
    kappas = kappa_table[dataset_id]
    if BAGGING_100 not in kappas:
        raise KeyError(f"workflow row missing: {BAGGING_100}")
    return max(kappas.values()), kappas[BAGGING_100]


def best_at_n(predicted: list[str], kappas: dict[str, float], n: int) -> float:
    """Realized kappa: best workflow among the method's top n."""
    if not 1 <= n <= len(predicted):
        raise ValueError(f"n must be in [1, {len(predicted)}]")
    return max(kappas[w] for w in predicted[:n])


def friedman_nemenyi(matrix: np.ndarray, alpha: float = 0.05,
                     methods: list[str] | None = None) -> CdResult:
    """Friedman test plus the Nemenyi critical difference.

    matrix[i, j] = kappa of method i on dataset j; higher is better and
    the best method on a dataset gets rank 1.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    k, n = matrix.shape
    if k < 2:
        raise ValueError("need >= 2 methods")
    if n < 3:
        raise ValueError("need >= 3 datasets")
    if alpha not in Q_ALPHA:
        raise ValueError(f"alpha must be one of {sorted(Q_ALPHA)}")
    if not 2 <= k <= 10:
        raise ValueError("critical values tabulated for 2 <= k <= 10 methods")
    ranks = np.empty_like(matrix)
    for j in range(n):
        ranks[:, j] = rankdata(-matrix[:, j], method="average")
    avg = ranks.mean(axis=1)
    q = Q_ALPHA[alpha][k - 2]
    cd = q * math.sqrt(k * (k + 1) / (6.0 * n))
    if np.ptp(matrix) == 0:
        return CdResult(
            methods=list(methods) if methods else [str(i) for i in range(k)],
            average_ranks=[float(r) for r in avg],
            n_datasets=n, alpha=alpha, q_alpha=q, cd=cd,
            chi2=None, p_chi2=None, f_stat=None, p_f=None, degenerate=True,
        )
    chi2 = 12.0 * n / (k * (k + 1)) * (
        float((avg ** 2).sum()) - k * (k + 1) ** 2 / 4.0
    )
    p_chi2 = float(chi2_dist.sf(chi2, k - 1))
    denom = n * (k - 1) - chi2
    if denom <= 0:
        f_stat, p_f = math.inf, 0.0
    else:
        f_stat = (n - 1) * chi2 / denom
        p_f = float(f_dist.sf(f_stat, k - 1, (k - 1) * (n - 1)))
    return CdResult(
        methods=list(methods) if methods else [str(i) for i in range(k)],
        average_ranks=[float(r) for r in avg],
        n_datasets=n, alpha=alpha, q_alpha=q, cd=cd,
        chi2=float(chi2), p_chi2=p_chi2, f_stat=float(f_stat), p_f=p_f,
        degenerate=False,
    )


def run_benchmark(store: MetadataStore, config: RankerConfig,
                  map_k: int = 10, alpha: float = 0.05,
                  keep_models: bool = False) -> dict:
    """Full LODO report: per-method rankings, AP, loss curves, base-level
    kappas, CD statistics, and the audit verdicts."""
    folds = lodo(store, config, keep_models=keep_models)
    rank_table, kappa_table, ids, wids = _tables(store)

    rankings = {METHOD_RANKER: {}, METHOD_AVG_RANK: {}, METHOD_ORACLE: {}}
    for fold in folds:
        did = fold.dataset_id
        rankings[METHOD_RANKER][did] = fold.predicted
        train_ranks = {i: rank_table[i] for i in fold.train_dataset_ids}
        rankings[METHOD_AVG_RANK][did] = [
            w for w, _ in average_rank_baseline(train_ranks)
        ]
        rankings[METHOD_ORACLE][did] = true_order(fold.true_ranks)

    dataset_order = [f.dataset_id for f in folds]
    ap_table = {
        m: {d: ap_at_k(rankings[m][d], rank_table[d], map_k) for d in dataset_order}
        for m in sorted(rankings)
    }
    curves = {
        m: loss_curve([(rankings[m][d], kappa_table[d]) for d in dataset_order])
        for m in sorted(rankings)
    }

    base_methods = [f"{METHOD_RANKER}@{n}" for n in (1, 3, 5)]
    base_methods += [METHOD_AVG_RANK, METHOD_BAGGING, METHOD_ORACLE]
    base_kappa = {m: {} for m in base_methods}
    for fold in folds:
        did = fold.dataset_id
        kappas = kappa_table[did]
        for n in (1, 3, 5):
            base_kappa[f"{METHOD_RANKER}@{n}"][did] = best_at_n(
                fold.predicted, kappas, n
            )
        base_kappa[METHOD_AVG_RANK][did] = kappas[rankings[METHOD_AVG_RANK][did][0]]
        oracle, plain = oracle_and_bagging100(kappa_table, did)
        base_kappa[METHOD_BAGGING][did] = plain
        base_kappa[METHOD_ORACLE][did] = oracle

    matrix = np.array(
        [[base_kappa[m][d] for d in dataset_order] for m in base_methods]
    )
    cd = friedman_nemenyi(matrix, alpha=alpha, methods=base_methods)

    audits = _audit(folds, base_kappa, curves, rank_table, dataset_order)
    return {
        "folds": folds,
        "dataset_order": dataset_order,
        "workflow_ids": wids,
        "rankings": rankings,
        "ap_table": ap_table,
        "map": {m: float(np.mean(list(ap_table[m].values()))) for m in ap_table},
        "map_k": map_k,
        "curves": curves,
        "base_methods": base_methods,
        "base_kappa": base_kappa,
        "cd": cd,
        "rank_table": rank_table,
        "audits": audits,
        "audits_passed": all(audits.values()),
    }


def _audit(folds, base_kappa, curves, rank_table, dataset_order) -> dict:
    eps = 1e-12
    oracle = base_kappa[METHOD_ORACLE]
    dominance = all(
        base_kappa[m][d] <= oracle[d] + eps
        for m in base_kappa
        for d in dataset_order
    )
    prefix = all(
        base_kappa[f"{METHOD_RANKER}@1"][d]
        <= base_kappa[f"{METHOD_RANKER}@3"][d] + eps
        and base_kappa[f"{METHOD_RANKER}@3"][d]
        <= base_kappa[f"{METHOD_RANKER}@5"][d] + eps
        for d in dataset_order
    )
    curves_ok = all(
        np.all(np.diff(c) <= eps) and abs(c[-1]) <= eps for c in curves.values()
    )
    n = len(next(iter(rank_table.values())))
    expected = n * (n + 1) / 2.0
    rank_sums = all(
        abs(sum(rank_table[d].values()) - expected) <= 1e-9 for d in rank_table
    )
    no_leak = all(f.dataset_id not in f.train_dataset_ids for f in folds)
    return {
        "no_leakage": no_leak,
        "oracle_dominance": dominance,
        "top_n_monotone": prefix,
        "loss_curves_non_increasing_to_zero": curves_ok,
        "rank_sum_identity": rank_sums,
    }


def export_results(report: dict, out_dir: str):
    """Write loss_curve.csv, map_meta.csv, base_level_kappa.csv,
    cd_diagram.json and rank_boxplot.csv. Deterministic for fixed inputs."""
    os.makedirs(out_dir, exist_ok=True)

    lines = ["method,n,loss"]
    for m in sorted(report["curves"]):
        for i, v in enumerate(report["curves"][m], start=1):
            lines.append(f"{m},{i},{fmt(float(v))}")
    _atomic_write(os.path.join(out_dir, "loss_curve.csv"), "\n".join(lines) + "\n")

    lines = ["method,dataset_id,ap"]
    for m in sorted(report["ap_table"]):
        for d in report["dataset_order"]:
            lines.append(f"{m},{d},{fmt(report['ap_table'][m][d])}")
    _atomic_write(os.path.join(out_dir, "map_meta.csv"), "\n".join(lines) + "\n")

    lines = ["method,dataset_id,kappa"]
    for m in report["base_methods"]:
        for d in report["dataset_order"]:
            lines.append(f"{m},{d},{fmt(report['base_kappa'][m][d])}")
    _atomic_write(
        os.path.join(out_dir, "base_level_kappa.csv"), "\n".join(lines) + "\n"
    )

    cd = report["cd"]
    doc = {
        "methods": cd.methods,
        "average_ranks": cd.average_ranks,
        "n_datasets": cd.n_datasets,
        "alpha": cd.alpha,
        "q_alpha": cd.q_alpha,
        "cd": cd.cd,
        "chi2": cd.chi2,
        "p_chi2": cd.p_chi2,
        "f_stat": None if cd.f_stat is None else (
            "inf" if math.isinf(cd.f_stat) else cd.f_stat
        ),
        "p_f": cd.p_f,
        "degenerate": cd.degenerate,
        "map": report["map"],
        "map_k": report["map_k"],
    }
    _atomic_write(
        os.path.join(out_dir, "cd_diagram.json"),
        json.dumps(doc, indent=2, sort_keys=True) + "\n",
    )

    lines = ["dataset_id,workflow_id,rank"]
    for d in sorted(report["rank_table"]):
        for w in sorted(report["rank_table"][d]):
            lines.append(f"{d},{w},{fmt(report['rank_table'][d][w])}")
    _atomic_write(
        os.path.join(out_dir, "rank_boxplot.csv"), "\n".join(lines) + "\n"
    )
