"""Build and persist the meta-database.

For every (dataset, workflow) cell: cross-validated kappas, the
tie-averaged rank of the workflow within its dataset, a relevance label,
and the 158-entry metafeature vector. Persistence is a JSON-lines
journal (append-only, one line per completed dataset) compacted into
canonical sorted CSVs, so interrupted builds resume and final files are
byte-identical regardless of scheduling.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import metafeatures as mfs
from . import metafunctions as mf
from .datasets import Dataset, check_eligibility, stratified_folds
from .seeding import derive_seed
from .workflows import enumerate_workflows, evaluate_all_workflows, workflow_id

STORE_VERSION = 1

PERFORMANCE_CSV = "performance.csv"
METAFEATURES_CSV = "metafeatures.csv"
METATARGET_CSV = "metatarget.csv"
MANIFEST_JSON = "manifest.json"
JOURNAL = "journal.jsonl"


def fmt(value: float | None) -> str:
    """Canonical CSV cell: shortest round-trip repr, empty for missing."""
    if value is None:
        return ""
    value = float(value)
    if math.isnan(value):
        return ""
    return repr(value)


def compute_ranks(mean_kappas: dict[str, float]) -> dict[str, float]:
    """Tie-averaged ranks, 1 = highest kappa. Keys sorted for determinism."""
    ids = sorted(mean_kappas)
    values = np.array([mean_kappas[w] for w in ids], dtype=np.float64)
    if np.isnan(values).any():
        raise ValueError("cannot rank with missing mean kappas")
    ranks = rankdata(-values, method="average")
    return {w: float(r) for w, r in zip(ids, ranks)}


def ranks_to_relevance(ranks: dict[str, float]) -> dict[str, int]:
    """z = (n+1) - ceil(rank), clamped to >= 1; the top workflow gets n."""
    n = len(ranks)
    return {w: max(n + 1 - math.ceil(r), 1) for w, r in ranks.items()}


def evaluate_dataset(d: Dataset, seed: int, k_folds: int) -> dict:
    """One dataset's complete journal entry: 63 performance cells plus
    the dataset-level metafeature block."""
    ds_seed = derive_seed(seed, "dataset", d.dataset_id)
    folds = stratified_folds(d.target, k_folds, ds_seed)
    results = evaluate_all_workflows(d, folds, ds_seed)
    block = mfs.dataset_block(d, folds)
    records = {}
    for wid, rec in sorted(results.items()):
        records[wid] = {
            "fold_kappas": [
                None if math.isnan(x) else float(x) for x in rec["fold_kappas"]
            ],
            "mean_kappa": None
            if math.isnan(rec["mean_kappa"])
            else float(rec["mean_kappa"]),
            "flags": ";".join(rec["flags"]),
        }
    clean_block = {}
    for key, val in block.items():
        if isinstance(val, list):
            clean_block[key] = [float(v) for v in val]
        else:
            clean_block[key] = None if val is None else float(val)
    return {"dataset_id": d.dataset_id, "records": records, "block": clean_block}


def _read_journal(path: str) -> dict[str, dict]:
    entries = {}
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                entry = json.loads(line)
                entries[entry["dataset_id"]] = entry
    return entries


def _atomic_write(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


class MetadataStore:
    """Directory-backed store of the meta-database."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.root, name)

    # -- build ---------------------------------------------------------

    def pending(self, dataset_ids: list[str]) -> list[str]:
        done = set(_read_journal(self.path(JOURNAL)))
        return [i for i in dataset_ids if i not in done]

    def append_entry(self, entry: dict):
        with open(self.path(JOURNAL), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()

    def entries(self) -> dict[str, dict]:
        return _read_journal(self.path(JOURNAL))

    # -- finalize ------------------------------------------------------

    def finalize(self, seed: int, k_folds: int):
        """Compact the journal into canonical sorted CSV files."""
        entries = self.entries()
        if not entries:
            raise ValueError("no journal entries to finalize")
        dataset_ids = sorted(entries)
        registry = mfs.build_registry()
        names = [s.name for s in registry]
        configs = enumerate_workflows()
        wids = [workflow_id(c) for c in configs]

        perf_rows = []
        target_rows = []
        rank_table = {}
        for did in dataset_ids:
            records = entries[did]["records"]
            kappas = {w: records[w]["mean_kappa"] for w in wids}
            ranks = compute_ranks(kappas)
            relevance = ranks_to_relevance(ranks)
            rank_table[did] = ranks
            for w in wids:
                rec = records[w]
                perf_rows.append(
                    [did, w]
                    + [fmt(x) for x in rec["fold_kappas"]]
                    + [fmt(rec["mean_kappa"]), rec["flags"]]
                )
                target_rows.append([did, w, fmt(ranks[w]), str(relevance[w])])

        fold_cols = [f"fold_{i}" for i in range(k_folds)]
        self._write_csv(
            PERFORMANCE_CSV,
            ["dataset_id", "workflow_id"] + fold_cols + ["mean_kappa", "flags"],
            perf_rows,
        )
        self._write_csv(
            METATARGET_CSV,
            ["dataset_id", "workflow_id", "rank", "relevance"],
            target_rows,
        )

        # rank features against the full table are shared by all datasets
        rank_block = {}
        for c in configs:
            w = workflow_id(c)
            values = [rank_table[did][w] for did in dataset_ids]
            rank_block[w] = {
                f"rank.{post}": mf.postprocess(values, post) for post in mf.POSTS
            }
        feat_rows = []
        for did in dataset_ids:
            block = entries[did]["block"]
            for c in configs:
                w = workflow_id(c)
                vec = mfs.compute_vector(
                    None, c, {}, registry, None, block=block, preds=None,
                    rank_override=rank_block[w],
                )
                feat_rows.append([did, w] + [fmt(vec[n]) for n in names])
        self._write_csv(
            METAFEATURES_CSV, ["dataset_id", "workflow_id"] + names, feat_rows
        )

        manifest = {
            "version": STORE_VERSION,
            "seed": seed,
            "k_folds": k_folds,
            "n_datasets": len(dataset_ids),
            "dataset_ids": dataset_ids,
            "n_workflows": len(wids),
            "registry_sha256": mfs.registry_manifest(registry)["sha256"],
        }
        _atomic_write(
            self.path(MANIFEST_JSON),
            json.dumps(manifest, indent=2, sort_keys=True) + "\n",
        )

    def _write_csv(self, name: str, header: list[str], rows: list[list[str]]):
        lines = [",".join(header)] + [",".join(r) for r in rows]
        _atomic_write(self.path(name), "\n".join(lines) + "\n")

    # -- load ----------------------------------------------------------

    def load_manifest(self) -> dict:
        with open(self.path(MANIFEST_JSON), "r", encoding="utf-8") as fh:
            return json.load(fh)

    def load_performance(self) -> dict:
        """(dataset_id, workflow_id) -> {fold_kappas, mean_kappa, flags}."""
        out = {}
        with open(self.path(PERFORMANCE_CSV), "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            fold_cols = [h for h in header if h.startswith("fold_")]
            for row in reader:
                rec = dict(zip(header, row))
                out[(rec["dataset_id"], rec["workflow_id"])] = {
                    "fold_kappas": [
                        float(rec[c]) if rec[c] else None for c in fold_cols
                    ],
                    "mean_kappa": float(rec["mean_kappa"])
                    if rec["mean_kappa"]
                    else None,
                    "flags": rec["flags"],
                }
        return out

    def load_metatarget(self) -> dict:
        out = {}
        with open(self.path(METATARGET_CSV), "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for did, wid, rank, relevance in reader:
                out[(did, wid)] = {"rank": float(rank), "relevance": int(relevance)}
        return out

    def load_metafeatures(self) -> tuple[list[str], dict]:
        with open(self.path(METAFEATURES_CSV), "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            names = header[2:]
            out = {}
            for row in reader:
                vals = {
                    n: (float(v) if v else None) for n, v in zip(names, row[2:])
                }
                out[(row[0], row[1])] = vals
        return names, out


def build_metadatabase(datasets: list[Dataset], store_dir: str, seed: int,
                       k_folds: int = 4, workers: int = 1) -> dict:
    """Evaluate all workflows on all datasets and persist the store.

    Resumes from the journal: datasets already present are skipped. The
    result is independent of `workers` because every dataset's work is
    seeded from (seed, dataset_id) alone.
    """
    ids = [d.dataset_id for d in datasets]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate dataset ids")
    for d in datasets:
        problems = check_eligibility(d)
        if problems:
            raise ValueError(f"{d.dataset_id} ineligible: {'; '.join(problems)}")
    store = MetadataStore(store_dir)
    pending = store.pending(sorted(ids))
    by_id = {d.dataset_id: d for d in datasets}
    todo = [by_id[i] for i in pending]
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(evaluate_dataset, d, seed, k_folds) for d in todo
            ]
            for fut in futures:
                store.append_entry(fut.result())
    else:
        for d in todo:
            store.append_entry(evaluate_dataset(d, seed, k_folds))
    store.finalize(seed, k_folds)
    return {"computed": pending, "skipped": sorted(set(ids) - set(pending))}


@dataclass
class MetaDataset:
    """Training matrix for the ranker: one row per (dataset, workflow)."""

    X: np.ndarray  # (n, 158), NaN = missing
    y: np.ndarray  # relevance labels
    group_ids: list[str]  # dataset id per row
    workflow_ids: list[str]
    feature_names: list[str]

    @property
    def groups(self) -> list[str]:
        seen = dict.fromkeys(self.group_ids)
        return list(seen)

    def group_slices(self) -> dict[str, np.ndarray]:
        ids = np.asarray(self.group_ids)
        return {g: np.flatnonzero(ids == g) for g in self.groups}


def assemble(store: MetadataStore, dataset_ids: list[str] | None = None,
             rank_block: dict[str, dict[str, float | None]] | None = None
             ) -> MetaDataset:
    """Join metafeatures with relevance labels into a MetaDataset.

    Rows are ordered by (dataset_id, workflow_id). When rank_block is
    given (workflow_id -> 15 named values) it replaces the stored rank
    features; LODO uses this to keep held-out performance out of the
    training features.
    """
    names, feats = store.load_metafeatures()
    target = store.load_metatarget()
    manifest = store.load_manifest()
    ids = dataset_ids if dataset_ids is not None else manifest["dataset_ids"]
    wids = sorted({w for _, w in feats})
    rows, labels, gids, row_wids = [], [], [], []
    for did in sorted(ids):
        for w in wids:
            key = (did, w)
            if key not in feats or key not in target:
                raise KeyError(f"store missing cell {key}")
            vec = dict(feats[key])
            if rank_block is not None:
                vec.update(rank_block[w])
            rows.append(
                [np.nan if vec[n] is None else float(vec[n]) for n in names]
            )
            labels.append(target[key]["relevance"])
            gids.append(did)
            row_wids.append(w)
    return MetaDataset(
        X=np.asarray(rows, dtype=np.float64),
        y=np.asarray(labels, dtype=np.float64),
        group_ids=gids,
        workflow_ids=row_wids,
        feature_names=list(names),
    )


def rank_block_for_table(rank_table: dict[str, dict[str, float]],
                         workflow_ids: list[str]) -> dict:
    """Per-workflow rank features computed from a performance-rank table
    restricted to the given training datasets."""
    out = {}
    for w in workflow_ids:
        values = mf.rank_values(w, rank_table)
        out[w] = {f"rank.{post}": mf.postprocess(values, post)
                  for post in mf.POSTS}
    return out


def online_vectors(d: Dataset, seed: int, k_folds: int, rank_block: dict
                   ) -> tuple[list[str], dict[str, np.ndarray]]:
    """Metafeature vectors for a dataset outside the store (the online
    path): the dataset block is computed fresh, the rank features come
    from the supplied block (usually embedded in a trained model bundle).

    Reproduces the stored vectors exactly for a training dataset when
    seed and fold count match the build."""
    ds_seed = derive_seed(seed, "dataset", d.dataset_id)
    folds = stratified_folds(d.target, k_folds, ds_seed)
    registry = mfs.build_registry()
    names = [s.name for s in registry]
    block = mfs.dataset_block(d, folds)
    out = {}
    for c in enumerate_workflows():
        w = workflow_id(c)
        vec = mfs.compute_vector(None, c, {}, registry, None, block=block,
                                 rank_override=rank_block[w])
        out[w] = np.array(
            [np.nan if vec[n] is None else float(vec[n]) for n in names]
        )
    return names, out
