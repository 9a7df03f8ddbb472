"""Metafeature registry and vector computation.

Characterizes a (dataset, workflow) pair with 158 named values built
from meta-function x input-objects x post-processing combinations:

- systematic block, 146 entries: entropy of the class and of landmarker
  prediction sets; per-column and pairwise kernels over categorical and
  numeric attributes; class-overlap values; the workflow's rank history
  on the meta-training performance table;
- simple block, 8 entries: dataset shape counts and the five
  cross-validated landmarker accuracies;
- workflow block, 4 entries: numeric descriptors of the configuration.

Dataset-level entries never depend on the workflow, so they are computed
once per dataset and joined with the per-workflow blocks.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import metafunctions as mf
from .datasets import Dataset, encode, fit_encoder, stratified_folds
from .learners import accuracy, fit_majority, fit_naive_bayes, fit_stump
from .workflows import WorkflowConfig, workflow_id

REGISTRY_VERSION = 1

LANDMARKERS = (
    ("naive_bayes", "nb.landmarker"),
    ("stump_d1", "dstump.landmarker_d1"),
    ("stump_d2", "dstump.landmarker_d2"),
    ("stump_d3", "dstump.landmarker_d3"),
    ("majority", "majority.landmarker"),
)

PRUNING_CODES = {"none": 0, "mdsq": 1, "bb": 2}
INTEGRATION_CODES = {"vote": 0, "ola": 1, "knora_e": 2}


@dataclass(frozen=True)
class MetafeatureSpec:
    name: str
    meta_function: str
    inputs: tuple
    post: str  # one of mf.POSTS or "identity"


def _spread(name_prefix: str, meta_function: str, inputs: tuple) -> list:
    return [
        MetafeatureSpec(f"{name_prefix}.{post}", meta_function, inputs, post)
        for post in mf.POSTS
    ]


def build_registry() -> list[MetafeatureSpec]:
    """The fixed 158-entry manifest; order defines vector layout."""
    specs = [MetafeatureSpec("class.entropy", "entropy", ("class",), "identity")]
    for _, prefix in LANDMARKERS:
        specs.append(
            MetafeatureSpec(
                f"{prefix}.entropy", "entropy", (f"landmarker:{prefix}",), "identity"
            )
        )
    specs += _spread("cat_attrs.entropy", "entropy", ("cat_attrs",))
    specs += _spread(
        "cat_attrs.class.mutual_information",
        "mutual_information",
        ("cat_attrs", "class"),
    )
    specs += _spread(
        "cat_attrs.pairs.mutual_information",
        "mutual_information",
        ("cat_attrs", "cat_attrs"),
    )
    for _, prefix in LANDMARKERS:
        specs.append(
            MetafeatureSpec(
                f"{prefix}.class.mutual_information",
                "mutual_information",
                (f"landmarker:{prefix}", "class"),
                "identity",
            )
        )
    specs += _spread("num_attrs.skewness", "skewness", ("num_attrs",))
    specs += _spread("num_attrs.pairs.pearson", "pearson", ("num_attrs", "num_attrs"))
    specs += _spread("num_attrs.pairs.mic", "mic", ("num_attrs", "num_attrs"))
    specs += _spread(
        "num_attrs.class.eta_squared", "eta_squared", ("num_attrs", "class")
    )
    specs += _spread("r_value", "r_value", ("dataset",))
    specs += _spread("rank", "rank", ("workflow", "performance_table"))
    assert len(specs) == 146, f"systematic block built {len(specs)} specs"

    specs.append(MetafeatureSpec("n_examples", "simple", ("dataset",), "identity"))
    specs.append(MetafeatureSpec("n_attributes", "simple", ("dataset",), "identity"))
    specs.append(MetafeatureSpec("n_classes", "simple", ("dataset",), "identity"))
    for _, prefix in LANDMARKERS:
        specs.append(
            MetafeatureSpec(
                f"{prefix}.accuracy", "simple", (f"landmarker:{prefix}", "class"),
                "identity",
            )
        )

    specs.append(
        MetafeatureSpec("workflow.n_trees", "workflow", ("workflow",), "identity")
    )
    specs.append(
        MetafeatureSpec(
            "workflow.pruning_method", "workflow", ("workflow",), "identity"
        )
    )
    specs.append(
        MetafeatureSpec("workflow.cut_point", "workflow", ("workflow",), "identity")
    )
    specs.append(
        MetafeatureSpec(
            "workflow.integration_method", "workflow", ("workflow",), "identity"
        )
    )
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("duplicate metafeature names in registry")
    if len(specs) != 158:
        raise ValueError(f"registry has {len(specs)} specs, expected 158")
    return specs


def registry_manifest(registry: list[MetafeatureSpec]) -> dict:
    entries = [
        {
            "name": s.name,
            "meta_function": s.meta_function,
            "inputs": list(s.inputs),
            "post": s.post,
        }
        for s in registry
    ]
    payload = json.dumps(entries, sort_keys=True).encode("utf-8")
    return {
        "version": REGISTRY_VERSION,
        "n_specs": len(entries),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "pruning_codes": PRUNING_CODES,
        "integration_codes": INTEGRATION_CODES,
        "specs": entries,
    }


def registry_names(registry=None) -> list[str]:
    return [s.name for s in (registry or build_registry())]


def landmarker_predictions(d: Dataset, folds: np.ndarray) -> dict[str, np.ndarray]:
    """Out-of-fold predictions of the five landmarkers, aligned row-wise
    with the target. A fold whose training part is single-class falls
    back to fitting on all rows for that fold's predictions."""
    folds = np.asarray(folds)
    n_folds = int(folds.max()) + 1
    preds = {prefix: np.full(d.n_rows, -1, dtype=np.int64) for _, prefix in LANDMARKERS}
    for f in range(n_folds):
        test_rows = np.flatnonzero(folds == f)
        train_rows = np.flatnonzero(folds != f)
        if train_rows.size == 0 or np.unique(d.target[train_rows]).shape[0] < 2:
            train_rows = np.arange(d.n_rows)
        fitted = {
            "nb.landmarker": fit_naive_bayes(d, train_rows),
            "dstump.landmarker_d1": fit_stump(d, train_rows, 1),
            "dstump.landmarker_d2": fit_stump(d, train_rows, 2),
            "dstump.landmarker_d3": fit_stump(d, train_rows, 3),
            "majority.landmarker": fit_majority(d, train_rows),
        }
        for prefix, model in fitted.items():
            preds[prefix][test_rows] = model.predict_all(d, test_rows)
    return preds


def landmarker_accuracies(d: Dataset, folds: np.ndarray,
                          preds: dict[str, np.ndarray] | None = None
                          ) -> dict[str, float]:
    preds = preds if preds is not None else landmarker_predictions(d, folds)
    return {
        prefix: accuracy(d.target, preds[prefix]) for _, prefix in LANDMARKERS
    }


def _pairs(values: list) -> list[tuple]:
    return [(values[i], values[j]) for i in range(len(values))
            for j in range(i + 1, len(values))]


def _family(values: list[float | None]) -> list[float]:
    return [v for v in values if v is not None]


def dataset_block(d: Dataset, folds: np.ndarray,
                  preds: dict[str, np.ndarray] | None = None) -> dict:
    """All dataset-level metafeature values (everything except the rank
    and workflow blocks), keyed by family or scalar name."""
    preds = preds if preds is not None else landmarker_predictions(d, folds)
    cat_cols = [c.values for c in d.categorical_columns()]
    num_cols = [c.values for c in d.numeric_columns()]
    out = {}
    out["class.entropy"] = mf.entropy(d.target)
    for _, prefix in LANDMARKERS:
        out[f"{prefix}.entropy"] = mf.entropy(preds[prefix])
        out[f"{prefix}.class.mutual_information"] = mf.mutual_information(
            preds[prefix], d.target
        )
    out["cat_attrs.entropy"] = _family([mf.entropy(c) for c in cat_cols])
    out["cat_attrs.class.mutual_information"] = _family(
        [mf.mutual_information(c, d.target) for c in cat_cols]
    )
    out["cat_attrs.pairs.mutual_information"] = _family(
        [mf.mutual_information(a, b) for a, b in _pairs(cat_cols)]
    )
    out["num_attrs.skewness"] = _family([mf.skewness(c) for c in num_cols])
    out["num_attrs.pairs.pearson"] = _family(
        [mf.pearson(a, b) for a, b in _pairs(num_cols)]
    )
    out["num_attrs.pairs.mic"] = _family(
        [mf.mic(a, b) for a, b in _pairs(num_cols)]
    )
    out["num_attrs.class.eta_squared"] = _family(
        [mf.eta_squared(c, d.target) for c in num_cols]
    )
    encoded = encode(d, fit_encoder(d))
    out["r_value"] = mf.r_value(encoded, d.target)
    out["n_examples"] = float(d.n_rows)
    out["n_attributes"] = float(d.n_features)
    out["n_classes"] = float(d.n_classes)
    for prefix, acc in landmarker_accuracies(d, folds, preds).items():
        out[f"{prefix}.accuracy"] = acc
    return out


def workflow_block(c: WorkflowConfig) -> dict[str, float]:
    return {
        "workflow.n_trees": float(c.n_models),
        "workflow.pruning_method": float(PRUNING_CODES[c.pruning]),
        "workflow.cut_point": 0.0 if c.cut_point is None else float(c.cut_point),
        "workflow.integration_method": float(INTEGRATION_CODES[c.integration]),
    }


def compute_vector(d: Dataset, c: WorkflowConfig, rank_table: dict,
                   registry: list[MetafeatureSpec], folds: np.ndarray,
                   block: dict | None = None,
                   preds: dict[str, np.ndarray] | None = None,
                   rank_override: dict[str, float | None] | None = None) -> dict:
    """Evaluate the full registry for one (dataset, workflow) pair.

    rank_table maps dataset_id -> workflow_id -> rank over the
    meta-training performance table; rank_override (name -> value for the
    15 rank entries) takes precedence when given. Returns
    name -> float | None in registry order.
    """
    block = block if block is not None else dataset_block(d, folds, preds)
    if rank_override is None:
        ranks = mf.rank_values(workflow_id(c), rank_table)
    wf = workflow_block(c)
    vector = {}
    for spec in registry:
        if spec.meta_function == "workflow":
            vector[spec.name] = wf[spec.name]
        elif spec.meta_function == "rank":
            if rank_override is not None:
                vector[spec.name] = rank_override[spec.name]
            else:
                vector[spec.name] = mf.postprocess(ranks, spec.post)
        elif spec.post == "identity":
            vector[spec.name] = block[spec.name]
        else:
            family = spec.name.rsplit(".", 1)[0]
            vector[spec.name] = mf.postprocess(block[family], spec.post)
    return vector


def default_folds(d: Dataset, seed: int, n_folds: int = 4) -> np.ndarray:
    return stratified_folds(d.target, n_folds, seed)
