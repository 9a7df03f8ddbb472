"""Command-line pipeline: ingest -> build -> train -> rank / benchmark.

Every command is deterministic given (inputs, seed) and records its
effective configuration, the metafeature registry hash, and the package
version in its output directory. A JSON config file can supply any flag;
explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

from . import __version__
from . import metafeatures as mfs
from .datasets import Dataset, check_eligibility, load_csv
from .evaluation import run_benchmark, export_results
from .metadatabase import (
    MANIFEST_JSON,
    MetadataStore,
    _atomic_write,
    assemble,
    build_metadatabase,
    fmt,
    online_vectors,
    rank_block_for_table,
)
from .rank_model import (
    RankerConfig,
    feature_gain,
    load_model,
    rank_workflows,
    save_model,
    train_meta,
)

DEFAULTS = {
    "manifest": None,
    "out": None,
    "seed": None,
    "folds": 4,
    "workers": 1,
    "map_k": 10,
    "alpha": 0.05,
    "rounds": 200,
    "depth": 4,
    "eta": 0.1,
}


def _registry_sha() -> str:
    return mfs.registry_manifest(mfs.build_registry())["sha256"]


def effective_config(args: argparse.Namespace) -> dict:
    """DEFAULTS <- config file <- explicit flags."""
    from_file = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            from_file = json.load(fh)
        unknown = set(from_file) - set(DEFAULTS)
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
    cfg = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        file_val = from_file.get(key)
        cfg[key] = flag if flag is not None else (
            file_val if file_val is not None else default
        )
    return cfg


def _require(cfg: dict, *keys: str):
    for key in keys:
        if cfg[key] is None:
            raise SystemExit(f"--{key.replace('_', '-')} is required")


def write_provenance(out_dir: str, command: str, cfg: dict):
    """Config snapshot for the run. The worker count is scheduling, not
    semantics, and is left out so outputs stay byte-identical across it."""
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        "command": command,
        "version": __version__,
        "registry_sha256": _registry_sha(),
        "config": {k: v for k, v in cfg.items() if k != "workers"},
    }
    _atomic_write(
        os.path.join(out_dir, f"run_{command}.json"),
        json.dumps(doc, indent=2, sort_keys=True) + "\n",
    )


# -- manifest ------------------------------------------------------------


def read_manifest(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    for entry in doc["datasets"]:
        csv_path = entry["path"]
        if not os.path.isabs(csv_path):
            csv_path = os.path.join(base, csv_path)
        entries.append(
            {"id": entry["id"], "path": csv_path, "target": entry.get("target")}
        )
    ids = [e["id"] for e in entries]
    if len(set(ids)) != len(ids):
        raise SystemExit("duplicate dataset ids in manifest")
    return entries


def load_entry(entry: dict) -> Dataset:
    target = entry["target"]
    if target is None:
        with open(entry["path"], "r", encoding="utf-8") as fh:
            header = next(csv.reader(fh))
        target = header[-1].strip()
    return load_csv(entry["path"], entry["id"], target)


def _store_hash(entries: list[dict], eligible: list[str]) -> str:
    digest = hashlib.sha256()
    for entry in sorted(entries, key=lambda e: e["id"]):
        if entry["id"] not in eligible:
            continue
        digest.update(entry["id"].encode("utf-8"))
        with open(entry["path"], "rb") as fh:
            digest.update(hashlib.sha256(fh.read()).digest())
    return digest.hexdigest()


# -- commands ------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = effective_config(args)
    _require(cfg, "manifest", "out")
    entries = read_manifest(cfg["manifest"])
    eligible, rejected = [], {}
    for entry in entries:
        try:
            ds = load_entry(entry)
            problems = check_eligibility(ds)
        except Exception as exc:  # unreadable file, bad target, ragged rows
            problems = [str(exc)]
        if problems:
            rejected[entry["id"]] = problems
            print(f"{entry['id']}: REJECTED ({'; '.join(problems)})")
        else:
            eligible.append(entry["id"])
            print(f"{entry['id']}: ok")
    report = {
        "eligible": sorted(eligible),
        "rejected": {k: rejected[k] for k in sorted(rejected)},
        "store_hash": _store_hash(entries, eligible),
    }
    os.makedirs(cfg["out"], exist_ok=True)
    _atomic_write(
        os.path.join(cfg["out"], "ingest_report.json"),
        json.dumps(report, indent=2, sort_keys=True) + "\n",
    )
    write_provenance(cfg["out"], "ingest", cfg)
    print(f"{len(eligible)} eligible, {len(rejected)} rejected")
    return 0 if eligible else 1


def cmd_build(args) -> int:
    cfg = effective_config(args)
    _require(cfg, "manifest", "out", "seed")
    entries = read_manifest(cfg["manifest"])
    datasets = []
    for entry in entries:
        ds = load_entry(entry)
        problems = check_eligibility(ds)
        if problems:
            print(f"skipping {entry['id']}: {'; '.join(problems)}")
            continue
        datasets.append(ds)
    if not datasets:
        print("no eligible datasets", file=sys.stderr)
        return 1
    store_dir = os.path.join(cfg["out"], "store")
    result = build_metadatabase(
        datasets, store_dir, seed=cfg["seed"], k_folds=cfg["folds"],
        workers=cfg["workers"],
    )
    write_provenance(cfg["out"], "build", cfg)
    print(
        f"built {len(result['computed'])} datasets, "
        f"resumed past {len(result['skipped'])}"
    )
    return 0


def _open_store(cfg: dict) -> MetadataStore:
    store_dir = os.path.join(cfg["out"], "store")
    if not os.path.exists(os.path.join(store_dir, MANIFEST_JSON)):
        raise SystemExit(
            f"no metadatabase at {store_dir}; run `bagrank build` first"
        )
    return MetadataStore(store_dir)


def _ranker_config(cfg: dict) -> RankerConfig:
    return RankerConfig(
        rounds=cfg["rounds"], max_depth=cfg["depth"], eta=cfg["eta"],
        seed=cfg["seed"],
    )


def cmd_train(args) -> int:
    cfg = effective_config(args)
    _require(cfg, "out", "seed")
    store = _open_store(cfg)
    manifest = store.load_manifest()
    meta = assemble(store)
    model = train_meta(meta, _ranker_config(cfg))

    target = store.load_metatarget()
    wids = sorted({w for _, w in target})
    rank_table = {
        d: {w: target[(d, w)]["rank"] for w in wids}
        for d in manifest["dataset_ids"]
    }
    save_model(
        model,
        os.path.join(cfg["out"], "model.json"),
        extra={
            "rank_block": rank_block_for_table(rank_table, wids),
            "seed": manifest["seed"],
            "k_folds": manifest["k_folds"],
            "registry_sha256": manifest["registry_sha256"],
            "version": __version__,
        },
    )
    gains = feature_gain(model)
    lines = ["feature,gain"]
    order = sorted(gains, key=lambda n: (-gains[n], n))
    lines += [f"{n},{fmt(gains[n])}" for n in order]
    _atomic_write(
        os.path.join(cfg["out"], "importance.csv"), "\n".join(lines) + "\n"
    )
    write_provenance(cfg["out"], "train", cfg)
    print(f"trained on {manifest['n_datasets']} datasets; wrote model.json")
    return 0


def cmd_rank(args) -> int:
    cfg = effective_config(args)
    model, extra = load_model(args.model)
    if extra.get("registry_sha256") != _registry_sha():
        raise SystemExit("model was trained against a different registry")
    dataset_id = args.dataset_id or os.path.splitext(
        os.path.basename(args.data)
    )[0]
    entry = {"id": dataset_id, "path": args.data, "target": args.target}
    ds = load_entry(entry)
    problems = check_eligibility(ds)
    if problems:
        print(f"warning: {'; '.join(problems)}", file=sys.stderr)
    names, vectors = online_vectors(
        ds, extra["seed"], extra["k_folds"], extra["rank_block"]
    )
    if names != model.feature_names:
        raise SystemExit("feature names do not match the model manifest")
    ranking = rank_workflows(model, vectors)
    lines = ["position,workflow_id,score"]
    lines += [
        f"{i},{w},{fmt(s)}" for i, (w, s) in enumerate(ranking, start=1)
    ]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if cfg["out"]:
        os.makedirs(cfg["out"], exist_ok=True)
        _atomic_write(
            os.path.join(cfg["out"], f"rank_{dataset_id}.csv"), text
        )
        write_provenance(cfg["out"], "rank", cfg)
    return 0


def cmd_benchmark(args) -> int:
    cfg = effective_config(args)
    _require(cfg, "out", "seed")
    store = _open_store(cfg)
    report = run_benchmark(
        store, _ranker_config(cfg), map_k=cfg["map_k"], alpha=cfg["alpha"]
    )
    bench_dir = os.path.join(cfg["out"], "benchmark")
    export_results(report, bench_dir)
    write_provenance(cfg["out"], "benchmark", cfg)
    for method in sorted(report["map"]):
        print(f"MAP@{report['map_k']} {method}: {report['map'][method]:.4f}")
    cd = report["cd"]
    print(f"CD at alpha={cd.alpha}: {cd.cd:.4f} over {cd.n_datasets} datasets")
    for name, ok in report["audits"].items():
        print(f"audit {name}: {'pass' if ok else 'FAIL'}")
    if not report["audits_passed"]:
        return 1
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bagrank",
        description="rank bagging workflows for tabular classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", help="JSON config file; flags override")
        p.add_argument("--manifest", help="dataset manifest JSON")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--folds", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--map-k", dest="map_k", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--rounds", type=int)
        p.add_argument("--depth", type=int)
        p.add_argument("--eta", type=float)

    p_ingest = sub.add_parser("ingest", help="validate datasets in a manifest")
    common(p_ingest)
    p_ingest.set_defaults(func=cmd_ingest)

    p_build = sub.add_parser("build", help="evaluate workflows, build metadatabase")
    common(p_build)
    p_build.set_defaults(func=cmd_build)

    p_train = sub.add_parser("train", help="train the ranking metamodel")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_rank = sub.add_parser("rank", help="rank workflows for a new dataset CSV")
    common(p_rank)
    p_rank.add_argument("model", help="model.json from `bagrank train`")
    p_rank.add_argument("data", help="dataset CSV")
    p_rank.add_argument("--dataset-id", dest="dataset_id")
    p_rank.add_argument("--target", help="target column (default: last)")
    p_rank.set_defaults(func=cmd_rank)

    p_bench = sub.add_parser("benchmark", help="leave-one-dataset-out report")
    common(p_bench)
    p_bench.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
