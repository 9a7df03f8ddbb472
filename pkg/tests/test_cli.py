"""End-to-end tests for the command-line pipeline."""

import json
import os

import numpy as np
import pytest

import suitegen
from bagrank import cli
from bagrank import metafeatures as mfs
from bagrank.cli import main
from bagrank.metadatabase import MetadataStore
from bagrank.rank_model import (
    feature_manifest_hash,
    load_model,
    rank_workflows,
)
from bagrank.workflows import enumerate_workflows, workflow_id


def write_corpus(root):
    """toy_a/toy_b/toy_c plus an undersized `tiny`, with a manifest."""
    data = root / "data"
    data.mkdir()
    names = []
    for ds in suitegen.toy_corpus() + [suitegen.toy("tiny", n=50)]:
        suitegen.write_dataset_csv(ds, str(data / f"{ds.dataset_id}.csv"))
        names.append(ds.dataset_id)
    entries = [{"id": n, "path": f"data/{n}.csv"} for n in names]
    entries[1]["target"] = "label"  # explicit target on one entry
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"datasets": entries}))
    return str(manifest)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full build + train shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    manifest = write_corpus(root)
    out = root / "out"
    assert main(["build", "--manifest", manifest, "--out", str(out),
                 "--seed", "11"]) == 0
    assert main(["train", "--out", str(out), "--seed", "5",
                 "--rounds", "25"]) == 0
    return {
        "root": root,
        "manifest": manifest,
        "out": str(out),
        "store": str(out / "store"),
        "model": str(out / "model.json"),
        "data": root / "data",
    }


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def parse_ranking(text):
    lines = text.strip().split("\n")
    assert lines[0] == "position,workflow_id,score"
    rows = []
    for line in lines[1:]:
        pos, wid, score = line.split(",")
        rows.append((int(pos), wid, float(score)))
    return rows


# -- ingest ----------------------------------------------------------------


def test_ingest_reports_eligibility(tmp_path, capsys):
    manifest = write_corpus(tmp_path)
    out = tmp_path / "ingest"
    assert main(["ingest", "--manifest", manifest, "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    for did in ("toy_a", "toy_b", "toy_c"):
        assert f"{did}: ok" in stdout
    assert "tiny: REJECTED (too few instances: 50 < 300)" in stdout
    assert "3 eligible, 1 rejected" in stdout

    report = read_json(out / "ingest_report.json")
    assert report["eligible"] == ["toy_a", "toy_b", "toy_c"]
    assert list(report["rejected"]) == ["tiny"]
    assert len(report["store_hash"]) == 64

    prov = read_json(out / "run_ingest.json")
    assert prov["command"] == "ingest"
    assert prov["config"]["folds"] == 4
    assert "workers" not in prov["config"]


def test_ingest_fails_without_eligible_datasets(tmp_path, capsys):
    suitegen.write_dataset_csv(suitegen.toy("tiny", n=50),
                               str(tmp_path / "tiny.csv"))
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps(
        {"datasets": [{"id": "tiny", "path": "tiny.csv"}]}
    ))
    rc = main(["ingest", "--manifest", str(manifest),
               "--out", str(tmp_path / "out")])
    assert rc == 1
    assert "0 eligible, 1 rejected" in capsys.readouterr().out


def test_ingest_rejects_unreadable_file(tmp_path, capsys):
    suitegen.write_dataset_csv(suitegen.toy("toy_a"),
                               str(tmp_path / "toy_a.csv"))
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"datasets": [
        {"id": "toy_a", "path": "toy_a.csv"},
        {"id": "ghost", "path": "ghost.csv"},
    ]}))
    out = tmp_path / "out"
    assert main(["ingest", "--manifest", str(manifest), "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "toy_a: ok" in stdout
    assert "ghost: REJECTED (" in stdout
    report = read_json(out / "ingest_report.json")
    assert report["eligible"] == ["toy_a"]
    assert list(report["rejected"]) == ["ghost"]


def test_ingest_outputs_identical_across_worker_counts(tmp_path):
    manifest = write_corpus(tmp_path)
    outs = []
    for workers, sub in ((1, "w1"), (3, "w3")):
        out = tmp_path / sub
        main(["ingest", "--manifest", manifest, "--out", str(out),
              "--workers", str(workers)])
        outs.append(out)
    name = "ingest_report.json"
    assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    provs = [read_json(out / "run_ingest.json") for out in outs]
    for prov in provs:
        assert "workers" not in prov["config"]
        prov["config"].pop("out")
    assert provs[0] == provs[1]


def test_manifest_duplicate_ids_rejected(tmp_path):
    suitegen.write_dataset_csv(suitegen.toy("toy_a"),
                               str(tmp_path / "toy_a.csv"))
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"datasets": [
        {"id": "toy_a", "path": "toy_a.csv"},
        {"id": "toy_a", "path": "toy_a.csv"},
    ]}))
    with pytest.raises(SystemExit, match="duplicate dataset ids"):
        main(["ingest", "--manifest", str(manifest),
              "--out", str(tmp_path / "out")])


# -- build -------------------------------------------------------------------


def test_build_store_and_resume(pipeline, capsys):
    store = MetadataStore(pipeline["store"])
    manifest = store.load_manifest()
    assert manifest["dataset_ids"] == ["toy_a", "toy_b", "toy_c"]
    assert manifest["seed"] == 11
    assert manifest["k_folds"] == 4

    # second run over the same journal recomputes nothing
    rc = main(["build", "--manifest", pipeline["manifest"],
               "--out", pipeline["out"], "--seed", "11"])
    assert rc == 0
    stdout = capsys.readouterr().out
    assert "skipping tiny: too few instances: 50 < 300" in stdout
    assert "built 0 datasets, resumed past 3" in stdout


def test_build_matches_library_store(pipeline, toy_store):
    """The CLI with the same corpus/seed reproduces the library store."""
    cli_store = MetadataStore(pipeline["store"])
    for name in ("journal.jsonl", "performance.csv", "metatarget.csv",
                 "metafeatures.csv", "manifest.json"):
        with open(cli_store.path(name), "rb") as fh:
            ours = fh.read()
        with open(toy_store.path(name), "rb") as fh:
            ref = fh.read()
        assert ours == ref, name


def test_build_fails_without_eligible_datasets(tmp_path, capsys):
    suitegen.write_dataset_csv(suitegen.toy("tiny", n=50),
                               str(tmp_path / "tiny.csv"))
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps(
        {"datasets": [{"id": "tiny", "path": "tiny.csv"}]}
    ))
    rc = main(["build", "--manifest", str(manifest),
               "--out", str(tmp_path / "out"), "--seed", "1"])
    assert rc == 1
    assert "no eligible datasets" in capsys.readouterr().err
    assert not (tmp_path / "out" / "store").exists()


def test_build_requires_seed(tmp_path):
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"datasets": []}))
    with pytest.raises(SystemExit, match="--seed is required"):
        main(["build", "--manifest", str(manifest),
              "--out", str(tmp_path / "out")])


# -- train -------------------------------------------------------------------


def test_train_outputs(pipeline):
    model, extra = load_model(pipeline["model"])
    registry = mfs.build_registry()
    assert model.feature_names == [s.name for s in registry]
    assert extra["seed"] == 11
    assert extra["k_folds"] == 4
    assert extra["registry_sha256"] == mfs.registry_manifest(registry)["sha256"]
    assert set(extra["rank_block"]) == {
        workflow_id(c) for c in enumerate_workflows()
    }

    with open(os.path.join(pipeline["out"], "importance.csv")) as fh:
        lines = fh.read().strip().split("\n")
    assert lines[0] == "feature,gain"
    rows = [line.rsplit(",", 1) for line in lines[1:]]
    gains = [float(g) for _, g in rows]
    assert gains == sorted(gains, reverse=True)
    assert sum(gains) == pytest.approx(1.0)
    assert {n for n, _ in rows} <= set(model.feature_names)

    prov = read_json(os.path.join(pipeline["out"], "run_train.json"))
    assert prov["config"]["rounds"] == 25
    assert prov["config"]["seed"] == 5


def test_train_reload_scores_identically(pipeline):
    store = MetadataStore(pipeline["store"])
    names, feats = store.load_metafeatures()
    keys = sorted(feats)[:5]
    X = np.array([[np.nan if feats[k][n] is None else feats[k][n]
                   for n in names] for k in keys])
    first, _ = load_model(pipeline["model"])
    second, _ = load_model(pipeline["model"])
    assert first.to_dict() == second.to_dict()
    np.testing.assert_array_equal(first.predict(X), second.predict(X))


def test_train_without_store_errors(tmp_path):
    with pytest.raises(SystemExit, match="run `bagrank build` first"):
        main(["train", "--out", str(tmp_path), "--seed", "1"])
    with pytest.raises(SystemExit, match="run `bagrank build` first"):
        main(["benchmark", "--out", str(tmp_path), "--seed", "1"])


# -- rank --------------------------------------------------------------------


def test_rank_stdout_schema(pipeline, capsys):
    rc = main(["rank", pipeline["model"],
               str(pipeline["data"] / "toy_a.csv")])
    assert rc == 0
    captured = capsys.readouterr()
    assert captured.err == ""
    rows = parse_ranking(captured.out)
    assert [pos for pos, _, _ in rows] == list(range(1, 64))
    wids = [w for _, w, _ in rows]
    assert sorted(wids) == sorted(workflow_id(c) for c in enumerate_workflows())
    scores = [s for _, _, s in rows]
    assert scores == sorted(scores, reverse=True)


def test_rank_matches_stored_vectors(pipeline, capsys):
    """Scoring a training CSV reproduces the ranking of its stored vectors."""
    main(["rank", pipeline["model"], str(pipeline["data"] / "toy_a.csv")])
    rows = parse_ranking(capsys.readouterr().out)

    store = MetadataStore(pipeline["store"])
    names, feats = store.load_metafeatures()
    vectors = {
        w: np.array([np.nan if vals[n] is None else vals[n] for n in names])
        for (d, w), vals in feats.items() if d == "toy_a"
    }
    model, _ = load_model(pipeline["model"])
    expected = rank_workflows(model, vectors)
    assert [(w, s) for _, w, s in rows] == expected


def test_rank_writes_csv_and_defaults_id_to_stem(pipeline, tmp_path, capsys):
    out = tmp_path / "ranked"
    main(["rank", pipeline["model"], str(pipeline["data"] / "toy_a.csv"),
          "--out", str(out)])
    stdout = capsys.readouterr().out
    assert (out / "rank_toy_a.csv").read_text() == stdout
    assert (out / "run_rank.json").exists()


def test_rank_honors_dataset_id_flag(pipeline, tmp_path, capsys):
    out = tmp_path / "ranked"
    main(["rank", pipeline["model"], str(pipeline["data"] / "toy_a.csv"),
          "--out", str(out), "--dataset-id", "renamed"])
    capsys.readouterr()
    assert (out / "rank_renamed.csv").exists()
    assert not (out / "rank_toy_a.csv").exists()


def test_rank_warns_on_ineligible_dataset(pipeline, capsys):
    rc = main(["rank", pipeline["model"],
               str(pipeline["data"] / "tiny.csv")])
    assert rc == 0
    captured = capsys.readouterr()
    assert captured.err.startswith("warning: too few instances")
    assert len(parse_ranking(captured.out)) == 63


def test_rank_deterministic(pipeline, capsys):
    main(["rank", pipeline["model"], str(pipeline["data"] / "toy_b.csv")])
    first = capsys.readouterr().out
    main(["rank", pipeline["model"], str(pipeline["data"] / "toy_b.csv")])
    assert capsys.readouterr().out == first


def test_rank_rejects_foreign_registry(pipeline, tmp_path):
    doc = read_json(pipeline["model"])
    doc["registry_sha256"] = "0" * 64
    tampered = tmp_path / "model.json"
    tampered.write_text(json.dumps(doc))
    with pytest.raises(SystemExit, match="different registry"):
        main(["rank", str(tampered), str(pipeline["data"] / "toy_a.csv")])


def test_rank_rejects_mismatched_feature_names(pipeline, tmp_path):
    doc = read_json(pipeline["model"])
    names = doc["model"]["feature_names"]
    names[0], names[1] = names[1], names[0]
    doc["model"]["manifest_hash"] = feature_manifest_hash(names)
    tampered = tmp_path / "model.json"
    tampered.write_text(json.dumps(doc))
    with pytest.raises(SystemExit, match="feature names do not match"):
        main(["rank", str(tampered), str(pipeline["data"] / "toy_a.csv")])


# -- benchmark ---------------------------------------------------------------


def test_benchmark_outputs(pipeline, capsys):
    rc = main(["benchmark", "--out", pipeline["out"], "--seed", "5",
               "--rounds", "12"])
    assert rc == 0
    stdout = capsys.readouterr().out
    for method in ("average_rank", "gbrank", "oracle"):
        assert f"MAP@10 {method}: " in stdout
    assert "MAP@10 oracle: 1.0000" in stdout
    assert "CD at alpha=0.05: " in stdout
    assert stdout.count("audit ") == 5
    assert "FAIL" not in stdout

    bench = os.path.join(pipeline["out"], "benchmark")
    for name in ("loss_curve.csv", "map_meta.csv", "base_level_kappa.csv",
                 "cd_diagram.json", "rank_boxplot.csv"):
        assert os.path.exists(os.path.join(bench, name)), name
    prov = read_json(os.path.join(pipeline["out"], "run_benchmark.json"))
    assert prov["config"]["rounds"] == 12


# -- config handling -----------------------------------------------------------


def test_config_file_supplies_values_and_flags_override(pipeline, tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(
        {"rounds": 7, "seed": 5, "out": pipeline["out"]}
    ))

    out_a = tmp_path / "a"
    os.makedirs(out_a)
    os.symlink(pipeline["store"], out_a / "store")
    cfg_a = dict(json.loads(cfg_path.read_text()))
    cfg_a["out"] = str(out_a)
    (tmp_path / "cfg_a.json").write_text(json.dumps(cfg_a))
    assert main(["train", "--config", str(tmp_path / "cfg_a.json")]) == 0
    prov = read_json(out_a / "run_train.json")
    assert prov["config"]["rounds"] == 7
    assert prov["config"]["seed"] == 5

    out_b = tmp_path / "b"
    os.makedirs(out_b)
    os.symlink(pipeline["store"], out_b / "store")
    cfg_b = dict(cfg_a)
    cfg_b["out"] = str(out_b)
    (tmp_path / "cfg_b.json").write_text(json.dumps(cfg_b))
    assert main(["train", "--config", str(tmp_path / "cfg_b.json"),
                 "--rounds", "3"]) == 0
    prov = read_json(out_b / "run_train.json")
    assert prov["config"]["rounds"] == 3


def test_config_rejects_unknown_keys(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(SystemExit, match="unknown config keys"):
        main(["ingest", "--config", str(cfg_path),
              "--manifest", "x", "--out", str(tmp_path)])


def test_defaults_snapshot(pipeline):
    assert cli.DEFAULTS == {
        "manifest": None, "out": None, "seed": None, "folds": 4,
        "workers": 1, "map_k": 10, "alpha": 0.05, "rounds": 200,
        "depth": 4, "eta": 0.1,
    }
