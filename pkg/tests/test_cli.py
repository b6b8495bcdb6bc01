"""End-to-end command line coverage, run in-process through cli.main."""

import json

import pytest

from genret import (
    LoopbackServer,
    MetricReport,
    OracleBackend,
    read_instances,
    read_scenes,
    read_table,
    read_world,
)
from genret.cli import ENDPOINT_ENV, RunConfig, main

pytestmark = pytest.mark.filterwarnings(
    "ignore:class .* has positives:RuntimeWarning"
)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One small world scored both ways, calibrated, with a merged cache."""
    base = tmp_path_factory.mktemp("pipeline")
    world = base / "world"
    rc = main(
        [
            "gen-world", "--out", str(world), "--seed", "5",
            "--objects", "8", "--attributes", "18", "--attrs-per-object", "4",
            "--scenes", "6", "--min-entities", "2", "--max-entities", "3",
            "--candidates", "10",
        ]
    )
    assert rc == 0
    instances = str(world / "instances.jsonl")

    gen, con = base / "gen", base / "con"
    for out, method, template in (
        (gen, "generative", "{O} is {A}"),
        (con, "contrastive", "{A} {O}"),
    ):
        rc = main(
            [
                "score", "--out", str(out), "--instances", instances,
                "--backend", "oracle", "--world", str(world / "world.json"),
                "--scenes", str(world / "scenes.jsonl"),
                "--method", method, "--template", template,
            ]
        )
        assert rc == 0

    both = base / "both"
    both.mkdir()
    merged = both / "scores.jsonl"
    merged.write_bytes(
        (gen / "scores.jsonl").read_bytes() + (con / "scores.jsonl").read_bytes()
    )

    cal = base / "cal"
    rc = main(
        [
            "calibrate", "--out", str(cal), "--instances", instances,
            "--cache", str(gen / "scores.jsonl"),
            "--lr", "0.3", "--batch-size", "0", "--steps", "120",
            "--init-mu", "0.0", "--init-sigma", "1.0",
            "--val-instances", instances, "--val-cache", str(gen / "scores.jsonl"),
        ]
    )
    assert rc == 0

    freqs = {}
    for inst in read_instances(instances):
        for w in inst.candidates:
            freqs[w] = freqs.get(w, 0) + 1
    counts_path = base / "counts.json"
    counts_path.write_text(json.dumps(freqs, sort_keys=True))

    return {
        "base": base,
        "world": world,
        "instances": instances,
        "gen": gen,
        "con": con,
        "merged": merged,
        "cal": cal,
        "counts": counts_path,
    }


# -- artifacts ----------------------------------------------------------------


def test_gen_world_writes_everything(pipeline):
    world = pipeline["world"]
    for name in ("world.json", "scenes.jsonl", "scene_graph.json",
                 "instances.jsonl", "config.json"):
        assert (world / name).exists(), name
    config = RunConfig.from_dict(json.loads((world / "config.json").read_text()))
    assert config.command == "gen-world"
    assert config.options["seed"] == 5
    assert config.options["candidates"] == 10
    # the emitted files load back through the library entry points
    spec = read_world(world / "world.json")
    scenes = read_scenes(world / "scenes.jsonl")
    assert len(spec.objects) == 8
    assert len(scenes) == 6
    assert all(2 <= len(s.entities) <= 3 for s in scenes)
    instances = read_instances(world / "instances.jsonl")
    assert instances
    assert all(len(i.candidates) == 10 for i in instances)


def test_gen_world_rerun_is_byte_identical(pipeline, tmp_path):
    world = pipeline["world"]
    again = tmp_path / "again"
    rc = main(
        [
            "gen-world", "--out", str(again), "--seed", "5",
            "--objects", "8", "--attributes", "18", "--attrs-per-object", "4",
            "--scenes", "6", "--min-entities", "2", "--max-entities", "3",
            "--candidates", "10",
        ]
    )
    assert rc == 0
    for name in ("world.json", "scenes.jsonl", "scene_graph.json", "instances.jsonl"):
        assert (again / name).read_bytes() == (world / name).read_bytes(), name
    # config differs only in the recorded output directory
    ours = json.loads((again / "config.json").read_text())
    theirs = json.loads((world / "config.json").read_text())
    ours["options"].pop("out")
    theirs["options"].pop("out")
    assert ours == theirs


def test_build_dataset_from_emitted_scene_graph(pipeline, tmp_path):
    out = tmp_path / "data"
    rc = main(
        [
            "build-dataset", "--out", str(out),
            "--scene-graph", str(pipeline["world"] / "scene_graph.json"),
            "--total", "4", "--seed", "2",
        ]
    )
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    instances = read_instances(out / "instances.jsonl")
    assert manifest["n_instances"] == len(instances)
    assert manifest["total"] == 4
    assert len(manifest["config_hash"]) == 64
    counts = json.loads((out / "counts.json").read_text())
    assert counts  # attribute mode counts attributes
    assert all(isinstance(v, int) for v in counts.values())


# -- scoring and replay ---------------------------------------------------------


def test_cached_replay_is_byte_identical(pipeline, tmp_path):
    out = tmp_path / "replay"
    rc = main(
        [
            "score", "--out", str(out), "--instances", pipeline["instances"],
            "--backend", "cached", "--cache", str(pipeline["gen"] / "scores.jsonl"),
        ]
    )
    assert rc == 0
    assert (out / "scores.jsonl").read_bytes() == (
        pipeline["gen"] / "scores.jsonl"
    ).read_bytes()
    # the single cached combo was inferred and recorded
    config = json.loads((out / "config.json").read_text())
    assert config["options"]["method"] == "generative"
    assert config["options"]["template"] == "{O} is {A}"


def test_score_rerun_is_byte_identical(pipeline, tmp_path):
    out = tmp_path / "rescore"
    rc = main(
        [
            "score", "--out", str(out), "--instances", pipeline["instances"],
            "--backend", "oracle", "--world", str(pipeline["world"] / "world.json"),
            "--scenes", str(pipeline["world"] / "scenes.jsonl"),
            "--method", "generative", "--template", "{O} is {A}",
        ]
    )
    assert rc == 0
    assert (out / "scores.jsonl").read_bytes() == (
        pipeline["gen"] / "scores.jsonl"
    ).read_bytes()


def test_replay_of_merged_cache_needs_disambiguation(pipeline, tmp_path, capsys):
    out = tmp_path / "ambiguous"
    rc = main(
        [
            "score", "--out", str(out), "--instances", pipeline["instances"],
            "--backend", "cached", "--cache", str(pipeline["merged"]),
        ]
    )
    assert rc == 1
    assert "error[ConfigurationError]" in capsys.readouterr().err
    rc = main(
        [
            "score", "--out", str(out), "--instances", pipeline["instances"],
            "--backend", "cached", "--cache", str(pipeline["merged"]),
            "--method", "contrastive", "--template", "{A} {O}",
        ]
    )
    assert rc == 0
    assert (out / "scores.jsonl").read_bytes() == (
        pipeline["con"] / "scores.jsonl"
    ).read_bytes()


def test_remote_backend_from_environment(pipeline, tmp_path, monkeypatch):
    backend = OracleBackend(
        read_world(pipeline["world"] / "world.json"),
        read_scenes(pipeline["world"] / "scenes.jsonl"),
        smoothing=1e-6,
    )
    out = tmp_path / "remote"
    with LoopbackServer(backend) as url:
        monkeypatch.setenv(ENDPOINT_ENV, url)
        rc = main(
            [
                "score", "--out", str(out), "--instances", pipeline["instances"],
                "--backend", "remote", "--terminal",
                "--method", "generative", "--template", "{O} is {A}",
            ]
        )
        # without --terminal the client drops the end-of-sentence term and
        # cannot reproduce a terminal-aware service's scores
        rc_bare = main(
            [
                "score", "--out", str(tmp_path / "bare"),
                "--instances", pipeline["instances"], "--backend", "remote",
                "--method", "generative", "--template", "{O} is {A}",
            ]
        )
    assert rc == 0
    # a round trip over the wire reproduces the local scores exactly
    assert (out / "scores.jsonl").read_bytes() == (
        pipeline["gen"] / "scores.jsonl"
    ).read_bytes()
    config = json.loads((out / "config.json").read_text())
    assert config["options"]["endpoint"].startswith("http://127.0.0.1:")
    assert config["options"]["terminal"] is True
    assert rc_bare == 0
    assert (tmp_path / "bare" / "scores.jsonl").read_bytes() != (
        pipeline["gen"] / "scores.jsonl"
    ).read_bytes()


# -- calibrate ------------------------------------------------------------------


def test_calibrate_outputs(pipeline):
    cal = pipeline["cal"]
    table = read_table(cal / "calibration.json")
    vocab = set()
    for inst in read_instances(pipeline["instances"]):
        vocab.update(inst.candidates)
    assert vocab <= set(table.classes)
    lines = (cal / "loss_curve.csv").read_text().splitlines()
    assert lines[0] == "step,train_loss,val_loss"
    assert len(lines) == 121
    assert not lines[1].endswith(",")  # validation column is populated


def test_calibrate_val_flags_go_together(pipeline, tmp_path, capsys):
    rc = main(
        [
            "calibrate", "--out", str(tmp_path / "cal2"),
            "--instances", pipeline["instances"],
            "--cache", str(pipeline["gen"] / "scores.jsonl"),
            "--val-instances", pipeline["instances"],
        ]
    )
    assert rc == 1
    assert "go together" in capsys.readouterr().err


# -- evaluate -------------------------------------------------------------------


def test_evaluate_outputs(pipeline, tmp_path, capsys):
    out = tmp_path / "eval"
    rc = main(
        [
            "evaluate", "--out", str(out), "--instances", pipeline["instances"],
            "--cache", str(pipeline["gen"] / "scores.jsonl"),
            "--k", "1", "--k", "5",
        ]
    )
    assert rc == 0
    report = MetricReport.from_dict(json.loads((out / "report.json").read_text()))
    assert set(report.mean_recall_at_k) == {1, 5}
    assert report.mean_balanced_accuracy == {}
    text = (out / "report.txt").read_text()
    assert text == report.render_text()
    assert capsys.readouterr().out == text


def test_evaluate_with_calibration_and_buckets(pipeline, tmp_path):
    out = tmp_path / "eval_cal"
    rc = main(
        [
            "evaluate", "--out", str(out), "--instances", pipeline["instances"],
            "--cache", str(pipeline["gen"] / "scores.jsonl"),
            "--calibration", str(pipeline["cal"] / "calibration.json"),
            "--class-frequencies", str(pipeline["counts"]),
            "--head-cut", "5", "--tail-cut", "2",
        ]
    )
    assert rc == 0
    report = MetricReport.from_dict(json.loads((out / "report.json").read_text()))
    # ranking by probability defaults the threshold sweep to 0.5
    assert list(report.mean_balanced_accuracy) == [0.5]
    assert report.bucket_cutoffs == {"head_cut": 5, "tail_cut": 2}
    assert report.per_bucket
    config = json.loads((out / "config.json").read_text())
    assert config["options"]["threshold"] == [0.5]


# -- report ---------------------------------------------------------------------


def test_report_table(pipeline, tmp_path, capsys):
    out = tmp_path / "cmp"
    rc = main(
        [
            "report", "--out", str(out), "--instances", pipeline["instances"],
            "--cache", str(pipeline["merged"]), "--k", "5",
        ]
    )
    assert rc == 0
    comparison = json.loads((out / "comparison.json").read_text())
    assert comparison["k"] == 5
    rows = comparison["rows"]
    assert [r["method"] for r in rows] == ["contrastive", "generative"]
    assert rows[0]["template"] == "{A} {O}"
    assert rows[1]["template"] == "{O} is {A}"
    for row in rows:
        assert set(row) == {"method", "template", "mean_rank", "mR@5", "mAP"}
    text = (out / "comparison.txt").read_text()
    lines = text.splitlines()
    assert lines[0].split() == ["method", "template", "mean_rank", "mR@5", "mAP"]
    assert f"{rows[1]['mean_rank']:.4f}" in lines[2]
    assert capsys.readouterr().out == text


# -- exit codes -----------------------------------------------------------------


def test_usage_errors_exit_2(capsys):
    assert main(["no-such-command"]) == 2
    assert main(["score", "--backend", "oracle"]) == 2  # --out and --instances
    capsys.readouterr()


def test_missing_file_exits_3(tmp_path, capsys):
    rc = main(
        [
            "evaluate", "--out", str(tmp_path / "x"),
            "--instances", str(tmp_path / "nope.jsonl"),
            "--cache", str(tmp_path / "nope2.jsonl"),
        ]
    )
    assert rc == 3
    assert capsys.readouterr().err.startswith("error[io]:")


def test_malformed_instances_exit_4(pipeline, tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"image_id": "x"}\n')
    rc = main(
        [
            "evaluate", "--out", str(tmp_path / "x"), "--instances", str(bad),
            "--cache", str(pipeline["gen"] / "scores.jsonl"),
        ]
    )
    assert rc == 4
    assert capsys.readouterr().err.startswith("error[schema]:")


def test_empty_cache_exits_1(pipeline, tmp_path, capsys):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    rc = main(
        [
            "score", "--out", str(tmp_path / "x"),
            "--instances", pipeline["instances"],
            "--backend", "cached", "--cache", str(empty),
        ]
    )
    assert rc == 1
    assert "error[ConfigurationError]: score cache is empty" in capsys.readouterr().err


def test_oracle_needs_world_and_scenes(pipeline, tmp_path, capsys):
    rc = main(
        [
            "score", "--out", str(tmp_path / "x"),
            "--instances", pipeline["instances"], "--backend", "oracle",
        ]
    )
    assert rc == 1
    assert "needs --world and --scenes" in capsys.readouterr().err


def test_remote_needs_an_endpoint(pipeline, tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(ENDPOINT_ENV, raising=False)
    rc = main(
        [
            "score", "--out", str(tmp_path / "x"),
            "--instances", pipeline["instances"], "--backend", "remote",
        ]
    )
    assert rc == 1
    assert ENDPOINT_ENV in capsys.readouterr().err
