import csv
import io
import json

import pytest

from pipeline import artifact_bytes, cli, run_pipeline


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    work = tmp_path_factory.mktemp("pipeline")
    run_pipeline(work)
    return work


def test_synth_twice_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        cli("synth", "--nodes", 50, "--events", 2000, "--seed", 7, "--out", tmp_path / d)
    assert (tmp_path / "a/events.tsv").read_bytes() == (tmp_path / "b/events.tsv").read_bytes()


def test_ingest_matches_synth(pipeline_dir):
    a = (pipeline_dir / "data/events.tsv").read_text()
    b = (pipeline_dir / "ingested/events.tsv").read_text()
    assert a == b


def test_compare_has_one_row_per_method_and_metric(pipeline_dir):
    rows = list(csv.DictReader(io.StringIO((pipeline_dir / "compare/plot.csv").read_text())))
    keys = [(r["method"], r["metric"]) for r in rows]
    assert len(keys) == len(set(keys))
    methods = {m for m, _ in keys}
    assert methods == {"original", "retrain", "gradtrans", "finetune", "finetune_ul"}
    per_method = {m: {k for mm, k in keys if mm == m} for m in methods}
    assert len({frozenset(v) for v in per_method.values()}) == 1


def test_compare_report_excludes_wall_clock(pipeline_dir):
    report = json.loads((pipeline_dir / "compare/report.json").read_text())
    assert all("seconds" not in m for m in report["methods"])
    timings = json.loads((pipeline_dir / "compare/timings.json").read_text())
    assert set(timings["mean_seconds"]) == {"retrain", "gradtrans", "finetune", "finetune_ul"}


def test_every_stage_writes_a_config_snapshot(pipeline_dir):
    names = {p.name for p in (pipeline_dir / "run").glob("*.config.json")}
    assert names == {"train.config.json", "sample-ul.config.json", "unlearn.config.json",
                     "future-unlearn.config.json"}


def test_unlearned_checkpoints_and_traces(pipeline_dir):
    run = pipeline_dir / "run"
    for stem in ("gradtrans", "finetune", "finetune_ul", "retrain"):
        assert (run / f"{stem}.bin").stat().st_size > 0
        assert (run / f"{stem}.trace.csv").read_text().startswith(("step,", "epoch,"))
    assert (run / "gradtrans.trace.csv").read_text().splitlines()[0] == "step,l_re,l_reg,l_ul,l_ulg,total"


def test_outputs_differ_only_in_recorded_paths(pipeline_dir, tmp_path):
    run_pipeline(tmp_path)
    a, b = artifact_bytes(tmp_path / "run"), artifact_bytes(pipeline_dir / "run")
    assert a.keys() == b.keys()
    assert {k for k in a if a[k] != b[k]} <= {k for k in a if k.endswith(".config.json")}


def test_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"unlearn": {"alpha": -1.0}}))
    proc = cli("synth", "--config", cfg, "--out", tmp_path, check=False)
    assert proc.returncode == 2 and "config error" in proc.stderr


def test_unknown_format_exits_2(tmp_path):
    proc = cli("ingest", "--dataset", "x.csv", "--format", "parquet", "--out", tmp_path, check=False)
    assert proc.returncode == 2


def test_missing_dataset_exits_1(tmp_path):
    proc = cli("train", "--dataset", tmp_path / "nope.tsv", "--out", tmp_path, check=False)
    assert proc.returncode == 1 and "error" in proc.stderr


def test_future_without_phi_exits_2(pipeline_dir, tmp_path):
    run = pipeline_dir / "run"
    proc = cli("future-unlearn", "--dataset", pipeline_dir / "data/events.tsv", "--out", tmp_path,
               "--model", run / "model.bin", "--request", run / "request", check=False)
    assert proc.returncode == 2
