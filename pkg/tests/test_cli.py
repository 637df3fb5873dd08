import json
import os
import re
import subprocess
import sys
from pathlib import Path

import pytest
from jsonschema import Draft7Validator
from referencing import Registry, Resource

from stabforest.data import write_csv
from stabforest.synthetic import tabular_dataset

SCHEMA_DIR = Path(__file__).resolve().parents[1] / "src" / "stabforest" / "schemas"


def load_schema(name: str) -> Draft7Validator:
    schema = json.loads((SCHEMA_DIR / name).read_text())
    common = json.loads((SCHEMA_DIR / "common.json").read_text())
    registry = Registry().with_resources(
        [("common.json", Resource.from_contents(common))]
    )
    return Draft7Validator(schema, registry=registry)


def run_cli(*argv, env_extra=None):
    env = dict(os.environ)
    env["PYTHONPATH"] = str(Path(__file__).resolve().parents[1] / "src")
    if env_extra:
        env.update(env_extra)
    return subprocess.run(
        [sys.executable, "-m", "stabforest.cli", *argv],
        capture_output=True,
        text=True,
        env=env,
    )


MASK_KEYS = ("wall_time_ms",)


def masked(text: str) -> str:
    for key in MASK_KEYS:
        text = re.sub(rf'"{key}": [0-9.eE+-]+', f'"{key}": 0', text)
    return text


@pytest.fixture(scope="module")
def toy_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "toy.csv"
    write_csv(tabular_dataset(50, seed=11), path, label_column="outcome")
    return path


COMMON = ["--label", "outcome", "--trees", "12", "--seed", "9"]


class TestValidateCommand:
    def test_report_schema_and_outputs(self, toy_csv, tmp_path):
        out = tmp_path / "v"
        r = run_cli(
            "validate", "--data", str(toy_csv), "--out", str(out),
            "--scheme", "kfold", "--k", "5", *COMMON,
        )
        assert r.returncode == 0, r.stderr
        doc = json.loads((out / "report.json").read_text())
        load_schema("validate_report.json").validate(doc)
        assert (out / "rankings.csv").exists()
        assert (out / "importance.svg").exists()

    def test_hex_seed_equivalent(self, toy_csv, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        base = ["validate", "--data", str(toy_csv), "--scheme", "holdout",
                "--label", "outcome", "--trees", "8"]
        assert run_cli(*base, "--out", str(out_a), "--seed", "42").returncode == 0
        assert run_cli(*base, "--out", str(out_b), "--seed", "0x2A").returncode == 0
        a = masked((out_a / "report.json").read_text())
        b = masked((out_b / "report.json").read_text())
        assert a == b

    def test_loocv_scheme(self, toy_csv, tmp_path):
        out = tmp_path / "l"
        r = run_cli(
            "validate", "--data", str(toy_csv), "--out", str(out),
            "--scheme", "loocv", "--trees", "5", "--label", "outcome",
        )
        assert r.returncode == 0, r.stderr
        doc = json.loads((out / "report.json").read_text())
        assert doc["report"]["scheme"] == "loocv"


class TestTrialsCommand:
    def test_outputs_and_schema(self, toy_csv, tmp_path):
        out = tmp_path / "t"
        r = run_cli(
            "trials", "--data", str(toy_csv), "--out", str(out),
            "--max-trials", "6", "--early-stop-window", "2", "--top-k", "3",
            *COMMON,
        )
        assert r.returncode == 0, r.stderr
        doc = json.loads((out / "report.json").read_text())
        load_schema("trials_report.json").validate(doc)
        for name in ("rankings.csv", "tally.csv", "group_tally.svg"):
            assert (out / name).exists()

    def test_byte_identical_reruns_and_worker_counts(self, toy_csv, tmp_path):
        outputs = []
        for name, threads in (("r1", "1"), ("r2", "1"), ("r4", "4")):
            out = tmp_path / name
            r = run_cli(
                "trials", "--data", str(toy_csv), "--out", str(out),
                "--max-trials", "5", "--early-stop-window", "2", "--top-k", "3",
                *COMMON,
                env_extra={"STABFOREST_THREADS": threads},
            )
            assert r.returncode == 0, r.stderr
            outputs.append(masked((out / "report.json").read_text()))
        assert outputs[0] == outputs[1]  # identical rerun
        assert outputs[0] == outputs[2]  # worker count 1 vs 4

    def test_svg_bytes_deterministic(self, toy_csv, tmp_path):
        svgs = []
        for name in ("s1", "s2"):
            out = tmp_path / name
            run_cli(
                "trials", "--data", str(toy_csv), "--out", str(out),
                "--max-trials", "4", "--early-stop-window", "0", "--top-k", "3",
                *COMMON,
            )
            svgs.append((out / "group_tally.svg").read_bytes())
        assert svgs[0] == svgs[1]


class TestCompareCommand:
    def test_cell_grid_and_pair_count(self, toy_csv, tmp_path):
        out = tmp_path / "c"
        r = run_cli(
            "compare", "--data", str(toy_csv), "--out", str(out),
            "--seeds", "42,43", "--schemes", "holdout,kfold,loso",
            "--k", "5", "--trees", "10", "--label", "outcome",
        )
        assert r.returncode == 0, r.stderr
        doc = json.loads((out / "report.json").read_text())
        load_schema("compare_report.json").validate(doc)
        assert len(doc["cells"]) == 6
        assert len(doc["pairwise"]) == 15
        assert (out / "compare.svg").exists()
        assert (out / "rankings.csv").exists()

    def test_single_cell_degenerate(self, toy_csv, tmp_path):
        out = tmp_path / "c1"
        r = run_cli(
            "compare", "--data", str(toy_csv), "--out", str(out),
            "--seeds", "42", "--schemes", "holdout", "--trees", "8",
            "--label", "outcome",
        )
        assert r.returncode == 0, r.stderr
        doc = json.loads((out / "report.json").read_text())
        assert len(doc["cells"]) == 1
        assert doc["pairwise"] == []


class TestBenchmarkCommand:
    def test_rows_and_schema(self, toy_csv, tmp_path):
        out = tmp_path / "b"
        r = run_cli(
            "benchmark", "--data", str(toy_csv), "--out", str(out),
            "--sizes", "30,50", "--schemes", "holdout,kfold",
            "--k", "3", "--trees", "6", "--label", "outcome", "--seed", "4",
        )
        assert r.returncode == 0, r.stderr
        doc = json.loads((out / "report.json").read_text())
        load_schema("benchmark_report.json").validate(doc)
        assert len(doc["rows"]) == 4
        sizes = [row["sample_size"] for row in doc["rows"]]
        assert sizes == sorted(sizes)
        assert all(row["wall_time_ms"] > 0 for row in doc["rows"])

    def test_oversized_subsample_rejected(self, toy_csv, tmp_path):
        out = tmp_path / "bx"
        r = run_cli(
            "benchmark", "--data", str(toy_csv), "--out", str(out),
            "--sizes", "500", "--schemes", "holdout", "--label", "outcome",
        )
        assert r.returncode == 1
        log = json.loads((out / "error.json").read_text())
        load_schema("error_log.json").validate(log)


class TestStatsCommand:
    def test_rankings_and_welch(self, toy_csv, tmp_path):
        trials_out = tmp_path / "t"
        run_cli(
            "trials", "--data", str(toy_csv), "--out", str(trials_out),
            "--max-trials", "4", "--early-stop-window", "0", "--top-k", "3",
            *COMMON,
        )
        out = tmp_path / "s"
        r = run_cli(
            "stats", "--out", str(out),
            "--rankings", str(trials_out / "tally.csv"), str(trials_out / "tally.csv"),
            "--data", str(toy_csv), "--label", "outcome", "--top-k", "3",
        )
        assert r.returncode == 0, r.stderr
        doc = json.loads((out / "report.json").read_text())
        load_schema("stats_report.json").validate(doc)
        assert doc["ranking_agreement"]["spearman_rho"] == pytest.approx(1.0)
        assert doc["ranking_agreement"]["jaccard_top_k"] == 1.0
        assert (out / "welch.csv").exists()
        # label-aware columns exist for every feature
        assert len(doc["per_feature"]) == 10

    def test_requires_some_input(self, tmp_path):
        out = tmp_path / "s"
        r = run_cli("stats", "--out", str(out))
        assert r.returncode == 1


class TestPlotCommand:
    def test_renders_tally(self, toy_csv, tmp_path):
        trials_out = tmp_path / "t"
        run_cli(
            "trials", "--data", str(toy_csv), "--out", str(trials_out),
            "--max-trials", "3", "--early-stop-window", "0", "--top-k", "3",
            *COMMON,
        )
        out = tmp_path / "p"
        r = run_cli(
            "plot", "--tally", str(trials_out / "tally.csv"),
            "--out", str(out), "--title", "demo",
        )
        assert r.returncode == 0, r.stderr
        doc = json.loads((out / "report.json").read_text())
        load_schema("plot_report.json").validate(doc)
        svg = (out / "tally.svg").read_text()
        assert svg.startswith("<svg") and "demo" in svg


class TestConfigFile:
    def test_config_supplies_defaults_flags_win(self, toy_csv, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("scheme = holdout\ntrees = 7\nseed = 13\n")
        out_a = tmp_path / "a"
        r = run_cli(
            "validate", "--data", str(toy_csv), "--out", str(out_a),
            "--config", str(cfg), "--label", "outcome",
        )
        assert r.returncode == 0, r.stderr
        doc = json.loads((out_a / "report.json").read_text())
        assert doc["report"]["scheme"] == "holdout"
        assert doc["forest"]["n_trees"] == 7
        assert doc["report"]["seed"] == 13
        # an explicit flag overrides the config value
        out_b = tmp_path / "b"
        r = run_cli(
            "validate", "--data", str(toy_csv), "--out", str(out_b),
            "--config", str(cfg), "--label", "outcome", "--trees", "9",
        )
        doc = json.loads((out_b / "report.json").read_text())
        assert doc["forest"]["n_trees"] == 9


class TestManifest:
    def test_manifest_names_label_subject_and_ordinals(self, tmp_path):
        data = tmp_path / "m.csv"
        data.write_text(
            "grade,x,patient,outcome\n"
            "low,1.0,p1,bad\nhigh,2.0,p1,good\nmedium,3.0,p2,bad\n"
            "low,4.0,p2,good\nhigh,5.0,p3,bad\nmedium,6.0,p3,good\n",
            encoding="utf-8",
        )
        manifest = tmp_path / "m.manifest"
        manifest.write_text(
            "label = outcome\nsubject = patient\nordinal.grade = low,medium,high\n",
            encoding="utf-8",
        )
        out = tmp_path / "out"
        r = run_cli(
            "validate", "--data", str(data), "--manifest", str(manifest),
            "--out", str(out), "--scheme", "loso", "--trees", "5", "--seed", "3",
        )
        assert r.returncode == 0, r.stderr
        doc = json.loads((out / "report.json").read_text())
        assert doc["dataset"]["n_subjects"] == 3
        assert doc["dataset"]["feature_names"] == ["grade", "x"]
        assert doc["dataset"]["profile"]["n_ordinals"] == 1
        # one fold per subject under the manifest's grouping
        assert len(doc["report"]["per_fold"]) == 3


class TestErrorPaths:
    def test_bad_label_column_leaves_error_log(self, toy_csv, tmp_path):
        out = tmp_path / "e"
        r = run_cli(
            "validate", "--data", str(toy_csv), "--out", str(out),
            "--label", "nope",
        )
        assert r.returncode == 1
        log = json.loads((out / "error.json").read_text())
        load_schema("error_log.json").validate(log)
        assert "label" in log["error"]

    def test_compare_partial_log_on_failure(self, toy_csv, tmp_path):
        out = tmp_path / "e2"
        r = run_cli(
            "compare", "--data", str(toy_csv), "--out", str(out),
            "--seeds", "42", "--schemes", "holdout,nosuch", "--trees", "5",
            "--label", "outcome",
        )
        assert r.returncode == 1
        log = json.loads((out / "error.json").read_text())
        assert log["completed"] == [{"scheme": "holdout", "seed": 42}]
