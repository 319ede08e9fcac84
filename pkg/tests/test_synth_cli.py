"""Synthetic generators, the batch CLI, and emitted-file schemas."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from parinla.cli import main
from parinla.fit import FitConfig, fit
from parinla.optimizer import FDConfig
from parinla.synth import make_synth, write_synth


def run_cli(args):
    return main([str(a) for a in args])


class TestSynthGenerators:
    def test_reproducible_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        write_synth(a, make_synth("conjugate", size=5, seed=7))
        write_synth(b, make_synth("conjugate", size=5, seed=7))
        for name in ("model.json", "data.csv", "truth.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        write_synth(a, make_synth("conjugate", size=5, seed=1))
        write_synth(b, make_synth("conjugate", size=5, seed=2))
        assert (a / "data.csv").read_text() != (b / "data.csv").read_text()

    def test_grid2d_row_count(self, tmp_path):
        out = write_synth(tmp_path, make_synth("grid2d", size=30, seed=0))
        with open(out["data"]) as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 900  # header + one row per cell
        bundle = make_synth("grid2d", size=30, seed=0)
        spec, _ = bundle.build()
        assert spec.latent_dim == 901  # intercept + spatial field

    def test_leukemia_like_shape(self):
        bundle = make_synth("leukemia-like", size=63, m=6174, seed=0)
        spec, y = bundle.build()
        assert spec.theta_dim == 3
        assert abs(spec.latent_dim - 8000) < 200
        assert y.shape == (6174,)

    def test_round_trip_files_fit(self, tmp_path):
        """synth output is accepted by fit without modification."""
        write_synth(tmp_path, make_synth("grid2d", size=6, seed=2))
        code = run_cli([
            "fit", "--model", tmp_path / "model.json", "--data", tmp_path / "data.csv",
            "--threads", "1:1", "--out", tmp_path / "run", "--max-iters", "30",
        ])
        assert code == 0
        assert (tmp_path / "run" / "summary.json").exists()

    def test_calibration_recovers_truth(self):
        """3-hyperparameter analogue: truth within 3 posterior sds on >= 90%
        of 20 seeds (desk-scale instance)."""
        hits = 0
        for seed in range(20):
            bundle = make_synth("leukemia-like", size=16, m=3500, seed=seed)
            spec, y = bundle.build()
            r = fit(spec, y, FitConfig(strategy="eb", fd=FDConfig(epsilon=1e-3)))
            sds = np.array([h.sd for h in r.marginals.hyper])
            z = np.abs(r.theta_mode.theta - np.array(bundle.truth["theta_true"])) / sds
            hits += bool(np.all(z <= 3.0))
        assert hits >= 18

    def test_unknown_kind(self):
        from parinla.errors import ConfigError

        with pytest.raises(ConfigError):
            make_synth("weird")


class TestCmdFit:
    @pytest.fixture()
    def conjugate_dir(self, tmp_path):
        write_synth(tmp_path, make_synth("conjugate", size=30, seed=4))
        return tmp_path

    def test_outputs_and_schemas(self, conjugate_dir, capsys):
        out = conjugate_dir / "run"
        code = run_cli([
            "fit", "--model", conjugate_dir / "model.json",
            "--data", conjugate_dir / "data.csv",
            "--threads", "2:1", "--strategy", "grid", "--out", out,
        ])
        assert code == 0
        import jsonschema

        schema_dir = Path(__file__).parent.parent / "src" / "parinla" / "schemas"
        summary = json.loads((out / "summary.json").read_text())
        jsonschema.validate(summary, json.loads((schema_dir / "summary.schema.json").read_text()))
        hyper = json.loads((out / "hyper.json").read_text())
        jsonschema.validate(hyper, json.loads((schema_dir / "hyper.schema.json").read_text()))
        trace_schema = json.loads((schema_dir / "trace.schema.json").read_text())
        lines = (out / "trace.jsonl").read_text().splitlines()
        assert lines
        for line in lines:
            jsonschema.validate(json.loads(line), trace_schema)
        with open(out / "marginals.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == summary["n_latent"]
        assert set(rows[0]) == {"index", "component", "mean", "sd"}
        assert summary["n_fn_evals"] >= 2  # d + 1 with d = 1
        assert all(np.isfinite(v) for v in summary["theta_mode"])

    def test_reproducible_summary(self, conjugate_dir):
        outs = []
        for name in ("r1", "r2"):
            out = conjugate_dir / name
            assert run_cli([
                "fit", "--model", conjugate_dir / "model.json",
                "--data", conjugate_dir / "data.csv", "--threads", "1:1", "--out", out,
            ]) == 0
            doc = json.loads((out / "summary.json").read_text())
            for key in ("time_per_fn_s", "analyze_s", "total_s"):
                doc.pop(key)
            outs.append(doc)
        assert outs[0] == outs[1]

    def test_budget_does_not_change_mode(self, conjugate_dir):
        modes = []
        for budget in ("1:1", "4:1"):
            out = conjugate_dir / f"b{budget.replace(':', '_')}"
            assert run_cli([
                "fit", "--model", conjugate_dir / "model.json",
                "--data", conjugate_dir / "data.csv", "--threads", budget, "--out", out,
            ]) == 0
            modes.append(json.loads((out / "summary.json").read_text())["theta_mode"])
        np.testing.assert_allclose(modes[0], modes[1], atol=1e-12)

    def test_malformed_model_is_config_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"likelihood": {"family": "cauchy"}}))
        data = tmp_path / "d.csv"
        data.write_text("y\n1.0\n")
        code = run_cli(["fit", "--model", bad, "--data", data, "--out", tmp_path])
        assert code == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "config"
        assert err["key"] == "likelihood.family"

    def test_serial_linesearch_flag(self, conjugate_dir):
        out = conjugate_dir / "serial_ls"
        assert run_cli([
            "fit", "--model", conjugate_dir / "model.json",
            "--data", conjugate_dir / "data.csv", "--linesearch", "serial",
            "--threads", "1:1", "--out", out,
        ]) == 0
        assert json.loads((out / "summary.json").read_text())["status"] in (
            "converged", "stalled", "max-iters",
        )


class TestCmdBench:
    def test_sweep_table(self, tmp_path, capsys):
        write_synth(tmp_path, make_synth("conjugate", size=25, seed=9))
        out = tmp_path / "bench"
        code = run_cli([
            "bench", "--model", tmp_path / "model.json", "--data", tmp_path / "data.csv",
            "--sweep", "1:1,2:1", "--out", out,
        ])
        assert code == 0
        with open(out / "bench.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["budget"] for r in rows] == ["1:1", "2:1"]
        assert abs(float(rows[0]["speedup_vs_1:1"]) - 1.0) < 1e-12
        assert float(rows[1]["time_per_fn"]) > 0

    def test_single_budget_self_reference(self, tmp_path):
        write_synth(tmp_path, make_synth("conjugate", size=10, seed=3))
        out = tmp_path / "bench"
        assert run_cli([
            "bench", "--model", tmp_path / "model.json", "--data", tmp_path / "data.csv",
            "--sweep", "1:1", "--out", out,
        ]) == 0
        with open(out / "bench.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1 and abs(float(rows[0]["speedup_vs_1:1"]) - 1.0) < 1e-12


class TestCmdSynth:
    def test_cli_synth_writes_files(self, tmp_path, capsys):
        code = run_cli([
            "synth", "--kind", "leukemia-like", "--size", 8, "--m", 200,
            "--seed", 5, "--out", tmp_path,
        ])
        assert code == 0
        paths = json.loads(capsys.readouterr().out.strip())
        for key in ("model", "data", "truth", "graph"):
            assert paths[key] and Path(paths[key]).exists()
        truth = json.loads(Path(paths["truth"]).read_text())
        assert len(truth["theta_true"]) == 3
