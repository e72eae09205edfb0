import json

import numpy as np
import pytest

from transport_ns.cli import aggregate, main
from transport_ns.config import DEFAULTS, ConfigError, RunConfig
from transport_ns.io import (
    ArtifactIOError,
    dumps,
    read_csv,
    read_field,
    write_csv,
    write_field,
)
from transport_ns.pipeline import emit, run
from transport_ns.torus_field import ScalarField, TensorField, TorusGrid, VectorField

SMALL = {"grid": {"resolution": 16}, "noise": {"steps": 10, "T": 0.1},
         "diagnostics": {"kappa": 2.0}, "output": {"cadence": 5}}


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestConfig:
    def test_defaults_valid(self):
        cfg = RunConfig.from_dict({})
        assert cfg.data == DEFAULTS
        assert cfg.params.lam == DEFAULTS["layers"]["lambda"]

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as info:
            RunConfig.from_dict({"grid": {"size": 3}, "extra": 1})
        assert sorted(info.value.errors) == ["extra: unknown key", "grid.size: unknown key"]

    def test_all_violations_listed(self):
        with pytest.raises(ConfigError) as info:
            RunConfig.from_dict({"grid": {"resolution": 48}, "noise": {"seed": -1},
                                 "layers": {"mu": 0.0}})
        errs = " ".join(info.value.errors)
        assert "grid.resolution" in errs and "noise.seed" in errs and "mu" in errs
        assert info.value.as_dict()["error"] == "config"

    def test_gamma_range(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"layers": {"delta": 0.1, "Gamma": 7.0}})

    def test_stream_function_count(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"noise": {"K": 2}})

    def test_env_override(self):
        cfg = RunConfig.from_dict({}, env={"TNS_NOISE__SEED": "7", "TNS_LAYERS__Gamma": "5.0",
                                           "TNS_LAYERS__GAMMA": "1.6", "OTHER": "x"})
        # exact key names win; otherwise the lower-cased name is used
        assert cfg.seed == 7 and cfg["layers"]["Gamma"] == 5.0 and cfg["layers"]["gamma"] == 1.6

    def test_env_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({}, env={"TNS_NOISE__COLOUR": "1"})

    def test_load_invalid_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{not json")
        with pytest.raises(ConfigError):
            RunConfig.load(tmp_path / "c.json", env={})

    def test_with_changes_revalidates(self):
        cfg = RunConfig.from_dict({})
        assert cfg.with_changes(noise={"seed": 4}).seed == 4
        with pytest.raises(ConfigError):
            cfg.with_changes(noise={"steps": 0})

    def test_json_stable(self):
        assert RunConfig.from_dict({}).to_json() == RunConfig.from_dict({}).to_json()


class TestArtifacts:
    @pytest.mark.parametrize("rank", [0, 1, 2])
    def test_field_round_trip(self, tmp_path, rank):
        g = TorusGrid(2, 16)
        vals = np.random.default_rng(rank).normal(size=(2,) * rank + g.shape)
        f = (ScalarField, VectorField, TensorField)[rank](g, vals)
        write_field(tmp_path / "f.tnsf", f)
        back = read_field(tmp_path / "f.tnsf")
        assert type(back) is type(f) and back.values.tobytes() == f.values.tobytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.tnsf").write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(ArtifactIOError):
            read_field(tmp_path / "x.tnsf")

    def test_truncated(self, tmp_path):
        g = TorusGrid(2, 8)
        write_field(tmp_path / "f.tnsf", ScalarField(g, np.zeros(g.shape)))
        raw = (tmp_path / "f.tnsf").read_bytes()
        (tmp_path / "f.tnsf").write_bytes(raw[:-8])
        with pytest.raises(ArtifactIOError):
            read_field(tmp_path / "f.tnsf")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactIOError):
            read_field(tmp_path / "none.tnsf")

    def test_csv_round_trip(self, tmp_path):
        write_csv(tmp_path / "a.csv", ["s", "x"], [[0, 0.1], [1, 1 / 3]])
        header, rows = read_csv(tmp_path / "a.csv")
        assert header == ["s", "x"] and float(rows[1][1]) == 1 / 3

    def test_json_non_finite_and_sorted(self):
        text = dumps({"b": np.float64(np.inf), "a": np.arange(2)})
        assert json.loads(text) == {"a": [0, 1], "b": "inf"}
        assert text.index('"a"') < text.index('"b"')


class TestPipeline:
    def test_emit_layout(self, tmp_path):
        cfg = RunConfig.from_dict(SMALL)
        written = emit(run(cfg), tmp_path, cfg)
        assert "summary.json" in written and "fields/eta_000010.tnsf" in written
        _, rows = read_csv(tmp_path / "nodes.csv")
        assert len(rows) == cfg["noise"]["steps"] + 1
        _, rows = read_csv(tmp_path / "steps.csv")
        assert len(rows) == cfg["noise"]["steps"]
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["seed"] == 0 and "conventions" in summary
        assert sorted(summary) == ["config", "conventions", "diagnostics", "seed", "steps", "version"]

    def test_empty_trajectory_summary_only(self, tmp_path):
        cfg = RunConfig.from_dict(SMALL)
        assert emit(None, tmp_path, cfg) == ["summary.json"]
        assert [p.name for p in tmp_path.iterdir()] == ["summary.json"]


class TestCli:
    def test_verify(self, tmp_path, capsys):
        assert main(["verify", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        data = json.loads((tmp_path / "verify.json").read_text())
        assert all(c["passed"] for c in data["checks"])

    def test_run_deterministic(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(SMALL))
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["run", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["--subcommand", "run", "--config", str(cfg), "--out", str(b)]) == 0
        assert tree_bytes(a) == tree_bytes(b)

    def test_config_error_exit(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"grid": {"resolution": 12}}))
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["violations"] == ["grid.resolution: must be a power of two"]

    def test_numerical_failure_exit(self, tmp_path):
        cfg = tmp_path / "c.json"
        doc = dict(SMALL, noise={"steps": 1, "T": 50.0, "seed": 1})
        cfg.write_text(json.dumps(doc))
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3

    def test_report_missing_directory(self, tmp_path):
        assert main(["report", "--out", str(tmp_path / "nothing")]) == 4

    def test_seed_flag(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(SMALL))
        assert main(["run", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "o")]) == 0
        assert json.loads((tmp_path / "o" / "summary.json").read_text())["seed"] == 5

    def test_sweep_and_report(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(dict(SMALL, sweep={"seeds": [1], "delta": [0.1, 0.01, 0.001]})))
        out = tmp_path / "sw"
        assert main(["sweep", "--config", str(cfg), "--out", str(out), "--threads", "2"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert len(report["tasks"]) == 4
        ratios = report["artificial_share_per_delta"]
        assert max(ratios) / min(ratios) < 1.2
        assert aggregate(out) == report
        capsys.readouterr()
        assert main(["report", "--out", str(out)]) == 0
        assert json.loads(capsys.readouterr().out) == report
