import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from unrollsep.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, main
from unrollsep.evaluate import CurveTable
from unrollsep.unrolled import flatten, init_deep_easi, load_params


def _write(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _gen_config(tmp_path, out="data", train_size=3, test_size=2, T=20, **gen):
    generator = {"m": 2, "l": 2, "T": T, "noise_var": 1e-3,
                 "source_dist": "uniform_zero_mean"}
    generator.update(gen)
    return _write(tmp_path, "gen.json", {
        "generator": generator,
        "train_size": train_size,
        "test_size": test_size,
        "base_seed": 11,
        "output_dir": str(tmp_path / out),
    })


def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestGen:
    def test_writes_manifest_and_instances(self, tmp_path):
        assert main(["gen", _gen_config(tmp_path)]) == EXIT_OK
        out = tmp_path / "data"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["train"]["count"] == 3 and manifest["test"]["count"] == 2
        assert (out / "train" / "inst_000000" / "X.csv").exists()
        assert (out / "resolved_config.json").exists()
        assert (out / "digest.txt").read_text().strip()

    def test_zero_sizes_no_error(self, tmp_path):
        cfg = _gen_config(tmp_path, out="empty", train_size=0, test_size=0)
        assert main(["gen", cfg]) == EXIT_OK
        manifest = json.loads((tmp_path / "empty" / "manifest.json").read_text())
        assert manifest["train"]["instances"] == []

    def test_regeneration_is_byte_identical(self, tmp_path):
        cfg = _gen_config(tmp_path, out="d1")
        main(["gen", cfg])
        first = _tree_digest(tmp_path / "d1")
        main(["gen", cfg])
        assert _tree_digest(tmp_path / "d1") == first

    def test_set_override(self, tmp_path):
        cfg = _gen_config(tmp_path, out="d2")
        assert main(["gen", cfg, "--set", "train_size=1",
                     "--set", "generator.T=5"]) == EXIT_OK
        resolved = json.loads((tmp_path / "d2" / "resolved_config.json").read_text())
        assert resolved["train_size"] == 1 and resolved["generator"]["T"] == 5
        meta = json.loads(
            (tmp_path / "d2" / "train" / "inst_000000" / "meta.json").read_text())
        assert meta["T"] == 5


class TestBaselineCommand:
    def _baseline_cfg(self, tmp_path, dataset, algorithm="rls", out="run", **kw):
        cfg = {
            "algorithm": algorithm,
            "dataset_dir": dataset,
            "output_dir": str(tmp_path / out),
            "rls": {"beta": 0.99, "nonlinearity": "linear"},
            "easi": {"step_size": 0.01, "nonlinearity": "cubic"},
        }
        cfg.update(kw)
        return _write(tmp_path, f"{out}.json", cfg)

    @pytest.fixture()
    def dataset(self, tmp_path):
        main(["gen", _gen_config(tmp_path)])
        return str(tmp_path / "data" / "test")

    def test_rls_outputs(self, tmp_path, dataset, capsys):
        cfg = self._baseline_cfg(tmp_path, dataset, "rls", "rls_run")
        assert main([
            "baseline", cfg, "--verify"]) == EXIT_OK
        out = tmp_path / "rls_run"
        assert (out / "curve.csv").exists()
        assert (out / "records" / "inst_000000.csv").exists()
        assert (out / "curve.png").exists()
        table = CurveTable.from_csv(out / "curve.csv")
        assert set(table.columns) == {"rls", "rls_aligned"}
        captured = capsys.readouterr().out
        assert "direct inverse" in captured and "OK" in captured

    def test_easi_zero_step_gives_flat_curve(self, tmp_path, dataset):
        cfg = self._baseline_cfg(tmp_path, dataset, "easi", "easi_run",
                                 easi={"step_size": 0.0, "nonlinearity": "cubic"})
        assert main(["baseline", cfg, "--no-plot"]) == EXIT_OK
        table = CurveTable.from_csv(tmp_path / "easi_run" / "curve.csv")
        raw = table.columns["easi"]
        # frozen separator: per-step errors vary but the record exists and
        # the cumulative curve is finite everywhere
        assert np.isfinite(raw).all()
        assert not (tmp_path / "easi_run" / "curve.png").exists()

    def test_numerical_failure_exit_code(self, tmp_path, dataset):
        cfg = self._baseline_cfg(tmp_path, dataset, "easi", "blowup",
                                 easi={"step_size": 1e6, "nonlinearity": "cubic"})
        assert main(["baseline", cfg, "--no-plot"]) == EXIT_NUMERICAL

    def test_unknown_algorithm_exit_code(self, tmp_path, dataset):
        cfg = self._baseline_cfg(tmp_path, dataset, "fastica", "bad")
        assert main(["baseline", cfg]) == EXIT_CONFIG


class TestTrainCommand:
    def _train_cfg(self, tmp_path, out="trained", loss_kind="mse",
                   algorithm="deep_easi", epochs=1):
        return _write(tmp_path, f"{out}.json", {
            "algorithm": algorithm,
            "generator": {"m": 2, "l": 2, "T": 10, "noise_var": 1e-3},
            "train_size": 3,
            "test_size": 2,
            "base_seed": 5,
            "net": {"shared": True, "hidden": [4], "init_seed": 1},
            "train": {"epochs": epochs, "batch_size": 3, "learning_rate": 1e-4,
                      "seed": 2, "loss": {"kind": loss_kind}},
            "output_dir": str(tmp_path / out),
        })

    def test_train_deep_easi_sure(self, tmp_path):
        cfg = self._train_cfg(tmp_path, "sure_run", "sure")
        assert main(["train", cfg, "--no-plot"]) == EXIT_OK
        out = tmp_path / "sure_run"
        assert (out / "checkpoint.json").exists()
        assert (out / "history.csv").exists()
        assert (out / "metrics.json").exists()
        metrics = json.loads((out / "metrics.json").read_text())
        assert "test_mse_raw" in metrics and "test_mse_aligned" in metrics

    def test_sure_with_deep_rls_is_config_error(self, tmp_path, capsys):
        cfg = self._train_cfg(tmp_path, "bad_pair", "sure", algorithm="deep_rls")
        assert main(["train", cfg, "--no-plot"]) == EXIT_CONFIG
        assert "Deep EASI" in capsys.readouterr().err

    def test_zero_epochs_checkpoint_equals_initialization(self, tmp_path):
        cfg = self._train_cfg(tmp_path, "frozen", epochs=0)
        assert main(["train", cfg, "--no-plot"]) == EXIT_OK
        saved = load_params(tmp_path / "frozen" / "checkpoint.json")
        fresh = init_deep_easi(2, 10, shared=True, hidden=(4,), seed=1)
        np.testing.assert_array_equal(flatten(saved), flatten(fresh))

    def test_history_figure_written(self, tmp_path):
        cfg = self._train_cfg(tmp_path, "plotted", epochs=2)
        assert main(["train", cfg]) == EXIT_OK
        assert (tmp_path / "plotted" / "history.png").exists()
        assert (tmp_path / "plotted" / "curve.png").exists()


class TestEvalCommand:
    def test_eval_checkpoint(self, tmp_path):
        train_cfg = TestTrainCommand()._train_cfg(tmp_path, "t0", epochs=1)
        assert main(["train", train_cfg, "--no-plot"]) == EXIT_OK
        eval_cfg = _write(tmp_path, "eval.json", {
            "algorithm": "deep_easi",
            "checkpoint": str(tmp_path / "t0" / "checkpoint.json"),
            "generator": {"m": 2, "l": 2, "T": 10, "noise_var": 1e-3},
            "num_instances": 2,
            "base_seed": 77,
            "output_dir": str(tmp_path / "eval_out"),
        })
        assert main(["eval", eval_cfg, "--no-plot"]) == EXIT_OK
        table = CurveTable.from_csv(tmp_path / "eval_out" / "curve.csv")
        assert "deep_easi" in table.columns


class TestCompare:
    def _curve(self, tmp_path, name, T=10):
        gen = _gen_config(tmp_path, out=f"data_{name}", train_size=0, test_size=2, T=T)
        main(["gen", gen])
        cfg = _write(tmp_path, f"b_{name}.json", {
            "algorithm": "rls",
            "dataset_dir": str(tmp_path / f"data_{name}" / "test"),
            "output_dir": str(tmp_path / name),
            "rls": {"beta": 0.9},
        })
        assert main(["baseline", cfg, "--no-plot"]) == EXIT_OK
        return str(tmp_path / name)

    def test_merge(self, tmp_path):
        a = self._curve(tmp_path, "a")
        b = self._curve(tmp_path, "b")
        out = tmp_path / "cmp"
        assert main(["compare", a, b, "--output", str(out), "--no-plot"]) == EXIT_OK
        table = CurveTable.from_csv(out / "compare.csv")
        assert len(table.columns) == 4  # two runs x (raw, aligned)

    def test_single_input_passthrough(self, tmp_path):
        a = self._curve(tmp_path, "solo")
        out = tmp_path / "cmp1"
        assert main(["compare", a, "--output", str(out), "--no-plot"]) == EXIT_OK
        assert (out / "compare.csv").exists()

    def test_mismatched_lengths_rejected(self, tmp_path, capsys):
        a = self._curve(tmp_path, "short", T=5)
        b = self._curve(tmp_path, "long", T=9)
        assert main(["compare", a, b, "--output", str(tmp_path / "x"),
                     "--no-plot"]) == EXIT_CONFIG
        assert "mismatched lengths" in capsys.readouterr().err


class TestErrorMapping:
    def test_missing_config_is_io_error(self, tmp_path):
        assert main(["gen", str(tmp_path / "nope.json")]) == EXIT_IO

    def test_malformed_json_is_config_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["gen", str(path)]) == EXIT_CONFIG

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("UNROLLSEP_OUTPUT_ROOT", str(tmp_path))
        cfg = _write(tmp_path, "rel.json", {
            "generator": {"m": 2, "l": 2, "T": 5},
            "train_size": 1, "test_size": 0, "base_seed": 0,
            "output_dir": "relative_out",
        })
        assert main(["gen", cfg]) == EXIT_OK
        assert (tmp_path / "relative_out" / "manifest.json").exists()
