import json

import numpy as np
import pytest

from aefusion.cli import main
from aefusion.config import RunConfig, config_hash
from aefusion.spatial_domain import load_products, read_table

SHORT_CHAIN = {"burn_in": 200, "draws": 40, "seed": 3, "adapt_start": 100, "adapt_interval": 50}


@pytest.fixture
def workspace(tmp_path):
    sim = {"simulate": {"seed": 8, "noise_sd": 0.1}, "output_dir": "sim"}
    (tmp_path / "sim.json").write_text(json.dumps(sim))
    assert main(["simulate", "--config", str(tmp_path / "sim.json")]) == 0
    cfg = {
        "data": "sim/products.csv",
        "architecture": {"widths": [4, 2, 1, 2, 4]},
        "basis": {"nx": 2, "ny": 2},
        "chain": SHORT_CHAIN,
        "importance": {"n_permutations": 3},
        "output_dir": "fit",
    }
    (tmp_path / "fit.json").write_text(json.dumps(cfg))
    return tmp_path


def _header_hash(path):
    first = path.read_text().splitlines()[0]
    assert first.startswith("# config_sha256=")
    return first.split("=", 1)[1]


class TestSimulate:
    def test_emits_stack_and_truth(self, workspace):
        out = workspace / "sim"
        stack = load_products(out / "products.csv")
        _, _, truth = read_table(out / "truth.csv")
        assert stack.values.shape == (4, 400)
        assert truth.shape == (1, 400)
        meta = json.loads((out / "simulate.json").read_text())
        assert meta["censored_fraction"] == pytest.approx(np.mean(stack.values == 0))

    def test_seeded(self, workspace, tmp_path_factory):
        other = tmp_path_factory.mktemp("again")
        assert main(["simulate", "--config", str(workspace / "sim.json"),
                     "--out", str(other)]) == 0
        assert (other / "products.csv").read_bytes() == \
            (workspace / "sim" / "products.csv").read_bytes()


class TestFit:
    def test_writes_declared_outputs(self, workspace):
        assert main(["fit", "--config", str(workspace / "fit.json")]) == 0
        out = workspace / "fit"
        names = ["trace.csv", "coefficients.csv", "consensus_draws.csv", "samples.npz",
                 "consensus.csv", "fitted.csv", "baseline.csv", "metrics.json",
                 "importance.json"] + [f"contribution_P{d}.csv" for d in range(1, 5)]
        for n in names:
            assert (out / n).exists(), n
        h = RunConfig.load(workspace / "fit.json").hash
        for n in names:
            if n.endswith(".csv"):
                assert _header_hash(out / n) == h
        trace = (out / "trace.csv").read_text().splitlines()
        assert trace[1] == "iteration,m2loglik,sigma2"
        assert len(trace) == 2 + 240
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["n_draws"] == 40
        assert set(metrics["pseudo_r2"]) == {"P1", "P2", "P3", "P4"}
        _, _, contrib = read_table(out / "contribution_P1.csv")
        assert contrib.shape == (2, 400)

    def test_rerun_is_byte_identical(self, workspace):
        assert main(["fit", "--config", str(workspace / "fit.json"), "--out",
                     str(workspace / "a")]) == 0
        assert main(["fit", "--config", str(workspace / "fit.json"), "--out",
                     str(workspace / "b")]) == 0
        for f in sorted((workspace / "a").iterdir()):
            assert f.read_bytes() == (workspace / "b" / f.name).read_bytes(), f.name

    def test_seed_override_changes_hash_and_draws(self, workspace):
        main(["fit", "--config", str(workspace / "fit.json"), "--out", str(workspace / "a")])
        main(["fit", "--config", str(workspace / "fit.json"), "--out", str(workspace / "b"),
              "--seed", "99"])
        assert _header_hash(workspace / "a" / "trace.csv") != \
            _header_hash(workspace / "b" / "trace.csv")

    def test_reordering_puts_first_product_first(self, workspace):
        assert main(["fit", "--config", str(workspace / "fit.json"), "--out",
                     str(workspace / "r"), "--set", 'ordering=["P2","P3","P4","P1"]',
                     "--set", "importance.n_permutations=1"]) == 0
        metrics = json.loads((workspace / "r" / "metrics.json").read_text())
        assert metrics["products"] == ["P2", "P3", "P4", "P1"]

    def test_importance_and_summarize_from_samples(self, workspace, capsys):
        main(["fit", "--config", str(workspace / "fit.json")])
        capsys.readouterr()
        assert main(["importance", "--config", str(workspace / "fit.json"),
                     "--out", str(workspace / "imp")]) == 2
        assert main(["importance", "--config", str(workspace / "fit.json"),
                     "--samples", str(workspace / "fit" / "samples.npz"),
                     "--out", str(workspace / "imp")]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert set(summary) == {"P1", "P2", "P3", "P4"}
        assert sum(summary.values()) == pytest.approx(0.0, abs=1e-12)
        assert main(["summarize", "--config", str(workspace / "fit.json")]) == 0


class TestErrors:
    def test_missing_config(self, tmp_path, capsys):
        assert main(["fit", "--config", str(tmp_path / "none.json")]) == 2
        assert "not found" in capsys.readouterr().err

    def test_invalid_architecture(self, workspace, capsys):
        assert main(["fit", "--config", str(workspace / "fit.json"),
                     "--set", "architecture.widths=[4,5,1,4]"]) == 2
        assert "exceeds D" in capsys.readouterr().err

    def test_unknown_chain_key(self, workspace):
        assert main(["fit", "--config", str(workspace / "fit.json"),
                     "--set", "chain.burnin=5"]) == 2


class TestTune:
    def test_rejects_too_deep_and_ranks(self, workspace):
        cfg = json.loads((workspace / "fit.json").read_text())
        cfg["tune"] = {"candidates": [{"widths": [4, 1, 4], "nx": 1, "ny": 1},
                                      {"widths": [4, 2, 1, 2, 4], "nx": 1, "ny": 1},
                                      {"widths": [4, 4, 3, 2, 1, 2, 3, 4]}],
                       "chain": {"burn_in": 100, "draws": 20}}
        cfg["output_dir"] = "tune"
        (workspace / "tune.json").write_text(json.dumps(cfg))
        with pytest.warns(UserWarning, match="2D-3"):
            assert main(["tune", "--config", str(workspace / "tune.json")]) == 0
        rows = (workspace / "tune" / "tune.csv").read_text().splitlines()[2:]
        assert len(rows) == 2
        totals = [float(r.split(",")[4]) for r in rows]
        assert totals == sorted(totals)


class TestConfigHash:
    def test_output_dir_ignored(self):
        assert config_hash({"a": 1, "output_dir": "x"}) == config_hash({"a": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})
