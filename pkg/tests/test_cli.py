import json
import os
from pathlib import Path

import numpy as np
import pytest

from belieflab import (ConcentrationParams, build_kl_covering, gamma_all, lazy_metropolis,
                       make_graph, theorem1_N)
from belieflab.cli import EXIT_CONFIG, EXIT_OK, EXIT_VERIFY, main, write_atomic
from belieflab.config import load_config, scenario_from_config

from conftest import ring3_model

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def pair_cfg():
    return json.loads((CONFIGS / "pair_tail.json").read_text())


class TestConfig:
    def test_syntax_error_location(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "graph": {"n": 2,}\n}')
        with pytest.raises(Exception, match="line 2"):
            load_config(str(p))

    def test_missing_field(self, tmp_path):
        cfg = pair_cfg()
        del cfg["model"]["theta_star"]
        with pytest.raises(Exception, match="theta_star"):
            scenario_from_config(cfg)

    def test_graph_file(self, tmp_path):
        (tmp_path / "g.txt").write_text(make_graph("path", 2).to_text())
        cfg = pair_cfg()
        cfg["graph"] = {"file": "g.txt"}
        sc = scenario_from_config(load_config(write_cfg(tmp_path, cfg)))
        assert sc.graph == make_graph("path", 2)

    def test_localization_config(self):
        sc = scenario_from_config(load_config(str(CONFIGS / "grid_localization.json")))
        assert sc.space.kind == "grid" and sc.num_hypotheses == 81
        assert sc.model.theta_star == sc.space.index_of([6.5, 2.5])


class TestCommands:
    def test_missing_config(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_run_and_reproducible(self, tmp_path):
        cfg = write_cfg(tmp_path, pair_cfg())
        for out in ("a", "b"):
            assert main(["run", "--config", cfg, "--out", str(tmp_path / out), "--seed", "4",
                         "--quiet"]) == EXIT_OK
        a = (tmp_path / "a" / "trace.csv").read_bytes()
        assert len(a.splitlines()) > 1
        assert a == (tmp_path / "b" / "trace.csv").read_bytes()
        summary = json.loads((tmp_path / "a" / "summary.json").read_text())
        assert {"concentration_time", "rate_slopes", "final_consensus_gap"} <= set(summary)

    def test_bounds_matches_library(self, tmp_path):
        out = tmp_path / "o"
        assert main(["bounds", "--config", str(CONFIGS / "ring3_finite.json"), "--out", str(out),
                     "--quiet"]) == EXIT_OK
        report = json.loads((out / "bounds.json").read_text())
        model = ring3_model()
        g = gamma_all(model)
        r = 0.9 * g[g > 0].min()
        cov = build_kl_covering(model, r * np.arange(1, int(np.ceil(g.max() / r)) + 2))
        A = lazy_metropolis(make_graph("ring", 3))
        lib = theorem1_N(ConcentrationParams.for_model(model, A, 0.1, 0.1, r, 1 / 12), cov, model)
        assert (report["N1_min"], report["N2_min"], report["N"]) == (lib.N1_min, lib.N2_min, lib.N)
        assert report["constants_are_log_scale"]

    def test_bounds_empty_complement(self, tmp_path):
        cfg = pair_cfg()
        cfg["bounds"].update({"r": 10.0, "radii": [10.0, 20.0]})
        assert main(["bounds", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path),
                     "--quiet"]) == EXIT_OK
        assert json.loads((tmp_path / "bounds.json").read_text())["N"] == 1

    def test_rho_zero(self, tmp_path):
        cfg = pair_cfg()
        cfg["bounds"]["rho"] = 0
        assert main(["bounds", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_positivity_violation(self, tmp_path, capsys):
        cfg = json.loads((CONFIGS / "grid_localization.json").read_text())
        cfg["bounds"]["deltas"] = [0.45, 0.2]
        assert main(["bounds", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "band 1" in capsys.readouterr().err

    def test_trials_zero(self, tmp_path):
        assert main(["mc-verify", "--config", str(CONFIGS / "pair_tail.json"), "--trials", "0",
                     "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_corrupted_weights(self, tmp_path):
        cfg = pair_cfg()
        cfg["weights"] = [[0.9, 0.1], [0.5, 0.5]]
        assert main(["mc-verify", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_mc_verify_acceptance_scenario(self, tmp_path):
        out = tmp_path / "v"
        code = main(["mc-verify", "--config", str(CONFIGS / "pair_tail.json"), "--trials", "2000",
                     "--out", str(out), "--parallel", "1", "--quiet"])
        assert code == EXIT_OK
        res = json.loads((out / "verify.json").read_text())
        assert res["failures"] == []
        assert [r["k"] for r in res["lemma2"]] == [20, 50, 100]

    def test_epsilon_above_prior(self, tmp_path):
        cfg = pair_cfg()
        cfg["bounds"]["epsilon"] = 0.9
        assert main(["bounds", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_mc_verify_reports_failure(self, tmp_path, capsys, monkeypatch):
        from belieflab import bounds as bd
        real = bd.chain_check

        def broken(*args, **kw):
            rep = real(*args, **kw)
            rep.holds = False
            return rep

        monkeypatch.setattr(bd, "chain_check", broken)
        cfg = pair_cfg()
        cfg["verify"] = {"checks": ["chain"], "chain_trajectories": 2, "chain_steps": 20}
        code = main(["mc-verify", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)])
        assert code == EXIT_VERIFY
        assert "FAIL chain" in capsys.readouterr().err
        assert json.loads((tmp_path / "verify.json").read_text())["failures"]

    def test_covering_and_validate(self, tmp_path):
        for cmd, name in (("covering", "covering.json"), ("validate", "validation.json")):
            assert main([cmd, "--config", str(CONFIGS / "grid_localization.json"),
                         "--out", str(tmp_path), "--quiet"]) == EXIT_OK
            assert json.loads((tmp_path / name).read_text())

    def test_localize_demo(self, tmp_path):
        assert main(["localize-demo", "--out", str(tmp_path), "--horizon", "150", "--quiet"]) == EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert all(e == summary["theta_star"] for e in summary["estimates"])

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        write_atomic(str(tmp_path / "x.txt"), "hello")
        assert os.listdir(tmp_path) == ["x.txt"]
