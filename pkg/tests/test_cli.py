"""End-to-end command line checks, run in process through main(argv)."""

import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from revtori import persistence
from revtori.cli import main
from revtori.newton import CONVERGENCE_COLUMNS

from conftest import GOLDEN


def run_json(capsys, argv):
    code = main(argv + ["--json-summary"])
    out = capsys.readouterr().out
    return code, json.loads(out)


@pytest.fixture(scope="module")
def kam_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("kamrun")
    code = main(["kam", "run", "--out", str(root),
                 "--set", "M=2", "--set", "eps0=1e-3"])
    assert code == 0
    return root / "kam-flow"


class TestDioph:
    def test_golden_certifies(self, capsys):
        code, data = run_json(capsys, ["dioph"])
        assert code == 0
        assert data["omega"][0] == pytest.approx(GOLDEN, abs=1e-15)
        assert data["kappa"] > 0
        assert data["tau"] == pytest.approx(1.0001)

    def test_explicit_components(self, capsys):
        code, data = run_json(capsys, ["dioph", "--omega",
                                       f"{GOLDEN:.16f}"])
        assert code == 0
        assert data["kappa"] > 0

    def test_two_dimensional_family(self, capsys):
        code, data = run_json(capsys, ["dioph", "--kind", "sqrt_prime",
                                       "--d", "2", "--k-max", "400"])
        assert code == 0
        assert len(data["omega"]) == 2

    def test_resonant_frequency_is_parameter_error(self, capsys):
        assert main(["dioph", "--omega", "0.5"]) == 2
        assert "error:" in capsys.readouterr().err

    def test_unknown_family(self):
        assert main(["dioph", "--kind", "banana"]) == 2

    def test_malformed_omega(self):
        assert main(["dioph", "--omega", "1.0,x"]) == 2


class TestSmoothTest:
    def test_rate_fits_the_declared_regularity(self, capsys):
        code, data = run_json(capsys, ["smooth-test", "--ell-star", "3.1",
                                       "--n-modes", "256"])
        assert code == 0
        assert data["relative_gap"] < 0.25

    def test_seeded_output_is_reproducible(self, capsys):
        argv = ["smooth-test", "--n-modes", "128", "--seed", "5",
                "--json-summary"]
        assert main(argv) == 0
        first = capsys.readouterr().out
        assert main(argv) == 0
        assert capsys.readouterr().out == first


class TestHomsolve:
    def test_flow_residuals(self, capsys):
        code, data = run_json(capsys, ["homsolve", "--mode", "flow"])
        assert code == 0
        assert data["residual_u"] < 1e-12
        assert data["residual_v"] < 1e-12
        assert data["min_divisor"] > 0

    def test_map_summary(self, capsys):
        code, data = run_json(capsys, ["homsolve", "--mode", "map",
                                       "--eps", "1e-4"])
        assert code == 0
        assert np.isfinite(data["sup_u"]) and data["sup_u"] > 0
        assert data["min_divisor"] > 0


class TestKamRun:
    def test_run_directory_layout(self, kam_run):
        assert (kam_run / "manifest.json").is_file()
        assert (kam_run / "embedding.json").is_file()
        assert (kam_run / "convergence.csv").is_file()
        man = persistence.load_manifest(kam_run / "manifest.json")
        assert man.config["M"] == 2
        for filename, digest in man.outputs.items():
            assert persistence.sha256_file(kam_run / filename) == digest
        header = (kam_run / "convergence.csv").read_text().splitlines()[0]
        assert tuple(header.split(",")) == CONVERGENCE_COLUMNS

    def test_verify_accepts_fresh_run(self, kam_run, capsys):
        code, data = run_json(capsys, ["verify", str(kam_run)])
        assert code == 0
        assert data["digests_ok"] is True
        assert data["invariance_residual"] < 1e-6

    def test_verify_catches_tampering(self, kam_run, tmp_path, capsys):
        stale = tmp_path / "stale"
        shutil.copytree(kam_run, stale)
        with open(stale / "convergence.csv", "a", encoding="utf-8") as fh:
            fh.write("\n")
        assert main(["verify", str(stale)]) == 4
        assert "digests changed" in capsys.readouterr().err

    def test_verify_missing_run(self, tmp_path):
        assert main(["verify", str(tmp_path / "absent")]) == 4

    def test_map_mode_runs(self, tmp_path, capsys):
        code, data = run_json(capsys, [
            "kam", "run", "--out", str(tmp_path), "--set", "mode=map",
            "--set", "M=2", "--set", "eps0=1e-3"])
        assert code == 0
        assert data["failed"] is False
        assert data["invariance_residual"] < 1e-8

    def test_step_failure_exits_3(self, tmp_path):
        code = main(["kam", "run", "--out", str(tmp_path),
                     "--set", "M=1", "--set", "eps0=1e-3",
                     "--set", "perturbation.eps=0.5"])
        assert code == 3

    def test_bad_parameters_exit_2(self, tmp_path):
        out = str(tmp_path)
        assert main(["kam", "run", "--out", out, "--set", "mu=0.6"]) == 2
        assert main(["kam", "run", "--out", out, "--set", "mode=banana"]) == 2
        assert main(["kam", "run", "--out", out, "--set", "omega=0.5"]) == 2
        assert main(["kam", "run", "--out", out, "--set", "frobnicate=1"]) == 2
        assert main(["kam", "run", "--out", out, "--set", "nonsense"]) == 2

    def test_config_file_layering(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"M": 1, "eps0": 1e-3,
                                   "perturbation": {"eps": 2e-4}}))
        code, data = run_json(capsys, [
            "kam", "run", "--out", str(tmp_path), "--config", str(cfg),
            "--set", "perturbation.eps=1e-4"])
        assert code == 0 and data["M"] == 1
        man = persistence.load_manifest(
            tmp_path / "kam-flow" / "manifest.json")
        assert man.config["perturbation"]["eps"] == 1e-4  # --set wins

    def test_config_file_validation(self, tmp_path):
        bad_key = tmp_path / "bad_key.json"
        bad_key.write_text(json.dumps({"frobnicate": 1}))
        assert main(["kam", "run", "--out", str(tmp_path),
                     "--config", str(bad_key)]) == 2
        not_object = tmp_path / "list.json"
        not_object.write_text("[1, 2]")
        assert main(["kam", "run", "--out", str(tmp_path),
                     "--config", str(not_object)]) == 2


class TestDeterminism:
    def test_repeated_runs_are_byte_identical(self, tmp_path):
        argv = ["kam", "run", "--set", "M=1", "--set", "eps0=1e-3"]
        for sub in ("a", "b"):
            assert main(argv + ["--out", str(tmp_path / sub)]) == 0
        for name in ("manifest.json", "embedding.json", "convergence.csv"):
            a = (tmp_path / "a" / "kam-flow" / name).read_bytes()
            b = (tmp_path / "b" / "kam-flow" / name).read_bytes()
            assert a == b, f"{name} differs between identical runs"


class TestShippedConfigs:
    """The demo files under configs/ must stay loadable end to end."""

    CONFIGS = Path(__file__).resolve().parents[1] / "configs"

    def test_kam_demos(self, tmp_path):
        # shrink the iteration so the check stays cheap; the overrides only
        # touch keys the demo files already carry, so strict parsing still
        # sees the full file.
        for name in ("kam_flow.json", "kam_map.json"):
            code = main(["kam", "run", "--config", str(self.CONFIGS / name),
                         "--out", str(tmp_path / name[:-5]),
                         "--set", "M=1", "--set", "eps0=1e-3"])
            assert code == 0, name

    def test_stability_demo(self, tmp_path):
        code = main(["lienard", "stability",
                     "--config", str(self.CONFIGS / "lienard_stability.json"),
                     "--out", str(tmp_path), "--set", "t_max=2.0",
                     "--set", "levels=[1.0]", "--set", "phases=[0.0]"])
        assert code == 0

    def test_poincare_demo(self, tmp_path, capsys):
        code, data = run_json(capsys, [
            "lienard", "poincare",
            "--config", str(self.CONFIGS / "lienard_poincare.json"),
            "--out", str(tmp_path), "--set", "n_steps=16",
            "--set", "theta_points=2", "--set", "rho_levels=[0.8]"])
        assert code == 0
        assert data["reversibility_residual"] < 1e-9


class TestLienardCli:
    def test_orbit_summary_and_csv(self, tmp_path, capsys):
        csv = tmp_path / "orbit.csv"
        code, data = run_json(capsys, ["lienard", "orbit", "--n", "2",
                                       "--csv", str(csv)])
        assert code == 0
        from test_lienard import closed_form_period
        assert data["period"] == pytest.approx(closed_form_period(2),
                                               abs=1e-10)
        assert data["energy_residual"] < 1e-10
        lines = csv.read_text().splitlines()
        assert lines[0] == "t,x,xdot"
        assert len(lines) == 513

    def test_orbit_bad_n(self):
        assert main(["lienard", "orbit", "--n", "0"]) == 2

    def test_poincare_residual_and_iterates(self, tmp_path, capsys):
        csv = tmp_path / "section.csv"
        code, data = run_json(capsys, [
            "lienard", "poincare", "--csv", str(csv), "--iterates", "2",
            "--set", "n_steps=64", "--set", "theta_points=4",
            "--set", "rho_levels=[0.8,1.2]"])
        assert code == 0
        assert data["reversibility_residual"] < 1e-9
        assert data["warnings"] == []
        lines = csv.read_text().splitlines()
        assert lines[0] == "sample,iterate,theta,rho,escaped"
        assert len(lines) == 1 + 8 * 3  # 8 samples, iterates 0..2

    def test_stability_run_directory(self, tmp_path, capsys):
        code, data = run_json(capsys, [
            "lienard", "stability", "--out", str(tmp_path),
            "--set", "t_max=2.0"])
        assert code == 0
        assert data["stable"] is True
        run_dir = tmp_path / "lienard-stability"
        assert (run_dir / "stability.csv").is_file()
        man = persistence.load_manifest(run_dir / "manifest.json")
        assert man.command == "lienard stability"


class TestParser:
    def test_no_command_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main([])
        assert err.value.code == 2

    def test_kam_requires_subcommand(self):
        with pytest.raises(SystemExit) as err:
            main(["kam"])
        assert err.value.code == 2
