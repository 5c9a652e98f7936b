import json
import re
import warnings
from pathlib import Path

import numpy as np
import pytest

from hjlab import cli
from hjlab.config import ConfigError, ExperimentConfig, config_from_dict, load_config
from hjlab.harness import (CSV_FILES, StageError, convergence_report, csv_config_hash, emit_plots, read_csv,
                           run_sweep)

MINIMAL = dict(N=[4], resolution=2, n_samples=100, cw_N=[10])


def write_toml(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def minimal_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("minimal")
    return run_sweep(config_from_dict(MINIMAL), out)


class TestConfig:
    def test_defaults_valid(self):
        cfg = ExperimentConfig()
        assert cfg.M >= 1 and cfg.stages == ("psi", "limit", "finite-n", "curie-weiss")

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            config_from_dict({"n_sample": 10})

    @pytest.mark.parametrize("raw", [{"M": 0.5}, {"p": 0}, {"p": 2.5}, {"cfl": 1.0}, {"dh": -1.0},
                                     {"N": []}, {"stages": ["psi", "bogus"]}, {"prior": "nope"},
                                     {"n_samples": "10"}, {"resolution": 1}, {"h_max": 0.5}])
    def test_invalid_values(self, raw):
        with pytest.raises(ConfigError):
            config_from_dict(raw)

    def test_load_toml(self, tmp_path):
        path = write_toml(tmp_path / "c.toml", 'prior = [[0, 1], [2, 3]]\np = 3\nN = [4, 6]\nM = 2\n')
        cfg = load_config(path)
        assert cfg.p == 3 and cfg.N == (4, 6) and cfg.M == 2.0
        assert cfg.prior_obj.weights == (0.25, 0.75)

    def test_bad_toml(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write_toml(tmp_path / "bad.toml", "p = = 2"))
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.toml")

    def test_hash_ignores_paths_and_threads(self):
        a = config_from_dict(MINIMAL)
        assert a.sha256() == a.replace(output_dir="elsewhere", threads=4).sha256()
        assert a.sha256() != a.replace(base_seed=1).sha256()


class TestSweep:
    def test_minimal_contents(self, minimal_bundle):
        names = sorted(p.name for p in minimal_bundle.iterdir())
        assert names == sorted(["manifest.json", *CSV_FILES.values()])
        manifest = json.loads((minimal_bundle / "manifest.json").read_text())
        for key in ("config", "config_sha256", "seeds", "versions", "limit_solver", "files"):
            assert key in manifest
        assert manifest["limit_solver"] == "hopf-lax"
        for name in CSV_FILES.values():
            assert csv_config_hash(minimal_bundle / name) == manifest["config_sha256"]
            assert manifest["files"][name]

    def test_reproducible(self, minimal_bundle, tmp_path):
        again = run_sweep(config_from_dict(MINIMAL).replace(threads=3), tmp_path / "again")
        for name in CSV_FILES.values():
            assert (again / name).read_bytes() == (minimal_bundle / name).read_bytes()
        m1 = json.loads((minimal_bundle / "manifest.json").read_text())["files"]
        m2 = json.loads((again / "manifest.json").read_text())["files"]
        assert m1 == m2

    def test_full_precision(self, minimal_bundle):
        d = read_csv(minimal_bundle / "psi.csv")
        text = (minimal_bundle / "psi.csv").read_text().splitlines()
        assert text[1] == "h,psi,psi_prime"
        assert float(text[-1].split(",")[1]) == d["psi"][-1]

    def test_tensor_columns(self, tmp_path):
        cfg = config_from_dict(dict(p=3, N=[4, 6], resolution=2, n_samples=40, stages=["limit", "finite-n"]))
        out = run_sweep(cfg, tmp_path)
        cols = read_csv(out / "finite_n.csv")
        for c in ("tensor_lhs", "tensor_rhs", "tensor_se", "F_bar", "dh2_F", "overlap_var"):
            assert c in cols
        assert not any(c.startswith("hj_") for c in cols)
        assert json.loads((out / "manifest.json").read_text())["limit_solver"] == "pde-llf"

    def test_stage_error(self, tmp_path):
        cfg = config_from_dict(dict(N=[30], stages=["finite-n"]))
        with pytest.raises(StageError) as info:
            run_sweep(cfg, tmp_path)
        assert info.value.stage == "finite-n"


class TestReports:
    def test_convergence_t0_rows(self, minimal_bundle):
        rep = convergence_report(minimal_bundle)
        assert [r.N for r in rep.rows] == [4]
        assert rep.rows[0].t0_max_z <= 3.0

    def test_se_shrinks_with_samples(self, tmp_path):
        base = dict(N=[4], resolution=3, stages=["finite-n"], base_seed=17)
        a = read_csv(run_sweep(config_from_dict(base | {"n_samples": 1000}), tmp_path / "a") / "finite_n.csv")
        b = read_csv(run_sweep(config_from_dict(base | {"n_samples": 2000}), tmp_path / "b") / "finite_n.csv")
        keep = a["F_bar_se"] > 0
        ratio = float(np.mean(b["F_bar_se"][keep] / a["F_bar_se"][keep]))
        assert abs(ratio * np.sqrt(2) - 1) <= 0.2

    def test_grid_mismatch(self, tmp_path):
        cfg = config_from_dict(dict(N=[3], M=2.0, resolution=2, n_samples=20, stages=["limit", "finite-n"]))
        out = run_sweep(cfg, tmp_path)
        lim = (out / "limit.csv").read_text().splitlines()
        # keep only t = 0 rows of the limit so the finite-N grid is out of range
        (out / "limit.csv").write_text("\n".join(l for l in lim if not re.match(r"^2,", l)) + "\n")
        with pytest.raises(ValueError, match="outside"):
            convergence_report(out)

    def test_plots_full(self, minimal_bundle):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            scripts = emit_plots(minimal_bundle)
        assert len(scripts) == 4
        for s in scripts:
            text = s.read_text()
            refs = re.findall(r"'([^']+\.(?:dat|csv))'", text)
            assert refs
            for ref in refs:
                assert not Path(ref).is_absolute() and "/" not in ref and (minimal_bundle / ref).exists()
            assert str(minimal_bundle) not in text

    def test_plots_without_curie_weiss(self, tmp_path):
        cfg = config_from_dict(MINIMAL | {"stages": ["psi", "limit", "finite-n"]})
        out = run_sweep(cfg, tmp_path)
        with pytest.warns(UserWarning) as rec:
            scripts = emit_plots(out)
        assert len(scripts) == 3 and len(rec) == 1


class TestCLI:
    def test_psi_stdout(self, capsys):
        assert cli.main(["psi"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("# config_sha256=") and out[1] == "h,psi,psi_prime"

    def test_single_stage_files(self, tmp_path):
        cfg = write_toml(tmp_path / "c.toml", "N = [3]\nresolution = 2\nn_samples = 20\ncw_N = [5]\ndh = 0.01\n")
        for stage, name in [("hopflax", "hopflax.csv"), ("pde", "pde.csv"), ("finite-n", "finite_n.csv"),
                            ("curie-weiss", "curie_weiss.csv")]:
            assert cli.main([stage, "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
            assert (tmp_path / "o" / name).exists()
        header = (tmp_path / "o" / "hopflax.csv").read_text().splitlines()[1]
        assert header == "t,h,f,maximizer"
        assert (tmp_path / "o" / "pde.csv").read_text().splitlines()[1] == "t,h,f"
        cw = read_csv(tmp_path / "o" / "curie_weiss.csv")
        assert list(cw) == ["N", "t", "h", "F", "residual_exact", "residual_fd", "f_limit"]

    def test_sweep_report_plots(self, tmp_path, capsys):
        cfg = write_toml(tmp_path / "c.toml", "N = [3, 4]\nresolution = 2\nn_samples = 50\ncw_N = [5]\n")
        out = tmp_path / "bundle"
        assert cli.main(["sweep", "--config", str(cfg), "--out", str(out), "--seed", "5", "--threads", "2"]) == 0
        assert json.loads((out / "manifest.json").read_text())["config"]["base_seed"] == 5
        assert cli.main(["report", "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert "strictly decreasing" in text and "slope" in text
        assert cli.main(["plots", "--out", str(out)]) == 0

    def test_seed_changes_output(self, tmp_path):
        cfg = write_toml(tmp_path / "c.toml", "N = [3]\nresolution = 2\nn_samples = 20\n")
        cli.main(["finite-n", "--config", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
        cli.main(["finite-n", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"])
        assert (tmp_path / "a" / "finite_n.csv").read_bytes() != (tmp_path / "b" / "finite_n.csv").read_bytes()

    def test_config_error_exit(self, tmp_path, capsys):
        cfg = write_toml(tmp_path / "c.toml", "Nn = [3]\n")
        assert cli.main(["sweep", "--config", str(cfg)]) == 2
        assert "config" in capsys.readouterr().err

    def test_stage_failure_exit(self, tmp_path, capsys):
        cfg = write_toml(tmp_path / "c.toml", "N = [40]\nstages = [\"finite-n\"]\n")
        assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
        assert "finite-n" in capsys.readouterr().err

    def test_hopflax_needs_p2(self, tmp_path, capsys):
        cfg = write_toml(tmp_path / "c.toml", "p = 3\n")
        assert cli.main(["hopflax", "--config", str(cfg)]) == 1
        assert "hopflax" in capsys.readouterr().err

    def test_report_missing_bundle(self, tmp_path, capsys):
        assert cli.main(["report", "--out", str(tmp_path / "none")]) == 1
        assert "report" in capsys.readouterr().err
