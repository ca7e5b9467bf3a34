import subprocess
import sys

import pytest

from seqcp import critvals, pipeline
from seqcp.cli import main
from seqcp.simharness import Scenario, read_report_table, run_experiment


@pytest.fixture
def cache(tmp_path, monkeypatch):
    path = tmp_path / "cache"
    monkeypatch.setenv("SEQCP_CACHE_DIR", str(path))
    return path


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["critvals", "--scheme", "cusum", "--bogus"])
        assert exc.value.code == 1
        assert "usage" in capsys.readouterr().err

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 1

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "seqcp", "analyze"], capture_output=True, text=True)
        assert proc.returncode == 1 and "usage" in proc.stderr

    def test_invalid_parameter_is_usage_error(self, tmp_path, capsys):
        assert main(["critvals", "--scheme", "cusum", "--gamma", "0.7", "--out", str(tmp_path / "x")]) == 1

    def test_data_error(self, tmp_path, capsys):
        csv = tmp_path / "bad.csv"
        csv.write_text("date,t\n2000-02,1\n2000-01,2\n")
        code = main(["analyze", "--csv", str(csv), "--column", "t", "--out-dir", str(tmp_path / "o")])
        assert code == 2
        assert "timestamps not increasing" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "none.cfg"), "--out-dir", str(tmp_path)]) == 2


class TestCritvals:
    def test_byte_identical(self, tmp_path, capsys):
        args = ["critvals", "--scheme", "mmosum", "--gamma", "0.25", "--b", "0.4", "--grid", "300", "--reps", "400",
                "--seed", "7"]
        assert main(args + ["--out", str(tmp_path / "a.cvt")]) == 0
        assert main(args + ["--out", str(tmp_path / "b.cvt"), "--workers", "3"]) == 0
        assert (tmp_path / "a.cvt").read_bytes() == (tmp_path / "b.cvt").read_bytes()
        assert "alpha=0.05" in capsys.readouterr().out

    def test_timestamp_opt_in(self, tmp_path):
        main(["critvals", "--scheme", "cusum", "--grid", "200", "--reps", "200", "--out", str(tmp_path / "a"),
              "--timestamp"])
        assert "created_at" in (tmp_path / "a").read_text()

    def test_default_writes_cache(self, cache):
        assert main(["critvals", "--scheme", "page", "--grid", "200", "--reps", "200"]) == 0
        spec = critvals.LimitFunctionalSpec("page", 0.0, None, "homoscedastic", 200, 200, 0)
        assert critvals.cache_load(spec, cache / spec.filename()) is not None


class TestCache:
    def test_ls_and_rm(self, cache, capsys):
        main(["critvals", "--scheme", "cusum", "--grid", "200", "--reps", "200"])
        (cache / "broken.cvt").write_text("garbage")
        capsys.readouterr()
        assert main(["cache", "ls"]) == 0
        out = capsys.readouterr().out
        assert "c(0.05)=" in out and "CORRUPT" in out
        assert main(["cache", "rm", "broken.cvt"]) == 0
        assert not (cache / "broken.cvt").exists()
        assert main(["cache", "rm", "broken.cvt"]) == 1
        assert main(["cache", "rm"]) == 0
        assert critvals.list_cache() == []


class TestSimulate:
    def test_one_cell_matches_run_experiment(self, tmp_path, cache):
        cfg = tmp_path / "grid.cfg"
        cfg.write_text("m = 80\nd = 0.5\nbeta = 1\nreplications = 150\nseed = 4\n")
        assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "out")]) == 0
        rows = read_report_table(tmp_path / "out" / "summary.tsv")
        scenario = Scenario(m=80, d=0.5, beta=1.0, replications=150, seed=4)
        direct = run_experiment(scenario)
        assert len(rows) == 1
        assert float(rows[0]["rejection_rate"]) == direct.rejection_rate
        assert float(rows[0]["c_alpha"]) == direct.used_c_alpha
        assert (tmp_path / "out" / f"delays_{scenario.label()}.tsv").exists()

    def test_no_compute_fails_on_missing(self, tmp_path, cache):
        cfg = tmp_path / "grid.cfg"
        cfg.write_text("m = 50\nreplications = 10\n")
        assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path), "--no-compute"]) == 2

    def test_size_corrected(self, tmp_path, cache):
        cfg = tmp_path / "grid.cfg"
        cfg.write_text("m = 50\nd = 1\nbeta = 1\nreplications = 100\n")
        assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path), "--size-corrected"]) == 0
        assert read_report_table(tmp_path / "summary.tsv")[0]["size_corrected"] == "1"

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "grid.cfg"
        cfg.write_text("m = fifty\n")
        assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2


class TestAnalyze:
    def test_fixture(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["analyze", "--csv", str(pipeline.fixture_path()), "--column", "min_temp", "--historic", "120",
                     "--grid", "500", "--reps", "500", "--out-dir", str(out)])
        assert code == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == sorted(
            [f"trace_{k}_{s}.tsv" for k in ("dom", "wilcoxon") for s in ("cusum", "mmosum", "page")]
            + ["stopping_times.tsv"]
        )
        trace = pipeline.read_trace(out / "trace_dom_cusum.tsv")
        assert trace["k"].size == 1512 - 120
        assert "stopping_time=" in capsys.readouterr().out

    def test_unknown_kernel(self, tmp_path):
        code = main(["analyze", "--csv", str(pipeline.fixture_path()), "--column", "min_temp", "--kernels", "foo",
                     "--out-dir", str(tmp_path)])
        assert code == 1
