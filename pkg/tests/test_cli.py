import csv
import subprocess
import sys

import numpy as np
import pytest

from betacnmf.bench import ExperimentConfig, gen_V, read_traces
from betacnmf.cli import SEED_ENV, main, parse_config_text
from betacnmf.nnmat import read_dictionary, read_nmat, write_nmat

SMALL = ["--K", "10", "--I", "2", "--N", "8", "--M", "3", "--iters", "6", "--n-matrices", "2", "--n-inits", "2"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


class TestGen:
    def test_writes_factors_and_manifest(self, tmp_path, capsys):
        code, _ = run(capsys, "gen", *SMALL, "--seed", 4, "--out", tmp_path)
        assert code == 0
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == [
            "H_000.nmat", "H_001.nmat", "V_000.nmat", "V_001.nmat",
            "W_000.dict", "W_001.dict", "manifest.cfg",
        ]
        cfg = ExperimentConfig(K=10, I=2, N=8, M=3, n_matrices=2, n_inits=2, max_iters=6, master_seed=4)
        V, W, H = gen_V(cfg, 1)
        np.testing.assert_array_equal(read_nmat(tmp_path / "V_001.nmat"), V)
        np.testing.assert_array_equal(read_dictionary(tmp_path / "W_001.dict"), W)
        np.testing.assert_array_equal(read_nmat(tmp_path / "H_001.nmat"), H)

    def test_deterministic(self, tmp_path, capsys):
        for d in ("a", "b"):
            run(capsys, "gen", *SMALL, "--out", tmp_path / d)
        for name in ("V_000.nmat", "W_001.dict", "manifest.cfg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_unwritable_output_is_io_error(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code, out = run(capsys, "gen", *SMALL, "--out", blocker / "sub")
        assert code == 2 and "not writable" in out.err

    def test_manifest_round_trip(self, tmp_path, capsys):
        run(capsys, "gen", *SMALL, "--seed", 9, "--beta", 0.5, "--out", tmp_path / "a")
        run(capsys, "gen", "--config", tmp_path / "a" / "manifest.cfg", "--out", tmp_path / "b")
        assert (tmp_path / "a" / "V_001.nmat").read_bytes() == (tmp_path / "b" / "V_001.nmat").read_bytes()
        settings = parse_config_text((tmp_path / "b" / "manifest.cfg").read_text())
        assert settings["master_seed"] == 9 and settings["beta"] == (0.5,) and settings["M"] == 3

    def test_env_seed_fallback(self, tmp_path, capsys, monkeypatch):
        run(capsys, "gen", *SMALL, "--seed", 17, "--out", tmp_path / "flag")
        monkeypatch.setenv(SEED_ENV, "17")
        run(capsys, "gen", *SMALL, "--out", tmp_path / "env")
        run(capsys, "gen", *SMALL, "--seed", 3, "--out", tmp_path / "override")
        flag = (tmp_path / "flag" / "V_000.nmat").read_bytes()
        assert (tmp_path / "env" / "V_000.nmat").read_bytes() == flag
        assert (tmp_path / "override" / "V_000.nmat").read_bytes() != flag


class TestConfig:
    def test_bad_line_is_parse_error(self, tmp_path, capsys):
        (tmp_path / "c.cfg").write_text("K 10\n")
        code, _ = run(capsys, "gen", "--config", tmp_path / "c.cfg", "--out", tmp_path)
        assert code == 3

    def test_unknown_key(self, tmp_path, capsys):
        (tmp_path / "c.cfg").write_text("# comment\nbogus = 1\n")
        code, _ = run(capsys, "gen", "--config", tmp_path / "c.cfg", "--out", tmp_path)
        assert code == 3

    def test_missing_config_is_io_error(self, tmp_path, capsys):
        code, _ = run(capsys, "gen", "--config", tmp_path / "none.cfg", "--out", tmp_path)
        assert code == 2

    def test_invalid_value_is_usage_error(self, tmp_path, capsys):
        code, _ = run(capsys, "gen", "--K", 0, "--out", tmp_path)
        assert code == 1

    def test_unknown_flag_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["gen", "--nope"])
        assert exc.value.code == 1


class TestFit:
    @pytest.fixture
    def vfile(self, tmp_path, capsys):
        run(capsys, "gen", *SMALL, "--out", tmp_path / "data")
        return tmp_path / "data" / "V_000.nmat"

    def test_single_iteration_trace(self, vfile, tmp_path, capsys):
        code, out = run(capsys, "fit", vfile, "--M", 3, "--I", 2, "--iters", 1, "--out", tmp_path / "f")
        assert code == 0 and out.out.startswith("method=proposed beta=1 iterations=1 final_loss=")
        rows = list(csv.DictReader((tmp_path / "f" / "trace.csv").open()))
        assert [int(r["iteration"]) for r in rows] == [0, 1]
        assert read_dictionary(tmp_path / "f" / "W.dict").shape == (3, 10, 2)
        assert read_nmat(tmp_path / "f" / "H.nmat").shape == (2, 8)

    def test_schmidt_matches_proposed_at_euclidean(self, vfile, tmp_path, capsys):
        finals = []
        for method in ("proposed", "schmidt"):
            code, out = run(capsys, "fit", vfile, "--beta", 2, "--method", method, "--out", tmp_path / method)
            assert code == 0
            finals.append(out.out.split("final_loss=")[1])
        assert finals[0] == finals[1]

    def test_invalid_method(self, vfile, tmp_path, capsys):
        code, out = run(capsys, "fit", vfile, "--method", "nope", "--out", tmp_path)
        assert code == 1 and "proposed" in out.err

    def test_multiple_betas_rejected(self, vfile, tmp_path, capsys):
        code, _ = run(capsys, "fit", vfile, "--beta", "0,1", "--out", tmp_path)
        assert code == 1

    @pytest.mark.parametrize("body", ["2 2\n1 2\n", "1 1\n-3\n", "garbage", b"\xff\xfe\x00"])
    def test_malformed_input(self, tmp_path, capsys, body):
        p = tmp_path / "bad.nmat"
        p.write_bytes(body if isinstance(body, bytes) else body.encode())
        code, _ = run(capsys, "fit", p, "--out", tmp_path / "o")
        assert code == 3

    def test_missing_input_is_io_error(self, tmp_path, capsys):
        code, _ = run(capsys, "fit", tmp_path / "nope.nmat", "--out", tmp_path)
        assert code == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numerical_failure_exit_code(self, tmp_path, capsys):
        p = tmp_path / "huge.nmat"
        write_nmat(p, np.full((4, 5), 1e308))
        code, out = run(capsys, "fit", p, "--beta", 3, "--M", 2, "--I", 1, "--iters", 5, "--out", tmp_path / "o")
        assert code == 4
        assert (tmp_path / "o" / "trace.csv").exists()


@pytest.fixture(scope="module")
def bench_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bench")
    assert main([*map(str, ["bench", *SMALL, "--beta", "0,1,2", "--out", out])]) == 0
    return out


class TestBenchAndStats:
    def test_output_files(self, bench_dir):
        stats = sorted(p.name for p in bench_dir.glob("stats_*.csv"))
        assert len(stats) == 15
        assert "stats_beta0_smaragdis_biased.csv" in stats
        for tag in ("0", "1", "2"):
            assert (bench_dir / f"traces_beta{tag}.csv").exists()
            rows = list(csv.DictReader((bench_dir / f"welch_beta{tag}.csv").open()))
            assert len(rows) == 4 * 7
            assert all(0.0 <= float(r["p"]) <= 1.0 for r in rows)
        assert (bench_dir / "manifest.cfg").exists()

    def test_stats_header_and_counts(self, bench_dir):
        rows = list(csv.DictReader((bench_dir / "stats_beta1_wang.csv").open()))
        assert list(rows[0]) == ["method", "beta", "iteration", "mean_loss", "std_loss", "n"]
        assert len(rows) == 7 and all(r["n"] == "4" for r in rows)

    def test_stats_same_file(self, bench_dir, capsys):
        f = bench_dir / "traces_beta1.csv"
        code, out = run(capsys, "stats", f, f, "--iteration", 3, "--method-a", "proposed", "--method-b", "proposed")
        assert code == 0 and out.out.strip().endswith("p=1.0")

    def test_stats_between_methods_matches_bench(self, bench_dir, capsys):
        f = bench_dir / "traces_beta0.csv"
        code, out = run(capsys, "stats", f, f, "--iteration", 6, "--method-a", "proposed", "--method-b", "wang")
        assert code == 0
        p_cli = float(out.out.split("p=")[1])
        rows = csv.DictReader((bench_dir / "welch_beta0.csv").open())
        p_file = [float(r["p"]) for r in rows if r["method_b"] == "wang" and r["iteration"] == "6"]
        assert p_file == [p_cli]

    def test_stats_constant_disjoint(self, tmp_path, capsys):
        header = "run_id,method,beta,iteration,loss,elapsed_ns\n"
        (tmp_path / "a.csv").write_text(header + "0,proposed,1,0,1.0,0\n1,proposed,1,0,1.0,0\n")
        (tmp_path / "b.csv").write_text(header + "0,wang,1,0,2.0,0\n1,wang,1,0,2.0,0\n")
        code, out = run(capsys, "stats", tmp_path / "a.csv", tmp_path / "b.csv", "--iteration", 0)
        assert code == 0 and "p=0.0" in out.out

    def test_stats_missing_iteration(self, bench_dir, capsys):
        f = bench_dir / "traces_beta1.csv"
        code, _ = run(capsys, "stats", f, f, "--iteration", 999)
        assert code == 3

    def test_timing_writes_runtime(self, tmp_path, capsys):
        code, _ = run(capsys, "bench", *SMALL, "--methods", "proposed,smaragdis_biased", "--timing", "--out", tmp_path)
        assert code == 0
        rows = list(csv.DictReader((tmp_path / "runtime.csv").open()))
        assert [r["method"] for r in rows] == ["proposed", "smaragdis_biased"]
        assert float(rows[0]["ratio"]) == 1.0
        assert len(read_traces(tmp_path / "traces_beta1.csv")) == 8


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "betacnmf", "gen", *SMALL, "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert res.returncode == 0 and (tmp_path / "V_000.nmat").exists()
