import csv

import numpy as np
import pytest

from mcspai import CsrMatrix, augment_and_split, dense_inverse_oracle, parse_matrix_market, write_matrix_market
from mcspai.bench import CSV_FIELDS, ConfigError, parse_sweep_spec, read_meta, read_rows, run_sweep
from mcspai.cli import main
from mcspai.corpus import convection_diffusion_2d, random_sparse


def rows_of(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def identity_file(tmp_path):
    path = tmp_path / "identity.mtx"
    write_matrix_market(CsrMatrix.identity(4), path)
    return path


@pytest.fixture
def cd_file(tmp_path):
    path = tmp_path / "cd.mtx"
    write_matrix_market(convection_diffusion_2d(6), path)
    return path


class TestPrecondition:
    def test_identity(self, identity_file, tmp_path):
        out = tmp_path / "out"
        assert main(["precondition", "--matrix", str(identity_file), "--alpha", "1", "--out", str(out)]) == 0
        m = parse_matrix_market(out / "identity_P_rep0.mtx")
        np.testing.assert_array_equal(m.to_dense(), 0.5 * np.eye(4))
        meta = read_meta(out / "identity_P_rep0.mtx")
        for key in ("seed", "epsilon", "delta", "alpha", "mode", "drop_fraction", "retain_k", "n_chains", "max_len", "wall_ms"):
            assert key in meta
        assert len(rows_of(out / "precondition.csv")) == 1

    def test_byte_identical_reruns(self, cd_file, tmp_path):
        args = ["precondition", "--matrix", str(cd_file), "--epsilon", "0.1", "--alpha", "1.5", "--seed", "9"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b"), "--threads", "4"]) == 0
        a = (tmp_path / "a" / "cd_P_rep0.mtx").read_bytes()
        b = (tmp_path / "b" / "cd_P_rep0.mtx").read_bytes()
        assert a == b

    def test_repetitions_use_distinct_seeds(self, cd_file, tmp_path):
        out = tmp_path / "out"
        args = ["precondition", "--matrix", str(cd_file), "--epsilon", "0.2", "--alpha", "1.5", "--retain-k", "5",
                "--reps", "3", "--seed", "100", "--out", str(out)]
        assert main(args) == 0
        assert sorted(p.name for p in out.glob("*.mtx")) == [f"cd_P_rep{i}.mtx" for i in range(3)]
        rows = rows_of(out / "precondition.csv")
        assert [r["seed"] for r in rows] == ["100", "101", "102"]
        assert all(r["retain_k"] == "5" for r in rows)

    def test_dominance_failure_surfaces(self, tmp_path, capsys):
        path = tmp_path / "bad.mtx"
        write_matrix_market(CsrMatrix.from_dense([[-10.0, 9.0], [1.0, 1.0]]), path)
        rc = main(["precondition", "--matrix", str(path), "--alpha", "0.5", "--mode", "plain", "--out", str(tmp_path / "o")])
        assert rc == 1
        assert "||A||" in capsys.readouterr().err

    def test_missing_matrix(self, tmp_path, capsys):
        assert main(["precondition", "--matrix", str(tmp_path / "nope.mtx"), "--out", str(tmp_path)]) == 1
        assert "error" in capsys.readouterr().err


    @pytest.mark.slow
    def test_rdb2048_ten_repetitions(self, tmp_path):
        out = tmp_path / "rdb"
        args = ["precondition", "--matrix", "rdb2048", "--epsilon", "0.01", "--retain-k", "32", "--reps", "10", "--out", str(out)]
        assert main(args) == 0
        assert len(list(out.glob("rdb2048_P_rep*.mtx"))) == 10
        rows = rows_of(out / "precondition.csv")
        assert len(rows) == 10
        assert len({r["seed"] for r in rows}) == 10


class TestSolve:
    def test_identity_default_rhs(self, identity_file, capsys):
        assert main(["solve", "--matrix", str(identity_file)]) == 0
        out = capsys.readouterr().out
        assert "iterations=1" in out and "converged=True" in out
        assert "ms" in out

    def test_none_and_p_rows(self, cd_file, tmp_path):
        pdir = tmp_path / "p"
        assert main(["precondition", "--matrix", str(cd_file), "--epsilon", "0.1", "--alpha", "1.5", "--out", str(pdir)]) == 0
        log = tmp_path / "solve.csv"
        assert main(["solve", "--matrix", str(cd_file), "--csv", str(log)]) == 0
        assert main(["solve", "--matrix", str(cd_file), "--precond", str(pdir / "cd_P_rep0.mtx"), "--csv", str(log)]) == 0
        rows = rows_of(log)
        assert [r["method"] for r in rows] == ["none", "P"]
        assert rows[1]["epsilon"] == "0.1" and rows[1]["seed"] == "0"
        assert all(r["converged"] == "true" for r in rows)

    def test_bicgstab_and_rhs_file(self, cd_file, tmp_path, capsys):
        rhs = tmp_path / "rhs.txt"
        np.savetxt(rhs, np.ones(36))
        assert main(["solve", "--matrix", str(cd_file), "--solver", "bicgstab", "--rhs", str(rhs)]) == 0
        assert "bicgstab [none] converged=True" in capsys.readouterr().out

    def test_unparseable_preconditioner(self, identity_file, tmp_path):
        bad = tmp_path / "bad.mtx"
        bad.write_text("garbage\n")
        log = tmp_path / "solve.csv"
        assert main(["solve", "--matrix", str(identity_file), "--precond", str(bad), "--csv", str(log)]) != 0
        assert main(["solve", "--matrix", str(identity_file), "--precond", str(tmp_path / "missing.mtx"), "--csv", str(log)]) != 0
        assert not log.exists()

    def test_dimension_mismatch(self, identity_file, cd_file, tmp_path, capsys):
        assert main(["solve", "--matrix", str(cd_file), "--precond", str(identity_file)]) == 1
        assert "dimension mismatch" in capsys.readouterr().err


class TestRecover:
    def test_round_trip(self, tmp_path, capsys):
        b = random_sparse(12, 0.4, seed=3)
        path = tmp_path / "b.mtx"
        write_matrix_market(b, path)
        # an exact B_hat^-1 recovers B^-1
        split = augment_and_split(b, 4.0)
        pre = tmp_path / "binv.mtx"
        write_matrix_market(CsrMatrix.from_dense(dense_inverse_oracle(split.b_hat.to_dense())), pre)
        out = tmp_path / "rec.mtx"
        assert main(["recover", "--matrix", str(path), "--precond", str(pre), "--alpha", "4", "--out", str(out)]) == 0
        rec = parse_matrix_market(out).to_dense()
        np.testing.assert_allclose(rec, dense_inverse_oracle(b.to_dense()), atol=1e-9)

    def test_requires_alpha_without_sidecar(self, identity_file, tmp_path):
        assert main(["recover", "--matrix", str(identity_file), "--precond", str(identity_file), "--out", str(tmp_path / "r.mtx")]) == 1

    def test_size_gate(self, identity_file, tmp_path, capsys):
        rc = main(["recover", "--matrix", str(identity_file), "--precond", str(identity_file), "--alpha", "1",
                   "--max-n", "2", "--out", str(tmp_path / "r.mtx")])
        assert rc == 1
        assert "--max-n" in capsys.readouterr().err


SPEC = """
# drop sweep
matrices = {matrix}
epsilons = 0.2
deltas = 0.05
alphas = 1.5
drop_fractions = 0, 0.025, 0.075
retain_ks = 8
solvers = gmres
repetitions = 2
"""


class TestSweepSpec:
    def test_parse(self):
        spec = parse_sweep_spec("matrix = a, b\nepsilon = 0.1\nretain_k = none, 4\nsolvers = gmres, bicgstab\nreps = 3")
        assert spec.matrices == ["a", "b"]
        assert spec.retain_ks == [None, 4]
        assert spec.repetitions == 3
        assert len(list(spec.cells())) == 4

    @pytest.mark.parametrize(
        "text",
        [
            "matrices = a\nepsilons =",
            "matrices =\nepsilons = 0.1",
            "epsilons = 0.1",
            "matrices = a\nepsilons = 0.1\nbogus = 1",
            "matrices = a\nepsilons = 0.1\nsolvers = cg",
            "matrices = a\nepsilons = x",
            "matrices = a\nepsilons = 0.1\nrepetitions = 0",
            "matrices = a\nno equals sign",
        ],
    )
    def test_config_errors(self, text):
        with pytest.raises(ConfigError):
            parse_sweep_spec(text)


class TestBench:
    def test_row_count_and_resume(self, cd_file, tmp_path, capsys):
        spec_path = tmp_path / "sweep.txt"
        spec_path.write_text(SPEC.format(matrix=cd_file))
        out = tmp_path / "all.csv"
        assert main(["bench", "--spec", str(spec_path), "--out", str(out)]) == 0
        rows = rows_of(out)
        assert len(rows) == 3 * 2
        assert list(rows[0]) == CSV_FIELDS
        assert {r["drop_fraction"] for r in rows} == {"0.0", "0.025", "0.075"}
        base = [r for r in rows if r["drop_fraction"] == "0.0"]
        assert all(r["nnz"] == str(convection_diffusion_2d(6).nnz) for r in base)
        before = out.read_bytes()
        assert "cells run: 6" in capsys.readouterr().out

        # second run: nothing recomputed, file unchanged
        assert main(["bench", "--spec", str(spec_path), "--out", str(out)]) == 0
        assert "cells run: 0, skipped: 6" in capsys.readouterr().out
        assert out.read_bytes() == before

        # drop a row: exactly that cell is redone, no duplicates
        kept = rows_of(out)[1:]
        with open(out, "w", newline="") as fh:
            w = csv.DictWriter(fh, CSV_FIELDS, lineterminator="\n")
            w.writeheader()
            w.writerows(kept)
        assert main(["bench", "--spec", str(spec_path), "--out", str(out)]) == 0
        assert "cells run: 1" in capsys.readouterr().out
        again = rows_of(out)
        assert len(again) == 6
        assert len({tuple(r[k] for k in ("drop_fraction", "seed", "solver")) for r in again}) == 6

    def test_sorted_output(self, cd_file, tmp_path):
        spec = parse_sweep_spec(SPEC.format(matrix=cd_file))
        out = tmp_path / "s.csv"
        run_sweep(spec, out, jobs=2)
        rows = read_rows(out)
        keys = [(float(r["drop_fraction"]), int(r["seed"])) for r in rows]
        assert keys == sorted(keys)

    def test_failures_recorded_and_retried(self, tmp_path):
        path = tmp_path / "bad.mtx"
        write_matrix_market(CsrMatrix.from_dense([[-10.0, 9.0], [1.0, 1.0]]), path)
        spec = parse_sweep_spec(f"matrices = {path}\nepsilons = 0.2\nalphas = 0.5\nmode = plain\nreps = 2\nsolvers = gmres, bicgstab")
        out = tmp_path / "f.csv"
        summary = run_sweep(spec, out)
        assert summary["failures"] == 4
        rows = read_rows(out)
        assert all(r["method"] == "error:DominanceError" and r["converged"] == "false" for r in rows)
        assert run_sweep(spec, out)["cells_run"] == 2
        assert len(read_rows(out)) == 4

    def test_bench_exit_code_on_failure(self, tmp_path):
        path = tmp_path / "bad.mtx"
        write_matrix_market(CsrMatrix.from_dense([[-10.0, 9.0], [1.0, 1.0]]), path)
        spec_path = tmp_path / "s.txt"
        spec_path.write_text(f"matrices = {path}\nepsilons = 0.2\nalphas = 0.5\nmode = plain\nreps = 1")
        assert main(["bench", "--spec", str(spec_path), "--out", str(tmp_path / "o.csv")]) == 1

    def test_bench_bad_spec(self, tmp_path, capsys):
        spec_path = tmp_path / "s.txt"
        spec_path.write_text("matrices = \nepsilons = 0.1\n")
        assert main(["bench", "--spec", str(spec_path), "--out", str(tmp_path / "o.csv")]) == 1
        assert "must not be empty" in capsys.readouterr().err
