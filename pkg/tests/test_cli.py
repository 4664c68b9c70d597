import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from sdaevar import cli, io
from sdaevar.exceptions import ModelError

REPORTED_CLASSES = {"delta", "omega", "e_d", "e_q", "v", "theta", "p_g", "q_g", "I_d", "I_q",
                 "p_e", "p_fr", "q_fr", "p_to", "q_to"}


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def manifest(out):
    return json.loads((out / "run_manifest.json").read_text())


def variant(tmp_path, edit, name="m.json", base="micro3"):
    d = json.loads(io.bundled_path(base).read_text())
    edit(d)
    path = tmp_path / name
    path.write_text(json.dumps(d))
    return str(path)


@pytest.fixture(scope="module")
def lem_wscc9(tmp_path_factory):
    out = tmp_path_factory.mktemp("lem9")
    assert cli.main(["lem", "--out", str(out), "--dump-cov"]) == 0
    return out


class TestPf:
    def test_bundled_nine_bus(self, tmp_path):
        assert cli.main(["pf", "--model", "wscc9", "--out", str(tmp_path)]) == 0
        table = rows(tmp_path / "pf.csv")
        assert header(tmp_path / "pf.csv") == ["bus", "v", "theta", "p_inj", "q_inj", "mismatch"]
        assert len(table) == 9
        assert max(float(r["mismatch"]) for r in table) < 1e-8
        assert manifest(tmp_path)["command"] == "pf"

    def test_malformed_file(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text('{"buses": [\n {"id": "1", "kind": "slack"},\n ]}')
        assert cli.main(["pf", "--model", str(path), "--out", str(tmp_path)]) == 1
        assert "line 3" in capsys.readouterr().err

    def test_schema_violation_names_field(self, tmp_path, capsys):
        path = variant(tmp_path, lambda d: d["machines"][1].pop("Tg"))
        assert cli.main(["pf", "--model", path, "--out", str(tmp_path)]) == 1
        assert "machines/1" in capsys.readouterr().err

    def test_two_slack(self, tmp_path, capsys):
        path = variant(tmp_path, lambda d: d["buses"][1].update(kind="slack"))
        assert cli.main(["pf", "--model", path, "--out", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert "1, 2" in err

    def test_missing_model(self, tmp_path):
        assert cli.main(["pf", "--model", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1

    def test_no_convergence(self, tmp_path, capsys):
        path = variant(tmp_path, lambda d: d["loads"][0].update(p0=60.0))
        assert cli.main(["pf", "--model", path, "--out", str(tmp_path)]) == 2
        assert "mismatch" in capsys.readouterr().err

    def test_bad_flag_is_input_error(self, tmp_path):
        assert cli.main(["pf", "--bogus"]) == 1


class TestLem:
    def test_eta_rows_exact(self, lem_wscc9, wscc9):
        table = {r["variable"]: r for r in rows(lem_wscc9 / "sigma_states.csv")}
        for tag, spec in wscc9.noise.processes:
            got = float(table[f"eta[{tag}]"]["sigma"])
            assert got == pytest.approx(spec.sigma, rel=1e-10)
        ld = {ld.noise_p: ld.p0 for ld in wscc9.loads}
        for tag, p0 in ld.items():
            assert float(table[f"eta[{tag}]"]["sigma"]) == pytest.approx(0.05 * p0, rel=1e-10)

    def test_headers_and_manifest(self, lem_wscc9):
        for f in ("sigma_states.csv", "sigma_algebraics.csv"):
            assert header(lem_wscc9 / f) == ["variable", "class", "sigma", "degenerate"]
        man = manifest(lem_wscc9)
        assert man["spectral_abscissa"] < 0
        assert man["rcond"] > 0

    def test_covariance_dump_symmetric(self, lem_wscc9, wscc9):
        with open(lem_wscc9 / "cov_C.csv", newline="") as fh:
            r = list(csv.reader(fh))
        c = np.array([[float(v) for v in line[1:]] for line in r[1:]])
        assert c.shape == (wscc9.n + wscc9.p,) * 2
        np.testing.assert_array_equal(c, c.T)

    def test_seventeen_digits_round_trip(self, lem_wscc9):
        text = (lem_wscc9 / "sigma_algebraics.csv").read_text().splitlines()[1]
        value = text.split(",")[2]
        assert float("%.17g" % float(value)) == float(value)

    def test_zero_noise_all_degenerate(self, tmp_path):
        assert cli.main(["lem", "--model", "micro3", "--sigma-scale", "0", "--out", str(tmp_path)]) == 0
        table = rows(tmp_path / "sigma_states.csv") + rows(tmp_path / "sigma_algebraics.csv")
        assert all(float(r["sigma"]) == 0.0 for r in table)
        assert all(r["degenerate"] == "true" for r in table)

    def test_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert cli.main(["lem", "--model", "wscc9", "--out", str(out)]) == 0
        for f in ("sigma_states.csv", "sigma_algebraics.csv"):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_not_hurwitz(self, tmp_path, capsys):
        path = variant(tmp_path, lambda d: d["loads"][0].update(gamma=-10.0))
        assert cli.main(["lem", "--model", path, "--out", str(tmp_path)]) == 3
        assert "eigenvalues" in capsys.readouterr().err


class TestMc:
    def test_same_seed_identical(self, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            assert cli.main(["mc", "--model", "micro3", "--n", "20", "--tf", "2",
                             "--seed", "4", "--out", str(out)]) == 0
        f = "mc_sigma_final.csv"
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
        assert header(outs[0] / f) == ["variable", "class", "sigma_mc", "N"]
        assert header(outs[0] / "sigma_vs_t.csv") == ["variable", "class", "t", "sigma"]
        assert header(outs[0] / "sigma_vs_N.csv") == ["variable", "class", "N", "sigma"]
        man = manifest(outs[0])
        assert man["seed"] == 4 and man["N"] == 20 and man["dt"] == 0.01
        assert man["cpu_time_per_realization_s"] > 0 and man["wall_clock_s"] > 0

    def test_tf_defaults_to_heuristic(self, tmp_path):
        assert cli.main(["mc", "--model", "micro3", "--n", "2", "--out", str(tmp_path)]) == 0
        assert manifest(tmp_path)["t_f"] == pytest.approx(200.0)

    def test_invalid_tf(self, tmp_path):
        assert cli.main(["mc", "--model", "micro3", "--n", "2", "--tf", "1.005",
                         "--out", str(tmp_path)]) == 1

    @pytest.mark.slow
    def test_nine_bus_n200(self, tmp_path):
        assert cli.main(["mc", "--n", "200", "--tf", "200", "--out", str(tmp_path)]) == 0
        for f in ("mc_sigma_final.csv", "sigma_vs_t.csv", "sigma_vs_N.csv"):
            assert (tmp_path / f).stat().st_size > 0
        final = rows(tmp_path / "mc_sigma_final.csv")
        assert all(r["N"] == "200" for r in final)
        assert all(np.isfinite(float(r["sigma_mc"])) for r in final)


class TestCompare:
    def fake_mc(self, lem_dir, out, scale=1.0, drop=None):
        out.mkdir(exist_ok=True)
        table = rows(lem_dir / "sigma_states.csv") + rows(lem_dir / "sigma_algebraics.csv")
        keep = [r for r in table if r["variable"] != drop]
        cli.write_csv(out / "mc_sigma_final.csv", ["variable", "class", "sigma_mc", "N"],
                      ((r["variable"], r["class"], float(r["sigma"]) * scale, 100) for r in keep))
        return out

    def test_identical_tables_give_zero(self, lem_wscc9, tmp_path):
        mc_dir = self.fake_mc(lem_wscc9, tmp_path / "mc")
        out = tmp_path / "cmp"
        assert cli.main(["compare", "--lem-dir", str(lem_wscc9), "--mc-dir", str(mc_dir),
                         "--out", str(out)]) == 0
        eps = rows(out / "epsilon_sigma.csv")
        assert header(out / "epsilon_sigma.csv") == [
            "variable", "class", "sigma_mc", "sigma_lem", "epsilon_pct", "flags"]
        assert all(float(r["epsilon_pct"]) == 0.0 for r in eps)
        box = rows(out / "epsilon_boxplot.csv")
        assert header(out / "epsilon_boxplot.csv") == ["class", "median", "p5", "p95", "n_outliers"]
        assert REPORTED_CLASSES <= {r["class"] for r in box}

    def test_uniform_gap(self, lem_wscc9, tmp_path):
        mc_dir = self.fake_mc(lem_wscc9, tmp_path / "mc", scale=1.0 / 0.9)
        out = tmp_path / "cmp"
        assert cli.main(["compare", "--lem-dir", str(lem_wscc9), "--mc-dir", str(mc_dir),
                         "--out", str(out)]) == 0
        for r in rows(out / "epsilon_boxplot.csv"):
            assert float(r["median"]) == pytest.approx(10.0, rel=1e-9)

    def test_mismatch_exits_5(self, lem_wscc9, tmp_path, capsys):
        mc_dir = self.fake_mc(lem_wscc9, tmp_path / "mc", drop="v[5]")
        assert cli.main(["compare", "--lem-dir", str(lem_wscc9), "--mc-dir", str(mc_dir),
                         "--out", str(tmp_path / "cmp")]) == 5
        assert "v[5]" in capsys.readouterr().err

    def test_missing_tables_exit_5(self, tmp_path):
        assert cli.main(["compare", "--out", str(tmp_path)]) == 5


class TestEntryPoints:
    def test_module_invocation(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "sdaevar", "pf", "--model", "micro3",
                               "--out", str(tmp_path)], capture_output=True, text=True)
        assert proc.returncode == 0
        assert len(rows(tmp_path / "pf.csv")) == 3

    def test_convergence_command(self, tmp_path):
        assert cli.main(["convergence", "--model", "micro3", "--n", "200", "--tf", "50",
                         "--out", str(tmp_path)]) == 0
        ref = rows(tmp_path / "sigma_vs_t_reference.csv")
        assert {r["variable"] for r in ref} == {"eta[p_L3]", "eta[q_L3]"}
        assert manifest(tmp_path)["heuristic_tf"] == pytest.approx(200.0)


def test_model_error_is_value_error():
    assert issubclass(ModelError, ValueError)
