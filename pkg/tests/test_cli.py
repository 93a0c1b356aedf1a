import json
import subprocess
import sys

import numpy as np
import pytest

from mestlab.cli import main
from mestlab.io import read_matrix, write_matrix


@pytest.fixture
def data(tmp_path, rng):
    X = rng.standard_normal((60, 6))
    y = X @ np.arange(6.0) + rng.standard_normal(60)
    xp, yp = tmp_path / "X.csv", tmp_path / "y.csv"
    write_matrix(str(xp), X)
    write_matrix(str(yp), y[:, None])
    return X, y, str(xp), str(yp), tmp_path


def test_matrix_roundtrip(tmp_path, rng):
    X = rng.standard_normal((7, 3)) * 1e-300
    write_matrix(str(tmp_path / "a.csv"), X)
    np.testing.assert_array_equal(read_matrix(str(tmp_path / "a.csv")), X)


def test_fit_square_matches_lstsq(data):
    X, y, xp, yp, d = data
    out = d / "fit.json"
    assert main(["fit", "--design", xp, "--response", yp, "--loss", "square", "--out", str(out)]) == 0
    beta = np.array(json.loads(out.read_text())["beta"])
    np.testing.assert_allclose(beta, np.linalg.lstsq(X, y, rcond=None)[0], rtol=1e-10)
    man = json.loads((d / "fit.json.manifest.json").read_text())
    assert "fit.json" in man["outputs"]


def test_loo_and_jackknife_and_sensitivity(data):
    X, y, xp, yp, d = data
    assert main(["loo", "--design", xp, "--response", yp, "--coords", "1-3", "--out", str(d / "loo.csv")]) == 0
    lines = (d / "loo.csv").read_text().splitlines()
    assert lines[0].startswith("j,bj") and len(lines) == 4
    assert main(["jackknife", "--design", xp, "--response", yp, "--out", str(d / "jk.csv")]) == 0
    assert main(["sensitivity", "--design", xp, "--reps", "100", "--out", str(d / "s.csv")]) == 0


def test_design_gen_and_check(tmp_path):
    out = tmp_path / "anova.csv"
    assert main(["design", "gen", "--family", "anova", "--group-sizes", ",".join(["2,4,9"] * 20), "--out", str(out)]) == 0
    assert read_matrix(str(out)).shape == (300, 60)
    rep = tmp_path / "check.json"
    assert main(["design", "check", "--design", str(out), "--coords", "1-3", "--reps", "20", "--out", str(rep)]) == 0
    v = json.loads(rep.read_text())["verdicts"]
    assert v["A3"]["verdict"] == "fail"


def test_coverage_threads_identical(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("n_list = 40\nkappa = 0.25\nouter_reps = 2\ninner_reps = 30\ncoords = 1-2\nbonferroni = true\n")
    for t in ("1", "2"):
        assert main(["coverage", "--config", str(cfg), "--threads", t, "--out", str(tmp_path / t)]) == 0
    for f in ("coverage.csv", "summary.csv"):
        assert (tmp_path / "1" / f).read_bytes() == (tmp_path / "2" / f).read_bytes()


def test_exit_codes(data, tmp_path):
    X, y, xp, yp, d = data
    assert main(["fit", "--design", str(tmp_path / "none.csv"), "--response", yp, "--out", str(d / "o")]) == 2
    assert main(["fit", "--design", xp, "--response", yp, "--loss", "bogus", "--out", str(d / "o")]) == 2
    bad = tmp_path / "bad.csv"
    Xb = X.copy()
    Xb[:, 1] = Xb[:, 0]
    write_matrix(str(bad), Xb)
    assert main(["fit", "--design", str(bad), "--response", yp, "--out", str(d / "o")]) == 3
    with pytest.raises(SystemExit) as e:
        main(["fit"])
    assert e.value.code == 2


def test_version_subprocess():
    r = subprocess.run([sys.executable, "-m", "mestlab.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("mestlab ")
