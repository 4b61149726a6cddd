import json
import subprocess
import sys

import numpy as np
import pytest

from dtgof.cli import main, read_observations, sidecar_path
from dtgof.critval import covariance_matrix
from dtgof.errors import ValidationError
from dtgof.geometry import StudyWindow
from dtgof.model import ModelParams, alpha

SMALL = ["--G", "2", "--s", "1"]


def run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:  # argparse
        return exc.code


def _simulate(path, seed=1, n=3000, extra=()):
    return run("simulate", "--theta", "0.5", "--vartheta", "0.2", "--latent-n", n, "--seed", seed,
               "--out", path, *SMALL, *extra)


@pytest.fixture
def sample(tmp_path):
    path = tmp_path / "obs.csv"
    assert _simulate(path) == 0
    return path


class TestSimulate:
    def test_writes_csv_and_sidecar(self, sample):
        lines = sample.read_text().splitlines()
        assert lines[0] == "x,t" and len(lines) > 100
        meta = json.loads(sidecar_path(sample).read_text())
        assert meta["schema_version"] == 1 and meta["m"] == len(lines) - 1
        assert meta["seed"] == 1 and meta["params"]["vartheta"] == 0.2

    def test_same_seed_same_bytes(self, tmp_path, sample):
        other = tmp_path / "again.csv"
        assert _simulate(other) == 0
        assert other.read_bytes() == sample.read_bytes()

    def test_round_trip_is_exact(self, sample):
        from dtgof.datagen import SimulationConfig, sample_latent, truncate
        w = StudyWindow(2, 1)
        obs = read_observations(sample, w)
        ref = truncate(sample_latent(SimulationConfig(ModelParams.fgm(0.5, 0.2), w, 3000, 1)), w)
        assert np.array_equal(obs.x, ref.x) and np.array_equal(obs.t, ref.t)

    def test_product_rejects_vartheta(self, tmp_path):
        assert run("simulate", "--copula", "product", "--theta", "0.5", "--vartheta", "0.2",
                   "--latent-n", 10, "--seed", 1, "--out", tmp_path / "a.csv", *SMALL) == 3


class TestEstimate:
    def test_json(self, tmp_path, sample, capsys):
        out = tmp_path / "est.json"
        assert run("estimate", sample, *SMALL, "--out", out) == 0
        doc = json.loads(out.read_text())
        assert doc["schema_version"] == 1 and doc["kind"] == "estimate"
        assert doc["params"]["copula"] == "fgm"
        assert abs(doc["params"]["theta"] - 0.5) < 0.15
        assert doc["latent_n"] == pytest.approx(doc["m"] / doc["alpha"])
        assert "theta" in capsys.readouterr().out

    def test_bad_row_names_line(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("x,t\n1.5,1.0\n2.5,2.4\n1.2,1.1\n")
        assert run("estimate", path, *SMALL) == 3
        assert "line 3" in capsys.readouterr().err

    def test_drop_invalid(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,t\n1.5,1.0\n2.5,2.4\n1.2,1.1\n0.9,0.5\n")
        assert run("estimate", path, "--copula", "product", *SMALL, "--drop-invalid") == 0

    @pytest.mark.parametrize("text", ["", "x,t\n", "a,b\n1,1\n", "x,t\n1,abc\n", "x,t\n1,nan\n"])
    def test_malformed(self, tmp_path, text):
        path = tmp_path / "m.csv"
        path.write_text(text)
        assert run("estimate", path, *SMALL) == 3

    def test_empty_message(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("x,t\n")
        with pytest.raises(ValidationError, match="empty sample"):
            read_observations(path, StudyWindow(2, 1))

    def test_missing_file(self, tmp_path):
        assert run("estimate", tmp_path / "nope.csv", *SMALL) == 3

    def test_numerical_failure(self, tmp_path, capsys):
        # every lifetime at the right edge: the product score has no root
        path = tmp_path / "edge.csv"
        path.write_text("x,t\n2.9,1.9\n2.95,1.95\n3.0,2.0\n")
        assert run("estimate", path, "--copula", "product", *SMALL) == 4
        assert "estimate" in capsys.readouterr().err


class TestUsage:
    @pytest.mark.parametrize("argv", [
        [],
        ["estimate"],
        ["critval", "--theta", "0.5", *SMALL],  # seed is required
        ["critval", "--theta", "-1", "--seed", "1", *SMALL],
        ["critval", "--theta", "0.5", "--seed", "1", "--levels", "0.5,1.5", *SMALL],
        ["critval", "--theta", "0.5", "--seed", "1", "--mode", "bogus", *SMALL],
        ["simulate", "--theta", "0.5", "--latent-n", "0", "--seed", "1", "--out", "x.csv", *SMALL],
    ])
    def test_exit_2(self, argv):
        assert run(*argv) == 2

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "dtgof", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "critval" in proc.stdout


class TestCritval:
    def _run(self, tmp_path, name, *extra, pre=()):
        out = tmp_path / name
        code = run(*pre, "critval", "--theta", "0.5", "--vartheta", "0.2", "--seed", 3, "--reps", 300,
                   "--grid-step", "0.25", *SMALL, "--out", out, *extra)
        assert code == 0
        return json.loads(out.read_text())

    def test_json_and_monotone_levels(self, tmp_path):
        doc = self._run(tmp_path, "a.json", "--levels", "0.99,0.9,0.95")
        assert doc["schema_version"] == 1 and doc["kind"] == "critval" and doc["mode"] == "est-both"
        q = [doc["critical_values"][k] for k in ("0.9", "0.95", "0.99")]
        assert q[0] <= q[1] <= q[2]

    def test_deterministic_and_thread_independent(self, tmp_path):
        a = self._run(tmp_path, "a.json")
        b = self._run(tmp_path, "b.json", pre=("--threads", "1"))
        for doc in (a, b):
            doc.pop("timings")
        assert a == b

    def test_grid_cap(self, tmp_path, capsys):
        assert run("critval", "--theta", "0.5", "--seed", 1, "--grid-step", "0.01", "--grid-cap", "1000",
                   *SMALL) == 3
        assert "cap" in capsys.readouterr().err

    def test_product_vartheta_is_validation_error(self, tmp_path):
        assert run("critval", "--copula", "product", "--theta", "0.5", "--vartheta", "0.3",
                   "--seed", 1, *SMALL) == 3


class TestTest:
    def test_full_pipeline(self, tmp_path, sample, capsys):
        out = tmp_path / "t.json"
        assert run("test", sample, *SMALL, "--seed", 5, "--reps", 300, "--grid-step", "0.25",
                   "--levels", "0.95", "--out", out) == 0
        doc = json.loads(out.read_text())
        assert doc["kind"] == "test" and doc["schema_version"] == 1
        stat = doc["statistic"]["value"]
        assert stat >= 0 and len(doc["statistic"]["deltas"]) == 5
        crit = doc["critical_values"]["0.95"]
        assert doc["decisions"]["0.95"] == ("REJECT" if stat > crit else "ACCEPT")
        assert set(doc["timings"]) == {"read", "estimate", "statistic", "critical_value"}
        assert "statistic" in capsys.readouterr().out

    def test_seed_required(self, sample):
        assert run("test", sample, *SMALL) == 2


def test_one_point_known_both_variance():
    # at the far corner the indicator is that of D: Bernoulli(alpha) variance
    p = ModelParams.fgm(0.5, 0.2)
    w = StudyWindow(2, 1)
    mat = covariance_matrix(p, w, np.array([[w.x_max, w.G]]), "known-both")
    a = alpha(p, w)
    assert mat[0, 0] == pytest.approx(a * (1 - a), rel=1e-12)
