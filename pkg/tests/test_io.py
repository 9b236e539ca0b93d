import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from helpers import random_model
from scorecusum import io
from scorecusum.baselines import GaussianParams
from scorecusum.datagen import ring_gmm_spec
from scorecusum.detector import run_cusum
from scorecusum.errors import DataError


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(0, 6), st.integers(1, 3)), elements=st.floats(-1e300, 1e300)))
def test_csv_round_trip_exact(tmp_path_factory, X):
    path = tmp_path_factory.mktemp("csv") / "x.csv"
    io.write_csv(path, X, provenance={"seed": 1})
    Y, cols = io.read_csv(path)
    assert Y.shape == X.shape
    np.testing.assert_array_equal(Y, X)
    assert cols == [f"x{i}" for i in range(X.shape[1])]


def test_csv_index_column_dropped(tmp_path):
    path = tmp_path / "s.csv"
    io.write_csv(path, [[1.5, 2.0], [3.0, 4.0]], ["a", "b"], index=True)
    assert path.read_text().splitlines()[0] == "t,a,b"
    X, cols = io.read_csv(path)
    assert cols == ["a", "b"] and X.tolist() == [[1.5, 2.0], [3.0, 4.0]]


def test_empty_csv_keeps_header(tmp_path):
    path = tmp_path / "e.csv"
    io.write_csv(path, np.zeros((0, 2)), ["a", "b"])
    X, cols = io.read_csv(path)
    assert X.shape == (0, 2) and cols == ["a", "b"]


@pytest.mark.parametrize(
    "body, line",
    [("a,b\n1,2\n3\n", 3), ("a,b\n1,x\n", 2), ("# note\na\n1\nnan\n", 4)],
)
def test_csv_errors_name_the_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DataError, match=f":{line}:"):
        io.read_csv(path)


def test_model_round_trip(tmp_path):
    m = random_model(np.random.default_rng(0), 2, 5, standardize=True)
    io.save_model(m, tmp_path / "m.json", provenance={"seed": 3})
    back = io.load_model(tmp_path / "m.json")
    for p, q in zip(m.params, back.params):
        np.testing.assert_array_equal(p, q)
    np.testing.assert_array_equal(m.scale, back.scale)
    assert back.noise_scale == m.noise_scale


def test_gmm_and_gaussian_round_trip(tmp_path):
    spec = ring_gmm_spec("post")
    io.save_gmm(spec, tmp_path / "g.json")
    back = io.load_gmm(tmp_path / "g.json")
    np.testing.assert_array_equal(back.means, spec.means)
    g = GaussianParams([1.0, 2.0], [[2.0, 0.1], [0.1, 1.0]])
    g2 = io.gaussian_from_dict(io.gaussian_to_dict(g))
    np.testing.assert_array_equal(g2.cov, g.cov)


def test_wrong_format_tag(tmp_path):
    io.save_gmm(ring_gmm_spec("pre"), tmp_path / "g.json")
    with pytest.raises(DataError):
        io.load_model(tmp_path / "g.json")


def test_run_record_files(tmp_path):
    rec = run_cusum(np.zeros((3, 1)), lambda x: 1.0, tau=2.0)
    io.write_run_record(rec, tmp_path / "r.csv", tmp_path / "r.json")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines == ["t,statistic,increment", "1,1.0,1.0", "2,2.0,1.0"]
    summary = io.load_json(tmp_path / "r.json", io.RUN_FORMAT)
    assert summary["stopping_time"] == 2 and summary["final_statistic"] == 2.0
