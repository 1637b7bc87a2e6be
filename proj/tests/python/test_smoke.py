import json

import numpy as np
import pytest

import falsify_iv as fiv


def l2():
    return fiv.ReducedMoments(np.array([1.0, 5.0]), np.array([[1.0], [1.0]]))


def b1():
    # Index (2y + x) * cells + z, P(Z=1) = 0.5.
    return fiv.DiscreteJoint([[0.0, 1.0]], np.array([0.15, 0.05, 0.2, 0.05, 0.1, 0.05, 0.05, 0.35]))


def test_two_instrument_set():
    fas = fiv.fas_k1(l2())
    assert fas["lower"] == 1.0
    assert fas["upper"] == 5.0
    i1, i2, slope = fiv.ff_two_instruments(l2())
    assert (i1, i2, slope) == pytest.approx((4.0, 4.0, -1.0))
    assert fiv.sargan_falsified(l2())


def test_frontier_and_identified_set():
    delta, b = fiv.falsification_frontier_k1(l2(), 11)
    assert delta.shape == (11, 2)
    assert delta[0] == pytest.approx([0.0, 4.0])
    assert b[-1] == pytest.approx(5.0)
    assert fiv.identified_set_linear(l2(), np.zeros(2)) is None
    lo, hi = fiv.identified_set_linear(l2(), np.array([1.0, 3.0]))
    assert lo == pytest.approx(2.0) and hi == pytest.approx(2.0)


def test_binary_outcome_model():
    j = b1()
    assert fiv.falsification_point_single(j) == pytest.approx(1 / 14, abs=1e-6)
    lo, hi = fiv.fas_ate(j)
    assert lo == pytest.approx(-0.0875, abs=1e-6)
    assert hi == pytest.approx(0.475, abs=1e-6)
    assert fiv.ate_bounds(j, np.ones(1)) == pytest.approx((-0.4, 0.6))


def test_errors_carry_codes():
    with pytest.raises(fiv.FalsifyIvError) as err:
        fiv.ff_two_instruments(fiv.ReducedMoments(np.ones(3), np.ones((3, 1))))
    assert err.value.code == "InvalidArgument"
    with pytest.raises(fiv.FalsifyIvError) as err:
        fiv.ate_bounds(b1(), np.zeros(1))
    assert err.value.code == "ModelFalsifiedAtC"


def test_sample_estimation():
    rng = np.random.default_rng(1)
    n = 20000
    z = rng.standard_normal((n, 2))
    v = rng.standard_normal(n)
    x = z.sum(axis=1) + v
    y = x + 4 * z[:, 1] + 0.5 * v + rng.standard_normal(n)
    rows = np.column_stack([y, x, z])
    fas = fiv.estimate_fas(rows, ["outcome", "treatment", "instrument", "instrument"])
    assert abs(fas["lower"] - 1) < 4 * fas["lower_se"]
    assert abs(fas["upper"] - 5) < 4 * fas["upper_se"]


def test_run_analysis(tmp_path):
    cfg = {
        "model": "linear",
        "moments": {"psi": [1, 5], "pi": [1, 1]},
        "output": {"frontier_csv": "frontier.csv"},
    }
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    report = fiv.run_analysis(str(path), str(tmp_path / "out"))
    assert report["fas"]["lower"] == 1.0
    lines = (tmp_path / "out" / "frontier.csv").read_text().splitlines()
    assert lines[0] == "delta_1,delta_2,b"
    assert lines[1] == "0,4,1"
    assert len(lines) == 102
