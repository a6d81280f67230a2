import json
import math

import numpy as np
import pytest

import evanflow as ef


def test_closed_form_gradient_flow():
    traj = ef.gradient_flow(ef.potential("example_one"), [0.0], T=4.0)
    assert traj.termination == "horizon_reached"
    expected = 1.0 - np.sqrt(1.0 + 2.0 * traj.times)
    assert np.max(np.abs(traj.states[:, 0] - expected)) < 1e-6
    assert traj.states.shape == traj.velocities.shape == (len(traj), 1)


def test_python_callable_field_matches_catalog():
    a = np.array([[1.0, 0.0], [0.0, 2.0]])
    psi = ef.Field(2, "py_quad", lambda x: 0.5 * x @ a @ x, lambda x: a @ x,
                   lambda x, h: a @ h, convex=True, bounded_below=True)
    pair = ef.PotentialPair(psi)
    ref = ef.potential("quadratic:1,0;0,2")
    x = np.array([0.3, -1.2])
    assert pair.v.value(x) == pytest.approx(ref.v.value(x), rel=1e-14)
    assert np.allclose(pair.v.gradient(x), ref.v.gradient(x), rtol=1e-12)
    u = ef.gradient_flow(pair, [1.0, 1.0], T=2.0)
    assert np.allclose(u.states[-1], [math.exp(-2.0), math.exp(-4.0)], atol=1e-7)


def test_evanescent_solvers_agree():
    pair = ef.potential("quadratic:1,0;0,2")
    summary, orbit = ef.minimize_action(pair.v, [1.0, 1.0])
    assert summary["converged"]
    t = orbit.times
    exact = np.stack([np.exp(-t), np.exp(-2 * t)], axis=1)
    assert np.max(np.abs(orbit.states - exact)) < 1e-3
    shot, _ = ef.shoot_evanescent(ef.potential("quadratic:1").v, [1.0])
    assert abs(shot["v0"][0] + 1.0) < 1e-4
    xv = ef.cross_validate(pair, [1.0, 1.0])
    assert xv["hypothesis_met"]
    assert xv["report"]["summary"]["failed"] == 0


def test_second_order_classification():
    pair = ef.potential("neg_square")
    v = ef.second_order_flow(pair.v, [1.0], [2.0])
    assert v.termination == "diverged"
    assert ef.evanescence_measures(v, pair.v)["classification"] == "none"


def test_reconstruction_with_python_f_uses_workers():
    pts = ef.grid_points("-1:1:5,-1:1:5")
    f = ef.Field(2, "py_f", lambda x: x[0] ** 2 + 4 * x[1] ** 2,
                 lambda x: np.array([2 * x[0], 8 * x[1]]))
    psi_hat, details = ef.reconstruct(f, pts, workers=4)
    exact = 0.5 * pts[:, 0] ** 2 + pts[:, 1] ** 2
    assert np.max(np.abs(psi_hat - exact)) < 1e-2
    assert details["summary"]["failed"] == 0


def test_negative_f_raises():
    with pytest.raises(ValueError):
        ef.reconstruct(ef.f_field("field:neg_square"), np.array([[1.0]]))


def test_determination_and_convexity():
    psi = ef.potential("quadratic:1,0;0,2").psi
    shifted = ef.potential("quadratic:1,0;0,2@5").psi
    samples = ef.probe_points(2, 50, 2.0, 12345)
    ok = ef.determination_check(psi, shifted, samples)
    assert ok["status"] == "pass"
    assert ok["c"] == pytest.approx(5.0, abs=1e-6)
    bad = ef.determination_check(psi, ef.potential("-quadratic:1,0;0,2").psi, samples)
    assert bad["status"] == "hypothesis_not_met"
    cubic = ef.convexity_criterion_check(ef.potential("cubic"), ef.probe_points(1, 50))
    assert cubic["implication"] == "consistent"


def test_cli_in_process(tmp_path):
    out = tmp_path / "run"
    code, stdout, _ = ef.run_cli(["determine", "--potential", "linear", "--potential2",
                                  "-linear", "--out", str(out)])
    assert code == 3
    report = json.loads((out / "determination.json").read_text())
    assert report["determination"]["status"] == "hypothesis_not_met"
    assert ef.run_cli(["flow", "--potential", "nope", "--x0", "0"])[0] == 1
