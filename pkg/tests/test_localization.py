import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from radar_enhance.core import Pose2D, VehicleState, compose, invert, transform_points, inverse_transform_points
from radar_enhance.localization import (
    EkfConfig,
    EkfState,
    LocalizationInput,
    LocalizationStats,
    ReferenceMap,
    chi2_gate,
    chi2_quantile,
    ekf_correct,
    ekf_predict,
    ekf_update,
    icp_align,
    localize_trajectory,
)


def chi2_cdf_dof3(x):
    # closed form for three degrees of freedom
    return erf(math.sqrt(x / 2)) - math.sqrt(2 * x / math.pi) * math.exp(-x / 2)


def room_map(spacing=0.3):
    """Rectangular room with an off-centre box so ICP is well constrained."""
    def seg(a, b):
        n = max(int(np.ceil(np.linalg.norm(np.subtract(b, a)) / spacing)), 1)
        t = np.arange(n) / n
        return np.outer(1 - t, a) + np.outer(t, b)
    corners = [(-5, -3), (6, -3), (6, 4), (-5, 4)]
    box = [(1, 0.5), (2.2, 0.5), (2.2, 1.3), (1, 1.3)]
    parts = [seg(c, corners[(k + 1) % 4]) for k, c in enumerate(corners)]
    parts += [seg(c, box[(k + 1) % 4]) for k, c in enumerate(box)]
    return np.vstack(parts)


def moving(v=0.0, w=0.0):
    return VehicleState(Pose2D.identity(), (v, 0.0), w)


def test_predict_examples():
    s = EkfState([1.0, 2.0, 0.3], np.eye(3) * 0.1)
    Q = np.diag([0.01, 0.02, 0.03])
    out = ekf_predict(s, moving(), 0.05, Q)
    np.testing.assert_allclose(out.mean, s.mean)
    np.testing.assert_allclose(out.cov, s.cov + Q, atol=1e-15)
    out = ekf_predict(EkfState([0, 0, 0], np.eye(3)), moving(1.0), 1.0, np.zeros(3))
    np.testing.assert_allclose(out.mean, [1, 0, 0], atol=1e-12)
    out = ekf_predict(EkfState([0, 0, 0], np.eye(3)), moving(0.0, math.pi / 2), 1.0, np.zeros(3))
    np.testing.assert_allclose(out.mean, [0, 0, math.pi / 2], atol=1e-12)
    with pytest.raises(ValueError):
        ekf_predict(s, moving(), 0.0, Q)


def test_quantile_matches_closed_form():
    q = chi2_quantile(3, 0.95)
    assert abs(q - 7.8147) <= 1e-3
    assert chi2_cdf_dof3(q) == pytest.approx(0.95, abs=1e-10)
    with pytest.raises(ValueError):
        chi2_quantile(3, 1.0)


def test_gate_examples():
    S = np.eye(3)
    assert chi2_gate(np.zeros(3), S)
    assert chi2_gate([math.sqrt(7.80), 0, 0], S)
    assert not chi2_gate([math.sqrt(7.82), 0, 0], S)
    assert not chi2_gate([0, 10.0, 0], S)
    assert not chi2_gate([0.1, 0, 0], np.zeros((3, 3)))


@settings(max_examples=500)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.951, 0.999))
def test_gate_monotone_in_p_valid(y, p):
    S = np.diag([0.5, 1.0, 2.0])
    if chi2_gate(y, S, 0.95):
        assert chi2_gate(y, S, p)


def test_update_examples():
    s = EkfState([0, 0, 0], np.eye(3))
    res = ekf_correct(s, Pose2D(1, 0, 0), np.eye(3))
    assert res.accepted and res.state.mean[0] == pytest.approx(0.5)
    assert res.state.cov[0, 0] == pytest.approx(0.5)
    same = ekf_update(s, Pose2D(0, 0, 0), np.eye(3))
    np.testing.assert_allclose(same.mean, 0.0)
    assert np.all(np.diag(same.cov) < 1)
    tight = EkfState([0, 0, 0], np.eye(3) * 0.01)
    res = ekf_correct(tight, Pose2D(2, 0, 0), np.eye(3) * 0.01)
    assert not res.accepted
    assert np.array_equal(res.state.mean, tight.mean) and np.array_equal(res.state.cov, tight.cov)


def test_update_wraps_heading():
    s = EkfState([0, 0, math.pi - 0.05], np.eye(3) * 0.1)
    out = ekf_update(s, Pose2D(0, 0, -math.pi + 0.05), np.eye(3) * 0.1)
    assert abs(abs(out.mean[2]) - math.pi) < 1e-9


def test_update_with_infinite_noise_keeps_mean():
    s = EkfState([0.3, -0.2, 1.0], np.diag([0.2, 0.3, 0.1]))
    out = ekf_update(s, Pose2D(0.5, 0.1, 1.1), np.full(3, np.inf))
    np.testing.assert_allclose(out.mean, s.mean, atol=1e-9)
    assert np.all(np.isfinite(out.cov))


@settings(max_examples=300)
@given(st.lists(st.tuples(st.floats(-2, 2), st.floats(-1, 1), st.floats(0.01, 0.2),
                          st.floats(-1, 1), st.floats(-1, 1), st.floats(-0.5, 0.5), st.floats(1e-4, 1.0)),
                min_size=1, max_size=20))
def test_covariance_stays_symmetric_positive_definite(steps):
    s = EkfState([0, 0, 0], np.diag([0.01, 0.01, 0.001]))
    Q = EkfConfig().process_noise(0.05)
    for v, w, dt, zx, zy, zpsi, r in steps:
        s = ekf_predict(s, moving(v, w), dt, Q)
        s = ekf_update(s, Pose2D(s.mean[0] + zx, s.mean[1] + zy, s.mean[2] + zpsi), np.full(3, r), 0.999)
        assert np.max(np.abs(s.cov - s.cov.T)) <= 1e-12
        assert np.all(np.linalg.eigvalsh(s.cov) > 0)


# ---------------------------------------------------------------- ICP

def test_icp_identity_at_truth():
    m = ReferenceMap(room_map())
    truth = Pose2D(0.5, -0.4, 0.3)
    src = inverse_transform_points(m.points, truth)
    res = icp_align(src, m, truth)
    assert res.fitness == 1.0 and res.converged
    assert abs(res.pose.x - truth.x) < 1e-9 and abs(res.pose.psi - truth.psi) < 1e-9


def test_icp_recovers_translation():
    pts = room_map()
    target = ReferenceMap(pts + [0.1, 0.0])
    res = icp_align(pts, target, Pose2D.identity())
    assert abs(res.pose.x - 0.1) <= 1e-6 and abs(res.pose.y) <= 1e-6 and abs(res.pose.psi) <= 1e-6


def test_icp_recovers_small_rotation_and_offset():
    m = ReferenceMap(room_map(0.1))
    truth = Pose2D(0.3, -0.2, 0.2)
    src = inverse_transform_points(m.points, truth)
    res = icp_align(src, m, Pose2D(0.1, 0.0, 0.1))
    # point-to-point matches slide along walls, so convergence is approximate
    assert abs(res.pose.x - truth.x) < 0.02 and abs(res.pose.y - truth.y) < 0.02
    assert abs(res.pose.psi - truth.psi) < 0.02
    assert math.hypot(res.pose.x - truth.x, res.pose.y - truth.y) < math.hypot(0.2, 0.2)


def test_icp_unavailable_and_empty():
    m = ReferenceMap(room_map())
    assert icp_align(np.array([[100.0, 100.0], [101.0, 100.0]]), m, Pose2D.identity()) is None
    with pytest.raises(ValueError):
        icp_align(np.zeros((0, 2)), m, Pose2D.identity())
    with pytest.raises(ValueError):
        ReferenceMap(np.zeros((0, 2)))


@settings(max_examples=100)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi))
def test_icp_invariant_to_source_frame(gx, gy, gpsi):
    m = ReferenceMap(room_map())
    truth = Pose2D(0.2, 0.1, 0.05)
    src = inverse_transform_points(m.points[::2], truth) + 0.01 * np.sin(np.arange(len(m.points[::2])))[:, None]
    init = Pose2D(0.1, 0.0, 0.0)
    base = icp_align(src, m, init)
    G = Pose2D(gx, gy, gpsi)
    moved = icp_align(transform_points(src, G), m, compose(init, invert(G)))
    back = compose(moved.pose, G)
    assert abs(back.x - base.pose.x) < 1e-6 and abs(back.y - base.pose.y) < 1e-6
    assert abs(back.psi - base.pose.psi) < 1e-6


# ---------------------------------------------------------------- trajectory

def scripted_run():
    """Straight legs and in-place turns, for which the unicycle step is exact."""
    controls = [(0.5, 0.0)] * 30 + [(0.0, 0.8)] * 20 + [(0.4, 0.0)] * 30 + [(0.0, -0.5)] * 10
    dt = 0.05
    pose = Pose2D(-2.0, -1.0, 0.1)
    poses, inputs = [pose], [moving()]
    for v, w in controls:
        pose = Pose2D(pose.x + v * dt * math.cos(pose.psi), pose.y + v * dt * math.sin(pose.psi), pose.psi + w * dt)
        poses.append(pose)
        inputs.append(moving(v, w))
    return poses, inputs, dt


def test_localize_noiseless_matches_truth():
    m = ReferenceMap(room_map(0.1))
    poses, inputs, dt = scripted_run()
    frames = [LocalizationInput(k * dt, u, inverse_transform_points(m.points, p))
              for k, (p, u) in enumerate(zip(poses, inputs))]
    init = EkfState(poses[0].as_array(), np.diag([0.01, 0.01, 0.001]))
    stats = LocalizationStats()
    est = localize_trajectory(frames, m, init, stats=stats)
    assert stats.updates == len(frames)
    for (_, e), p in zip(est, poses):
        assert abs(e.x - p.x) < 1e-6 and abs(e.y - p.y) < 1e-6 and abs(e.psi - p.psi) < 1e-6


def test_localize_dropout_is_dead_reckoning():
    m = ReferenceMap(room_map())
    poses, inputs, dt = scripted_run()
    frames = [LocalizationInput(k * dt, u, None) for k, u in enumerate(inputs)]
    init = EkfState(poses[0].as_array(), np.eye(3) * 0.01)
    stats = LocalizationStats()
    est = localize_trajectory(frames, m, init, stats=stats)
    assert stats.updates == 0 and stats.unavailable == len(frames)
    for (_, e), p in zip(est, poses):
        assert abs(e.x - p.x) < 1e-9 and abs(e.y - p.y) < 1e-9
