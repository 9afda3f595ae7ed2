import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amdm.aggregate import (AggregationConfig, OvershootError, ScheduleMismatchError,
                            aggregate_batch, amdm_sample, angle, deviation_optimize, lerp,
                            lerp_many, linear_amdm_sample, phi_w, slerp, slerp_many,
                            theory_stats)
from amdm.metrics import joint_membership_rate
from amdm.sampler import sample, sample_batch
from amdm.schedule import build_linear_schedule
from amdm.scoremodel import Condition, MixtureModel

SCH = build_linear_schedule(n_substeps=50)


def _equal_norm_pair(rng, n, r=None):
    a = rng.standard_normal(n)
    b = rng.standard_normal(n)
    r = np.linalg.norm(a) if r is None else r
    return a * r / np.linalg.norm(a), b * r / np.linalg.norm(b)


def test_angle_is_accurate_near_zero():
    a = np.array([1.0, 0.0])
    b = np.array([1.0, 1e-9])
    assert angle(a, b) == pytest.approx(1e-9, rel=1e-6)
    assert angle(a, -a) == pytest.approx(np.pi)
    with pytest.raises(ValueError):
        angle(a, np.zeros(2))


def test_slerp_examples():
    e1, e2 = np.eye(2)
    out = slerp(e1, e2, 0.5)
    np.testing.assert_allclose(out, np.sqrt(2) / 2 * (e1 + e2), atol=1e-15)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-15)
    a, b = np.array([3.0, 1.0]), np.array([1.0, -3.0])
    assert slerp(a, b, 0.0).tobytes() == a.tobytes()
    assert slerp(a, b, 1.0).tobytes() == b.tobytes()
    out = slerp(a, b, 0.0)
    out[0] = 99.0
    assert a[0] == 3.0


def test_slerp_errors_and_fallback():
    a = np.array([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        slerp(a, -a, 0.5)
    with pytest.raises(ValueError):
        slerp(a, a, 1.5)
    with pytest.raises(ValueError):
        slerp(a, a[:2], 0.5)
    b = a * (1 + 1e-12)
    np.testing.assert_allclose(slerp(a, b, 0.3), 0.7 * a + 0.3 * b, rtol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 300), st.floats(0.1, 0.9), st.floats(0.01, 100.0), st.integers(0, 2**31 - 1))
def test_slerp_preserves_norm(n, w, r, seed):
    a, b = _equal_norm_pair(np.random.default_rng(seed), n, r)
    assert abs(np.linalg.norm(slerp(a, b, w)) - r) <= 1e-9 * r


def test_slerp_batched_rows_match_single():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 8))
    B = rng.standard_normal((5, 8))
    out = slerp(A, B, 0.3)
    for i in range(5):
        np.testing.assert_allclose(out[i], slerp(A[i], B[i], 0.3), rtol=1e-14)


def test_slerp_many():
    rng = np.random.default_rng(1)
    a, b = _equal_norm_pair(rng, 16)
    np.testing.assert_array_equal(slerp_many([a, b], [0.4]), slerp(a, b, 0.4))
    c = rng.standard_normal(16)
    c *= np.linalg.norm(a) / np.linalg.norm(c)
    assert slerp_many([a, b, c], [0.0, 0.0]).tobytes() == a.tobytes()
    out = slerp_many([a, b, c], [0.5, 1 / 3])
    assert abs(np.linalg.norm(out) - np.linalg.norm(a)) <= 1e-9 * np.linalg.norm(a)
    with pytest.raises(ValueError):
        slerp_many([a, b, c], [0.5])


def test_lerp_shrinks_orthogonal_pair():
    rng = np.random.default_rng(2)
    a = rng.standard_normal(64)
    b = rng.standard_normal(64)
    b -= (b @ a) / (a @ a) * a
    b *= np.linalg.norm(a) / np.linalg.norm(b)
    r = np.linalg.norm(a)
    assert np.linalg.norm(lerp(a, b, 0.5)) == pytest.approx(r / np.sqrt(2), rel=1e-12)
    np.testing.assert_array_equal(lerp_many([a, b], [0.5]), lerp(a, b, 0.5))


def test_deviation_examples():
    np.testing.assert_array_equal(deviation_optimize([3.0, 0.0], [0.0, 0.0], 1.0), [2.0, 0.0])
    z = np.array([0.3, -2.0])
    np.testing.assert_array_equal(deviation_optimize(z, [5.0, 5.0], 0.0), z)
    with pytest.raises(OvershootError):
        deviation_optimize([0.5, 0.0], [0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        deviation_optimize(z, z, -0.1)


def test_deviation_signed_policy():
    out = deviation_optimize([0.5, 0.0], [0.0, 0.0], 1.0, overshoot="signed")
    np.testing.assert_allclose(out, [-0.5, 0.0])
    same = deviation_optimize(np.array([[1.0, 1.0], [2.0, 0.0]]), [1.0, 1.0], 0.5,
                              overshoot="signed")
    # first row sits on mu and has no direction; second moves 0.5 along (1, -1) / sqrt(2)
    h = 0.5 / np.sqrt(2)
    np.testing.assert_allclose(same, [[1.0, 1.0], [2.0 - h, h]], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 64), st.floats(0.0, 0.99), st.integers(0, 2**31 - 1))
def test_deviation_is_radial(n, frac, seed):
    rng = np.random.default_rng(seed)
    mu = rng.standard_normal(n)
    z = mu + rng.standard_normal(n) * rng.uniform(0.1, 5.0)
    dist = np.linalg.norm(z - mu)
    eta = frac * dist
    out = deviation_optimize(z, mu, eta)
    assert abs(np.linalg.norm(out - mu) - (dist - eta)) <= 1e-12
    if dist - eta > 1e-9:
        u_in = (z - mu) / dist
        u_out = (out - mu) / np.linalg.norm(out - mu)
        assert np.max(np.abs(u_in - u_out)) <= 1e-12


def test_phi_w_values():
    assert phi_w(np.pi / 2, 0.5) == pytest.approx(0.541196100146197, rel=1e-13)
    assert phi_w(1e-9, 0.3) == pytest.approx(0.7)
    assert phi_w(1e-4, 0.3) == pytest.approx(0.7, rel=1e-7)
    grid = np.linspace(1e-6, np.pi, 400)
    for w in np.linspace(0.0, 1.0, 21):
        vals = phi_w(grid, w)
        assert np.all(vals <= 1.0 + 1e-15)
    np.testing.assert_allclose(phi_w(grid, 0.0), 1.0)


def test_theory_stats():
    z1 = np.array([1.0, 0.0])
    z2 = np.array([0.0, 1.0])
    s = theory_stats(z1, z2, 0.0, 0.3)
    assert s.phi == pytest.approx(np.pi / 2)
    assert s.delta == pytest.approx(np.sqrt(2))
    assert s.d == pytest.approx(np.sqrt(2) + 0.3)
    s = theory_stats(z1, z2, 0.5, 0.0)
    assert s.d == pytest.approx(0.541196100146197 * np.sqrt(2))


def test_config_validation():
    with pytest.raises(ValueError):
        AggregationConfig(weights=(0.5,), etas=(0.3,))
    with pytest.raises(ValueError):
        AggregationConfig(weights=(1.5,))
    with pytest.raises(ValueError):
        AggregationConfig(overshoot="clip")
    with pytest.raises(ValueError):
        AggregationConfig(s=40, stage_offset=20).window(50)
    assert AggregationConfig(s=20, stage_offset=30).window(50) == range(30, 50)


def test_s_zero_matches_solo(scene):
    models, conds = scene
    agg = AggregationConfig(s=0)
    for eta in (0.0, 1.0):
        traj, stats = amdm_sample(models, conds, SCH, eta_sampler=eta, agg=agg, seed=3)
        solo = sample(models[0], SCH, conds[0], eta=eta, seed=3)
        assert stats == []
        assert traj.final.tobytes() == solo.final.tobytes()
        lin, _ = linear_amdm_sample(models, conds, SCH, eta_sampler=eta, agg=agg, seed=3)
        assert lin.final.tobytes() == traj.final.tobytes()


def test_zero_weight_zero_eta_reproduces_solo(scene):
    models, conds = scene
    agg = AggregationConfig(s=20, weights=(0.0,), etas=(0.0, 0.0))
    for eta in (0.0, 1.0):
        traj, _ = amdm_sample(models, conds, SCH, eta_sampler=eta, agg=agg, seed=4)
        solo = sample(models[0], SCH, conds[0], eta=eta, seed=4)
        for x, y in zip(traj.states, solo.states):
            assert x.t == y.t and x.z.tobytes() == y.z.tobytes()


def test_identical_models_angle_pattern(scene):
    models, conds = scene
    agg = AggregationConfig(s=20, weights=(0.5,), etas=(0.0, 0.0))
    _, stats = amdm_sample([models[0]] * 2, [conds[0]] * 2, SCH, eta_sampler=0.0, agg=agg, seed=0)
    assert stats[0].t == 1000
    assert abs(stats[0].phi - np.pi / 2) < 0.15
    assert max(s.phi for s in stats[2:]) < 0.2
    assert len(stats) == 21


def test_batch_chunk_invariance(scene):
    models, conds = scene
    agg = AggregationConfig(overshoot="signed")
    full = aggregate_batch(models, conds, SCH, None, 1.0, agg, range(6))
    a = aggregate_batch(models, conds, SCH, None, 1.0, agg, range(0, 2))
    b = aggregate_batch(models, conds, SCH, None, 1.0, agg, range(2, 6))
    assert full.finals.tobytes() == np.vstack([a.finals, b.finals]).tobytes()
    traj, _ = amdm_sample(models, conds, SCH, eta_sampler=1.0, agg=agg, seed=5)
    np.testing.assert_array_equal(full.finals[5], traj.final)


def test_raise_policy_surfaces_overshoot(scene):
    models, conds = scene
    with pytest.raises(OvershootError):
        aggregate_batch(models, conds, SCH, None, 0.0, AggregationConfig(overshoot="raise"), [0])


def test_compatibility_checks(scene):
    models, conds = scene
    other = build_linear_schedule(1e-4, 0.03, n_substeps=50)
    with pytest.raises(ScheduleMismatchError):
        aggregate_batch(models, conds, SCH, model_schedules=[SCH, other],
                        agg=AggregationConfig(overshoot="signed"))
    small = MixtureModel.single_gaussian(np.zeros(3))
    with pytest.raises(ValueError):
        aggregate_batch([models[0], small], [conds[0], Condition()], SCH)
    with pytest.raises(ValueError):
        aggregate_batch([models[0]], [conds[0]], SCH)
    with pytest.raises(KeyError):
        aggregate_batch(models, [conds[0], Condition("y1")], SCH)
    with pytest.raises(ValueError):
        aggregate_batch(models, conds, SCH, combine="cubic")


def test_intersection_gain_small(scene):
    models, conds = scene
    seeds = range(300)
    agg = AggregationConfig(overshoot="signed")
    finals = aggregate_batch(models, conds, SCH, None, 1.0, agg, seeds).finals
    solo = sample_batch(models[0], SCH, conds[0], None, 1.0, seeds)
    j_amdm = joint_membership_rate(finals, models, SCH, 0, conds)
    j_solo = joint_membership_rate(solo, models, SCH, 0, conds)
    assert j_amdm > j_solo


def test_linear_aggregation_leaves_the_shell(scene):
    models, conds = scene
    agg = AggregationConfig(s=10, overshoot="signed")
    lin = aggregate_batch(models, conds, SCH, None, 1.0, agg, range(20), combine="linear")
    sph = aggregate_batch(models, conds, SCH, None, 1.0, agg, range(20))
    assert lin.stats["shell_dev"][:, 1:].mean() > 2 * sph.stats["shell_dev"][:, 1:].mean()
