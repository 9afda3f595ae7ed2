import numpy as np
import pytest

from amdm.harness.csvio import read_rows
from amdm.sampler import LatentState, reverse_mean, reverse_step, sample, sample_batch
from amdm.schedule import NoiseSchedule, build_linear_schedule, ddim_sigma
from amdm.scoremodel import UNCONDITIONAL, Condition, MixtureModel, build_mixture, epsilon_pred, log_density

SCH = build_linear_schedule(n_substeps=50)


def _toy(alpha_bars):
    ab = np.asarray(alpha_bars, float)
    return NoiseSchedule(1.0 - ab / np.concatenate([[1.0], ab[:-1]]))


def test_reverse_mean_examples():
    sch = _toy([0.5, 0.25])
    z = np.array([0.7, -1.3])
    np.testing.assert_allclose(reverse_mean(sch, np.zeros(2), z, 2, 1, 0.0), np.sqrt(2.0) * z)
    out = reverse_mean(sch, [0.0, 1.0], [1.0, 0.0], 2, 1, 0.0)
    np.testing.assert_allclose(out, [np.sqrt(2.0), np.sqrt(0.5) - np.sqrt(1.5)], atol=1e-15)
    with pytest.raises(ValueError):
        reverse_mean(sch, [0.0, 1.0], [1.0, 0.0], 2, 1, 0.8)


@pytest.mark.parametrize("t,t_prev", [(1000, 980), (437, 417), (21, 1)])
def test_ddpm_coefficient_identity(t, t_prev):
    """With the DDPM variance the mean equals the standard posterior mean."""
    m = MixtureModel.single_gaussian([0.4, -1.0], 0.6)
    rng = np.random.default_rng(t)
    z = rng.standard_normal(2)
    ab, abp = SCH.alpha_bar(t), SCH.alpha_bar(t_prev)
    eps = epsilon_pred(m, SCH, z, t)
    x0 = (z - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
    beta = 1 - ab / abp
    posterior = (np.sqrt(abp) * beta / (1 - ab)) * x0 + np.sqrt(ab / abp) * (1 - abp) / (1 - ab) * z
    got = reverse_mean(SCH, eps, z, t, t_prev, ddim_sigma(SCH, t, t_prev, 1.0))
    np.testing.assert_allclose(got, posterior, rtol=1e-12, atol=1e-14)


def test_reverse_step_determinism_and_seeding():
    m = build_mixture([[1.0, 0.0], [-1.0, 0.5]], 0.3)
    z = LatentState(np.array([0.2, -0.1]), 1000)
    a = reverse_step(SCH, m, z, 980, eta=0.0)
    b = reverse_step(SCH, m, z, 980, eta=0.0)
    assert a.z.tobytes() == b.z.tobytes() and a.t == 980
    c = reverse_step(SCH, m, z, 980, eta=1.0, rng=np.random.default_rng(3))
    d = reverse_step(SCH, m, z, 980, eta=1.0, rng=np.random.default_rng(3))
    assert c.z.tobytes() == d.z.tobytes()
    with pytest.raises(ValueError):
        reverse_step(SCH, m, z, 980, eta=1.0)
    with pytest.raises(ValueError):
        reverse_step(SCH, m, z, 1000)


def test_single_step_chain():
    sch = build_linear_schedule(0.5, 0.5, 1)
    m = MixtureModel.single_gaussian([1.0, 2.0], 0.5)
    traj = sample(m, sch, seed=11)
    prior = np.random.default_rng(11).standard_normal(2)
    np.testing.assert_array_equal(traj.states[0].z, prior)
    expected = reverse_mean(sch, epsilon_pred(m, sch, prior, 1), prior, 1, 0, 0.0)
    np.testing.assert_array_equal(traj.final, expected)
    assert traj.timesteps == [1, 0]


@pytest.mark.parametrize("eta", [0.0, 1.0])
def test_sample_bitwise_reproducible(eta):
    m = build_mixture([[1.0, 0.0], [-1.0, 0.5]], 0.3)
    a = sample(m, SCH, eta=eta, seed=5)
    b = sample(m, SCH, eta=eta, seed=5)
    assert all(x.z.tobytes() == y.z.tobytes() for x, y in zip(a.states, b.states))
    assert len(a.states) == 51 and a.timesteps[0] == 1000 and a.timesteps[-1] == 0


def test_batch_rows_independent_of_chunking():
    m = build_mixture([[1.0, 0.0], [-1.0, 0.5]], 0.3)
    full = sample_batch(m, SCH, eta=1.0, seeds=range(10))
    parts = np.vstack([sample_batch(m, SCH, eta=1.0, seeds=range(0, 4)),
                       sample_batch(m, SCH, eta=1.0, seeds=range(4, 10))])
    assert full.tobytes() == parts.tobytes()
    np.testing.assert_array_equal(full[7], sample(m, SCH, eta=1.0, seed=7).final)


def test_conditional_sampling_hits_selected_components():
    m = build_mixture([[2.0, 0.0], [-2.0, 0.0]], 0.25, conditions={"right": [0], "left": [1]})
    finals = sample_batch(m, SCH, Condition("right"), eta=1.0, seeds=range(1000))
    sel = log_density(m, SCH, finals, 0, "right")
    rest = log_density(m, SCH, finals, 0, "left")
    assert np.mean(sel > rest) >= 0.99


@pytest.mark.parametrize("eta", [0.0, 1.0])
def test_marginal_preservation_from_noised_data(eta):
    m = MixtureModel.single_gaussian([1.0, -0.5], 0.5)
    sch = build_linear_schedule()
    full = tuple(range(1, 1001))
    rng = np.random.default_rng(0)
    n = 20_000
    t0 = 200
    x0 = m.draw(n, rng)
    ab = sch.alpha_bar(t0)
    zt = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * rng.standard_normal(x0.shape)
    out = sample_batch(m, sch, UNCONDITIONAL, full, eta, range(n), z_init=zt, t_start=t0)
    se = np.sqrt(0.5 / n)
    assert np.all(np.abs(out.mean(0) - [1.0, -0.5]) < 4 * se)
    np.testing.assert_allclose(out.var(0, ddof=1), 0.5, rtol=0.04)


def test_t_start_validation():
    m = MixtureModel.single_gaussian([0.0])
    with pytest.raises(ValueError):
        sample_batch(m, SCH, t_start=500)
    with pytest.raises(ValueError):
        sample_batch(m, SCH, z_init=np.zeros(1), t_start=500)


def test_trajectory_csv(tmp_path):
    m = MixtureModel.single_gaussian([1.0, 2.0], 0.5)
    traj = sample(m, SCH, seed=1)
    traj.to_csv(tmp_path / "traj.csv")
    header, rows = read_rows(tmp_path / "traj.csv")
    assert header == ["t", "z0", "z1"]
    assert len(rows) == 51 and rows[0][0] == "1000" and rows[-1][0] == "0"
    assert float(rows[-1][1]) == pytest.approx(traj.final[0], rel=1e-8)
