import math

import numpy as np
import pytest

from conftest import small_problem
from mflsi.dynamics import SimConfig, TrajectoryLog, drift, em_step, init_ensemble, simulate
from mflsi.errors import InvalidArgument, NumericFault
from mflsi.model import (ActivationSpec, Dataset, LossSpec, Particle, ParticleEnsemble, RegularizerSpec, Specs,
                         potential_grad)
from mflsi.rng import CounterNoise

ZERO_SPECS = Specs(ActivationSpec(), LossSpec("clipped-square", L1=0.0), RegularizerSpec.power(0.0, 2.0))


def test_init_is_deterministic():
    a, b = init_ensemble(3, 2, seed=7), init_ensemble(3, 2, seed=7)
    assert a.theta.tobytes() == b.theta.tobytes()
    assert not np.array_equal(a.theta, init_ensemble(3, 2, seed=8).theta)


def test_init_moments():
    ens = init_ensemble(10_000, 2, seed=1)
    assert np.all(np.abs(ens.theta.mean(axis=0)) < 4 / math.sqrt(10_000))
    assert np.all(np.abs(ens.theta.std(axis=0) - 1) < 0.05)


def test_init_single_particle_and_errors():
    ens = init_ensemble(1, 2, seed=0)
    assert ens.theta.shape == (1, 3) and np.all(np.isfinite(ens.theta))
    with pytest.raises(InvalidArgument):
        init_ensemble(0, 2, seed=0)


def test_em_step_quartic_gradient_descent():
    beta, dt = 0.7, 1e-3
    ens = ParticleEnsemble.from_particles([Particle(1.0, np.array([0.0]))])
    data = Dataset([[0.5]], [0.0])
    specs = Specs(ActivationSpec(), LossSpec("clipped-square", L1=0.0), RegularizerSpec.quartic(beta))
    new = em_step(ens, data, specs, 0.0, dt, CounterNoise(0))
    assert new.u[0] == pytest.approx(1.0 - 4 * beta * dt, rel=1e-14)
    assert new.w[0, 0] == 0.0


def test_em_step_zero_dt_and_zero_drift():
    ens, data, specs = small_problem()
    same = em_step(ens, data, specs, 1.0, 0.0, CounterNoise(0))
    assert np.array_equal(same.theta, ens.theta)
    still = em_step(ens, data, ZERO_SPECS, 0.0, 0.1, CounterNoise(0))
    assert np.array_equal(still.theta, ens.theta)


def test_em_step_rejects_negative_dt():
    ens, data, specs = small_problem()
    with pytest.raises(InvalidArgument):
        em_step(ens, data, specs, 1.0, -1e-3, CounterNoise(0))


def test_em_step_reports_offending_particle():
    ens, data, _ = small_problem(N=4)
    theta = ens.theta.copy()
    theta[2] = 1e120
    specs = Specs(ActivationSpec(), LossSpec(), RegularizerSpec.quartic(1.0))
    with pytest.raises(NumericFault) as info:
        em_step(ParticleEnsemble(theta, ens.ids), data, specs, 0.0, 1.0, CounterNoise(0), step=5)
    assert info.value.index == 2 and info.value.step == 5


def test_synchronous_update_is_permutation_equivariant():
    ens, data, specs = small_problem(N=9, seed=3)
    noise = CounterNoise(42)
    perm = np.random.default_rng(0).permutation(ens.N)
    a = em_step(ens, data, specs, 0.5, 1e-2, noise, step=3)
    b = em_step(ens.permuted(perm), data, specs, 0.5, 1e-2, noise, step=3)
    np.testing.assert_allclose(b.theta, a.theta[perm], rtol=0, atol=1e-14)
    assert np.array_equal(b.ids, a.ids[perm])


def test_single_particle_without_noise_is_plain_gradient_descent():
    # scalar GD oracle on U(., delta_theta) written out independently, d = 1
    kappa, beta, dt = 4.0, 0.5, 1e-2
    x, y = 0.8, 0.6
    sp = lambda z: math.log1p(math.exp(kappa * z)) / kappa
    ds = lambda z: 1.0 / (1.0 + math.exp(-kappa * z))
    u, w = 0.9, -0.3
    ens = ParticleEnsemble.from_particles([Particle(u, np.array([w]))])
    data = Dataset([[x]], [y])
    specs = Specs(ActivationSpec(kappa=kappa), LossSpec("square"), RegularizerSpec.power(beta, 2.0))
    for k in range(50):
        r = u * sp(w * x) - y
        gu = r * sp(w * x) + beta * u
        gw = r * u * ds(w * x) * x + beta * w
        u, w = u - dt * gu, w - dt * gw
        ens = em_step(ens, data, specs, 0.0, dt, CounterNoise(0), step=k)
    assert ens.u[0] == pytest.approx(u, rel=1e-12)
    assert ens.w[0, 0] == pytest.approx(w, rel=1e-12)


def test_pure_diffusion_variance():
    lam, dt, steps, N = 0.5, 1e-2, 100, 20_000
    ens = ParticleEnsemble.from_uw(np.zeros(N), np.zeros((N, 1)))
    data = Dataset([[0.5]], [0.0])
    noise = CounterNoise(9)
    for k in range(steps):
        ens = em_step(ens, data, ZERO_SPECS, lam, dt, noise, step=k)
    target = 2 * lam * steps * dt
    # sample variance has sd target * sqrt(2 / N)
    band = 5 * target * math.sqrt(2.0 / N)
    assert np.all(np.abs(ens.theta.var(axis=0) - target) < band)


def test_drift_matches_per_particle_gradient():
    ens, data, specs = small_problem(N=5)
    D = drift(ens, data, specs)
    for i, p in enumerate(ens.particles):
        np.testing.assert_allclose(D[i], potential_grad(p, ens, data, specs), rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------- simulate

def test_zero_steps_gives_initial_record_only():
    ens, data, specs = small_problem(N=10)
    log = simulate(SimConfig(N=10, d=2, steps=0), specs, data)
    assert len(log) == 1 and log.times == [0.0]


def test_records_every_and_final():
    _, data, specs = small_problem(N=10)
    log = simulate(SimConfig(N=10, d=2, steps=25, record_every=10, dt=1e-3), specs, data)
    np.testing.assert_allclose(log.times, [0.0, 0.01, 0.02, 0.025], rtol=1e-12)
    assert np.all(np.diff(log.times) > 0)
    assert len({len(log.Q), len(log.risk), len(log.reg_mean), len(log.entropy), len(log.grad_norm_mean)}) == 1


def test_noiseless_convex_run_decreases_q():
    _, data, _ = small_problem(N=10)
    specs = Specs(ActivationSpec(), LossSpec("clipped-square", L1=0.0), RegularizerSpec.power(1.0, 2.0))
    log = simulate(SimConfig(N=10, d=2, lam=0.0, dt=0.05, steps=200, record_every=5), specs, data)
    assert np.all(np.diff(log.Q) < 0)
    # lam = 0: Q is exactly the regularized loss
    np.testing.assert_array_equal(log.Q, log.regularized_loss)


def test_learning_rate_decay_schedule():
    cfg = SimConfig(dt=1e-2, lr_decay_every=10, lr_decay_factor=0.5)
    assert [cfg.step_size(k) for k in (0, 9, 10, 25)] == [1e-2, 1e-2, 5e-3, 2.5e-3]
    _, data, specs = small_problem(N=10)
    log = simulate(SimConfig(N=10, d=2, dt=1e-2, steps=30, record_every=30, lr_decay_every=10,
                             lr_decay_factor=0.5), specs, data)
    assert log.times[-1] == pytest.approx(10 * (1e-2 + 5e-3 + 2.5e-3))


def test_too_few_particles_for_entropy():
    _, data, specs = small_problem()
    log = simulate(SimConfig(N=2, d=2, steps=3, record_every=1), specs, data)
    assert all(math.isnan(q) for q in log.Q) and all(math.isnan(h) for h in log.entropy)


def test_simulate_propagates_step_index():
    _, data, _ = small_problem()
    specs = Specs(ActivationSpec(), LossSpec(), RegularizerSpec.quartic(1.0))
    with pytest.raises(NumericFault) as info:
        simulate(SimConfig(N=5, d=2, dt=50.0, steps=20, lam=0.0), specs, data)
    assert info.value.step is not None


def test_config_validation():
    for bad in (dict(N=0), dict(lam=-1.0), dict(dt=-1.0), dict(record_every=0), dict(lr_decay_factor=1.5)):
        with pytest.raises(InvalidArgument):
            SimConfig(**bad).validate()


def test_callable_data_source_and_eval_data():
    _, data, specs = small_problem(n=6)
    seen = []

    def source(step):
        seen.append(step)
        return data

    log = simulate(SimConfig(N=10, d=2, steps=4, record_every=2), specs, source, eval_data=data)
    assert set(range(4)) <= set(seen)
    assert len(log) == 3


def test_reference_teacher_run_is_finite():
    from mflsi.experiment import TeacherSpec, TeacherStream
    teacher = TeacherSpec.reference()
    specs = Specs(teacher.activation, LossSpec("square"), RegularizerSpec.power(1.0, 3.0))
    cfg = SimConfig(N=20, d=2, lam=1.0, dt=1e-4, steps=200, lr_decay_every=100, batch=200, record_every=20)
    log = simulate(cfg, specs, TeacherStream(teacher, 200, 200, seed=0))
    assert np.all(np.isfinite(log.Q))


def test_csv_round_trip_and_determinism(tmp_path):
    _, data, specs = small_problem()
    cfg = SimConfig(N=12, d=2, steps=30, record_every=10, seed=4, keep_snapshots=True)
    a, b = simulate(cfg, specs, data), simulate(cfg, specs, data)
    assert a.to_csv() == b.to_csv()
    path = tmp_path / "traj.csv"
    a.to_csv(path)
    back = TrajectoryLog.from_csv(path)
    assert back.Q == a.Q and back.times == a.times
    assert path.read_text().splitlines()[0] == "t,Q,risk,reg_mean,entropy,grad_norm_mean"
    snaps = a.snapshots_json()
    import json
    obj = json.loads(snaps)
    assert len(obj["snapshots"]) == len(a) and len(obj["snapshots"][0][0]) == 3


def test_counter_noise_is_keyed():
    noise = CounterNoise(5)
    ids = np.arange(10, dtype=np.uint64)
    z = noise.normal(ids, 3, 2)
    np.testing.assert_array_equal(noise.normal(ids[::-1], 3, 2), z[::-1])
    assert not np.array_equal(noise.normal(ids, 4, 2), z)
    assert not np.array_equal(CounterNoise(6).normal(ids, 3, 2), z)
    big = noise.normal(np.arange(200_000, dtype=np.uint64), 0, 3)
    assert np.all(np.abs(big.mean(axis=0)) < 0.02) and np.all(np.abs(big.std(axis=0) - 1) < 0.01)
