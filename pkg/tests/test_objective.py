import math
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import small_problem
from mflsi.errors import InvalidArgument
from mflsi.model import ActivationSpec, Dataset, LossSpec, Particle, ParticleEnsemble, RegularizerSpec, Specs
from mflsi.objective import (default_window, empirical_risk, entropy_knn, fit_decay_rate, free_energy,
                             regularizer_mean, trailing_q_star, unit_ball_log_volume)


@pytest.mark.parametrize("dim, expected", [(1, math.log(2)), (2, math.log(math.pi)), (3, math.log(4 * math.pi / 3))])
def test_unit_ball_volume(dim, expected):
    assert unit_ball_log_volume(dim) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_entropy_gaussian(dim):
    X = np.random.default_rng(dim).standard_normal((10_000, dim))
    assert abs(entropy_knn(X) - 0.5 * dim * math.log(2 * math.pi * math.e)) < 0.05


@pytest.mark.parametrize("dim", [1, 2])
def test_entropy_uniform_cube(dim):
    X = np.random.default_rng(1).uniform(size=(10_000, dim))
    assert abs(entropy_knn(X)) < 0.05


def test_entropy_cube_boundary_bias_in_dim3():
    # points near the faces see inflated neighbour distances, so the estimate sits above 0
    vals = [entropy_knn(np.random.default_rng(s).uniform(size=(10_000, 3))) for s in range(5)]
    assert 0.03 < np.mean(vals) < 0.09


def test_entropy_scaling_and_translation():
    X = np.random.default_rng(2).standard_normal((500, 3))
    H = entropy_knn(X)
    assert entropy_knn(X + 7.0) == pytest.approx(H, abs=1e-10)
    assert entropy_knn(2.0 * X) == pytest.approx(H + 3 * math.log(2.0), abs=1e-10)


def test_entropy_duplicates_are_jittered():
    X = np.random.default_rng(3).standard_normal((50, 2))
    X[1] = X[0]
    X[2] = X[0]
    X[3] = X[0]
    assert np.isfinite(entropy_knn(X))


def test_entropy_needs_more_points_than_k():
    with pytest.raises(InvalidArgument):
        entropy_knn(np.zeros((3, 2)), k=3)
    with pytest.raises(InvalidArgument):
        entropy_knn(np.zeros((5, 2)), k=0)


def test_risk_example():
    # single neuron, zero weights: prediction is u * sigma(0) = log(2)/kappa for uncentered smoothed ReLU
    act = ActivationSpec()
    ens = ParticleEnsemble.from_particles([Particle(2.0, np.zeros(2))])
    data = Dataset([[1.0, 0.0], [0.0, 1.0]], [0.0, 1.0])
    yhat = 2.0 * act.sigma(np.array(0.0))
    expected = 0.5 * (0.5 * yhat**2 + 0.5 * (yhat - 1.0) ** 2)
    assert empirical_risk(ens, data, act, LossSpec("square")) == pytest.approx(expected, rel=1e-14)


def test_regularizer_mean_example():
    ens = ParticleEnsemble.from_uw(np.array([1.0, 0.0]), np.array([[0.0], [2.0]]))
    assert regularizer_mean(ens, RegularizerSpec.quartic(1.0)) == pytest.approx((1 + 16) / 2)
    assert regularizer_mean(ens, RegularizerSpec.power(1.0, 2.0)) == pytest.approx((0.5 + 2.0) / 2)


def test_q_decomposition():
    ens, data, specs = small_problem(N=40)
    r = free_energy(ens, data, specs, 0.3)
    assert r.Q == pytest.approx(r.risk + r.reg_mean - 0.3 * r.entropy, rel=1e-14)
    assert r.regularized_loss == r.risk + r.reg_mean
    assert r.k_nn == 3


def test_q_without_entropy():
    ens, data, specs = small_problem(N=2)
    r = free_energy(ens, data, specs, 0.0)
    assert math.isnan(r.entropy) and r.Q == r.regularized_loss
    with pytest.raises(InvalidArgument):
        free_energy(ens, data, specs, 1.0)


def test_empty_dataset_rejected():
    ens, _, specs = small_problem()
    with pytest.raises(InvalidArgument):
        empirical_risk(ens, Dataset(np.zeros((0, 2)), np.zeros(0)), specs.act, specs.loss)


def _traj(times, Q):
    return SimpleNamespace(times=list(times), Q=list(Q))


@pytest.mark.parametrize("rate", [0.1, 2.0, 17.0])
def test_fit_recovers_exact_exponential(rate):
    t = np.linspace(0, 3.0 / rate, 200)
    fit = fit_decay_rate(_traj(t, 1.5 + 4.0 * np.exp(-rate * t)), 1.5)
    assert fit.rate == pytest.approx(rate, rel=1e-10)
    assert fit.intercept == pytest.approx(math.log(4.0), abs=1e-10)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


def test_default_window():
    assert default_window([2.0, 3.0, 12.0]) == pytest.approx((3.0, 8.0))


def test_fit_window_errors():
    t = np.linspace(0, 1, 11)
    traj = _traj(t, 1.0 + np.exp(-t))
    with pytest.raises(InvalidArgument):
        fit_decay_rate(traj, 1.0, (0.5, 0.5))
    with pytest.raises(InvalidArgument):
        fit_decay_rate(traj, 1.0, (0.51, 0.55))
    with pytest.raises(InvalidArgument):
        fit_decay_rate(traj, 1.0, (-1.0, 0.5))
    with pytest.raises(InvalidArgument):
        fit_decay_rate(traj, 1.9, (0.0, 1.0))


def test_fit_to_dict():
    t = np.linspace(0, 1, 11)
    d = fit_decay_rate(_traj(t, 1.0 + np.exp(-t)), 1.0, (0.0, 1.0)).to_dict()
    assert d["window"] == [0.0, 1.0] and set(d) == {"rate", "intercept", "r_squared", "window", "Q_star"}


def test_trailing_q_star():
    Q = np.arange(100.0)
    assert trailing_q_star(Q) == pytest.approx(np.mean(Q[-5:]))
    assert trailing_q_star([3.0]) == 3.0


def test_free_energy_uses_given_specs():
    ens, data, _ = small_problem(N=10)
    a = free_energy(ens, data, Specs(ActivationSpec(), LossSpec(), RegularizerSpec.quartic(1.0)), 1.0)
    b = free_energy(ens, data, Specs(ActivationSpec(), LossSpec(), RegularizerSpec.quartic(2.0)), 1.0)
    assert b.reg_mean == pytest.approx(2 * a.reg_mean) and b.risk == a.risk
