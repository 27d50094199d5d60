import numpy as np
import pytest

from mflsi.model import ActivationSpec, Dataset, LossSpec, ParticleEnsemble, RegularizerSpec, Specs


def unit_inputs(rng, n, d, x_max=1.0):
    X = rng.standard_normal((n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X * x_max * rng.uniform(0.2, 1.0, (n, 1))


def small_problem(d=2, N=8, n=5, seed=0, act=None, loss=None, reg=None):
    rng = np.random.default_rng(seed)
    ens = ParticleEnsemble.from_uw(rng.standard_normal(N), rng.standard_normal((N, d)))
    data = Dataset(unit_inputs(rng, n, d), rng.standard_normal(n))
    specs = Specs(act or ActivationSpec(), loss or LossSpec("clipped-square", L1=10.0),
                  reg or RegularizerSpec.quartic(1.0))
    return ens, data, specs


def one_d_teacher_data(n=16):
    """Deterministic d = 1 data from a two-neuron smoothed-ReLU teacher."""
    x = np.linspace(-1.0, 1.0, n)[:, None]
    act = ActivationSpec()
    y = 0.5 * (1.1 * act.sigma(x[:, 0]) - 3.2 * act.sigma(-x[:, 0]))
    return Dataset(x, y)


@pytest.fixture
def problem():
    return small_problem()


@pytest.fixture
def grid_specs():
    return Specs(ActivationSpec(), LossSpec("clipped-square", L1=10.0), RegularizerSpec.quartic(1.0))


# ------------------------------------------------------------ acceptance log

_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` prints and stores a PASS/FAIL line, then asserts ``ok``."""
    store = request.config.stash.setdefault(_CRITERIA, {})

    def record(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        store[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_CRITERIA, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for n in sorted(store):
            terminalreporter.write_line(store[n])
