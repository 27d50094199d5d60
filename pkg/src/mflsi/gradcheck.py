"""Central finite-difference checks of the potential's gradient and Hessian."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (ActivationSpec, Dataset, LossSpec, ParticleEnsemble, RegularizerSpec, Specs,
                    loss_weights, potential_grads, potential_hessians, potential_values)


def central_gradient(f, x, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def central_jacobian(F, x, h: float = 1e-5) -> np.ndarray:
    """J[i, j] = dF_i / dx_j."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(F(x + e)) - np.asarray(F(x - e))) / (2.0 * h))
    return np.stack(cols, axis=1)


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(b), np.finfo(float).tiny)
    return float(np.linalg.norm(a - b) / scale)


@dataclass
class GradcheckReport:
    instances: int
    max_grad_error: float
    max_hess_error: float
    max_asymmetry: float
    grad_tol: float
    hess_tol: float

    @property
    def ok(self) -> bool:
        return self.max_grad_error < self.grad_tol and self.max_hess_error < self.hess_tol

    def to_dict(self) -> dict:
        return {**self.__dict__, "ok": self.ok}


def random_instance(rng, d: int, act: ActivationSpec = None, loss: LossSpec = None, reg: RegularizerSpec = None,
                    N: int = None, n: int = None):
    """A random (theta, ensemble, data, specs) tuple with inputs inside the unit ball."""
    specs = Specs(act or ActivationSpec(), loss or LossSpec("clipped-square", L1=10.0),
                  reg or RegularizerSpec.quad_plus_cubic(0.5, 0.5))
    N = N or int(rng.integers(2, 12))
    n = n or int(rng.integers(1, 8))
    ens = ParticleEnsemble.from_uw(rng.standard_normal(N), rng.standard_normal((N, d)))
    X = rng.standard_normal((n, d))
    X *= (specs.act.x_max * rng.uniform(0.1, 1.0, (n, 1))) / np.linalg.norm(X, axis=1, keepdims=True)
    data = Dataset(X, rng.standard_normal(n))
    theta = rng.standard_normal(d + 1)
    return theta, ens, data, specs


def check_instance(theta, ensemble, data, specs, h: float = 1e-5) -> tuple[float, float, float]:
    """(gradient error, Hessian error, Hessian asymmetry) for one instance."""
    g = loss_weights(ensemble, data, specs)
    U = lambda t: potential_values(t, g, data, specs)[0]
    G = lambda t: potential_grads(t, g, data, specs)[0]
    grad = G(theta)
    H = potential_hessians(theta, g, data, specs)[0]
    e_g = relative_error(grad, central_gradient(U, theta, h))
    e_h = relative_error(H, central_jacobian(G, theta, h))
    asym = float(np.abs(H - H.T).max())
    return e_g, e_h, asym


def gradcheck(instances: int = 100, dims=(1, 2), seed: int = 0, h: float = 1e-5, grad_tol: float = 1e-6,
              hess_tol: float = 1e-5, act: ActivationSpec = None, loss: LossSpec = None,
              reg: RegularizerSpec = None) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    worst = np.zeros(3)
    for i in range(instances):
        inst = random_instance(rng, dims[i % len(dims)], act, loss, reg)
        worst = np.maximum(worst, check_instance(*inst, h=h))
    return GradcheckReport(instances, *map(float, worst), grad_tol, hess_tol)
