"""Two-layer mean-field network: predictor, per-particle potential and certified specs.

Parameter vectors use the layout ``[w_1, ..., w_d, u]`` throughout (position
block first, output weight last), which is also the ordering of gradients and
Hessians returned here.  Serialized rows use ``[u, w_1, ..., w_d]`` instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import InvalidArgument, NumericFault

_NORM_TOL = 1e-9


# --------------------------------------------------------------------- particles


@dataclass(frozen=True)
class Particle:
    u: float
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", np.atleast_1d(np.asarray(self.w, dtype=float)))

    @property
    def d(self) -> int:
        return self.w.shape[0]

    def vector(self) -> np.ndarray:
        return np.append(self.w, self.u)

    @classmethod
    def from_vector(cls, theta) -> "Particle":
        theta = np.asarray(theta, dtype=float)
        return cls(u=float(theta[-1]), w=theta[:-1].copy())


@dataclass
class ParticleEnsemble:
    """Empirical measure (1/N) sum delta_theta_i.

    ``theta`` has shape (N, d+1); ``ids`` label particles so that per-particle
    noise streams follow a particle under permutation.
    """

    theta: np.ndarray
    ids: np.ndarray = None

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=float, ndmin=2)
        if self.theta.shape[0] < 1 or self.theta.shape[1] < 2:
            raise InvalidArgument("ensemble needs N >= 1 particles of dimension d+1 >= 2")
        if self.ids is None:
            self.ids = np.arange(self.theta.shape[0], dtype=np.uint64)
        else:
            self.ids = np.asarray(self.ids, dtype=np.uint64)
            if self.ids.shape != (self.theta.shape[0],):
                raise InvalidArgument("ids must have one entry per particle")

    @property
    def N(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.theta.shape[1] - 1

    @property
    def u(self) -> np.ndarray:
        return self.theta[:, -1]

    @property
    def w(self) -> np.ndarray:
        return self.theta[:, :-1]

    @property
    def particles(self) -> list[Particle]:
        return [Particle.from_vector(t) for t in self.theta]

    @classmethod
    def from_particles(cls, particles: Sequence[Particle]) -> "ParticleEnsemble":
        if not particles:
            raise InvalidArgument("empty particle list")
        d = particles[0].d
        if any(p.d != d for p in particles):
            raise InvalidArgument("particles have mixed dimensions")
        return cls(np.stack([p.vector() for p in particles]))

    @classmethod
    def from_uw(cls, u, w) -> "ParticleEnsemble":
        u = np.atleast_1d(np.asarray(u, dtype=float))
        w = np.asarray(w, dtype=float).reshape(u.shape[0], -1)
        return cls(np.column_stack([w, u]))

    def rows_uw(self) -> np.ndarray:
        """Rows ordered ``[u, w_1, ..., w_d]`` (serialization order)."""
        return np.column_stack([self.u, self.w])

    def permuted(self, perm) -> "ParticleEnsemble":
        perm = np.asarray(perm)
        return ParticleEnsemble(self.theta[perm].copy(), self.ids[perm].copy())

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.theta.copy(), self.ids.copy())


# ------------------------------------------------------------------- activation

_ACTIVATIONS = ("smoothed-relu", "sigmoid", "tanh")
# sup |sigma''| for the logistic sigmoid and tanh
SIGMOID_D2_SUP = 1.0 / (6.0 * math.sqrt(3.0))
TANH_D2_SUP = 4.0 / (3.0 * math.sqrt(3.0))


@dataclass(frozen=True)
class ActivationSpec:
    """h(w, x) = sigma(<w, x>) with growth certificates C1..C4 valid for |x| <= x_max.

    ``centered=True`` subtracts sigma(0) so that h(0, x) = 0.
    """

    kind: str = "smoothed-relu"
    kappa: float = 4.0
    x_max: float = 1.0
    centered: bool = False
    C1: float = None
    C2: float = None
    C3: float = None
    C4: float = None

    def __post_init__(self):
        if self.kind not in _ACTIVATIONS:
            raise InvalidArgument(f"unknown activation kind {self.kind!r}")
        if self.kappa <= 0 or self.x_max <= 0:
            raise InvalidArgument("kappa and x_max must be positive")
        defaults = self.default_certificates()
        for name, value in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)

    def default_certificates(self) -> dict:
        xm = self.x_max
        if self.kind == "smoothed-relu":
            return dict(C1=xm, C2=math.log(2.0) / self.kappa, C3=xm, C4=self.kappa / 4.0 * xm**2)
        if self.kind == "sigmoid":
            return dict(C1=0.0, C2=1.0, C3=xm / 4.0, C4=xm**2 * SIGMOID_D2_SUP)
        return dict(C1=0.0, C2=1.0, C3=xm, C4=xm**2 * TANH_D2_SUP)

    def _raw(self, z):
        if self.kind == "smoothed-relu":
            return np.logaddexp(0.0, self.kappa * z) / self.kappa
        if self.kind == "sigmoid":
            return expit(z)
        return np.tanh(z)

    def sigma(self, z):
        out = self._raw(z)
        if self.centered:
            out = out - self._raw(0.0)
        return out

    def dsigma(self, z):
        if self.kind == "smoothed-relu":
            return expit(self.kappa * z)
        if self.kind == "sigmoid":
            s = expit(z)
            return s * (1.0 - s)
        t = np.tanh(z)
        return 1.0 - t * t

    def sigma_dsigma(self, z):
        """(sigma(z), sigma'(z)) sharing one exponential per entry."""
        if self.kind != "smoothed-relu":
            return self.sigma(z), self.dsigma(z)
        kz = self.kappa * np.asarray(z, dtype=float)
        e = np.exp(-np.abs(kz))
        s = (np.maximum(kz, 0.0) + np.log1p(e)) / self.kappa
        if self.centered:
            s = s - math.log(2.0) / self.kappa
        inv = 1.0 / (1.0 + e)
        return s, np.where(kz >= 0, inv, e * inv)

    def d2sigma(self, z):
        if self.kind == "smoothed-relu":
            s = expit(self.kappa * z)
            return self.kappa * s * (1.0 - s)
        if self.kind == "sigmoid":
            s = expit(z)
            return s * (1.0 - s) * (1.0 - 2.0 * s)
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)


# ------------------------------------------------------------------------- loss

_LOSSES = ("square", "clipped-square", "huber")


@dataclass(frozen=True)
class LossSpec:
    """phi(yhat, y) with first-argument derivative bounded by L1.

    ``clipped-square`` and ``huber`` share the same function: the square loss
    for residuals within L1 and its linear continuation outside, so the value
    is the exact antiderivative of the clipped gradient.  ``square`` has no
    gradient bound and violates the bounded-gradient assumption.
    """

    kind: str = "clipped-square"
    L1: float = 10.0
    L2: float = 1.0
    B_l: float = 0.0

    def __post_init__(self):
        if self.kind not in _LOSSES:
            raise InvalidArgument(f"unknown loss kind {self.kind!r}")
        if self.kind == "square":
            object.__setattr__(self, "L1", math.inf)
        elif not self.L1 >= 0:
            raise InvalidArgument("L1 must be nonnegative")

    @property
    def assumption_violating(self) -> bool:
        return self.kind == "square"

    def value(self, yhat, y):
        r = np.asarray(yhat, dtype=float) - y
        if self.kind == "square":
            return 0.5 * r * r
        a = np.abs(r)
        return np.where(a <= self.L1, 0.5 * r * r, self.L1 * a - 0.5 * self.L1**2)

    def grad(self, yhat, y):
        r = np.asarray(yhat, dtype=float) - y
        if self.kind == "square":
            return r
        return np.clip(r, -self.L1, self.L1)


def loss_grad(yhat: float, y: float, loss: LossSpec) -> float:
    if not (math.isfinite(yhat) and math.isfinite(y)):
        raise NumericFault("non-finite loss argument")
    return float(loss.grad(yhat, y))


# ------------------------------------------------------------------ regularizer

_REGULARIZERS = ("power", "quartic", "quad-plus-cubic")


@dataclass(frozen=True)
class RegularizerSpec:
    """Radial regularizer r(theta) plus the certificates of its growth conditions.

    Kinds: ``power`` r = beta/q |theta|^q (q >= 2); ``quartic`` r = beta |theta|^4;
    ``quad-plus-cubic`` r = beta/2 |theta|^2 + beta2/3 |theta|^3.
    Use the classmethod constructors, which fill in certificates.
    """

    kind: str
    beta: float = 1.0
    q: float = 2.0
    beta2: float = 0.0
    m: float = 0.0
    b: float = 0.0
    p: float = 1.0
    D1: float = 0.0
    D2: float = 0.0
    D3: float = 0.0
    D4: float = 0.0
    D5: float = 0.0
    D6: float = 0.0
    D7: float = 0.0
    D8: float = 0.0
    k: float = 3.0

    def __post_init__(self):
        if self.kind not in _REGULARIZERS:
            raise InvalidArgument(f"unknown regularizer kind {self.kind!r}")
        if self.kind == "power" and self.q < 2:
            raise InvalidArgument("power regularizer needs q >= 2")

    @classmethod
    def power(cls, beta: float, q: float, **overrides) -> "RegularizerSpec":
        if q < 2:
            raise InvalidArgument("power regularizer needs q >= 2")
        p = q - 2.0
        # Hessian eigenvalues: beta s^(q-2) (radial-orthogonal), beta (q-1) s^(q-2) (radial)
        D1 = beta if q == 3 else 0.0
        D2 = beta if q == 2 else 0.0
        D3 = beta * (q - 1.0)
        # |grad r| = beta s^(q-1) >= D5 s^2 + D6
        if q == 2:
            D5, D6 = 0.0, 0.0
        elif q == 3:
            D5, D6 = beta, 0.0
        else:
            s_star = (2.0 / (q - 1.0)) ** (1.0 / (q - 3.0))
            D5, D6 = beta, beta * (s_star ** (q - 1.0) - s_star**2)
        if q >= 3:
            D7, D8, k = beta / q, 0.0, q
        else:
            D7, D8, k = beta / q, beta / q, 3.0
        certs = dict(m=beta, b=0.0, p=p, D1=D1, D2=D2, D3=D3, D4=0.0, D5=D5, D6=D6, D7=D7, D8=D8, k=k)
        certs.update(overrides)
        return cls("power", beta=beta, q=q, **certs)

    @classmethod
    def quartic(cls, beta: float, **overrides) -> "RegularizerSpec":
        D5 = 4.0 * beta
        certs = dict(
            m=4.0 * beta, b=0.0, p=2.0, D1=0.0, D2=0.0, D3=12.0 * beta, D4=0.0,
            D5=D5, D6=-(D5**3) / (108.0 * beta**2) if beta > 0 else 0.0,
            D7=beta, D8=0.0, k=4.0,
        )
        certs.update(overrides)
        return cls("quartic", beta=beta, q=4.0, **certs)

    @classmethod
    def quad_plus_cubic(cls, beta1: float, beta2: float, **overrides) -> "RegularizerSpec":
        # |theta|^2 <= |theta|^3 + 1 gives the value bound
        certs = dict(
            m=beta2, b=0.0, p=1.0, D1=beta2, D2=beta1, D3=2.0 * beta2, D4=beta1,
            D5=beta2, D6=0.0, D7=beta1 / 2.0 + beta2 / 3.0, D8=beta1 / 2.0, k=3.0,
        )
        certs.update(overrides)
        return cls("quad-plus-cubic", beta=beta1, q=3.0, beta2=beta2, **certs)

    def with_certificates(self, **certs) -> "RegularizerSpec":
        return replace(self, **certs)

    @property
    def quartic_coefficient(self):
        """beta in r = beta |theta|^4 when the regularizer is quartic, else None."""
        if self.kind == "quartic":
            return self.beta
        if self.kind == "power" and self.q == 4:
            return self.beta / 4.0
        return None

    # batched evaluation on theta of shape (M, D)
    def value(self, theta):
        s = np.linalg.norm(theta, axis=-1)
        if self.kind == "quartic":
            return self.beta * s**4
        if self.kind == "power":
            return self.beta / self.q * s**self.q
        return 0.5 * self.beta * s**2 + self.beta2 / 3.0 * s**3

    def _radial(self, s):
        """Return (a, c) with grad r = a theta and Hessian = a I + c theta theta^T."""
        if self.kind == "quartic":
            return 4.0 * self.beta * s**2, np.full_like(s, 8.0 * self.beta)
        if self.kind == "power":
            a = self.beta * s ** (self.q - 2.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                c = self.beta * (self.q - 2.0) * s ** (self.q - 4.0)
            c = np.where(s > 0, c, self.beta * 2.0 if self.q == 4 else 0.0)
            return a, c
        a = self.beta + self.beta2 * s
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(s > 0, self.beta2 / s, 0.0)
        return a, c

    def grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        a, _ = self._radial(np.linalg.norm(theta, axis=-1))
        return a[..., None] * theta

    def hess(self, theta):
        theta = np.asarray(theta, dtype=float)
        a, c = self._radial(np.linalg.norm(theta, axis=-1))
        eye = np.eye(theta.shape[-1])
        return a[..., None, None] * eye + c[..., None, None] * theta[..., :, None] * theta[..., None, :]


# ---------------------------------------------------------------------- dataset


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.array(self.inputs, dtype=float, ndmin=2)
        self.labels = np.atleast_1d(np.asarray(self.labels, dtype=float))
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise InvalidArgument("inputs and labels differ in length")
        if self.labels.shape[0] < 1:
            raise InvalidArgument("empty dataset")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def check(self, act: ActivationSpec, d: int | None = None):
        if d is not None and self.d != d:
            raise InvalidArgument(f"input dimension {self.d} does not match d={d}")
        norms = np.linalg.norm(self.inputs, axis=1)
        if np.any(norms > act.x_max * (1 + _NORM_TOL)):
            raise InvalidArgument(f"input norm {norms.max():.6g} exceeds x_max={act.x_max}")


@dataclass(frozen=True)
class Specs:
    act: ActivationSpec = field(default_factory=ActivationSpec)
    loss: LossSpec = field(default_factory=LossSpec)
    reg: RegularizerSpec = field(default_factory=lambda: RegularizerSpec.quartic(1.0))


# ---------------------------------------------------------------- mean-field map


def _check_finite(ensemble: ParticleEnsemble):
    bad = ~np.all(np.isfinite(ensemble.theta), axis=1)
    if bad.any():
        raise NumericFault("non-finite particle", index=int(np.argmax(bad)))


def predict_batch(ensemble: ParticleEnsemble, inputs, act: ActivationSpec) -> np.ndarray:
    """f_N(x) = (1/N) sum_i u_i h(w_i, x) at every row of ``inputs``."""
    X = np.array(inputs, dtype=float, ndmin=2)
    if X.shape[1] != ensemble.d:
        raise InvalidArgument(f"input dimension {X.shape[1]} != ensemble dimension {ensemble.d}")
    _check_finite(ensemble)
    z = ensemble.w @ X.T
    return ensemble.u @ act.sigma(z) / ensemble.N


def predict(ensemble: ParticleEnsemble, x, act: ActivationSpec) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise InvalidArgument("x must be a vector")
    if np.linalg.norm(x) > act.x_max * (1 + _NORM_TOL):
        raise InvalidArgument("input norm exceeds x_max")
    return float(predict_batch(ensemble, x[None, :], act)[0])


def loss_weights(ensemble: ParticleEnsemble, data: Dataset, specs: Specs) -> np.ndarray:
    """phi_1'(f(rho, x_n), y_n) for each data point; the only way rho enters U."""
    if data.n < 1:
        raise InvalidArgument("empty dataset")
    yhat = predict_batch(ensemble, data.inputs, specs.act)
    return specs.loss.grad(yhat, data.labels)


def _as_thetas(theta) -> tuple[np.ndarray, bool]:
    if isinstance(theta, Particle):
        return theta.vector()[None, :], True
    arr = np.asarray(theta, dtype=float)
    return np.atleast_2d(arr), arr.ndim == 1


def potential_values(thetas, weights, data: Dataset, specs: Specs) -> np.ndarray:
    """U(theta, rho) for a batch of thetas given precomputed loss weights."""
    thetas = np.atleast_2d(thetas)
    z = thetas[:, :-1] @ data.inputs.T
    net = thetas[:, -1] * (specs.act.sigma(z) @ weights) / data.n
    return net + specs.reg.value(thetas)


def potential_grads(thetas, weights, data: Dataset, specs: Specs) -> np.ndarray:
    thetas = np.atleast_2d(thetas)
    X = data.inputs
    z = thetas[:, :-1] @ X.T
    gw = (specs.act.dsigma(z) * weights) @ X / data.n
    out = np.empty_like(thetas)
    out[:, :-1] = thetas[:, -1:] * gw
    out[:, -1] = specs.act.sigma(z) @ weights / data.n
    return out + specs.reg.grad(thetas)


def potential_hessians(thetas, weights, data: Dataset, specs: Specs) -> np.ndarray:
    thetas = np.atleast_2d(thetas)
    X = data.inputs
    M, D = thetas.shape
    z = thetas[:, :-1] @ X.T
    c2 = specs.act.d2sigma(z) * weights / data.n
    c1 = specs.act.dsigma(z) * weights / data.n
    H = np.zeros((M, D, D))
    H[:, :-1, :-1] = thetas[:, -1, None, None] * np.einsum("mn,ni,nj->mij", c2, X, X)
    cross = c1 @ X
    H[:, :-1, -1] = cross
    H[:, -1, :-1] = cross
    return H + specs.reg.hess(thetas)


def ensemble_drift(ensemble: ParticleEnsemble, data: Dataset, specs: Specs) -> np.ndarray:
    """grad U(theta_i, rho_N) for every particle of the ensemble, fused.

    Same result as ``potential_grads(ensemble.theta, loss_weights(...), ...)``
    but evaluates the activation once per (particle, sample) pair.
    """
    if data.n < 1:
        raise InvalidArgument("empty dataset")
    _check_finite(ensemble)
    X = data.inputs
    if X.shape[1] != ensemble.d:
        raise InvalidArgument(f"input dimension {X.shape[1]} != ensemble dimension {ensemble.d}")
    theta = ensemble.theta
    u = theta[:, -1]
    s, ds = specs.act.sigma_dsigma(theta[:, :-1] @ X.T)
    weights = specs.loss.grad(u @ s / ensemble.N, data.labels) / data.n
    out = np.empty_like(theta)
    out[:, :-1] = u[:, None] * ((ds * weights) @ X)
    out[:, -1] = s @ weights
    return out + specs.reg.grad(theta)


def _prepare(theta, ensemble, data, specs):
    if data.n < 1:
        raise InvalidArgument("empty dataset")
    thetas, single = _as_thetas(theta)
    if thetas.shape[1] != ensemble.d + 1:
        raise InvalidArgument("theta dimension does not match ensemble")
    return thetas, single, loss_weights(ensemble, data, specs)


def potential_value(theta, ensemble: ParticleEnsemble, data: Dataset, specs: Specs):
    """U(theta, rho) = mean_n phi'(f(x_n), y_n) u h(w, x_n) + r(theta)."""
    thetas, single, g = _prepare(theta, ensemble, data, specs)
    out = potential_values(thetas, g, data, specs)
    return float(out[0]) if single else out


def potential_grad(theta, ensemble: ParticleEnsemble, data: Dataset, specs: Specs):
    thetas, single, g = _prepare(theta, ensemble, data, specs)
    out = potential_grads(thetas, g, data, specs)
    return out[0] if single else out


def potential_hess(theta, ensemble: ParticleEnsemble, data: Dataset, specs: Specs):
    thetas, single, g = _prepare(theta, ensemble, data, specs)
    out = potential_hessians(thetas, g, data, specs)
    return out[0] if single else out


# ------------------------------------------------------------ certificate checks


@dataclass
class CertificateReport:
    """Worst observed value per certificate.

    For activations the values are ratios (observed / certified bound, pass
    when <= 1).  For regularizers they are normalized margins
    (lhs - rhs) / (1 + |lhs| + |rhs|) of each ``lhs >= rhs`` inequality
    (pass when >= -tol).
    """

    kind: str
    worst: dict
    passed: dict
    trials: int

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    @property
    def violations(self) -> list[str]:
        return [name for name, good in self.passed.items() if not good]


def _ball_samples(rng, n, dim, radius, uniform_norm=True):
    """Random points with norm <= radius; norms uniform in [0, radius] to probe large scales."""
    v = rng.standard_normal((n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    s = rng.uniform(0.0, radius, n) if uniform_norm else radius * rng.uniform(0, 1, n) ** (1.0 / dim)
    return v * s[:, None]


def _ratio(observed, bound):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(bound > 0, observed / bound, np.where(observed > 0, np.inf, 0.0))
    return float(np.max(r))


def validate_activation(act: ActivationSpec, trials: int, radius: float, d: int = 2, seed: int = 0) -> CertificateReport:
    if trials < 1:
        raise InvalidArgument("trials must be >= 1")
    rng = np.random.default_rng(seed)
    w = _ball_samples(rng, trials, d, radius)
    x = _ball_samples(rng, trials, d, act.x_max)
    # half the inputs on the sphere, where the gradient bounds are tight
    half = trials // 2
    x[:half] *= act.x_max / np.maximum(np.linalg.norm(x[:half], axis=1, keepdims=True), 1e-300)
    z = np.einsum("ij,ij->i", w, x)
    xn = np.linalg.norm(x, axis=1)
    wn = np.linalg.norm(w, axis=1)
    h = np.abs(act.sigma(z))
    g = np.abs(act.dsigma(z)) * xn
    H = np.abs(act.d2sigma(z)) * xn**2  # op norm of sigma'' x x^T
    worst = {
        "value": _ratio(h, act.C1 * wn + act.C2),
        "gradient": _ratio(g, np.full_like(g, act.C3)),
        "hessian": _ratio(H, np.full_like(H, act.C4)),
    }
    passed = {k: v <= 1.0 + 1e-12 for k, v in worst.items()}
    return CertificateReport("activation", worst, passed, trials)


def validate_regularizer(reg: RegularizerSpec, trials: int, radius: float, dim: int = 3,
                         seed: int = 0, tol: float = 1e-10) -> CertificateReport:
    if trials < 1:
        raise InvalidArgument("trials must be >= 1")
    rng = np.random.default_rng(seed)
    th = _ball_samples(rng, trials, dim, radius)
    th[0] = 0.0
    s = np.linalg.norm(th, axis=1)
    g = reg.grad(th)
    eig = np.linalg.eigvalsh(reg.hess(th))

    def margin(lhs, rhs):
        return float(np.min((lhs - rhs) / (1.0 + np.abs(lhs) + np.abs(rhs))))

    worst = {
        "dissipativity": margin(np.einsum("ij,ij->i", th, g), reg.m * s ** (2 + reg.p) - reg.b),
        "hessian_lower": margin(eig[:, 0], reg.D1 * s + reg.D2),
        "hessian_upper": margin(reg.D3 * s**reg.p + reg.D4, eig[:, -1]),
        "gradient_growth": margin(np.linalg.norm(g, axis=1), reg.D5 * s**2 + reg.D6),
        "value_growth": margin(reg.D7 * s**reg.k + reg.D8, np.abs(reg.value(th))),
    }
    passed = {k: v >= -tol for k, v in worst.items()}
    passed["p_at_least_one"] = reg.p >= 1
    passed["m_positive"] = reg.m > 0
    return CertificateReport("regularizer", worst, passed, trials)
