"""Upper bounds on the log-Sobolev constant of the Gibbs family exp(-U(., rho_t)/lam).

Two routes:

* ``quartic-holley-stroock`` for r = beta |theta|^4: strong convexity outside
  a ball of radius R plus local smoothness L inside 2R.
* ``lyapunov`` for regularizers with dissipativity exponent p >= 1: a
  curvature-defect function Phi, the Lyapunov function V = gamma/2 |theta|^2
  and a one-dimensional infimum over a truncation radius r.

Values that overflow doubles are carried in log space (natural log
internally, log10 when reported).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .errors import InfeasibleBound, InvalidArgument
from .model import Dataset, ParticleEnsemble, Specs, _ball_samples, loss_weights, potential_grads, potential_values

LOG10_OVERFLOW = 300.0
_LN10 = math.log(10.0)


def rate_bound(nu: float, lam: float) -> float:
    """Linear convergence rate 2 lam / nu."""
    if not nu > 0:
        raise InvalidArgument("nu must be positive")
    if lam == 0 or math.isinf(nu):
        return 0.0
    return 2.0 * lam / nu


@dataclass
class LsiBoundReport:
    route: str
    lam: float
    log_nu: float
    intermediates: dict = field(default_factory=dict)
    mode: str = "theorem"

    @property
    def log10_nu(self) -> float:
        return self.log_nu / _LN10

    @property
    def overflow(self) -> bool:
        return self.log10_nu > LOG10_OVERFLOW

    @property
    def nu(self) -> float:
        return math.inf if self.log_nu > 709.0 else math.exp(self.log_nu)

    @property
    def nu_mantissa(self) -> float:
        """nu = nu_mantissa * 10**floor(log10_nu)."""
        return 10.0 ** (self.log10_nu - math.floor(self.log10_nu))

    @property
    def log_rate(self) -> float:
        return -math.inf if self.lam == 0 else math.log(2.0 * self.lam) - self.log_nu

    @property
    def rate(self) -> float:
        if self.overflow:
            return math.exp(self.log_rate) if self.log_rate > -745 else 0.0
        return rate_bound(self.nu, self.lam)

    def to_dict(self) -> dict:
        return {
            "route": self.route,
            "mode": self.mode,
            "lam": self.lam,
            "nu": None if self.overflow else self.nu,
            "log10_nu": self.log10_nu,
            "nu_mantissa": self.nu_mantissa,
            "overflow": self.overflow,
            "rate": self.rate,
            "log10_rate": self.log_rate / _LN10,
            "intermediates": {k: _jsonable(v) for k, v in self.intermediates.items()},
        }


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


# ------------------------------------------------------------- quartic route


def quartic_radius(m, beta, d, L1, C3, C4) -> float:
    """Positive root of 4 beta R^2 - sqrt(d) L1 C4 R - sqrt(2) L1 C3 = m."""
    a = math.sqrt(d) * L1 * C4
    return (a + math.sqrt(a * a + 16.0 * beta * (m + math.sqrt(2.0) * L1 * C3))) / (8.0 * beta)


def quartic_smoothness(R, beta, d, L1, C3, C4) -> float:
    return 48.0 * beta * R * R + math.sqrt(4.0 * d * L1**2 * C4**2 * R * R + 2.0 * L1**2 * C3**2)


def quartic_bound(m, beta, d, L1, C3, C4, lam) -> LsiBoundReport:
    """nu <= (2 / (m / lam)) * exp(16 L R^2 / lam) for r = beta |theta|^4."""
    if not (m > 0 and beta > 0 and lam > 0 and d >= 1):
        raise InvalidArgument("m, beta, lam must be positive and d >= 1")
    if min(L1, C3, C4) < 0 or not all(math.isfinite(v) for v in (L1, C3, C4)):
        raise InvalidArgument("L1, C3, C4 must be finite and nonnegative")
    R = quartic_radius(m, beta, d, L1, C3, C4)
    L = quartic_smoothness(R, beta, d, L1, C3, C4)
    exponent = 16.0 * L * R * R / lam
    log_nu = math.log(2.0 * lam / m) + exponent
    inter = dict(R=R, L=L, m=m, beta=beta, d=d, L1=L1, C3=C3, C4=C4, exponent=exponent)
    return LsiBoundReport("quartic-holley-stroock", lam, log_nu, inter)


def quartic_bound_for(specs: Specs, d: int, lam: float, m: float = 1.0) -> LsiBoundReport:
    beta = specs.reg.quartic_coefficient
    if beta is None:
        raise InvalidArgument("quartic route needs r = beta |theta|^4")
    return quartic_bound(m, beta, d, specs.loss.L1, specs.act.C3, specs.act.C4, lam)


# ------------------------------------------------------------ Lyapunov route


@dataclass(frozen=True)
class LsiConstants:
    """Growth constants entering Phi, gamma, c2 and poly(r)."""

    d: int
    p: float
    m: float
    b: float
    D3: float
    D4: float
    D7: float
    D8: float
    k: float
    L1: float
    C1: float
    C2: float
    C3: float
    C4: float

    @classmethod
    def from_specs(cls, specs: Specs, d: int, scale: float = 1.0) -> "LsiConstants":
        """``scale`` multiplies the whole potential (loss-gradient bound and regularizer)."""
        reg, act = specs.reg, specs.act
        return cls(d=d, p=reg.p, m=scale * reg.m, b=scale * reg.b, D3=scale * reg.D3, D4=scale * reg.D4,
                   D7=scale * reg.D7, D8=scale * reg.D8, k=reg.k, L1=scale * specs.loss.L1,
                   C1=act.C1, C2=act.C2, C3=act.C3, C4=act.C4)


def phi(s, consts) -> float:
    """Curvature-defect function: lambda_min(Hess U) >= -Phi(|theta|)."""
    c = consts if isinstance(consts, LsiConstants) else _Obj(consts)
    d, p = c.d, c.p
    s = np.asarray(s, dtype=float)
    out = (math.sqrt(2.0 * (d + 1)) * c.D3 * s**p
           + math.sqrt(2.0 * d) * c.L1 * c.C4 * s
           + 2.0 * math.sqrt((d + 1) * c.D3 * c.D4) * s ** (p / 2.0)
           + math.sqrt(4.0 * c.L1**2 * c.C3**2 + 2.0 * (d + 1) * c.D4**2))
    return float(out) if out.ndim == 0 else out


class _Obj:
    def __init__(self, mapping):
        self.__dict__.update(mapping)


def phi0(consts: LsiConstants) -> float:
    return math.sqrt(4.0 * consts.L1**2 * consts.C3**2 + 2.0 * (consts.d + 1) * consts.D4**2)


def poly(r, consts: LsiConstants):
    """Bound on sup_{|theta| <= r} |U|; the value-growth pair (D7, D8) plays (C7, C8)."""
    c = consts
    return c.D7 * r**c.k + c.L1 * c.C1 * r**2 + c.L1 * c.C2 * r + c.D8


@dataclass
class LyapunovCertificate:
    gamma: float
    R: float
    c1: float
    c2: float
    branch: str
    consts: LsiConstants
    R_terms: dict = field(default_factory=dict)
    scale: float = 1.0
    violation_count: int = None
    worst_margin: float = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["consts"] = asdict(self.consts)
        return d


def lyapunov_gamma(consts: LsiConstants) -> tuple[float, str]:
    c = consts
    d, p, m = c.d, c.p, c.m
    if p == 1:
        g = (2.0 ** (p / 2.0) / m) * (math.sqrt(2.0 * (d + 1)) * c.D3 + 2.0 * c.L1 * c.C4 * math.sqrt(d)) + 4.0
        return g, "p=1"
    g = (2.0 ** (p / 2.0) / m) * math.sqrt(2.0 * (d + 1)) * c.D3 + 5.0
    return g, "p>1"


def lyapunov_c2(R: float, gamma: float, consts: LsiConstants, c1: float = 1.0) -> float:
    c = consts
    return (c1 * R * R * phi(2.0 * R, c) + gamma * (c.d + 1)
            + gamma * (gamma + c.L1 * c.C1 + c.L1 * c.C3**2) * R * R
            + gamma * c.L1 * c.C2 * R + gamma * c.b)


def lyapunov_radius_terms(gamma: float, consts: LsiConstants) -> dict:
    """Lower bounds on R^2 whose maximum is the minimal admissible R^2."""
    c = consts
    d, p, m = c.d, c.p, c.m
    terms = {
        "one": 1.0,
        "curvature": ((phi0(c) + gamma * (gamma + c.L1 * c.C1 + c.L1 * c.C3**2)) / m) ** (2.0 / p),
        "offset": (gamma * c.L1 * c.C2 / m) ** (2.0 / (1.0 + p)),
        "constant": (gamma * (c.b + d + 1) / m) ** (2.0 / (2.0 + p)),
        "cross": (2.0 * math.sqrt((d + 1) * c.D3 * c.D4) / m) ** (4.0 / p),
    }
    if p > 1:
        terms["activation"] = (2.0 * c.L1 * c.C4 * math.sqrt(d) / m) ** (2.0 / (p - 1.0))
    return terms


def lyapunov_constants(specs: Specs, d: int, lam: float = 1.0, strict_proof_scaling: bool = False,
                       consts: LsiConstants = None) -> LyapunovCertificate:
    """gamma, R, c1 = 1 and c2(R) for V = gamma/2 |theta|^2 at the minimal admissible R."""
    if strict_proof_scaling and not lam > 0:
        raise InvalidArgument("strict proof scaling needs lam > 0")
    scale = 1.0 / lam if strict_proof_scaling else 1.0
    if consts is None:
        consts = LsiConstants.from_specs(specs, d, scale)
    if consts.p < 1:
        raise InvalidArgument(f"Lyapunov route needs p >= 1 (got p={consts.p})")
    if not consts.m > 0:
        raise InvalidArgument("Lyapunov route needs m > 0")
    if not math.isfinite(consts.L1):
        raise InvalidArgument("Lyapunov route needs a bounded loss gradient (finite L1)")
    gamma, branch = lyapunov_gamma(consts)
    terms = lyapunov_radius_terms(gamma, consts)
    R = math.sqrt(max(terms.values()))
    c2 = lyapunov_c2(R, gamma, consts)
    return LyapunovCertificate(gamma=gamma, R=R, c1=1.0, c2=c2, branch=branch, consts=consts,
                               R_terms=terms, scale=scale)


@dataclass
class LyapunovCheck:
    violation_count: int
    worst_margin: float
    trials: int
    c2_required: float  # smallest c2 satisfying the inequality at every sample


def lyapunov_sides(cert: LyapunovCertificate, thetas, grads):
    """Both sides of  L V + |grad V|^2 <= -c1 |theta|^2 Phi(2|theta|) + c2  for V = gamma/2 |theta|^2."""
    D = thetas.shape[1]
    s = np.linalg.norm(thetas, axis=1)
    g = cert.gamma
    lhs = g * D - g * cert.scale * np.einsum("ij,ij->i", grads, thetas) + g * g * s * s
    rhs = -cert.c1 * s * s * phi(2.0 * s, cert.consts) + cert.c2
    return lhs, rhs


def verify_lyapunov(cert: LyapunovCertificate, ensemble: ParticleEnsemble, data: Dataset, specs: Specs,
                    trials: int = 10_000, radius: float = 10.0, seed: int = 0, rel_tol: float = 1e-12) -> LyapunovCheck:
    """Sample |theta| <= radius and count points where the Lyapunov inequality fails."""
    rng = np.random.default_rng(seed)
    th = _ball_samples(rng, trials, ensemble.d + 1, radius)
    th[0] = 0.0
    weights = loss_weights(ensemble, data, specs)
    grads = potential_grads(th, weights, data, specs)
    lhs, rhs = lyapunov_sides(cert, th, grads)
    margin = rhs - lhs
    bad = margin < -rel_tol * (1.0 + np.abs(rhs) + np.abs(lhs))
    cert.violation_count = int(bad.sum())
    cert.worst_margin = float(margin.min())
    required = float(np.max(lhs - (rhs - cert.c2)))
    return LyapunovCheck(cert.violation_count, cert.worst_margin, trials, required)


def empirical_oscillation(ensemble: ParticleEnsemble, data: Dataset, specs: Specs,
                          samples: int = 2000, seed: int = 0) -> Callable[[float], float]:
    """Osc_r(U) estimated as max - min of U over fixed ball samples scaled to radius r.

    A sampled estimate of the oscillation, not a certified bound.
    """
    rng = np.random.default_rng(seed)
    unit = _ball_samples(rng, samples, ensemble.d + 1, 1.0, uniform_norm=False)
    unit[0] = 0.0
    weights = loss_weights(ensemble, data, specs)

    def osc(r: float) -> float:
        vals = potential_values(unit * r, weights, data, specs)
        return float(vals.max() - vals.min())

    return osc


class _Objective:
    """log of the truncated-Poincare term as a function of x = log((r - r_min) / r_min)."""

    TABLE_DECADES = 12
    TABLE_POINTS = 241

    def __init__(self, cert, lam_inv, C, osc):
        self.cert, self.C = cert, C
        self.a = cert.c1 * lam_inv * phi0(cert.consts)
        self.r_min = math.sqrt(cert.c2 / self.a)
        self.log_Ca = math.log(C * self.a)
        self.lam_inv = lam_inv
        self.osc = None if osc is None else self._tabulate(osc)

    def _tabulate(self, osc):
        # a sampled Osc_r is expensive; evaluate on a log-r grid, force it
        # nondecreasing (as the true oscillation is) and interpolate
        log_r = np.linspace(math.log(self.r_min), math.log(self.r_min) + self.TABLE_DECADES * _LN10,
                            self.TABLE_POINTS)
        table = np.maximum.accumulate([osc(r) for r in np.exp(log_r)])

        def interp(r):
            lr = np.log(r)
            out = np.interp(lr, log_r, table)
            beyond = lr > log_r[-1]
            if np.any(beyond):
                out = np.where(beyond, np.vectorize(osc)(np.where(beyond, r, self.r_min)), out)
            return out

        return interp

    def r_of(self, x):
        return self.r_min * (1.0 + np.exp(x))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        e = np.exp(x)
        r = self.r_min * (1.0 + e)
        if self.osc is None:
            osc = 2.0 * poly(r, self.cert.consts)
        else:
            osc = self.cert.scale * self.osc(r)
        log_num = np.logaddexp(0.0, self.log_Ca + 4.0 * np.log(r) + osc + 0.5 * self.cert.gamma * r * r)
        # a r^2 - c2 = c2 e (2 + e) exactly, avoiding cancellation near r_min
        log_den = math.log(self.cert.c2) + x + np.log(2.0 + e)
        out = log_num - log_den
        return float(out) if out.ndim == 0 else out


# below this r_min * (1 + e) is no longer distinguishable from r_min in doubles
_X_FLOOR = math.log(1e-14)


def minimize_truncation(obj: _Objective, lo: float = 1e-6, hi: float = 1e6, n_scan: int = 4000,
                        max_extend: int = 10) -> tuple[float, float, dict]:
    """Coarse log scan then golden-section refinement; returns (x_star, value, info).

    If the scan minimum sits on an end of the range, the range is extended
    by a factor 1e3 on that side (same point density) and rescanned there.
    """
    x_lo, x_hi = math.log(lo), math.log(hi)
    xs = np.linspace(x_lo, x_hi, n_scan)
    step = xs[1] - xs[0]
    vals = obj(xs)
    extensions = 0
    while True:
        if not np.any(np.isfinite(vals)):
            raise InfeasibleBound("objective non-finite over the whole search range")
        vals = np.where(np.isfinite(vals), vals, np.inf)
        i = int(np.argmin(vals))  # first index: smallest r on ties
        if extensions >= max_extend:
            break
        if i == len(xs) - 1:
            new = xs[-1] + step * np.arange(1, int(round(math.log(1e3) / step)) + 1)
            xs, vals = np.concatenate([xs, new]), np.concatenate([vals, obj(new)])
        elif i == 0 and xs[0] > _X_FLOOR:
            new_lo = max(_X_FLOOR, xs[0] - math.log(1e3))
            new = xs[0] - step * np.arange(int(math.ceil((xs[0] - new_lo) / step)), 0, -1)
            xs, vals = np.concatenate([new, xs]), np.concatenate([obj(new), vals])
        else:
            break
        extensions += 1
    n_scan = len(xs)
    info = {"extensions": extensions, "boundary": None, "plateau": False}
    if i == 0 or i == n_scan - 1:
        info["boundary"] = "lower" if i == 0 else "upper"
        return float(xs[i]), float(vals[i]), info
    if not (vals[i] < vals[i - 1] and vals[i] < vals[i + 1]):
        # flat to within rounding of the (huge) log values: no finer minimum is resolvable
        info["plateau"] = True
        return float(xs[i]), float(vals[i]), info
    res = optimize.minimize_scalar(obj, bracket=(xs[i - 1], xs[i], xs[i + 1]), method="golden",
                                   options={"xtol": 1e-12})
    x_star, v_star = float(res.x), float(res.fun)
    if not v_star <= vals[i]:
        x_star, v_star = float(xs[i]), float(vals[i])
    return x_star, v_star, info


def lyapunov_bound(cert: LyapunovCertificate, lam: float, C_universal: float = 1.0,
                   strict_proof_scaling: bool = None, osc: Callable[[float], float] = None) -> LsiBoundReport:
    """nu <= 2 sqrt(2/a) + 1/c1 + [2 sqrt(2/a) c2 + 2 c2/c1 + 2] inf_r T(r),  a = c1 Phi(0)/lam,

    with T(r) = (1 + C a r^4 exp(Osc_r + gamma r^2/2)) / (a r^2 - c2) and
    Osc_r bounded by 2 poly(r) unless an empirical ``osc`` callable is given.
    """
    if not lam > 0:
        raise InvalidArgument("lam must be positive")
    if not C_universal > 0:
        raise InvalidArgument("C_universal must be positive")
    if strict_proof_scaling is None:
        strict_proof_scaling = cert.scale != 1.0
    lam_inv = 1.0 if strict_proof_scaling else 1.0 / lam
    obj = _Objective(cert, lam_inv, C_universal, osc)
    if not (obj.a > 0 and cert.c2 > 0):
        raise InfeasibleBound("need c1 Phi(0) > 0 and c2 > 0")
    x_star, g_star, info = minimize_truncation(obj)
    c1, c2, a = cert.c1, cert.c2, obj.a
    front = 2.0 * math.sqrt(2.0 / a) + 1.0 / c1
    coef = 2.0 * math.sqrt(2.0 / a) * c2 + 2.0 * c2 / c1 + 2.0
    log_nu = float(np.logaddexp(math.log(front), math.log(coef) + g_star))
    r_star = float(obj.r_of(x_star))
    inter = dict(Phi0=phi0(cert.consts), gamma=cert.gamma, R=cert.R, c1=c1, c2=c2, r_min=obj.r_min,
                 r_star=r_star, log_truncation_term=g_star, C_universal=C_universal, branch=cert.branch,
                 search_extensions=info["extensions"], search_boundary=info["boundary"])
    mode = "strict-proof-scaling" if strict_proof_scaling else "theorem"
    if osc is not None:
        mode += "+empirical-osc"
    return LsiBoundReport("lyapunov", lam, log_nu, inter, mode=mode)
