"""Free-energy estimation from particles and exponential-rate fitting."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln

from .errors import InvalidArgument, NumericFault
from .model import Dataset, ParticleEnsemble, Specs, predict_batch


@dataclass
class ObjectiveReport:
    risk: float
    reg_mean: float
    entropy: float
    Q: float
    k_nn: int

    @property
    def regularized_loss(self) -> float:
        """risk + reg_mean, i.e. the objective without the entropy term."""
        return self.risk + self.reg_mean

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RateFit:
    rate: float
    intercept: float
    r_squared: float
    window: tuple
    Q_star: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def empirical_risk(ensemble: ParticleEnsemble, data: Dataset, act, loss) -> float:
    if data.n < 1:
        raise InvalidArgument("empty dataset")
    yhat = predict_batch(ensemble, data.inputs, act)
    return float(np.mean(loss.value(yhat, data.labels)))


def regularizer_mean(ensemble: ParticleEnsemble, reg) -> float:
    return float(np.mean(reg.value(ensemble.theta)))


def unit_ball_log_volume(dim: int) -> float:
    return 0.5 * dim * math.log(math.pi) - gammaln(0.5 * dim + 1.0)


def entropy_knn(points, k: int = 3) -> float:
    """Kozachenko-Leonenko differential entropy estimate (nats).

    ``points`` is a ParticleEnsemble or an (N, D) array.
    """
    X = points.theta if isinstance(points, ParticleEnsemble) else np.array(points, dtype=float, ndmin=2)
    N, D = X.shape
    if k < 1 or N <= k:
        raise InvalidArgument(f"entropy_knn needs N > k >= 1 (N={N}, k={k})")
    eps = _knn_distances(X, k)
    if np.any(eps <= 0):
        scale = 1e-12 * (1.0 + np.abs(X))
        X = X + scale * np.random.default_rng(0).standard_normal(X.shape)
        eps = _knn_distances(X, k)
        if np.any(eps <= 0):
            raise NumericFault("zero nearest-neighbour distance after jitter")
    return float(digamma(N) - digamma(k) + unit_ball_log_volume(D) + D * np.mean(np.log(eps)))


def _knn_distances(X, k):
    dist, _ = cKDTree(X).query(X, k=k + 1)
    return dist[:, k]


def free_energy(ensemble: ParticleEnsemble, data: Dataset, specs: Specs, lam: float, k: int = 3) -> ObjectiveReport:
    """Q = risk + reg_mean - lam * H.

    When lam == 0 the entropy is still estimated if N > k (NaN otherwise) but
    does not enter Q.
    """
    risk = empirical_risk(ensemble, data, specs.act, specs.loss)
    reg = regularizer_mean(ensemble, specs.reg)
    if ensemble.N > k:
        H = entropy_knn(ensemble, k)
    elif lam == 0:
        H = math.nan
    else:
        raise InvalidArgument(f"entropy needs N > k (N={ensemble.N}, k={k})")
    Q = risk + reg - (lam * H if lam != 0 else 0.0)
    return ObjectiveReport(risk=risk, reg_mean=reg, entropy=H, Q=Q, k_nn=k)


def default_window(times) -> tuple:
    T0, T1 = float(times[0]), float(times[-1])
    span = T1 - T0
    return (T0 + 0.1 * span, T0 + 0.6 * span)


def trailing_q_star(Q, fraction: float = 0.05) -> float:
    """Proxy asymptote: mean of the last ``fraction`` of the records."""
    Q = np.asarray(Q, dtype=float)
    n = max(1, int(math.ceil(fraction * len(Q))))
    return float(np.mean(Q[-n:]))


def fit_decay_rate(traj, Q_star: float, window=None) -> RateFit:
    """Least-squares slope of log(Q(t) - Q_star) over ``window`` = (t_lo, t_hi).

    ``traj`` is anything with ``times`` and ``Q`` sequences.
    """
    t = np.asarray(traj.times, dtype=float)
    Q = np.asarray(traj.Q, dtype=float)
    if window is None:
        window = default_window(t)
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise InvalidArgument("empty fit window")
    if lo < t[0] - 1e-12 * max(1.0, abs(t[0])) or hi > t[-1] + 1e-12 * max(1.0, abs(t[-1])):
        raise InvalidArgument(f"window [{lo}, {hi}] outside trajectory [{t[0]}, {t[-1]}]")
    mask = (t >= lo) & (t <= hi)
    if mask.sum() < 2:
        raise InvalidArgument("fewer than two records in window")
    gap = Q[mask] - Q_star
    if np.any(~(gap > 0)):
        raise InvalidArgument("Q(t) <= Q_star inside the window; Q_star too high")
    fit = stats.linregress(t[mask], np.log(gap))
    r2 = float(min(1.0, max(0.0, fit.rvalue**2)))
    return RateFit(rate=float(-fit.slope), intercept=float(fit.intercept), r_squared=r2,
                   window=(lo, hi), Q_star=float(Q_star))
