"""Grid solver for the d = 1 mean-field Fokker-Planck equation

    d rho / dt = div(rho grad U(theta, rho)) + lam Laplacian(rho),   theta = (w, u) in R^2,

plus the self-consistent Gibbs fixed point and exact-quadrature free energy.

The spatial scheme is a finite-volume discretization with exponentially
fitted (Scharfetter-Gummel / Chang-Cooper type) face fluxes,

    J_{i+1/2} = (lam / h) [B(delta) rho_i - B(-delta) rho_{i+1}],
    delta = (U_{i+1} - U_i) / lam,   B(z) = z / (e^z - 1),

which vanishes exactly on rho ~ exp(-U / lam), so the discrete Gibbs state is
a fixed point of the scheme.  Zero-flux boundaries; explicit Euler in time.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import exprel

from .errors import ConvergenceFailure, InvalidArgument
from .model import Dataset, ParticleEnsemble, Specs
from .objective import ObjectiveReport

MASS_TOL = 1e-10


@dataclass
class GridDensity:
    """Cell-averaged density on [u_lo, u_hi] x [w_lo, w_hi]; ``values`` has shape (n_u, n_w)."""

    bounds: tuple
    values: np.ndarray
    info: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        (ul, uh), (wl, wh) = self.bounds
        self.bounds = ((float(ul), float(uh)), (float(wl), float(wh)))
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise InvalidArgument("grid values must be two-dimensional")
        if not (uh > ul and wh > wl):
            raise InvalidArgument("empty grid bounds")

    @property
    def n_u(self) -> int:
        return self.values.shape[0]

    @property
    def n_w(self) -> int:
        return self.values.shape[1]

    @property
    def h_u(self) -> float:
        (ul, uh), _ = self.bounds
        return (uh - ul) / self.n_u

    @property
    def h_w(self) -> float:
        _, (wl, wh) = self.bounds
        return (wh - wl) / self.n_w

    @property
    def cell_area(self) -> float:
        return self.h_u * self.h_w

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        (ul, _), (wl, _) = self.bounds
        u = ul + (np.arange(self.n_u) + 0.5) * self.h_u
        w = wl + (np.arange(self.n_w) + 0.5) * self.h_w
        return u, w

    def thetas(self) -> np.ndarray:
        """Cell centres as (n_u * n_w, 2) rows in ``[w, u]`` layout, row-major over (u, w)."""
        u, w = self.centers()
        U, W = np.meshgrid(u, w, indexing="ij")
        return np.column_stack([W.ravel(), U.ravel()])

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_area)

    def normalized(self) -> "GridDensity":
        return GridDensity(self.bounds, self.values / self.mass())

    def with_values(self, values) -> "GridDensity":
        return GridDensity(self.bounds, values)

    @classmethod
    def from_function(cls, fn, bounds=((-6.0, 6.0), (-6.0, 6.0)), shape=(128, 128)) -> "GridDensity":
        """Density proportional to ``fn(u, w)`` evaluated at cell centres."""
        g = cls(bounds, np.zeros(shape))
        u, w = g.centers()
        U, W = np.meshgrid(u, w, indexing="ij")
        return g.with_values(np.asarray(fn(U, W), dtype=float)).normalized()

    @classmethod
    def gaussian(cls, mean=(0.0, 0.0), sd=1.0, bounds=((-6.0, 6.0), (-6.0, 6.0)), shape=(128, 128)):
        mu_u, mu_w = mean
        return cls.from_function(lambda u, w: np.exp(-((u - mu_u) ** 2 + (w - mu_w) ** 2) / (2 * sd**2)),
                                 bounds, shape)

    def to_csv(self, path=None) -> str:
        (ul, uh), (wl, wh) = self.bounds
        lines = [f"# bounds u_lo={ul!r} u_hi={uh!r} w_lo={wl!r} w_hi={wh!r}",
                 f"# shape n_u={self.n_u} n_w={self.n_w} (rows: u index, columns: w index)"]
        lines += [",".join(repr(float(v)) for v in row) for row in self.values]
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "GridDensity":
        with open(path) as fh:
            header = [fh.readline(), fh.readline()]
            values = np.loadtxt(fh, delimiter=",", ndmin=2)
        kv = dict(tok.split("=") for tok in header[0][1:].split() if "=" in tok)
        bounds = ((float(kv["u_lo"]), float(kv["u_hi"])), (float(kv["w_lo"]), float(kv["w_hi"])))
        return cls(bounds, values)


class GridPotential:
    """Caches h(w_c, x_n), u_c and r(theta_c) so U(., rho) costs one mat-vec per call."""

    def __init__(self, grid: GridDensity, data: Dataset, specs: Specs):
        if data.d != 1:
            raise InvalidArgument("grid oracle supports d = 1 only")
        data.check(specs.act, 1)
        self.bounds = grid.bounds
        self.shape = grid.values.shape
        self.area = grid.cell_area
        self.data, self.specs = data, specs
        th = grid.thetas()
        self.u = th[:, 1]
        z = np.outer(th[:, 0], data.inputs[:, 0])  # (cells, n)
        self.h = specs.act.sigma(z)
        self.uh = self.u[:, None] * self.h
        self.r = specs.reg.value(th)

    def predictions(self, values) -> np.ndarray:
        return (values.ravel() * self.area) @ self.uh

    def potential(self, values) -> np.ndarray:
        weights = self.specs.loss.grad(self.predictions(values), self.data.labels)
        return (self.uh @ weights / self.data.n + self.r).reshape(self.shape)

    def objective(self, values, lam: float) -> ObjectiveReport:
        f = self.predictions(values)
        risk = float(np.mean(self.specs.loss.value(f, self.data.labels)))
        rho = values.ravel()
        reg = float(rho @ self.r * self.area)
        pos = rho > 0
        H = float(-np.sum(rho[pos] * np.log(rho[pos])) * self.area)
        return ObjectiveReport(risk=risk, reg_mean=reg, entropy=H, Q=risk + reg - lam * H, k_nn=0)


def _bernoulli(z):
    # B(z) = z / (e^z - 1) = 1 / exprel(z); exprel overflows to inf for large z, giving 0
    with np.errstate(over="ignore"):
        return 1.0 / exprel(z)


def _face_coefficients(U, lam, h, axis):
    """(a_minus, a_plus) on interior faces: J = (a_minus rho_i - a_plus rho_{i+1}) / h."""
    dU = np.diff(U, axis=axis)
    if lam > 0:
        # B(-|z|) = B(|z|) + |z| avoids cancellation on the downhill side
        small = lam * _bernoulli(np.abs(dU) / lam)
        large = small + np.abs(dU)
        up = dU >= 0
        return np.where(up, small, large), np.where(up, large, small)
    return np.maximum(-dU, 0.0), np.maximum(dU, 0.0)


def _coefficients(U, lam, h_u, h_w):
    return _face_coefficients(U, lam, h_u, 0), _face_coefficients(U, lam, h_w, 1)


def max_stable_dt(U, lam, h_u, h_w, coeffs=None) -> float:
    """Largest dt keeping the explicit update positive (diagonal coefficient >= 0)."""
    (am_u, ap_u), (am_w, ap_w) = coeffs or _coefficients(U, lam, h_u, h_w)
    out = np.zeros_like(U)
    out[:-1, :] += am_u / h_u**2
    out[1:, :] += ap_u / h_u**2
    out[:, :-1] += am_w / h_w**2
    out[:, 1:] += ap_w / h_w**2
    peak = out.max()
    return math.inf if peak == 0 else 1.0 / peak


def _flux_divergence(rho, coeffs, h_u, h_w):
    (am_u, ap_u), (am_w, ap_w) = coeffs
    J_u = (am_u * rho[:-1, :] - ap_u * rho[1:, :]) / h_u
    J_w = (am_w * rho[:, :-1] - ap_w * rho[:, 1:]) / h_w
    div = np.zeros_like(rho)
    div[:-1, :] -= J_u / h_u
    div[1:, :] += J_u / h_u
    div[:, :-1] -= J_w / h_w
    div[:, 1:] += J_w / h_w
    return div


def fp_step(rho: GridDensity, data: Dataset, specs: Specs, lam: float, dt: float,
            potential: GridPotential = None) -> GridDensity:
    """One explicit finite-volume step; raises if dt breaks positivity."""
    if lam < 0 or dt < 0:
        raise InvalidArgument("lam and dt must be nonnegative")
    if potential is None:
        potential = GridPotential(rho, data, specs)
    U = potential.potential(rho.values)
    coeffs = _coefficients(U, lam, rho.h_u, rho.h_w)
    limit = max_stable_dt(U, lam, rho.h_u, rho.h_w, coeffs)
    if dt > limit:
        raise InvalidArgument(f"dt={dt:.3e} exceeds the positivity bound; admissible dt <= {limit:.3e}")
    new = rho.values + dt * _flux_divergence(rho.values, coeffs, rho.h_u, rho.h_w)
    return rho.with_values(np.maximum(new, 0.0))


@dataclass
class GridRun:
    times: list
    Q: list
    final: GridDensity
    dt: float
    reports: list = field(default_factory=list, repr=False)


def fp_run(rho: GridDensity, data: Dataset, specs: Specs, lam: float, steps: int, dt: float = None,
           safety: float = 0.5, record_every: int = 1) -> GridRun:
    """Integrate ``steps`` steps recording the grid free energy.

    With ``dt=None`` the step is ``safety`` times the positivity bound at the
    initial state.
    """
    pot = GridPotential(rho, data, specs)
    if dt is None:
        dt = safety * max_stable_dt(pot.potential(rho.values), lam, rho.h_u, rho.h_w)
    rep = pot.objective(rho.values, lam)
    times, Q, reps = [0.0], [rep.Q], [rep]
    for k in range(1, steps + 1):
        rho = fp_step(rho, data, specs, lam, dt, potential=pot)
        if k % record_every == 0 or k == steps:
            rep = pot.objective(rho.values, lam)
            times.append(k * dt)
            Q.append(rep.Q)
            reps.append(rep)
    return GridRun(times, Q, rho, dt, reps)


def grid_objective(rho: GridDensity, data: Dataset, specs: Specs, lam: float) -> ObjectiveReport:
    if abs(rho.mass() - 1.0) > 1e-8:
        raise InvalidArgument(f"density not normalized (mass {rho.mass():.12f})")
    if np.any(rho.values < 0):
        raise InvalidArgument("negative density")
    return GridPotential(rho, data, specs).objective(rho.values, lam)


def grid_free_energy(rho: GridDensity, data: Dataset, specs: Specs, lam: float) -> float:
    """Q(rho) by midpoint quadrature with 0 log 0 = 0."""
    return grid_objective(rho, data, specs, lam).Q


def _boundary_ratio(values) -> float:
    edge = max(values[0].max(), values[-1].max(), values[:, 0].max(), values[:, -1].max())
    return float(edge / values.max())


def gibbs_fixed_point(data: Dataset, specs: Specs, lam: float, tol: float = 1e-11, damping: float = 0.5,
                      bounds=((-6.0, 6.0), (-6.0, 6.0)), shape=(128, 128), max_iter: int = 10_000,
                      boundary_tol: float = 1e-12) -> GridDensity:
    """Damped iteration rho <- (1 - a) rho + a normalize(exp(-U(., rho) / lam)).

    Starts from the regularizer-only Gibbs density; stops when the L1 change
    (integrated over cells) drops below ``tol``.  The residual history is
    stored in ``info``.
    """
    if not lam > 0:
        raise InvalidArgument("lam must be positive")
    if not 0 < damping <= 1:
        raise InvalidArgument("damping must lie in (0, 1]")
    grid = GridDensity(bounds, np.zeros(shape))
    pot = GridPotential(grid, data, specs)

    def gibbs(U):
        e = np.exp(-(U - U.min()) / lam)
        return e / (e.sum() * pot.area)

    rho = gibbs(pot.r.reshape(shape))
    residuals = []
    for it in range(1, max_iter + 1):
        target = gibbs(pot.potential(rho))
        new = (1.0 - damping) * rho + damping * target
        res = float(np.abs(new - rho).sum() * pot.area)
        residuals.append(res)
        rho = new
        if res < tol:
            break
    else:
        raise ConvergenceFailure(f"no convergence in {max_iter} iterations (residual {residuals[-1]:.3e})",
                                 residuals)
    ratio = _boundary_ratio(rho)
    if ratio > boundary_tol:
        raise InvalidArgument(f"boundary density ratio {ratio:.3e} exceeds {boundary_tol:.0e}; widen the grid bounds")
    out = GridDensity(bounds, rho / (rho.sum() * pot.area))
    out.info.update(residuals=residuals, iterations=len(residuals), residual=residuals[-1],
                    boundary_ratio=ratio)
    return out


def sample_from_grid(rho: GridDensity, n: int, rng) -> ParticleEnsemble:
    """i.i.d. draws from the piecewise-constant density (uniform within cells)."""
    p = (rho.values * rho.cell_area).ravel()
    p = p / p.sum()
    idx = rng.choice(p.size, size=n, p=p)
    iu, iw = np.divmod(idx, rho.n_w)
    (ul, _), (wl, _) = rho.bounds
    u = ul + (iu + rng.uniform(size=n)) * rho.h_u
    w = wl + (iw + rng.uniform(size=n)) * rho.h_w
    return ParticleEnsemble.from_uw(u, w[:, None])


def compare_particle_to_grid(ensemble: ParticleEnsemble, rho: GridDensity, coarsen: int = 1) -> float:
    """Total-variation distance between the particle histogram and the grid density.

    ``coarsen`` merges blocks of coarsen x coarsen cells before comparing.
    Particles outside the grid count as mass in an overflow cell.
    """
    if ensemble.d != 1:
        raise InvalidArgument("particle/grid comparison needs d = 1")
    if coarsen < 1 or rho.n_u % coarsen or rho.n_w % coarsen:
        raise InvalidArgument("coarsen must divide both grid dimensions")
    nu, nw = rho.n_u // coarsen, rho.n_w // coarsen
    (ul, uh), (wl, wh) = rho.bounds
    counts, _, _ = np.histogram2d(ensemble.u, ensemble.w[:, 0], bins=[nu, nw], range=[[ul, uh], [wl, wh]])
    p_hat = counts / ensemble.N
    outside = ensemble.N - int(round(counts.sum()))
    overflow = outside / ensemble.N
    if outside:
        warnings.warn(f"{overflow:.3%} of particles lie outside the grid", RuntimeWarning, stacklevel=2)
    p = (rho.values * rho.cell_area).reshape(nu, coarsen, nw, coarsen).sum(axis=(1, 3))
    return float(0.5 * (np.abs(p_hat - p).sum() + overflow))
