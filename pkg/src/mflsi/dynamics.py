"""Euler-Maruyama integration of the interacting particle system

    d theta = -grad U(theta, rho_t) dt + sqrt(2 lam) dB_t.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import InvalidArgument, NumericFault
from .model import Dataset, ParticleEnsemble, Specs, ensemble_drift
from .objective import free_energy
from .rng import CounterNoise

CSV_COLUMNS = ("t", "Q", "risk", "reg_mean", "entropy", "grad_norm_mean")

DataSource = Union[Dataset, Callable[[int], Dataset]]


@dataclass
class SimConfig:
    N: int = 20
    d: int = 2
    lam: float = 1.0
    dt: float = 1e-4
    steps: int = 1000
    seed: int = 0
    lr_decay_every: int = 0  # 0 disables decay
    lr_decay_factor: float = 0.5
    batch: int = 200
    record_every: int = 10
    k_nn: int = 3
    keep_snapshots: bool = False

    def validate(self):
        if self.N < 1:
            raise InvalidArgument("N must be >= 1")
        if self.d < 1:
            raise InvalidArgument("d must be >= 1")
        if self.lam < 0:
            raise InvalidArgument("lam must be >= 0")
        if not self.dt >= 0:
            raise InvalidArgument("dt must be >= 0")
        if self.steps < 0 or self.record_every < 1 or self.batch < 1:
            raise InvalidArgument("steps >= 0, record_every >= 1 and batch >= 1 required")
        if not 0 < self.lr_decay_factor <= 1:
            raise InvalidArgument("lr_decay_factor must lie in (0, 1]")

    def step_size(self, step: int) -> float:
        if self.lr_decay_every <= 0:
            return self.dt
        return self.dt * self.lr_decay_factor ** (step // self.lr_decay_every)


@dataclass
class TrajectoryLog:
    times: list = field(default_factory=list)
    Q: list = field(default_factory=list)
    risk: list = field(default_factory=list)
    reg_mean: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    grad_norm_mean: list = field(default_factory=list)
    snapshots: list = None
    snapshot_times: list = field(default_factory=list, repr=False)
    final_ensemble: ParticleEnsemble = field(default=None, repr=False)

    def append(self, t, report, grad_norm_mean, snapshot=None):
        self.times.append(float(t))
        self.Q.append(report.Q)
        self.risk.append(report.risk)
        self.reg_mean.append(report.reg_mean)
        self.entropy.append(report.entropy)
        self.grad_norm_mean.append(float(grad_norm_mean))
        if snapshot is not None:
            if self.snapshots is None:
                self.snapshots = []
            self.snapshots.append(snapshot)

    def __len__(self):
        return len(self.times)

    @property
    def regularized_loss(self) -> list:
        return [r + g for r, g in zip(self.risk, self.reg_mean)]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in zip(self.times, self.Q, self.risk, self.reg_mean, self.entropy, self.grad_norm_mean):
            writer.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "TrajectoryLog":
        log = cls()
        with open(path) as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                log.times.append(float(row["t"]))
                log.Q.append(float(row["Q"]))
                log.risk.append(float(row["risk"]))
                log.reg_mean.append(float(row["reg_mean"]))
                log.entropy.append(float(row["entropy"]))
                log.grad_norm_mean.append(float(row["grad_norm_mean"]))
        return log

    def snapshots_json(self, path=None) -> str:
        """JSON array (one per snapshot) of particle rows ``[u, w_1, ..., w_d]``."""
        snaps = [e.rows_uw().tolist() for e in (self.snapshots or [])]
        text = json.dumps({"times": self.snapshot_times, "snapshots": snaps})
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def init_ensemble(N: int, d: int, seed: int) -> ParticleEnsemble:
    """Standard Gaussian initialization of all d+1 coordinates."""
    if N < 1:
        raise InvalidArgument("N must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    rows = rng.standard_normal((N, d + 1))  # [u, w...]
    return ParticleEnsemble.from_uw(rows[:, 0], rows[:, 1:])


def drift(ensemble: ParticleEnsemble, data: Dataset, specs: Specs) -> np.ndarray:
    """grad U(theta_i, rho_N) for every particle, against the frozen ensemble."""
    return ensemble_drift(ensemble, data, specs)


def em_step(ensemble: ParticleEnsemble, data: Dataset, specs: Specs, lam: float, dt: float,
            noise: CounterNoise, step: int = 0, grads: np.ndarray = None) -> ParticleEnsemble:
    """One synchronous Euler-Maruyama step; ``grads`` may be passed if already computed."""
    if dt < 0:
        raise InvalidArgument("dt must be >= 0")
    if dt == 0:
        return ensemble.copy()
    if grads is None:
        grads = drift(ensemble, data, specs)
    new = ensemble.theta - dt * grads
    if lam > 0:
        new += math.sqrt(2.0 * lam * dt) * noise.normal(ensemble.ids, step, ensemble.d + 1)
    bad = ~np.all(np.isfinite(new), axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise NumericFault(f"non-finite update for particle {i} at step {step}", index=i, step=step)
    return ParticleEnsemble(new, ensemble.ids.copy())


def _batch_at(source: DataSource, step: int) -> Dataset:
    return source(step) if callable(source) else source


def simulate(config: SimConfig, specs: Specs, data_source: DataSource,
             ensemble: ParticleEnsemble = None, eval_data: Dataset = None) -> TrajectoryLog:
    """Run ``config.steps`` EM steps and record the objective every ``record_every`` steps.

    The objective is evaluated on ``eval_data`` when given, else on the batch
    used by the step that follows the record.  When N <= k_nn the entropy
    is recorded as NaN (and Q too if lam > 0).
    """
    config.validate()
    if ensemble is None:
        ensemble = init_ensemble(config.N, config.d, config.seed)
    noise = CounterNoise(config.seed)
    fixed = not callable(data_source)
    log = TrajectoryLog()
    t = 0.0

    def record(ens, batch):
        grads = drift(ens, batch, specs)
        data = eval_data if eval_data is not None else batch
        if ens.N > config.k_nn:
            rep = free_energy(ens, data, specs, config.lam, config.k_nn)
        else:
            rep = free_energy(ens, data, specs, 0.0, config.k_nn)
            if config.lam > 0:
                rep.Q = math.nan
        if config.keep_snapshots:
            log.snapshot_times.append(t)
        log.append(t, rep, np.mean(np.sum(grads**2, axis=1)), ens.copy() if config.keep_snapshots else None)
        return grads

    grads = record(ensemble, _batch_at(data_source, 0))
    for step in range(config.steps):
        batch = _batch_at(data_source, step)
        if grads is None:
            grads = drift(ensemble, batch, specs)
        dt = config.step_size(step)
        ensemble = em_step(ensemble, batch, specs, config.lam, dt, noise, step, grads=grads)
        t += dt
        grads = None
        done = step + 1
        if done % config.record_every == 0 or done == config.steps:
            nxt = _batch_at(data_source, done) if done < config.steps else batch
            g = record(ensemble, nxt)
            if fixed:
                grads = g
    log.final_ensemble = ensemble
    return log
