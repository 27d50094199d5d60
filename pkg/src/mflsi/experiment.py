"""Teacher-student data, multi-arm experiment orchestration and plot-data output."""
from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SimConfig, TrajectoryLog, init_ensemble, simulate
from .errors import InvalidArgument, MflsiError
from .fp_oracle import gibbs_fixed_point, grid_free_energy
from .lsi import lyapunov_bound, lyapunov_constants, quartic_bound_for
from .model import ActivationSpec, Dataset, LossSpec, RegularizerSpec, Specs
from .objective import RateFit, fit_decay_rate, trailing_q_star

SAMPLERS = ("sphere", "ball", "gaussian-clipped")

# reference teacher: two hidden neurons in d = 2
REFERENCE_TEACHER = ((1.1, (1.0, 2.0)), (-3.2, (-3.0, 1.0)))


class OutputNotWritable(MflsiError, OSError):
    exit_code = 2


@dataclass
class TeacherSpec:
    neurons: list  # [(u, w-vector), ...]
    activation: ActivationSpec = field(default_factory=ActivationSpec)
    input_sampler: str = "sphere"
    label_noise_sd: float = 0.0
    teacher_sum: bool = False  # sum over teacher neurons instead of mean

    def __post_init__(self):
        if len(self.neurons) < 1:
            raise InvalidArgument("teacher needs at least one neuron")
        self.neurons = [(float(u), np.atleast_1d(np.asarray(w, dtype=float))) for u, w in self.neurons]
        if len({w.shape for _, w in self.neurons}) != 1:
            raise InvalidArgument("teacher neurons differ in dimension")
        if self.input_sampler not in SAMPLERS:
            raise InvalidArgument(f"unknown input sampler {self.input_sampler!r}")
        if self.label_noise_sd < 0:
            raise InvalidArgument("label_noise_sd must be >= 0")

    @property
    def d(self) -> int:
        return self.neurons[0][1].shape[0]

    @property
    def u(self) -> np.ndarray:
        return np.array([u for u, _ in self.neurons])

    @property
    def w(self) -> np.ndarray:
        return np.stack([w for _, w in self.neurons])

    @classmethod
    def reference(cls, **kw) -> "TeacherSpec":
        return cls(neurons=[(u, w) for u, w in REFERENCE_TEACHER], **kw)

    def sample_inputs(self, n: int, rng) -> np.ndarray:
        xm, d = self.activation.x_max, self.d
        g = rng.standard_normal((n, d))
        if self.input_sampler == "gaussian-clipped":
            norms = np.linalg.norm(g, axis=1, keepdims=True)
            return g * np.minimum(1.0, xm / np.maximum(norms, 1e-300))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        if self.input_sampler == "sphere":
            return xm * g
        return xm * g * rng.uniform(size=(n, 1)) ** (1.0 / d)

    def labels(self, X) -> np.ndarray:
        out = self.activation.sigma(X @ self.w.T) @ self.u
        return out if self.teacher_sum else out / len(self.neurons)


def make_teacher_dataset(teacher: TeacherSpec, n: int, seed) -> Dataset:
    """n inputs from the teacher's sampler with labels y = (1/M) sum_j u_j h(w_j, x) + noise."""
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    rng = np.random.default_rng(seed)
    X = teacher.sample_inputs(n, rng)
    y = teacher.labels(X)
    if teacher.label_noise_sd > 0:
        y = y + teacher.label_noise_sd * rng.standard_normal(n)
    return Dataset(X, y)


class TeacherStream:
    """Fresh ``epoch_size`` teacher samples per epoch, consumed ``batch`` at a time."""

    def __init__(self, teacher: TeacherSpec, epoch_size: int, batch: int, seed: int):
        if epoch_size < 1 or batch < 1 or epoch_size % batch:
            raise InvalidArgument("batch must divide epoch_size")
        self.teacher, self.epoch_size, self.batch, self.seed = teacher, epoch_size, batch, seed
        self.steps_per_epoch = epoch_size // batch
        self._epoch, self._data = None, None

    def epoch_data(self, epoch: int) -> Dataset:
        if epoch != self._epoch:
            self._epoch = epoch
            self._data = make_teacher_dataset(self.teacher, self.epoch_size, [self.seed, epoch])
        return self._data

    def __call__(self, step: int) -> Dataset:
        epoch, k = divmod(step, self.steps_per_epoch)
        data = self.epoch_data(epoch)
        if self.steps_per_epoch == 1:
            return data
        sl = slice(k * self.batch, (k + 1) * self.batch)
        return Dataset(data.inputs[sl], data.labels[sl])


@dataclass
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    teacher: TeacherSpec = field(default_factory=TeacherSpec.reference)
    regularizers: dict = field(default_factory=lambda: {
        "l2": RegularizerSpec.power(1.0, 2.0), "l3": RegularizerSpec.power(1.0, 3.0)})
    loss: LossSpec = field(default_factory=lambda: LossSpec("square"))
    outputs: str = None
    emit: dict = field(default_factory=lambda: {"csv": True, "json": True, "plotdata": True})
    epochs: int = 200  # None: use sim.steps and sim.lr_decay_every as given
    epoch_size: int = 200
    decay_every_epochs: int = 100
    eval_size: int = 1000
    data_seed: int = 12345
    fit_window: tuple = None
    C_universal: float = 1.0
    strict_proof_scaling: bool = False
    quartic_m: float = 1.0
    grid_q_star: bool = True

    def validate(self):
        if not self.regularizers:
            raise InvalidArgument("at least one regularizer arm is required")
        if self.teacher.d != self.sim.d:
            raise InvalidArgument(f"teacher dimension {self.teacher.d} != sim.d {self.sim.d}")
        if self.epochs is not None and self.epochs < 0:
            raise InvalidArgument("epochs must be >= 0")
        self.sim_config().validate()

    def sim_config(self) -> SimConfig:
        """SimConfig with steps and the decay period expressed in steps."""
        if self.epochs is None:
            return self.sim
        spe = self.epoch_size // self.sim.batch
        sim = SimConfig(**{**self.sim.__dict__})
        sim.steps = self.epochs * spe
        sim.lr_decay_every = self.decay_every_epochs * spe
        return sim

    def specs(self, arm: str) -> Specs:
        return Specs(self.teacher.activation, self.loss, self.regularizers[arm])


@dataclass
class ArmResult:
    arm: str
    log: TrajectoryLog
    rate_fit: RateFit = None
    rate_fit_error: str = None
    q_star_source: str = None
    bounds: dict = field(default_factory=dict)  # route -> LsiBoundReport
    skipped: dict = field(default_factory=dict)  # route -> reason

    def summary(self) -> dict:
        return {
            "arm": self.arm,
            "records": len(self.log),
            "final": {k: getattr(self.log, k)[-1] for k in ("Q", "risk", "reg_mean", "entropy")} if len(self.log) else None,
            "rate_fit": self.rate_fit.to_dict() if self.rate_fit else None,
            "rate_fit_error": self.rate_fit_error,
            "q_star_source": self.q_star_source,
            "bounds": {k: v.to_dict() for k, v in self.bounds.items()},
            "skipped_bounds": self.skipped,
        }


def ensure_writable(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path):
            pass
    except OSError as exc:
        raise OutputNotWritable(f"output directory {path!r} is not writable: {exc}") from exc
    return path


def bound_reports(specs: Specs, d: int, lam: float, C_universal: float = 1.0,
                  strict_proof_scaling: bool = False, quartic_m: float = 1.0) -> tuple[dict, dict]:
    """Every applicable bound route for one spec set; returns (reports, skip reasons)."""
    reports, skipped = {}, {}
    if not lam > 0:
        return reports, {"quartic-holley-stroock": "lam = 0", "lyapunov": "lam = 0"}
    if not math.isfinite(specs.loss.L1):
        reason = "loss gradient is unbounded (square loss)"
        return reports, {"quartic-holley-stroock": reason, "lyapunov": reason}
    if specs.reg.quartic_coefficient is None:
        skipped["quartic-holley-stroock"] = f"regularizer {specs.reg.kind} is not quartic"
    else:
        reports["quartic-holley-stroock"] = quartic_bound_for(specs, d, lam, quartic_m)
    if specs.reg.p < 1 or not specs.reg.m > 0:
        skipped["lyapunov"] = f"dissipativity certificate p={specs.reg.p}, m={specs.reg.m} (needs p >= 1, m > 0)"
    else:
        cert = lyapunov_constants(specs, d, lam, strict_proof_scaling)
        reports["lyapunov"] = lyapunov_bound(cert, lam, C_universal)
    return reports, skipped


def _q_star(cfg: ExperimentConfig, specs: Specs, sim: SimConfig, log: TrajectoryLog, eval_data: Dataset):
    if cfg.grid_q_star and sim.d == 1 and sim.lam > 0:
        try:
            rho = gibbs_fixed_point(eval_data, specs, sim.lam)
            return grid_free_energy(rho, eval_data, specs, sim.lam), "grid"
        except MflsiError:
            pass
    return trailing_q_star(log.Q), "proxy"


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Train every regularizer arm from the same initial ensemble and data stream."""
    cfg.validate()
    if cfg.outputs is not None:
        ensure_writable(cfg.outputs)
    sim = cfg.sim_config()
    init = init_ensemble(sim.N, sim.d, sim.seed)
    eval_data = make_teacher_dataset(cfg.teacher, cfg.eval_size, [cfg.data_seed, 2**32 - 1])
    results = {}
    for arm in cfg.regularizers:
        specs = cfg.specs(arm)
        stream = TeacherStream(cfg.teacher, cfg.epoch_size, sim.batch, cfg.data_seed)
        try:
            log = simulate(sim, specs, stream, ensemble=init.copy(), eval_data=eval_data)
        except MflsiError as exc:
            exc.args = (f"[arm {arm}] {exc.args[0] if exc.args else ''}",)
            raise
        res = ArmResult(arm, log)
        if len(log) >= 3:
            q_star, res.q_star_source = _q_star(cfg, specs, sim, log, eval_data)
            try:
                res.rate_fit = fit_decay_rate(log, q_star, cfg.fit_window)
            except InvalidArgument as exc:
                res.rate_fit_error = str(exc)
        res.bounds, res.skipped = bound_reports(specs, sim.d, sim.lam, cfg.C_universal,
                                                cfg.strict_proof_scaling, cfg.quartic_m)
        results[arm] = res
    if cfg.outputs is not None:
        write_outputs(results, cfg)
    return results


def write_outputs(results: dict, cfg: ExperimentConfig):
    out = cfg.outputs
    for arm, res in results.items():
        if cfg.emit.get("csv", True):
            res.log.to_csv(os.path.join(out, f"trajectory_{arm}.csv"))
        if cfg.emit.get("json", True):
            with open(os.path.join(out, f"report_{arm}.json"), "w") as fh:
                json.dump(res.summary(), fh, indent=2, sort_keys=True)
            if res.log.snapshots:
                res.log.snapshots_json(os.path.join(out, f"snapshots_{arm}.json"))
    if cfg.emit.get("plotdata", True):
        emit_plot_data({a: r.log for a, r in results.items()}, {a: r.bounds for a, r in results.items()},
                       out, teacher=cfg.teacher)


LOSS_COLUMNS = ("t", "risk", "reg_mean", "entropy", "regularized_loss", "Q", "grad_norm_mean")


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def neuron_rows(u, w, scale: float = 1.0) -> np.ndarray:
    """Rows [u, w_1..w_d, s u w_1 .. s u w_d]."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float).reshape(len(u), -1)
    return np.column_stack([u, w, scale * u[:, None] * w])


def emit_plot_data(logs: dict, reports: dict, directory, teacher: TeacherSpec = None, d: int = None) -> list:
    """Write loss curves, neuron scatters and teacher directions as CSV; returns the paths.

    Per arm: ``loss_<arm>.csv`` (regularized_loss omits the entropy term, Q
    includes it), ``neurons_<arm>.csv`` with u, w, u*w and
    ``neurons_<arm>_scaled.csv`` with the u*w columns divided by N.
    ``bounds_<arm>.json`` holds the bound reports.
    """
    ensure_writable(directory)
    paths = []
    for arm, log in logs.items():
        p = os.path.join(directory, f"loss_{arm}.csv")
        _write_rows(p, LOSS_COLUMNS, zip(log.times, log.risk, log.reg_mean, log.entropy,
                                         log.regularized_loss, log.Q, log.grad_norm_mean))
        paths.append(p)
        ens = log.final_ensemble
        dim = ens.d if ens is not None else (d or (teacher.d if teacher else 1))
        header = ["u"] + [f"w{i + 1}" for i in range(dim)] + [f"uw{i + 1}" for i in range(dim)]
        for suffix, scale in (("", 1.0), ("_scaled", None)):
            p = os.path.join(directory, f"neurons_{arm}{suffix}.csv")
            if ens is None:
                rows = []
            else:
                rows = neuron_rows(ens.u, ens.w, 1.0 if scale else 1.0 / ens.N)
            _write_rows(p, header, rows)
            paths.append(p)
        p = os.path.join(directory, f"bounds_{arm}.json")
        with open(p, "w") as fh:
            json.dump({k: v.to_dict() for k, v in (reports.get(arm) or {}).items()}, fh, indent=2, sort_keys=True)
        paths.append(p)
    if teacher is not None:
        p = os.path.join(directory, "teacher.csv")
        header = ["u"] + [f"w{i + 1}" for i in range(teacher.d)] + [f"uw{i + 1}" for i in range(teacher.d)]
        _write_rows(p, header, neuron_rows(teacher.u, teacher.w))
        paths.append(p)
    return paths
