"""Command-line entry point: ``mflsi <command> --config run.yaml --set key=value``.

Exit codes: 0 success, 2 configuration error, 3 numeric fault, 4 convergence failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import config as C
from .dynamics import CSV_COLUMNS, TrajectoryLog, init_ensemble
from .errors import InvalidArgument, MflsiError, NumericFault
from .experiment import LOSS_COLUMNS, bound_reports, ensure_writable, run_experiment
from .fp_oracle import GridDensity, fp_run, gibbs_fixed_point, grid_objective
from .gradcheck import gradcheck
from .lsi import empirical_oscillation, lyapunov_bound, lyapunov_constants, verify_lyapunov
from .model import validate_activation, validate_regularizer
from .objective import fit_decay_rate, trailing_q_star

log = logging.getLogger("mflsi")

SCHEMA_MD = f"""# Output files

All CSV files have a single header row; numbers are written with full
double precision.

## trajectory_<arm>.csv

Particle-run records, one row per record.

| column | meaning |
|---|---|
| t | elapsed time (sum of step sizes) |
| Q | risk + reg_mean - lam * entropy |
| risk | mean loss over the evaluation data |
| reg_mean | mean regularizer value over particles |
| entropy | k-nearest-neighbour differential entropy estimate (nats); NaN if N <= k |
| grad_norm_mean | mean over particles of the squared drift norm |

Column order: {", ".join(CSV_COLUMNS)}.

## loss_<arm>.csv

Plot data for loss curves. Columns: {", ".join(LOSS_COLUMNS)}.
`regularized_loss` is risk + reg_mean (no entropy term); `Q` includes it.

## neurons_<arm>.csv, neurons_<arm>_scaled.csv, teacher.csv

One row per neuron: `u, w1..wd, uw1..uwd`. In the `_scaled` file the
`uw` columns are divided by the particle count N.

## snapshots_<arm>.json

`{{"times": [...], "snapshots": [[[u, w1, ..., wd], ...], ...]}}`.

## report_<arm>.json, bounds_<arm>.json, lsi.json

Rate fit (`rate, intercept, r_squared, window, Q_star`) and bound reports
(`route, mode, lam, nu, log10_nu, nu_mantissa, overflow, rate, log10_rate,
intermediates`). When `overflow` is true, `nu` is null and the value is
`nu_mantissa * 10**floor(log10_nu)`.

## grid_rho.csv

Two comment lines with bounds and shape, then `n_u` rows of `n_w`
comma-separated cell densities (row index: u, column index: w).

## fp_trajectory.csv

Columns: t, Q, risk, reg_mean, entropy for the grid solver.
"""


def write_schema(directory) -> str:
    path = os.path.join(directory, "schema.md")
    with open(path, "w") as fh:
        fh.write(SCHEMA_MD)
    return path


def _dump(obj, directory=None, name=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_default)
    print(text)
    if directory and name:
        with open(os.path.join(directory, name), "w") as fh:
            fh.write(text + "\n")


def _default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    return str(v)


# ------------------------------------------------------------------ commands


def cmd_simulate(cfg, args):
    exp = C.experiment(cfg)
    exp.validate()
    out = ensure_writable(exp.outputs)
    results = run_experiment(exp)
    write_schema(out)
    _dump({arm: r.summary() for arm, r in results.items()})
    return 0


def cmd_lsi_bound(cfg, args):
    specs = C.specs(cfg)
    sim = C.sim_config(cfg)
    lsi = C.section(cfg, "lsi")
    lam = lsi["lam"] if lsi["lam"] is not None else sim.lam
    reports, skipped = bound_reports(specs, sim.d, lam, lsi["C_universal"], lsi["strict_proof_scaling"],
                                     lsi["quartic_m"])
    out = {"reports": {k: v.to_dict() for k, v in reports.items()}, "skipped": skipped}
    if "lyapunov" in reports:
        cert = lyapunov_constants(specs, sim.d, lam, lsi["strict_proof_scaling"])
        data = C.dataset(cfg, sim.d)
        ens = init_ensemble(sim.N, sim.d, sim.seed)
        chk = verify_lyapunov(cert, ens, data, specs, lsi["verify_trials"], lsi["verify_radius"], sim.seed)
        out["lyapunov_check"] = chk.__dict__
        out["lyapunov_certificate"] = cert.to_dict()
        if lsi["empirical_osc"]:
            osc = empirical_oscillation(ens, data, specs, seed=sim.seed)
            out["reports"]["lyapunov-empirical-osc"] = lyapunov_bound(cert, lam, lsi["C_universal"], osc=osc).to_dict()
    directory = ensure_writable(C.output_dir(cfg))
    _dump(out, directory, "lsi.json")
    write_schema(directory)
    return 0


def cmd_fp_oracle(cfg, args):
    specs = C.specs(cfg)
    sim = C.sim_config(cfg)
    fp = C.section(cfg, "fp")
    bounds = tuple(tuple(b) for b in fp["bounds"])
    shape = tuple(fp["shape"])
    directory = ensure_writable(C.output_dir(cfg))
    data = C.dataset(cfg, 1)
    rho = gibbs_fixed_point(data, specs, sim.lam, fp["tol"], fp["damping"], bounds, shape, fp["max_iter"])
    star = grid_objective(rho, data, specs, sim.lam)
    rho.to_csv(os.path.join(directory, "grid_rho.csv"))
    out = {"gibbs": {"iterations": rho.info["iterations"], "residual": rho.info["residual"],
                     "boundary_ratio": rho.info["boundary_ratio"], "objective": star.to_dict()}}
    if fp["steps"] > 0:
        start = GridDensity.gaussian(tuple(fp["init_mean"]), fp["init_sd"], bounds, shape)
        run = fp_run(start, data, specs, sim.lam, fp["steps"], fp["dt"], fp["safety"], fp["record_every"])
        rows = [[t, r.Q, r.risk, r.reg_mean, r.entropy] for t, r in zip(run.times, run.reports)]
        np.savetxt(os.path.join(directory, "fp_trajectory.csv"), np.array(rows), delimiter=",",
                   header="t,Q,risk,reg_mean,entropy", comments="", fmt="%.17g")
        fit = fit_decay_rate(run, star.Q, _middle_third(run.times))
        out["run"] = {"dt": run.dt, "steps": fp["steps"], "Q_final": run.Q[-1], "rate_fit": fit.to_dict()}
    _dump(out, directory, "fp_oracle.json")
    write_schema(directory)
    return 0


def _middle_third(times):
    T0, T1 = times[0], times[-1]
    return (T0 + (T1 - T0) / 3.0, T0 + 2.0 * (T1 - T0) / 3.0)


def cmd_fit_rate(cfg, args):
    fit = C.section(cfg, "fit")
    if not fit["trajectory"]:
        raise InvalidArgument("fit.trajectory is required")
    traj = TrajectoryLog.from_csv(fit["trajectory"])
    q_star = fit["Q_star"] if fit["Q_star"] is not None else trailing_q_star(traj.Q)
    window = tuple(fit["window"]) if fit["window"] else None
    res = fit_decay_rate(traj, q_star, window)
    _dump({**res.to_dict(), "q_star_source": "given" if fit["Q_star"] is not None else "proxy"})
    return 0


def cmd_gradcheck(cfg, args):
    g = C.section(cfg, "gradcheck")
    specs = C.specs(cfg)
    rep = gradcheck(g["instances"], tuple(g["dims"]), g["seed"], g["step"], act=specs.act, loss=specs.loss,
                    reg=specs.reg)
    _dump(rep.to_dict())
    if not rep.ok:
        raise NumericFault("derivative check failed")
    return 0


def cmd_validate_specs(cfg, args):
    v = C.section(cfg, "validate")
    specs = C.specs(cfg)
    sim = C.sim_config(cfg)
    reports = {"activation": validate_activation(specs.act, v["trials"], v["radius"], sim.d, v["seed"])}
    arms = C.regularizer_arms(cfg) or {"main": specs.reg}
    for arm, reg in arms.items():
        reports[f"regularizer:{arm}"] = validate_regularizer(reg, v["trials"], v["radius"], sim.d + 1, v["seed"])
    out = {k: {**r.__dict__, "ok": r.ok, "violations": r.violations} for k, r in reports.items()}
    out["loss"] = {"kind": specs.loss.kind, "L1": specs.loss.L1, "assumption_violating": specs.loss.assumption_violating}
    _dump(out)
    if args.strict and not all(r.ok for r in reports.values()):
        return 3
    return 0


def cmd_schema(cfg, args):
    print(SCHEMA_MD)
    return 0


COMMANDS = {
    "simulate": (cmd_simulate, "run the teacher-student experiment for every regularizer arm"),
    "lsi-bound": (cmd_lsi_bound, "compute log-Sobolev constant bounds and the implied rate"),
    "fp-oracle": (cmd_fp_oracle, "d = 1 grid solver: Gibbs fixed point and optional time integration"),
    "fit-rate": (cmd_fit_rate, "fit an exponential decay rate to a trajectory CSV"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of potential derivatives"),
    "validate-specs": (cmd_validate_specs, "sample the growth certificates of the configured specs"),
    "schema": (cmd_schema, "print the output-file schema"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mflsi", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. sim.N=100 (repeatable)")
        if name == "validate-specs":
            sp.add_argument("--strict", action="store_true", help="exit 3 on any certificate violation")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = C.check(C.apply_overrides(C.load(args.config), args.overrides))
        return COMMANDS[args.command][0](cfg, args)
    except MflsiError as exc:
        print(f"mflsi: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
