"""d = 1 grid study: self-consistent Gibbs state, free-energy decay and fitted rate.

Also repeats the fixed point on coarser and finer meshes so the
discretization error of Q* can be read off.
"""
import argparse
import json
import math

import numpy as np

from mflsi.fp_oracle import GridDensity, fp_run, gibbs_fixed_point, grid_free_energy
from mflsi.lsi import lyapunov_bound, lyapunov_constants, quartic_bound_for
from mflsi.model import ActivationSpec, Dataset, LossSpec, RegularizerSpec, Specs
from mflsi.objective import fit_decay_rate


def teacher_data(n):
    x = np.linspace(-1.0, 1.0, n)
    act = ActivationSpec()
    return Dataset(x[:, None], 0.5 * (1.1 * act.sigma(x) - 3.2 * act.sigma(-x)))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=4, help="data points on [-1, 1]")
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--shapes", type=int, nargs="+", default=[64, 128, 256])
    args = p.parse_args()

    data = teacher_data(args.n)
    specs = Specs(ActivationSpec(), LossSpec("clipped-square", L1=10.0), RegularizerSpec.quartic(args.beta))
    mesh = {}
    for n in args.shapes:
        rho = gibbs_fixed_point(data, specs, args.lam, shape=(n, n))
        mesh[n] = {"Q_star": grid_free_energy(rho, data, specs, args.lam), "iterations": rho.info["iterations"]}

    rho_star = gibbs_fixed_point(data, specs, args.lam)
    q_star = grid_free_energy(rho_star, data, specs, args.lam)
    run = fp_run(GridDensity.gaussian(), data, specs, args.lam, args.steps, record_every=10)
    T = run.times[-1]
    fit = fit_decay_rate(run, q_star, (T / 3, 2 * T / 3))
    bounds = {"quartic": quartic_bound_for(specs, 1, args.lam),
              "lyapunov": lyapunov_bound(lyapunov_constants(specs, 1, args.lam), args.lam)}
    print(json.dumps({
        "mesh": mesh,
        "dt": run.dt,
        "max_step_change_in_Q": float(np.max(np.diff(run.Q))),
        "fit": fit.to_dict(),
        "log10_rate_bounds": {k: b.log_rate / math.log(10) for k, b in bounds.items()},
    }, indent=2))


if __name__ == "__main__":
    main()
