"""log10 of the log-Sobolev constant bound over a (beta, lam) grid for both routes."""
import argparse

from mflsi.lsi import lyapunov_bound, lyapunov_constants, quartic_bound_for
from mflsi.model import ActivationSpec, LossSpec, RegularizerSpec, Specs


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--betas", type=float, nargs="+", default=[0.25, 1.0, 4.0])
    p.add_argument("--lams", type=float, nargs="+", default=[0.1, 1.0, 10.0])
    p.add_argument("--L1", type=float, default=1.0, help="loss-gradient bound of the Huber loss")
    args = p.parse_args()

    print(f"{'beta':>6} {'lam':>6} {'quartic':>12} {'lyapunov':>12}")
    for beta in args.betas:
        specs = Specs(ActivationSpec(), LossSpec("huber", L1=args.L1), RegularizerSpec.quartic(beta))
        for lam in args.lams:
            q = quartic_bound_for(specs, args.d, lam).log10_nu
            ly = lyapunov_bound(lyapunov_constants(specs, args.d, lam), lam).log10_nu
            print(f"{beta:6.2f} {lam:6.2f} {q:12.4g} {ly:12.4g}")


if __name__ == "__main__":
    main()
