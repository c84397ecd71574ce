"""Run the reference ladder and print per-rung diagnostics.

Three joint rungs in (alpha, delta, eta), then eps descends.
"""
import argparse

from nnflow.outer import geometric_ladder, run_ladder
from nnflow.verify import LADDER_EPS, ladder_base


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--joint", type=int, default=3)
    args = ap.parse_args()

    res = run_ladder(geometric_ladder(ladder_base(args.n), args.joint, LADDER_EPS))
    for k, r in enumerate(res.rungs):
        lev, rep, dg = r.level, r.report, r.diagnostics
        print(f"rung {k:2d}  alpha={lev.alpha:<7.1e} delta={lev.delta:<7.1e} eta={lev.eta:<7.1e} "
              f"eps={lev.eps:<7.1e} iters={rep.iterations:<3d} "
              f"weak={dg.weak_residuals['total']:.3e}  eps|grad rho|={dg.eps_gradient_norms['L2']:.3e}")
    if not res.completed:
        print("stopped:", res.error)


if __name__ == "__main__":
    main()
