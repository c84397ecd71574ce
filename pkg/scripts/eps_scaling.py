"""Fit eps ||grad rho_eps||_2 against eps for the two reference pressure laws.

    python scripts/eps_scaling.py --n 64 --out scaling.json
"""
import argparse
import json
import logging

from nnflow.analysis import epsilon_scaling_study
from nnflow.verify import SCALING_EPS, scaling_level


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--gamma", type=float, nargs="+", default=[1.5, 2.5])
    ap.add_argument("--eps", type=float, nargs="+", default=list(SCALING_EPS))
    ap.add_argument("--out", help="write results as JSON")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    results = {}
    for gamma in args.gamma:
        res = epsilon_scaling_study(scaling_level(gamma, args.n), args.eps)
        results[str(gamma)] = res.to_dict()
        print(f"gamma={gamma}: slope={res.slope}")
        for e, v in zip(res.eps, res.values):
            print(f"  eps={e:<8g} eps*||grad rho||={v:.4g}")
        if res.excluded:
            print(f"  excluded (solver failure): {res.excluded}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
