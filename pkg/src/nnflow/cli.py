"""Command-line interface.

Exit codes: 0 success, 1 negative answer (inadmissible triple, failed
verification check), 2 bad input (usage, config validation, unknown suite),
3 solver failure (a partial manifest is still written).
"""
from __future__ import annotations

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import io
import json
import logging
import os
from pathlib import Path
import sys
import time

import numpy as np

from . import __version__
from .analysis import CSV_HEADER
from .config import ConfigError, RunConfig, sample_forcing, sample_scalar
from .constitutive import admissible, frob
from .fields import lebesgue_norm, magnitude, write_field
from .momentum import corner_ops
from .outer import (HBData, LadderSchedule, LevelParams, LevelSolveError, Physical, run_ladder,
                    solve_hb)

log = logging.getLogger("nnflow")

EXIT_OK, EXIT_NO, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _atomic_text(path: Path, text: str) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _dump_json(path: Path, obj) -> Path:
    return _atomic_text(path, json.dumps(obj, indent=2, default=_json_default))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def build_levels(cfg: RunConfig, f: np.ndarray | None = None) -> list[LevelParams]:
    """LevelParams for every ladder rung of ``cfg``; ``f`` overrides the forcing."""
    grid = cfg.grid()
    p = cfg.problem
    f = sample_forcing(grid, p.f) if f is None else f
    ph = Physical(M=p.M, gamma=p.gamma, a=p.a, r=p.r, mu0=p.mu0, lambda0=p.lambda0,
                  f=f, g=sample_forcing(grid, p.g))
    hb = None
    if cfg.hb is not None:
        h = cfg.hb
        hb = HBData(tau_star=h.tau_star, nu=h.nu, eps_reg=h.eps_reg[0], alpha_hb=h.alpha_hb,
                    beta=h.beta, rho_check=sample_scalar(grid, h.rho_check))
    L = cfg.ladder
    return [LevelParams(grid, alpha=a, delta=dl, eps=e, eta=et, q=p.q, physical=ph, hb=hb)
            for a, dl, e, et in zip(L.alpha, L.delta, L.eps, L.eta)]


def solver_opts(cfg: RunConfig) -> dict:
    s = cfg.solver
    return {"tol": s.tol, "theta": s.theta, "max_iter": s.max_iter, "method": s.method}


def _load(path) -> RunConfig:
    cfg = RunConfig.load(path)
    build_levels(cfg)  # surfaces constructor-level validation as ConfigError
    return cfg


def _workers(jobs: int) -> int:
    try:
        cap = int(os.environ.get("NNFLOW_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, jobs))


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def execute(cfg: RunConfig, out: Path, f: np.ndarray | None = None) -> tuple[int, dict]:
    """Run the configured ladder, writing every artifact under ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    manifest = {
        "version": __version__,
        "config_hash": cfg.digest(),
        "config": cfg.to_dict(),
        "mode": "herschel-bulkley" if cfg.hb is not None else "power-law",
        "rungs": [],
        "diagnostics": None,
        "status": "running",
        "exit_code": None,
        "timings": {},
    }
    rows = []
    t_rung = [time.perf_counter()]

    def record(k, lev, rho, u, report: dict, diag=None):
        rdir = out / f"rung_{k:02d}"
        rdir.mkdir(exist_ok=True)
        entry = {"index": k, "params": lev.ladder_key(), "report": str(rdir / "report.json"),
                 "seconds": time.perf_counter() - t_rung[0], "fields": {}}
        if cfg.output.fields:
            entry["fields"] = {"rho": str(write_field(rdir / "rho.bin", lev.grid, rho)),
                               "u": str(write_field(rdir / "u.bin", lev.grid, u))}
        body = dict(report)
        if diag is not None:
            body["diagnostics"] = diag.flat()
            rows.extend(diag.rows(k, lev))
        _dump_json(rdir / "report.json", body)
        manifest["rungs"].append(entry)
        t_rung[0] = time.perf_counter()

    levels = build_levels(cfg, f)
    opts = solver_opts(cfg)
    code, error = EXIT_OK, ""
    if cfg.hb is None:
        res = run_ladder(LadderSchedule(levels, cfg.ladder.warm_start), opts,
                         diagnostics=cfg.output.diagnostics)
        for k, r in enumerate(res.rungs):
            record(k, r.level, r.rho, r.u, r.report.to_dict(),
                   r.diagnostics if cfg.output.diagnostics else None)
        if not res.completed:
            code, error = EXIT_SOLVER, res.error
    else:
        def on_rung(lev, rho, u, rep, audit):
            record(len(manifest["rungs"]), lev, rho, u, {**rep.to_dict(), "audit": audit})

        try:
            _, _, _, diag = solve_hb(levels[-1], cfg.hb.eps_reg, opts, on_rung=on_rung)
            manifest["hb"] = {"target_mass": diag["target_mass"], "mass": diag["mass"]}
        except LevelSolveError as exc:
            code, error = EXIT_SOLVER, f"rung {len(manifest['rungs'])}: {exc}"
    if rows:
        manifest["diagnostics"] = str(_atomic_text(out / "diagnostics.csv", _csv_text(CSV_HEADER, rows)))
    manifest["status"] = "completed" if code == EXIT_OK else "failed"
    manifest["exit_code"] = code
    if error:
        manifest["error"] = error
    manifest["timings"]["total_seconds"] = time.perf_counter() - t_start
    _dump_json(out / "manifest.json", manifest)
    return code, manifest


def cmd_solve(args) -> int:
    try:
        cfg = _load(args.config)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out or cfg.output.directory)
    code, man = execute(cfg, out)
    print(f"{man['status']}: {len(man['rungs'])} rung(s) written to {out}")
    if code != EXIT_OK:
        print(man.get("error", ""), file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# stability study
# ---------------------------------------------------------------------------


def _final_state(args):
    cfg, f = args
    levels = build_levels(cfg, f)
    if cfg.hb is None:
        res = run_ladder(LadderSchedule(levels, cfg.ladder.warm_start), solver_opts(cfg),
                         diagnostics=False)
        if not res.completed:
            raise LevelSolveError(res.error)
        last = res.rungs[-1]
        return last.rho, last.u
    rho, u, _, _ = solve_hb(levels[-1], cfg.hb.eps_reg, solver_opts(cfg))
    return rho, u


def stability_metrics(grid, r: float, base: tuple, other: tuple) -> dict:
    ops = corner_ops(grid)
    J = ops.jacobian_of_field(other[1] - base[1])
    D = 0.5 * (J + np.swapaxes(J, -1, -2))
    return {
        "rho_L2": lebesgue_norm(grid, other[0] - base[0], 2.0),
        "Du_Lr": float((np.sum(frob(D) ** r) * ops.weight) ** (1.0 / r)),
        "u_L2": lebesgue_norm(grid, magnitude(grid, other[1] - base[1]), 2.0),
    }


def stability_study(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    st = cfg.stability
    grid = cfg.grid()
    f = sample_forcing(grid, cfg.problem.f)
    X = grid.centers()[0]
    L0 = grid.lengths[0]
    jobs = [(cfg, f)]
    for k in st.k:
        fk = f.copy()
        fk[..., st.component] += st.amplitude * np.sin(2 * np.pi * k * (X - grid.origin[0]) / L0)
        jobs.append((cfg, fk))
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    nw = _workers(len(jobs))
    try:
        if nw > 1:
            with ProcessPoolExecutor(nw) as ex:
                states = list(ex.map(_final_state, jobs))
        else:
            states = [_final_state(j) for j in jobs]
    except LevelSolveError as exc:
        man = {"config_hash": cfg.digest(), "status": "failed", "exit_code": EXIT_SOLVER,
               "error": str(exc)}
        _dump_json(out / "manifest.json", man)
        return EXIT_SOLVER, man
    base = states[0]
    rows, table = [], {}
    for k, s in zip(st.k, states[1:]):
        m = stability_metrics(grid, cfg.problem.r, base, s)
        table[k] = m
        rows.append((k, m["rho_L2"], m["Du_Lr"], m["u_L2"]))
    names = ("rho_L2", "Du_Lr", "u_L2")
    trend = {nm: all(table[b][nm] < table[a][nm] for a, b in zip(st.k, st.k[1:])) for nm in names}
    csv_path = _atomic_text(out / "stability.csv", _csv_text(("k",) + names, rows))
    man = {"version": __version__, "config_hash": cfg.digest(), "config": cfg.to_dict(),
           "stability_csv": str(csv_path), "metrics": table, "monotone_decrease": trend,
           "workers": nw, "status": "completed", "exit_code": EXIT_OK,
           "timings": {"total_seconds": time.perf_counter() - t0}}
    _dump_json(out / "manifest.json", man)
    return EXIT_OK, man


def cmd_stability(args) -> int:
    try:
        cfg = _load(args.config)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if cfg.stability is None:
        print("config error: stability block missing", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out or cfg.output.directory)
    code, man = stability_study(cfg, out)
    if code != EXIT_OK:
        print(man["error"], file=sys.stderr)
        return code
    for k, m in man["metrics"].items():
        print(f"k={k:<4} " + "  ".join(f"{nm}={v:.4g}" for nm, v in m.items()))
    print("monotone decrease: " + ", ".join(f"{nm}={v}" for nm, v in man["monotone_decrease"].items()))
    return code


# ---------------------------------------------------------------------------
# report, admissible, verify
# ---------------------------------------------------------------------------


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    try:
        man = json.loads((run / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"status: {man.get('status')}  config: {man.get('config_hash', '')[:12]}")
    if "metrics" in man:
        for k, m in man["metrics"].items():
            print(f"k={k}: " + ", ".join(f"{nm}={v:.4g}" for nm, v in m.items()))
        return EXIT_OK
    for r in man.get("rungs", []):
        rep = json.loads(Path(r["report"]).read_text())
        keys = ", ".join(f"{k}={v:g}" for k, v in r["params"].items())
        print(f"rung {r['index']}: {keys}  iterations={rep['iterations']}  "
              f"residual={rep['fixed_point_residual']:.3g}  {r['seconds']:.1f}s")
    diag = man.get("diagnostics")
    if diag:
        wide: dict = {}
        with open(diag, newline="") as fh:
            for row in csv.DictReader(fh):
                key = tuple(row[c] for c in CSV_HEADER[:5])
                wide.setdefault(key, {})[row["name"]] = row["value"]
        names = sorted({n for v in wide.values() for n in v})
        rows = [list(k) + [v.get(n, "") for n in names] for k, v in wide.items()]
        path = _atomic_text(run / "plot_data.csv", _csv_text(list(CSV_HEADER[:5]) + names, rows))
        print(f"plot data: {path}")
    return EXIT_OK


def cmd_admissible(args) -> int:
    try:
        rep = admissible(args.d, args.r, args.gamma)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print("\n".join(rep.lines()))
    return EXIT_OK if rep.admissible else EXIT_NO


def cmd_verify(args) -> int:
    from .verify import run_suite
    return EXIT_OK if run_suite(args.suite) else EXIT_NO


def build_parser() -> argparse.ArgumentParser:
    from .verify import SUITES

    ap = argparse.ArgumentParser(prog="nnflow", description="Steady compressible non-Newtonian flow solver")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("admissible", help="check an (d, r, gamma) triple")
    a.add_argument("-d", type=int, required=True, choices=(2, 3))
    a.add_argument("-r", type=float, required=True)
    a.add_argument("--gamma", type=float, required=True)
    a.set_defaults(fn=cmd_admissible)

    s = sub.add_parser("solve", help="run the ladder of a JSON config")
    s.add_argument("config")
    s.add_argument("--out", help="output directory (default: output.directory)")
    s.set_defaults(fn=cmd_solve)

    v = sub.add_parser("verify", help="run a property suite")
    v.add_argument("suite", choices=sorted(SUITES) + ["all"])
    v.set_defaults(fn=cmd_verify)

    st = sub.add_parser("stability-study", help="oscillatory forcing study")
    st.add_argument("config")
    st.add_argument("--out")
    st.set_defaults(fn=cmd_stability)

    r = sub.add_parser("report", help="summarize a run directory")
    r.add_argument("run_dir")
    r.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
