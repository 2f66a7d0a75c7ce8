"""Command-line front end: problem ingestion, solver dispatch, studies, reports.

Exit codes: 0 success, 2 validation/parse failure, 3 solver ill-posedness or
blow-up, 4 convergence failure.  Artifacts (CSV with 17-significant-digit
values plus a metadata JSON) land in the --out directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .closedloop import solve_closed_loop
from .errors import (BlowUpError, ConfigurationError, ConvergenceError,
                     DimensionError, IllPosedError, ValidationError)
from .game import (build_delta_equilibrium, delta_local_optimality_check,
                   jump_magnitudes, ordering_report)
from .openloop import solve_open_loop, verify_open_loop_equilibrium
from .precommit import solve_precommitment
from .problem_io import apply_overrides, parse_problem, problem_hash, resolve_document
from .simulate import MCConfig, estimate_cost, semigroup_failure_demo, simulate_closed_loop
from .types import TimeGrid, validate


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(float(v)) for v in row) + "\n")


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _metadata(args, doc: dict, **params) -> dict:
    meta = {
        "command": args.command,
        "problem_hash": problem_hash(doc),
        "params": {k: v for k, v in params.items() if v is not None},
        "versions": {
            "mflq": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
    }
    return meta


def _matrix_header(prefix: str, r: int, c: int) -> list[str]:
    return [f"{prefix}_{i}{j}" for i in range(r) for j in range(c)]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MFLQ_THREADS", "4")))
    except ValueError:
        return 4


def _load(args):
    doc = resolve_document(args.problem)
    if getattr(args, "set", None):
        doc = apply_overrides(doc, args.set)
    return doc, parse_problem(doc)


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_validate(args) -> int:
    _, problem = _load(args)
    report = validate(problem)
    print(report)
    return 0 if report.passed else 2


def cmd_precommit(args) -> int:
    doc, problem = _load(args)
    out = _outdir(args)
    h = args.h

    sol = solve_precommitment(problem, args.t, h)
    n, m = problem.n, problem.m
    for name, arr, r, c in (("P", sol.P, n, n), ("Phat", sol.Phat, n, n),
                            ("Theta", sol.Theta, m, n),
                            ("Theta_hat", sol.Theta_hat, m, n)):
        rows = [[s, *mat.reshape(-1)] for s, mat in zip(sol.times, arr)]
        write_csv(os.path.join(out, f"{name}.csv"),
                  ["s"] + _matrix_header(name, r, c), rows)

    if args.sweep > 1:
        ts = np.linspace(0.0, problem.T, args.sweep + 1)[:-1]
        with ThreadPoolExecutor(max_workers=_threads()) as pool:
            sols = list(pool.map(lambda t: solve_precommitment(problem, float(t), h), ts))
        rows = [[t, *s.Phat[0].reshape(-1)] for t, s in zip(ts, sols)]
        write_csv(os.path.join(out, "values.csv"),
                  ["t"] + _matrix_header("Phat", n, n), rows)

    _write_json(os.path.join(out, "metadata.json"),
                _metadata(args, doc, t=args.t, h=h, sweep=args.sweep))
    print(f"pre-commitment solved at t={args.t:g}; value matrix "
          f"Phat(t)={sol.Phat[0].tolist()}")
    return 0


def cmd_open_loop(args) -> int:
    doc, problem = _load(args)
    out = _outdir(args)
    sol = solve_open_loop(problem, args.h)
    nodes = sol.tgrid.nodes
    rows = [[t, *sol.Theta_open[j].reshape(-1)] for j, t in enumerate(nodes)]
    write_csv(os.path.join(out, "theta_open.csv"),
              ["t"] + _matrix_header("Theta", problem.m, problem.n), rows)
    _write_json(os.path.join(out, "metadata.json"), _metadata(args, doc, h=args.h))
    print(f"open-loop equilibrium gains written for {len(nodes)} nodes")
    return 0


def cmd_game(args) -> int:
    doc, problem = _load(args)
    out = _outdir(args)
    N = args.N0
    eq = build_delta_equilibrium(problem, TimeGrid.uniform(problem.T, N), args.h)

    rows = []
    for seg in eq.gains.segments:
        for i, s in enumerate(seg.times[:-1]):
            rows.append([s, *seg.theta[i].reshape(-1), *seg.theta_hat[i].reshape(-1)])
    last = eq.gains.segments[-1]
    rows.append([last.times[-1], *last.theta[-1].reshape(-1),
                 *last.theta_hat[-1].reshape(-1)])
    write_csv(os.path.join(out, "gains.csv"),
              ["s"] + _matrix_header("Theta", problem.m, problem.n)
              + _matrix_header("Theta_hat", problem.m, problem.n), rows)

    vrows = [[k, eq.partition.nodes[k], *eq.values[k].reshape(-1)]
             for k in range(N)]
    write_csv(os.path.join(out, "values.csv"),
              ["k", "t_k"] + _matrix_header("Phat", problem.n, problem.n), vrows)

    jumps = jump_magnitudes(eq)
    order = ordering_report(eq)
    _write_json(os.path.join(out, "diagnostics.json"), {
        "jump_norms": jumps["records"],
        "jumps_within_bound": jumps["passed"],
        "psd_margins": {"min_margin": order["min_margin"],
                        "passed": order["passed"]},
    })
    _write_json(os.path.join(out, "metadata.json"),
                _metadata(args, doc, N=N, h=args.h))
    print(f"{N}-interval equilibrium built; value at t_0: {eq.values[0].tolist()}")
    return 0


def cmd_closed_loop(args) -> int:
    doc, problem = _load(args)
    out = _outdir(args)
    sol = solve_closed_loop(problem, N0=args.N0, tol=args.tol,
                            max_doublings=args.max_doublings, h=args.h)
    nodes = sol.nodes
    rows = [[s, *sol.Theta_hat[j].reshape(-1)] for j, s in enumerate(nodes)]
    write_csv(os.path.join(out, "theta_hat.csv"),
              ["s"] + _matrix_header("Theta_hat", problem.m, problem.n), rows)
    rows = [[t, *sol.Gamma[j, j].reshape(-1), *sol.Gamma_hat[j, j].reshape(-1)]
            for j, t in enumerate(nodes)]
    write_csv(os.path.join(out, "gamma_diag.csv"),
              ["t"] + _matrix_header("Gamma", problem.n, problem.n)
              + _matrix_header("Gamma_hat", problem.n, problem.n), rows)
    _write_json(os.path.join(out, "trace.json"),
                {"trace": list(sol.trace), "final_N": sol.grid.num_intervals})
    _write_json(os.path.join(out, "metadata.json"),
                _metadata(args, doc, N0=args.N0, tol=args.tol, h=args.h))
    print(f"closed-loop equilibrium converged at N={sol.grid.num_intervals}")
    return 0


def converge_study(problem, N0: int = 4, N_max: int = 64, h: float | None = None
                   ) -> list[dict]:
    """Refinement deltas of (Gamma, Gamma_hat, Theta, Theta_hat) for N0, 2 N0, ..."""
    from .closedloop import _assemble, _tri_diff
    records = []
    prev = None
    N = N0
    while N <= N_max:
        eq = build_delta_equilibrium(problem, TimeGrid.uniform(problem.T, N), h)
        cur = _assemble(eq)
        if prev is not None:
            d_gamma = max(_tri_diff(cur[0][::2, ::2], prev[0]),
                          _tri_diff(cur[1][::2, ::2], prev[1]))
            d_theta = max(float(np.abs(cur[2][::2] - prev[2]).max()),
                          float(np.abs(cur[3][::2] - prev[3]).max()))
            records.append({"N": N, "sup_delta_Gamma": d_gamma,
                            "sup_delta_Theta": d_theta})
        prev = cur
        N *= 2
    return records


def cmd_converge(args) -> int:
    doc, problem = _load(args)
    out = _outdir(args)
    records = converge_study(problem, N0=args.N0, h=args.h)
    deltas = [max(r["sup_delta_Gamma"], r["sup_delta_Theta"]) for r in records]
    monotone = all(a > b for a, b in zip(deltas, deltas[1:]))
    _write_json(os.path.join(out, "trace.json"),
                {"trace": records, "monotone": monotone})
    write_csv(os.path.join(out, "trace.csv"),
              ["N", "sup_delta_Gamma", "sup_delta_Theta"],
              [[r["N"], r["sup_delta_Gamma"], r["sup_delta_Theta"]] for r in records])
    _write_json(os.path.join(out, "metadata.json"),
                _metadata(args, doc, N0=args.N0, h=args.h))
    for r in records:
        print(f"N={r['N']:4d}  dGamma={r['sup_delta_Gamma']:.3e}  "
              f"dTheta={r['sup_delta_Theta']:.3e}")
    print(f"monotone: {monotone}")
    return 0


def cmd_simulate(args) -> int:
    doc, problem = _load(args)
    out = _outdir(args)
    sol = solve_closed_loop(problem, N0=args.N0, tol=args.tol, h=args.h)
    x0 = np.ones(problem.n)
    mc = MCConfig(paths=args.paths, steps=args.steps, seed=args.seed)
    ens = simulate_closed_loop(problem, sol.game.gains, 0.0, x0, mc)
    mean, stderr = estimate_cost(problem, ens, 0.0)
    emp = ens.states.mean(axis=0)
    std = ens.states.std(axis=0)
    rows = [[j, ens.times[j], *emp[j], *ens.cond_mean[j], *std[j]]
            for j in range(len(ens.times))]
    hdr = ["step", "s"] + [f"mean_{i}" for i in range(problem.n)] \
        + [f"cond_mean_{i}" for i in range(problem.n)] \
        + [f"std_{i}" for i in range(problem.n)]
    write_csv(os.path.join(out, "summary.csv"), hdr, rows)
    _write_json(os.path.join(out, "metadata.json"),
                _metadata(args, doc, paths=args.paths, steps=args.steps,
                          seed=args.seed, N0=args.N0, tol=args.tol, h=args.h))
    value = sol.value(0.0, x0)
    print(f"simulated cost {mean:.6g} +- {stderr:.2g}; "
          f"equilibrium value {value:.6g}")
    return 0


def cmd_verify(args) -> int:
    doc, problem = _load(args)
    out = _outdir(args)
    x0 = np.ones(problem.n)
    if problem.has_mean_field_dynamics:
        eq = build_delta_equilibrium(problem, TimeGrid.uniform(problem.T, args.N0))
        mc = MCConfig(paths=args.paths, steps=400, seed=args.seed)
        reports = [delta_local_optimality_check(problem, eq, k, x0, mc)
                   for k in range(eq.N)]
        passed = all(r["passed"] for r in reports)
        _write_json(os.path.join(out, "report.json"),
                    {"mode": "interval-deviation", "players": reports,
                     "passed": passed})
        print(f"interval-deviation check over {eq.N} players: "
              f"{'pass' if passed else 'FAIL'}")
    else:
        sol = solve_open_loop(problem, args.h)
        mc = MCConfig(paths=args.paths, steps=400, seed=args.seed)
        rep = verify_open_loop_equilibrium(problem, sol, x0, mc=mc)
        _write_json(os.path.join(out, "report.json"),
                    {"mode": "spike-perturbation", **rep})
        print(f"spike-perturbation check: "
              f"{'pass' if rep['passed'] else 'FAIL'} "
              f"(min margin {rep['min_margin']:.3e})")
    _write_json(os.path.join(out, "metadata.json"),
                _metadata(args, doc, paths=args.paths, seed=args.seed,
                          N0=args.N0, h=args.h))
    return 0


def cmd_demo(args) -> int:
    mc = MCConfig(paths=args.paths, steps=400, seed=args.seed)
    rep = semigroup_failure_demo(args.s, args.tau, args.t, 1.0, mc)
    rep_same = semigroup_failure_demo(args.s, args.t, args.t, 1.0, mc)
    print(f"conditioning-restart gap at (t, tau, s) = "
          f"({args.t:g}, {args.tau:g}, {args.s:g}):")
    print(f"  simulated   {rep['simulated']:.6g} +- {rep['stderr']:.2g}")
    print(f"  closed form {rep['closed_form']:.6g}")
    print(f"no-restart control (tau = t): gap {rep_same['simulated']:.3g} "
          f"(exactly zero: {rep_same['simulated'] == 0.0})")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "demo.json"),
                    {"restart": rep, "no_restart": rep_same})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mflq",
        description="Linear-quadratic control of mean-field SDEs: "
                    "pre-commitment, open-loop and closed-loop equilibria.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, problem=True, **kwargs):
        p = sub.add_parser(name, **kwargs)
        if problem:
            p.add_argument("problem", help="problem JSON file or bundled name")
            p.add_argument("--set", action="append", default=[],
                           metavar="KEY=JSON", help="override a document entry")
        p.add_argument("--out", default="out", help="output directory")
        p.set_defaults(fn=fn)
        return p

    add("validate", cmd_validate, help="check problem hypotheses")

    p = add("precommit", cmd_precommit, help="pre-commitment Riccati pair")
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--sweep", type=int, default=0,
                   help="also sweep initial times (concurrent)")

    p = add("open-loop", cmd_open_loop, help="open-loop equilibrium")
    p.add_argument("--h", type=float, default=None)

    p = add("game", cmd_game, help="finite-player interval equilibrium")
    p.add_argument("--N0", type=int, default=8, help="number of intervals")
    p.add_argument("--h", type=float, default=None)

    p = add("closed-loop", cmd_closed_loop, help="closed-loop equilibrium")
    p.add_argument("--N0", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-doublings", type=int, default=6)
    p.add_argument("--h", type=float, default=None)

    p = add("converge", cmd_converge, help="partition refinement study")
    p.add_argument("--N0", type=int, default=4)
    p.add_argument("--h", type=float, default=None)

    p = add("simulate", cmd_simulate, help="Monte Carlo along the equilibrium")
    p.add_argument("--paths", type=int, default=10000)
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--N0", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=None)

    p = add("verify", cmd_verify, help="statistical equilibrium verification")
    p.add_argument("--paths", type=int, default=20000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--N0", type=int, default=4)
    p.add_argument("--h", type=float, default=None)

    p = add("demo", cmd_demo, problem=False,
            help="conditional-expectation restart demonstration")
    p.add_argument("topic", nargs="?", default="semigroup",
                   choices=["semigroup"])
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--s", type=float, default=1.0)
    p.add_argument("--paths", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, DimensionError, ConfigurationError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except (IllPosedError, BlowUpError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        if getattr(exc, "trace", None):
            for r in exc.trace:
                print(f"  N={r['N']} delta={r['delta']}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
