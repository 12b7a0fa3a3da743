"""Command-line entry point: ``singular-mfg <subcommand> --config PATH --out DIR``.

Exit codes: 0 success, 2 validation error, 3 non-convergence, 4 singularity.
Failures print one line ``singular-mfg: error kind=<kind> code=<n> msg=<text>``
to stderr. ``manifest.json`` is written last and lists every artifact with its
sha256, so a complete run is recognizable and comparable across directories.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .adjoint import adjoint_norm_report, representation_check, solve_adjoint
from .errors import ConvergenceError, MFGError, SingularityError, ValidationError
from .estimates import (
    EstimateReport,
    _clean,
    entry,
    schedule_entries,
    stationary_report,
    stationary_schedule_traces,
    time_report,
    time_schedule_traces,
)
from .evolution import TimeDependentSolution, fixed_point_time, linearize, solve_fp_forward, solve_hjb_backward, time_limit_report
from .grid import load_field, save_field
from .hamiltonian import alpha_threshold_A5, check_A1, check_A2, check_A3, gamma_gate_A4
from .montecarlo import empirical_cost, empirical_density, ergodic_cost, interp_periodic, l1_distance, simulate
from .stationary import (
    StationarySolution,
    hjb_residual,
    solve_fp_stationary,
    solve_stationary_eps,
    stationary_limit_report,
)

log = logging.getLogger("singular_mfg")

_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class Run:
    """Output directory bookkeeping; every written file is tracked for the manifest."""

    def __init__(self, out: Path):
        self.out = out
        self.files: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def json(self, name, obj):
        self.path(name).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")

    def text(self, name, s):
        self.path(name).write_text(s)

    def csv(self, name, rows, columns):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for r in rows:
                w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in columns])

    def field(self, name, grid, values, horizon=None):
        save_field(self.path(name), grid, values, horizon)

    def manifest(self, subcommand):
        files = []
        for p in sorted(set(self.files)):
            data = p.read_bytes()
            files.append({"path": p.relative_to(self.out).as_posix(), "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        body = {"schema_version": cfgmod.SCHEMA_VERSION, "subcommand": subcommand, "files": files}
        (self.out / "manifest.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


# -- persistence of solutions --------------------------------------------------------


def write_stationary(run: Run, sol: StationarySolution, prefix=""):
    run.field(f"{prefix}u.fld", sol.grid, sol.u)
    run.field(f"{prefix}m.fld", sol.grid, sol.m)
    run.json(
        f"{prefix}solution.json",
        {
            "kind": "stationary",
            "eps": sol.eps,
            "hbar": sol.hbar,
            "hjb_res": sol.hjb_res,
            "fp_res": sol.fp_res,
            "iterations": sol.iterations,
            "flags": sol.flags,
        },
    )
    run.csv(f"{prefix}stationary_log.csv", sol.history, ["iter", "hjb_res", "fp_res", "hbar", "min_m"])


def write_time(run: Run, sol: TimeDependentSolution, prefix=""):
    run.field(f"{prefix}u.fld", sol.grid, sol.u, sol.T)
    run.field(f"{prefix}m.fld", sol.grid, sol.m, sol.T)
    run.json(
        f"{prefix}solution.json",
        {
            "kind": "time",
            "eps": sol.eps,
            "T": sol.T,
            "nt": sol.nt,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "max_cfl": sol.max_cfl,
            "flags": sol.flags,
        },
    )
    run.csv(f"{prefix}evolve_log.csv", sol.history, ["iter", "update_norm", "min_m", "max_u", "lipschitz_norm"])


def read_solution(directory: Path, rc: cfgmod.RunConfig, coupling):
    """Rebuild a solution from dumps and recompute its residuals from scratch."""
    meta_path = directory / "solution.json"
    if not meta_path.exists():
        raise ValidationError(f"{directory} holds no solution.json")
    meta = json.loads(meta_path.read_text())
    grid, u, T = load_field(directory / "u.fld")
    grid_m, m, _ = load_field(directory / "m.fld")
    if grid != grid_m or grid != rc.grid:
        raise ValidationError(f"dumps in {directory} do not match the configured grid")
    cp = coupling.with_eps(meta["eps"])
    model, solver = rc.model, rc.solver
    if meta["kind"] == "stationary":
        hjb = float(np.max(np.abs(hjb_residual(u, meta["hbar"], m, model, cp, grid, solver.upwinding))))
        fp = float(np.max(np.abs(solve_fp_stationary(u, model, grid, solver) - m)))
        return StationarySolution(grid, u, m, meta["hbar"], meta["eps"], hjb, fp, meta["iterations"], [], meta["flags"]), cp
    nt = u.shape[0] - 1
    dt = T / nt
    sweep = solve_hjb_backward(m, model, cp, grid, dt, u[-1], solver.upwinding)
    resid = float(np.max(np.abs(solve_fp_forward(sweep, grid, dt, m[0]) - m)))
    sol = TimeDependentSolution(grid, u, m, T, u[-1].copy(), m[0].copy(), meta["eps"], meta["iterations"], resid, [], meta["flags"], sweep.max_cfl)
    return sol, cp


# -- gate report ----------------------------------------------------------------


def gate_report(rc: cfgmod.RunConfig) -> dict:
    model, d, gamma, alpha = rc.model, rc.grid.dim, rc.model.gamma, rc.coupling.alpha
    a1 = check_A1(model, rc.samples)
    a2 = check_A2(model, rc.samples)
    a3 = check_A3(model, rc.samples, tuple(rc.raw["verify"]["deltas"]))
    a4 = gamma_gate_A4(gamma, d)
    abar = alpha_threshold_A5(d, gamma)
    a5 = alpha > abar
    rows = [
        {"assumption": "A1", "passed": a1.passed, "detail": {"C1": a1.C1, "C2": a1.C2, **a1.details}, "samples": a1.n_samples},
        {"assumption": "A2", "passed": a2.passed, "detail": {"C1": a2.C1, "C2": a2.C2}, "samples": a2.n_samples},
        {"assumption": "A3", "passed": a3.passed, "detail": {f"C_{dl:g}": c for dl, c in a3.table}, "samples": a3.n_samples},
        {"assumption": "A4", "passed": a4, "detail": {"gamma": gamma, "upper": (d + 2) / (d + 1)}, "samples": 0},
        {"assumption": "A5", "passed": a5, "detail": {"alpha": alpha, "alpha_bar": abar}, "samples": 0},
    ]
    stationary_ok = a1.passed and a2.passed and a3.passed and a5
    time_ok = a1.passed and a2.passed and a4
    return {
        "rows": rows,
        "sample_box": rc.samples.box(),
        "stationary_hypotheses": stationary_ok,
        "time_hypotheses": time_ok,
        "violations": {
            "stationary": [r["assumption"] for r in rows if r["assumption"] in ("A1", "A2", "A3", "A5") and not r["passed"]],
            "time": [r["assumption"] for r in rows if r["assumption"] in ("A1", "A2", "A4") and not r["passed"]],
        },
    }


def gate_table(g: dict) -> str:
    def fmt(v):
        return f"{v:.6g}" if isinstance(v, float) else str(v)

    lines = [f"{'assumption':<11}{'status':<7}detail"]
    for r in g["rows"]:
        detail = ", ".join(f"{k}={fmt(v)}" for k, v in r["detail"].items())
        lines.append(f"{r['assumption']:<11}{'PASS' if r['passed'] else 'FAIL':<7}{detail}")
    box = ", ".join(f"{k}={v}" for k, v in g["sample_box"].items())
    lines.append(f"sample box: {box}")
    for kind, label in (("stationary", "stationary existence theorem"), ("time", "time-dependent existence theorem")):
        ok = g[f"{kind}_hypotheses"]
        bad = ", ".join(g["violations"][kind])
        lines.append(f"{label}: {'hypotheses hold' if ok else 'violated (' + bad + ')'}")
    return "\n".join(lines) + "\n"


# -- subcommands ----------------------------------------------------------------------


def _report_out(run: Run, rep: EstimateReport, prefix=""):
    run.text(f"{prefix}report.json", rep.to_json() + "\n")
    run.text(f"{prefix}report.txt", rep.to_table())


def cmd_stationary(rc, run, args):
    sol = solve_stationary_eps(rc.model, rc.coupling, rc.grid, rc.solver)
    write_stationary(run, sol)
    rep = stationary_report(sol, rc.model, rc.coupling, rc.raw["verify"]["p_list"], rc.solver.upwinding)
    rep.meta.update({"hbar": sol.hbar, "iterations": sol.iterations, "hjb_res": sol.hjb_res, "fp_res": sol.fp_res, "flags": sol.flags})
    _report_out(run, rep)
    print(f"stationary: eps={sol.eps:g} hbar={sol.hbar:.10g} iterations={sol.iterations} min_m={sol.m.min():.6g}")


def _solve_time(rc, coupling, m_init=None):
    return fixed_point_time(rc.model, coupling, rc.grid, rc.field("uT"), rc.field("m0"), rc.T, rc.nt, rc.solver, m_init=m_init)


def cmd_evolve(rc, run, args):
    sol = _solve_time(rc, rc.coupling)
    write_time(run, sol)
    rep = time_report(sol, rc.model, rc.coupling, rc.model.gamma, rc.raw["verify"]["p_list"], rc.solver.upwinding)
    rep.meta.update({"iterations": sol.iterations, "residual": sol.residual, "max_cfl": sol.max_cfl, "flags": sol.flags})
    _report_out(run, rep)
    print(f"evolve: eps={sol.eps:g} iterations={sol.iterations} residual={sol.residual:.3g} max_u={sol.u.max():.6g}")


def _stage_prefix(k, eps):
    return f"stage_{k:02d}_eps_{eps:.0e}/"


def cmd_sweep(rc, run, args):
    kind = rc.raw["problem"]
    sols, reports = [], []
    for k, eps in enumerate(rc.schedule):
        cp = rc.coupling.with_eps(eps)
        prev = sols[-1] if sols else None
        pre = _stage_prefix(k, eps)
        if kind == "stationary":
            sol = solve_stationary_eps(rc.model, cp, rc.grid, rc.solver, None if prev is None else prev.m, None if prev is None else prev.u)
            write_stationary(run, sol, pre)
            rep = stationary_report(sol, rc.model, cp, rc.raw["verify"]["p_list"], rc.solver.upwinding)
        else:
            sol = _solve_time(rc, cp, None if prev is None else prev.m)
            write_time(run, sol, pre)
            rep = time_report(sol, rc.model, cp, rc.model.gamma, rc.raw["verify"]["p_list"], rc.solver.upwinding)
        _report_out(run, rep, pre)
        log.info("stage %d eps=%g done in %d iterations", k, eps, sol.iterations)
        sols.append(sol)
        reports.append(rep)
    limit = stationary_limit_report(sols) if kind == "stationary" else time_limit_report(sols)
    summary = EstimateReport(meta={"kind": kind, "schedule": rc.schedule})
    if len(sols) >= 2:
        traces = stationary_schedule_traces(reports) if kind == "stationary" else time_schedule_traces(reports)
        summary.add(schedule_entries(traces, rc.schedule))
    run.json("limit_report.json", limit)
    _report_out(run, summary, "schedule_")
    print(f"sweep-eps: {len(sols)} stages, schedule surrogates {'pass' if summary.passed else 'FAIL'}")


def _input_dir(rc, args) -> Path:
    d = rc.raw.get("input_dir")
    if not d:
        raise ValidationError("this subcommand needs input_dir in the config")
    p = Path(d)
    if not p.is_dir():
        raise ValidationError(f"input_dir {d} does not exist")
    return p


def cmd_verify(rc, run, args):
    src = _input_dir(rc, args)
    stages = sorted(p for p in src.iterdir() if p.is_dir() and p.name.startswith("stage_"))
    dirs = stages or [src]
    reports, kinds = [], set()
    for d in dirs:
        sol, cp = read_solution(d, rc, rc.coupling)
        if isinstance(sol, StationarySolution):
            kinds.add("stationary")
            rep = stationary_report(sol, rc.model, cp, rc.raw["verify"]["p_list"], rc.solver.upwinding)
        else:
            kinds.add("time")
            rep = time_report(sol, rc.model, cp, rc.model.gamma, rc.raw["verify"]["p_list"], rc.solver.upwinding)
        rep.meta["source"] = d.name if stages else "."
        reports.append(rep)
        _report_out(run, rep, f"{d.name}/" if stages else "")
    if len(kinds) != 1:
        raise ValidationError("input_dir mixes stationary and time-dependent solutions")
    if len(reports) >= 2:
        traces = stationary_schedule_traces(reports) if "stationary" in kinds else time_schedule_traces(reports)
        summary = EstimateReport(meta={"schedule": [r.meta["eps"] for r in reports]})
        summary.add(schedule_entries(traces, summary.meta["schedule"]))
        _report_out(run, summary, "schedule_")
        reports.append(summary)
    ok = all(r.passed for r in reports)
    print(f"verify: {len(dirs)} solution(s), {'all checks pass' if ok else 'some checks FAIL'}")


def _time_input(rc, args):
    src = _input_dir(rc, args)
    sol, cp = read_solution(src, rc, rc.coupling)
    return sol, cp


def cmd_probe(rc, run, args):
    sol, cp = _time_input(rc, args)
    if not isinstance(sol, TimeDependentSolution):
        raise ValidationError("probe needs a time-dependent solution")
    pr = rc.raw["probe"]
    x0 = args.x0 if args.x0 is not None else pr["x0"]
    tau = args.tau if args.tau is not None else pr["tau"]
    width = args.moll_width if args.moll_width is not None else pr["moll_width"]
    nu = args.nu if args.nu is not None else pr["nu"]
    q = args.q if args.q is not None else pr["q"]
    sweep = linearize(sol.u, rc.model, sol.grid, sol.dt, rc.solver.upwinding)
    adj = solve_adjoint(sol.u, rc.model, sol.grid, x0, tau, width, sol.T, rc.solver.upwinding, sweep)
    rep = EstimateReport(meta={"x0": list(adj.x0), "tau": tau, "moll_width": width})
    rep.add(representation_check(sol, adj, rc.model, cp, C=pr["C"], upwind=rc.solver.upwinding, a2_spec=rc.samples))
    rep.add(adjoint_norm_report(adj, nu, q, sol, rc.model, cp, rc.solver.upwinding))
    mass = float(max(abs(np.sum(r) * sol.grid.cell_volume - 1.0) for r in adj.rho))
    rep.add(entry("adjoint_structure", {"mass_error": mass, "min_rho": float(adj.rho.min())}, passed=mass <= 1e-10 and adj.rho.min() >= -1e-12))
    run.field("rho.fld", sol.grid, adj.rho, sol.T - tau)
    _report_out(run, rep)
    print(f"probe: representation gap={rep.get('representation')['values']['gap']:.3g} {'pass' if rep.passed else 'FAIL'}")


def cmd_simulate(rc, run, args):
    sol, cp = _time_input(rc, args)
    sim = rc.raw["simulate"]
    N = args.particles if args.particles is not None else sim["particles"]
    bw = args.bandwidth if args.bandwidth is not None else sim["bandwidth"]
    pts = [args.x0] if args.x0 is not None else sim["x0"]
    t = args.t if args.t is not None else sim["t"]
    rep = EstimateReport(meta={"particles": N, "seed": rc.seed, "bandwidth": bw})
    if isinstance(sol, StationarySolution):
        est = ergodic_cost(sol, rc.model, cp, N, rc.seed, sim["T_sim"], sim["burn_in"], sim["dt_sim"], sim["v_cap"], args.jobs)
        tol = 3 * est.se + 10 * (sol.grid.h**2 + sim["dt_sim"])
        gap = abs(est.mean + sol.hbar)
        rep.add(entry("ergodic_cost", {"mc_mean": est.mean, "se": est.se, "minus_hbar": -sol.hbar, "gap": gap}, bound=tol, passed=gap <= tol, tol=tol, clip_events=est.clip_events))
    else:
        ens = simulate(sol, rc.model, N, rc.seed, substeps=sim["substeps"], v_cap=sim["v_cap"], jobs=args.jobs)
        for pos, tk in zip(ens.positions, ens.times):
            k = int(round(tk / sol.dt))
            rho = empirical_density(pos, sol.grid, bw)
            run.field(f"density_k{k:04d}.fld", sol.grid, rho)
            dist = l1_distance(rho, sol.m[k], sol.grid)
            rep.add(entry(f"density_l1.k{k}", {"l1": dist, "t": tk}, bound=0.05, passed=dist <= 0.05))
        tol_disc = 10 * (sol.grid.h**2 + sol.dt)
        k_t = int(round(t / sol.dt))
        for j, x0 in enumerate(pts):
            est = empirical_cost(sol, rc.model, cp, x0, t, N, rc.seed + 1 + j, sim["substeps"], sim["v_cap"], args.jobs)
            u_val = float(interp_periodic(sol.u[k_t], sol.grid, np.asarray(x0, float).reshape(-1, 1))[0])
            tol = 3 * est.se + tol_disc
            gap = abs(est.mean - u_val)
            rep.add(entry(f"cost.{j}", {"x0": list(x0), "t": t, "mc_mean": est.mean, "se": est.se, "u": u_val, "gap": gap}, bound=tol, passed=gap <= tol, tol=tol, clip_events=est.clip_events))
    _report_out(run, rep)
    print(f"simulate: {'pass' if rep.passed else 'FAIL'} ({len(rep.entries)} checks)")


def cmd_gates(rc, run, args):
    g = gate_report(rc)
    run.json("gates.json", g)
    table = gate_table(g)
    run.text("gates.txt", table)
    sys.stdout.write(table)


COMMANDS = {
    "stationary": cmd_stationary,
    "evolve": cmd_evolve,
    "sweep-eps": cmd_sweep,
    "verify": cmd_verify,
    "probe": cmd_probe,
    "simulate": cmd_simulate,
    "gates": cmd_gates,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="singular-mfg", description="Regularized singular mean-field games on the torus")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--out", required=True, type=Path)
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--seed", type=int, default=None)
        if name == "probe":
            sp.add_argument("--x0", type=float, nargs="+")
            sp.add_argument("--tau", type=float)
            sp.add_argument("--moll-width", type=float)
            sp.add_argument("--nu", type=float, nargs="+")
            sp.add_argument("--q", type=float, nargs="+")
        if name == "simulate":
            sp.add_argument("--particles", type=int)
            sp.add_argument("--bandwidth", type=float)
            sp.add_argument("--x0", type=float, nargs="+")
            sp.add_argument("--t", type=float)
    return ap


def _kind(exc) -> str:
    if isinstance(exc, ValidationError):
        return "validation"
    if isinstance(exc, SingularityError):
        return "singularity"
    if isinstance(exc, ConvergenceError):
        return "nonconvergence"
    return "error"


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = os.environ.get("MFG_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.jobs < 1:
            raise ValidationError("--jobs must be at least 1")
        if getattr(args, "particles", None) is not None and args.particles < 1000:
            raise ValidationError("--particles must be at least 1000")
        raw = json.loads(Path(args.config).read_text()) if Path(args.config).exists() else None
        if raw is None:
            raise ValidationError(f"config file {args.config} not found")
        if args.seed is not None:
            raw["seed"] = args.seed
        resolved = cfgmod.resolve(raw)
        rc = cfgmod.RunConfig.from_resolved(resolved)
        out = Run(args.out)
        out.json("resolved_config.json", resolved)
        COMMANDS[args.command](rc, out, args)
        out.manifest(args.command)
    except json.JSONDecodeError as exc:
        return _fail(ValidationError(f"config is not valid JSON: {exc}"))
    except MFGError as exc:
        return _fail(exc)
    return 0


def _fail(exc) -> int:
    msg = " ".join(str(exc).split())
    code = getattr(exc, "exit_code", 1)
    print(f"singular-mfg: error kind={_kind(exc)} code={code} msg={msg}", file=sys.stderr)
    return code


def main(argv=None):
    sys.exit(run(argv))
