"""Run an eps-continuation from a config file and print the limit report.

    python3 scripts/continuation_demo.py configs/stationary_1d.json
"""

import argparse

from singular_mfg.config import RunConfig, load
from singular_mfg.estimates import (
    schedule_entries,
    stationary_report,
    stationary_schedule_traces,
    time_report,
    time_schedule_traces,
)
from singular_mfg.evolution import epsilon_continuation_time
from singular_mfg.stationary import epsilon_continuation_stationary


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    args = ap.parse_args()
    rc = RunConfig.from_resolved(load(args.config))
    if len(rc.schedule) < 2:
        ap.error("the config needs an eps_schedule with at least two entries")

    if rc.raw["problem"] == "stationary":
        res = epsilon_continuation_stationary(rc.model, rc.coupling, rc.schedule, rc.grid, rc.solver)
        reps = [stationary_report(s, rc.model, rc.coupling.with_eps(s.eps)) for s in res.solutions]
        traces = stationary_schedule_traces(reps)
        print(f"{'eps':>8} {'iters':>6} {'hbar':>14} {'min(m+eps)':>12}")
        for s, eta in zip(res.solutions, res.report["min_density"]):
            print(f"{s.eps:8.0e} {s.iterations:6d} {s.hbar:14.8f} {eta:12.6f}")
    else:
        res = epsilon_continuation_time(rc.model, rc.coupling, rc.schedule, rc.grid, rc.field("uT"), rc.field("m0"), rc.T, rc.nt, rc.solver)
        reps = [time_report(s, rc.model, rc.coupling.with_eps(s.eps), rc.model.gamma) for s in res.solutions]
        traces = time_schedule_traces(reps)
        print(f"{'eps':>8} {'iters':>6} {'min(m+eps)':>12} {'|Du|_inf':>10}")
        for s, eta, lip in zip(res.solutions, res.report["min_density"], res.report["lipschitz"]):
            print(f"{s.eps:8.0e} {s.iterations:6d} {eta:12.6f} {lip:10.5f}")

    print("\ncauchy differences")
    for row in res.report["cauchy"]:
        print(f"  {row['eps_from']:.0e} -> {row['eps_to']:.0e}: du = {row['du_sup']:.3e}, dm = {row['dm_sup']:.3e}")
    print("\nfactor-2 rule on the two smallest eps")
    for e in schedule_entries(traces, rc.schedule):
        print(f"  {e['id']:<32} {'PASS' if e['passed'] else 'FAIL'}  ratio = {e['ratio_last_two']:.4f}")


if __name__ == "__main__":
    main()
