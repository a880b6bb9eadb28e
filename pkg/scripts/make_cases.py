#!/usr/bin/env python3
"""Generate the committed case files and candidate-line lists in cases/.

Thermal limits for the realistic cases are calibrated from a relaxed
nominal dispatch: solve the all-lines-on lower level with loose limits,
pick the minimum-|flow| zero-shed dispatch, then set
s_max = max(floor, 1.3 * |S_nominal|) per branch.

Candidate-line lists rank non-islanding lines by the relaxed shed caused
by their single outage at 1.15x load (ties broken by nominal flow).
"""

from __future__ import annotations

import itertools
import json
import math
from pathlib import Path

from awlslab.grid import (Branch, Bus, LoadProfile, NetworkCase, Topology,
                          is_connected, serialize_case)
from awlslab.qcmodel import build_lower_level
from awlslab.solver import SolverConfig, solve_lp
from awlslab.synth import synth118_case

ROOT = Path(__file__).resolve().parent.parent
CASES = ROOT / "cases"
THETA = math.pi / 3


def y(r: float, x: float) -> tuple[float, float]:
    d = r * r + x * x
    return r / d, -x / d


def mk_branch(bid, f, t, r, x, s_max, tap=1.0, b_sh=0.0, theta=THETA):
    g, b = y(r, x)
    return Branch(id=bid, from_bus=f, to_bus=t, g=g, b=b, g_sh=0.0,
                  b_sh=b_sh, tap=tap, theta_min=-theta, theta_max=theta,
                  s_max=s_max)


def case2() -> NetworkCase:
    buses = (
        Bus(1, 0.94, 1.06, 0.0, 0.0, 0.0, 1.0, -0.5, 0.5),
        Bus(2, 0.94, 1.06, 0.7, 0.21, 0.0, 0.0, 0.0, 0.0),
    )
    return NetworkCase(buses, (mk_branch(1, 1, 2, 0.02, 0.1, 1.2),),
                       100.0, 1, "case2")


def case3ring() -> NetworkCase:
    buses = (
        Bus(1, 0.94, 1.06, 0.0, 0.0, 0.0, 1.5, -1.0, 1.0),
        Bus(2, 0.94, 1.06, 0.4, 0.1, 0.0, 0.0, 0.0, 0.0),
        Bus(3, 0.94, 1.06, 0.5, 0.15, 0.0, 0.0, 0.0, 0.0),
    )
    branches = (
        mk_branch(1, 1, 2, 0.01, 0.05, 1.0),
        mk_branch(2, 2, 3, 0.015, 0.06, 1.0),
        # deliberately tight: the direct 1-3 path saturates under outages
        mk_branch(3, 1, 3, 0.01, 0.04, 0.25),
    )
    return NetworkCase(buses, branches, 100.0, 1, "case3ring")


def case5_uncalibrated() -> NetworkCase:
    buses = (
        Bus(1, 0.94, 1.06, 0.0, 0.0, 0.0, 2.0, -1.0, 1.0),
        Bus(2, 0.94, 1.06, 0.3, 0.1, 0.0, 0.0, 0.0, 0.0),
        Bus(3, 0.94, 1.06, 0.2, 0.05, 0.0, 1.0, -0.6, 0.6),
        Bus(4, 0.94, 1.06, 0.4, 0.12, 0.0, 0.0, 0.0, 0.0),
        Bus(5, 0.94, 1.06, 0.35, 0.1, 0.0, 0.0, 0.0, 0.0),
    )
    branches = (
        mk_branch(1, 1, 2, 0.02, 0.06, 10.0, b_sh=0.015),
        mk_branch(2, 1, 3, 0.08, 0.24, 10.0),
        mk_branch(3, 2, 3, 0.06, 0.18, 10.0),
        mk_branch(4, 2, 4, 0.06, 0.18, 10.0),
        mk_branch(5, 3, 4, 0.04, 0.12, 10.0),
        mk_branch(6, 4, 5, 0.0, 0.08, 10.0, tap=0.98),
        mk_branch(7, 2, 5, 0.04, 0.12, 10.0, b_sh=0.01),
    )
    return NetworkCase(buses, branches, 100.0, 1, "case5")


# MATPOWER case14 tables: bus [id Pd Qd], gen [bus Pmax Qmax Qmin],
# branch [f t r x b_c tap]. Loads in MW/MVAr on a 100 MVA base.
IEEE14_BUS = [
    (1, 0.0, 0.0), (2, 21.7, 12.7), (3, 94.2, 19.0), (4, 47.8, -3.9),
    (5, 7.6, 1.6), (6, 11.2, 7.5), (7, 0.0, 0.0), (8, 0.0, 0.0),
    (9, 29.5, 16.6), (10, 9.0, 5.8), (11, 3.5, 1.8), (12, 6.1, 1.6),
    (13, 13.5, 5.8), (14, 14.9, 5.0),
]
IEEE14_GEN = [
    (1, 332.4, 10.0, 0.0), (2, 140.0, 50.0, -40.0), (3, 100.0, 40.0, 0.0),
    (6, 100.0, 24.0, -6.0), (8, 100.0, 24.0, -6.0),
]
IEEE14_BRANCH = [
    (1, 2, 0.01938, 0.05917, 0.0528, 0.0),
    (1, 5, 0.05403, 0.22304, 0.0492, 0.0),
    (2, 3, 0.04699, 0.19797, 0.0438, 0.0),
    (2, 4, 0.05811, 0.17632, 0.0340, 0.0),
    (2, 5, 0.05695, 0.17388, 0.0346, 0.0),
    (3, 4, 0.06701, 0.17103, 0.0128, 0.0),
    (4, 5, 0.01335, 0.04211, 0.0000, 0.0),
    (4, 7, 0.00000, 0.20912, 0.0000, 0.978),
    (4, 9, 0.00000, 0.55618, 0.0000, 0.969),
    (5, 6, 0.00000, 0.25202, 0.0000, 0.932),
    (6, 11, 0.09498, 0.19890, 0.0000, 0.0),
    (6, 12, 0.12291, 0.25581, 0.0000, 0.0),
    (6, 13, 0.06615, 0.13027, 0.0000, 0.0),
    (7, 8, 0.00000, 0.17615, 0.0000, 0.0),
    (7, 9, 0.00000, 0.11001, 0.0000, 0.0),
    (9, 10, 0.03181, 0.08450, 0.0000, 0.0),
    (9, 14, 0.12711, 0.27038, 0.0000, 0.0),
    (10, 11, 0.08205, 0.19207, 0.0000, 0.0),
    (12, 13, 0.22092, 0.19988, 0.0000, 0.0),
    (13, 14, 0.17093, 0.34802, 0.0000, 0.0),
]


def case14_uncalibrated() -> NetworkCase:
    gen = {bid: (pmax, qmax, qmin) for bid, pmax, qmax, qmin in IEEE14_GEN}
    buses = []
    for bid, pd, qd in IEEE14_BUS:
        pmax, qmax, qmin = gen.get(bid, (0.0, 0.0, 0.0))
        buses.append(Bus(
            id=bid, v_min=0.94, v_max=1.06,
            pd=pd / 100.0, qd=max(qd, 0.0) / 100.0,  # qd=-3.9 at bus 4 clamped
            pg_min=0.0, pg_max=pmax / 100.0,
            qg_min=qmin / 100.0, qg_max=qmax / 100.0,
        ))
    branches = []
    for i, (f, t, r, x, bc, tap) in enumerate(IEEE14_BRANCH, start=1):
        branches.append(mk_branch(i, f, t, r, x, 10.0,
                                  tap=tap if tap else 1.0, b_sh=bc / 2.0))
    return NetworkCase(tuple(buses), tuple(branches), 100.0, 1, "case14")


def relaxed_shed(case: NetworkCase, load: LoadProfile,
                 topo: Topology) -> float:
    cs = build_lower_level(case, load, topo)
    res = solve_lp(cs, SolverConfig())
    if res.status != "optimal":
        return float("inf")
    return res.objective


def min_flow_dispatch(case: NetworkCase) -> dict[int, float]:
    """Nominal apparent flow per branch at a min-flow zero-shed dispatch."""
    cs = build_lower_level(case, LoadProfile.nominal(case),
                           Topology.all_on(case))
    flow_obj: dict[str, float] = {}
    for br in case.branches:
        for comp in ("Pf", "Qf"):
            v, t = f"{comp}_{br.id}", f"t{comp}_{br.id}"
            cs.add_var(t, 0.0, 100.0)
            cs.add_row({t: 1.0, v: -1.0}, ">=", 0.0)
            cs.add_row({t: 1.0, v: 1.0}, ">=", 0.0)
            flow_obj[t] = 1.0
    obj = dict(flow_obj)
    for b in case.buses:
        obj[f"dP_{b.id}"] = 1e4  # shed dominates: stay at the zero-shed face
        obj[f"dQ_{b.id}"] = 1e4
    cs.set_objective("min", obj)
    res = solve_lp(cs, SolverConfig())
    if res.status != "optimal":
        raise RuntimeError(f"{case.name}: calibration dispatch {res.status}")
    shed = sum(res.assignment[f"dP_{b.id}"] + res.assignment[f"dQ_{b.id}"]
               for b in case.buses)
    if shed > 1e-5:
        raise RuntimeError(f"{case.name}: nominal point sheds {shed:.4f}")
    return {br.id: math.hypot(res.assignment[f"Pf_{br.id}"],
                              res.assignment[f"Qf_{br.id}"])
            for br in case.branches}


def calibrate_limits(case: NetworkCase, floor: float = 0.2,
                     margin: float = 1.3) -> NetworkCase:
    flows = min_flow_dispatch(case)
    branches = tuple(
        Branch(id=br.id, from_bus=br.from_bus, to_bus=br.to_bus, g=br.g,
               b=br.b, g_sh=br.g_sh, b_sh=br.b_sh, tap=br.tap,
               theta_min=br.theta_min, theta_max=br.theta_max,
               s_max=round(max(floor, margin * flows[br.id]), 3))
        for br in case.branches
    )
    return NetworkCase(case.buses, branches, case.base_mva, case.slack_bus,
                       case.name)


def rank_candidates(case: NetworkCase, n_lines: int, k: int) -> list[int]:
    """Top n lines by single-outage shed at stressed load.

    Greedy with a connectivity filter: a line joins the list only if no
    combination of up to k outages among the chosen lines islands the grid,
    so the k-budget enumeration over the list has its full C(n,<=k) size.
    """
    stressed = LoadProfile(tuple(1.15 * b.pd for b in case.buses),
                           tuple(1.15 * b.qd for b in case.buses))
    flows = min_flow_dispatch(case)
    scores = []
    for br in case.branches:
        topo = Topology(tuple(0 if b.id == br.id else 1
                              for b in case.branches))
        if not is_connected(case, topo):
            continue
        shed = relaxed_shed(case, stressed, topo)
        scores.append((-shed, -flows[br.id], br.id))
    scores.sort()
    chosen: list[int] = []
    for _, _, bid in scores:
        if len(chosen) == n_lines:
            break
        trial = chosen + [bid]
        ok = all(
            is_connected(case, Topology(tuple(
                0 if b.id in combo else 1 for b in case.branches)))
            for r in range(2, min(k, len(trial)) + 1)
            for combo in itertools.combinations(trial, r)
            if bid in combo
        )
        if ok:
            chosen.append(bid)
    if len(chosen) < n_lines:
        raise RuntimeError(f"{case.name}: only {len(chosen)} usable lines")
    return sorted(chosen)


def write_case(case: NetworkCase) -> None:
    path = CASES / f"{case.name}.case"
    path.write_text(serialize_case(case))
    print(f"wrote {path.relative_to(ROOT)}  "
          f"({len(case.buses)} buses, {len(case.branches)} branches)")


def main() -> None:
    CASES.mkdir(exist_ok=True)
    write_case(case2())
    write_case(case3ring())
    write_case(calibrate_limits(case5_uncalibrated()))
    c14 = calibrate_limits(case14_uncalibrated())
    write_case(c14)
    c118 = calibrate_limits(synth118_case(), floor=0.15)
    write_case(c118)

    for case, n_lines, k, fname in (
            (c14, 8, 3, "candidates_case14_8.json"),
            (c118, 15, 2, "candidates_synth118_15.json")):
        lines = rank_candidates(case, n_lines, k)
        payload = {"schema": 1, "case": case.name, "lines": lines}
        (CASES / fname).write_text(json.dumps(payload, indent=1) + "\n")
        print(f"wrote cases/{fname}: {lines}")


if __name__ == "__main__":
    main()
