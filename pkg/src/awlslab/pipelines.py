"""End-to-end experiment pipelines.

Dataset generation (band-sampled load profiles x budget-set topologies,
labeled by the relaxed lower level), the enumeration benchmark, direct-NN
and value-function (PCNN) attack solves with pool refinement, and report
assembly. The benchmark and every surrogate pipeline score topologies with
the same relaxed lower-level model, so reported gaps measure surrogate
quality rather than relaxation error.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .consys import GE, ConstraintSystem
from .grid import (LoadProfile, NetworkCase, Topology, enumerate_budget_set)
from .metrics import kendall_tau, optimality_gap, spearman_rho
from .qcmodel import _bus_names, build_lower_level, build_ovf_model, x_var
from .solver import BoundPatchLP, SolverConfig, solve_lp, solve_milp
from .surrogate import ReluBounds, ReluNet, compute_bounds

DATASET_SCHEMA = "dataset/1"
REPORT_SCHEMA = "report/1"

# low / medium / high multiplier bands around nominal load
BANDS = ((0.80, 0.93), (0.93, 1.07), (1.07, 1.20))


def lower_config() -> SolverConfig:
    """Solver settings for lower-level labeling and benchmark scoring.

    A short cut loop with a loosened separation tolerance: the objective
    converges within a couple of rounds while full tangent separation can
    chase degenerate vertices for dozens of LP re-solves, and 1e-4-level
    envelope violations are noise relative to surrogate error. All labels
    and benchmark values use this one config so comparisons are internally
    consistent.
    """
    return SolverConfig(stall_rounds=1, max_cut_rounds=3, cut_tol=1e-4)


def awls_config() -> SolverConfig:
    """Solver settings for the mixed-integer attack solves."""
    return SolverConfig(stall_rounds=1, max_cut_rounds=4)


class PipelineError(Exception):
    pass


# -- dataset -------------------------------------------------------------


@dataclass
class Sample:
    status: tuple[int, ...]
    pd: tuple[float, ...]
    qd: tuple[float, ...]
    label: float


@dataclass
class Dataset:
    case_name: str
    k: int
    candidate_lines: list[int]
    seed: int
    samples: list[Sample] = field(default_factory=list)

    def to_jsonl(self) -> str:
        head = {"schema": DATASET_SCHEMA, "case": self.case_name,
                "k": self.k, "candidate_lines": self.candidate_lines,
                "seed": self.seed, "n_samples": len(self.samples)}
        lines = [json.dumps(head)]
        for s in self.samples:
            lines.append(json.dumps({
                "x": list(s.status), "pd": list(s.pd), "qd": list(s.qd),
                "eta": s.label}))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_jsonl(text: str) -> "Dataset":
        rows = [json.loads(l) for l in text.splitlines() if l.strip()]
        if not rows or rows[0].get("schema") != DATASET_SCHEMA:
            raise ValueError("bad dataset header")
        head = rows[0]
        ds = Dataset(head["case"], head["k"], list(head["candidate_lines"]),
                     head["seed"])
        for r in rows[1:]:
            ds.samples.append(Sample(tuple(r["x"]), tuple(r["pd"]),
                                     tuple(r["qd"]), float(r["eta"])))
        if len(ds.samples) != head["n_samples"]:
            raise ValueError("dataset row count mismatch")
        return ds

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        X = np.array([[*s.status, *s.pd, *s.qd] for s in self.samples])
        y = np.array([s.label for s in self.samples])
        return X, y


def sample_profiles(case: NetworkCase, n: int, seed: int,
                    bands=BANDS) -> list[LoadProfile]:
    """Per-bus uniform multipliers, band chosen uniformly per bus.

    One factor per bus scales both PD and QD (constant power factor).
    """
    rng = np.random.default_rng(seed)
    out = []
    nb = len(case.buses)
    for _ in range(n):
        band_idx = rng.integers(len(bands), size=nb)
        f = np.array([rng.uniform(*bands[i]) for i in band_idx])
        out.append(LoadProfile(
            tuple(float(fi * b.pd) for fi, b in zip(f, case.buses)),
            tuple(float(fi * b.qd) for fi, b in zip(f, case.buses))))
    return out


def sample_topologies(case: NetworkCase, lines: list[int], k: int,
                      n: int, seed: int) -> list[Topology]:
    """Uniform draw (without replacement) from the non-islanding budget set."""
    pool = enumerate_budget_set(case, lines, k, exclude_islanding=True)
    if n >= len(pool):
        return pool
    rng = np.random.default_rng(seed)
    idx = sorted(rng.choice(len(pool), size=n, replace=False))
    return [pool[i] for i in idx]


def shed_value(case: NetworkCase, load: LoadProfile, topo: Topology,
               config: SolverConfig | None = None,
               warm_cuts=None) -> tuple[float, list]:
    """Relaxed lower-level optimum; returns (eta, reusable tangent cuts)."""
    cs = build_lower_level(case, load, topo)
    res = solve_lp(cs, config or lower_config(), warm_cuts=warm_cuts)
    if res.objective is None:
        raise PipelineError(
            f"lower level {res.status} for topology {topo.to_json()}:\n"
            + cs.dump())
    return max(res.objective, 0.0), res.cut_rows


def realized_shed(case: NetworkCase, load: LoadProfile, topo: Topology,
                  config: SolverConfig | None = None) -> float:
    return shed_value(case, load, topo, config)[0]


def _label_topology(case: NetworkCase, topo: Topology,
                    profiles: list[LoadProfile]) -> list[Sample]:
    """Label every profile for one topology with a shared LP workspace.

    Profiles enter the lower level only through variable bounds, so one
    constraint matrix serves all of them. Tangent cuts accumulate across
    profiles; snapped-tangent dedup in the workspace keeps the cut set
    (and so the LP) bounded while round-one satisfaction improves as the
    catalog fills in.
    """
    out = []
    solver = None
    for j, load in enumerate(profiles):
        if solver is None:
            cs = build_lower_level(case, load, topo)
            solver = BoundPatchLP(cs, lower_config())
            patch = _load_bound_patch(case, solver)
            res = solver.solve()
        else:
            res = solver.solve(*patch(load), keep_cuts=True)
        if res.objective is None:
            raise PipelineError(
                f"lower level {res.status} for topology {topo.to_json()}")
        out.append(Sample(topo.status, load.pd, load.qd,
                          max(res.objective, 0.0)))
    return out


def _load_bound_patch(case: NetworkCase, solver: BoundPatchLP):
    """Bounds updater: only P/Q injections and shed caps depend on load."""
    idx_p = np.array([solver.index(_bus_names(b.id)["P"]) for b in case.buses])
    idx_q = np.array([solver.index(_bus_names(b.id)["Q"]) for b in case.buses])
    idx_dp = np.array([solver.index(_bus_names(b.id)["dP"])
                       for b in case.buses])
    idx_dq = np.array([solver.index(_bus_names(b.id)["dQ"])
                       for b in case.buses])
    pg_min = np.array([b.pg_min for b in case.buses])
    pg_max = np.array([b.pg_max for b in case.buses])
    qg_min = np.array([b.qg_min for b in case.buses])
    qg_max = np.array([b.qg_max for b in case.buses])

    def patch(load: LoadProfile) -> tuple[np.ndarray, np.ndarray]:
        lb = solver.base_lb.copy()
        ub = solver.base_ub.copy()
        pd, qd = np.asarray(load.pd), np.asarray(load.qd)
        lb[idx_p], ub[idx_p] = pg_min - pd, pg_max - pd
        lb[idx_q], ub[idx_q] = qg_min - qd, qg_max - qd
        ub[idx_dp] = pd
        ub[idx_dq] = qd
        return lb, ub

    return patch


def gen_dataset(case: NetworkCase, candidate_lines: list[int], k: int,
                n_profiles: int, n_topologies: int, seed: int,
                bands=BANDS, sample_cap: int | None = None,
                jobs: int = 1) -> Dataset:
    """Cartesian topology x profile dataset, labeled by the relaxed solve.

    The pairing is capped at sample_cap rows (taken in deterministic order).
    Tangent cuts are shared between profiles of one topology — they describe
    load-independent convex sets — which keeps labeling fast. jobs > 1
    labels topologies in parallel processes; samples are collected in
    topology order, so the result is independent of the job count.
    """
    if n_profiles < 1 or n_topologies < 1 or k < 0:
        raise ValueError("counts must be positive")
    topos = sample_topologies(case, candidate_lines, k, n_topologies, seed)
    profiles = sample_profiles(case, n_profiles, seed + 1, bands)
    ds = Dataset(case.name, k, sorted(candidate_lines), seed)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = pool.map(_label_topology, [case] * len(topos), topos,
                              [profiles] * len(topos))
            for chunk in chunks:
                ds.samples.extend(chunk)
    else:
        for topo in topos:
            if sample_cap is not None and len(ds.samples) >= sample_cap:
                break
            ds.samples.extend(_label_topology(case, topo, profiles))
    if sample_cap is not None:
        del ds.samples[sample_cap:]
    return ds


# -- benchmark and attack solves ------------------------------------------


@dataclass
class Benchmark:
    topologies: list[Topology]
    values: list[float]

    @property
    def best_index(self) -> int:
        return int(np.argmax(self.values))

    @property
    def best_topology(self) -> Topology:
        return self.topologies[self.best_index]

    @property
    def best_value(self) -> float:
        return float(self.values[self.best_index])


def enumerate_benchmark(case: NetworkCase, load: LoadProfile,
                        lines: list[int], k: int,
                        config: SolverConfig | None = None) -> Benchmark:
    """Solve the lower level for every non-islanding budget topology."""
    topos = enumerate_budget_set(case, lines, k, exclude_islanding=True)
    values = [shed_value(case, load, t, config)[0] for t in topos]
    return Benchmark(topos, values)


@dataclass
class AwlsSolution:
    topology: Topology
    objective: float
    eta_hat: float
    s_delta: float | None
    pool: list[Topology]
    status: str
    nodes: int


def _pool_topologies(case: NetworkCase, pool) -> list[Topology]:
    out = []
    seen = set()
    for _, assign in pool:
        status = tuple(
            int(round(assign.get(x_var(br.id), 1.0))) for br in case.branches)
        if status not in seen:
            seen.add(status)
            out.append(Topology(status))
    return out


def solve_direct_nn(case: NetworkCase, load: LoadProfile, net: ReluNet,
                    bounds: ReluBounds, lines: list[int], k: int,
                    config: SolverConfig | None = None) -> AwlsSolution:
    """max eta_hat(x) over the budget set — surrogate only, no physics."""
    from .surrogate import encode_milp
    frag = encode_milp(net, bounds, [x_var(br.id) for br in case.branches],
                       np.array(load.pd), np.array(load.qd))
    cand = sorted(set(lines))
    non_cand = [br.id for br in case.branches if br.id not in set(cand)]
    for bid in non_cand:
        i = frag._index[x_var(bid)]
        frag.lb[i] = frag.ub[i] = 1.0
    frag.add_row({x_var(b): 1.0 for b in cand}, GE, float(len(cand) - k),
                 name="budget")
    frag.set_objective("max", {"eta_hat": 1.0})
    res = solve_milp(frag, config or awls_config())
    if res.assignment is None:
        raise PipelineError(f"direct-NN solve {res.status}")
    topo = _pool_topologies(case, [(res.objective, res.assignment)])[0]
    return AwlsSolution(topo, res.objective, res.objective, None,
                        _pool_topologies(case, res.pool), res.status,
                        res.nodes)


def solve_pcnn(case: NetworkCase, load: LoadProfile, net: ReluNet,
               bounds: ReluBounds, lines: list[int], k: int,
               lam: float = 10.0,
               config: SolverConfig | None = None) -> AwlsSolution:
    """Value-function attack: physics + surrogate + penalized slack."""
    from .surrogate import encode_milp
    if lam <= 0:
        raise ValueError("lambda must be positive")
    frag = encode_milp(net, bounds, [x_var(br.id) for br in case.branches],
                       np.array(load.pd), np.array(load.qd))
    model = build_ovf_model(case, load, k, frag, lam,
                            candidate_lines=sorted(set(lines)))
    res = solve_milp(model, config or awls_config())
    if res.assignment is None:
        raise PipelineError(f"PCNN solve {res.status}")
    topo = _pool_topologies(case, [(res.objective, res.assignment)])[0]
    return AwlsSolution(topo, res.objective, res.assignment["eta_hat"],
                        res.assignment["s_delta"],
                        _pool_topologies(case, res.pool), res.status,
                        res.nodes)


def refine_pool(case: NetworkCase, load: LoadProfile,
                pool: list[Topology],
                config: SolverConfig | None = None) -> tuple[Topology, float]:
    """Re-score every pool topology with the lower level; argmax wins.

    Ties keep the earliest pool entry, so refinement never replaces the top
    incumbent with an equal-value alternative.
    """
    if not pool:
        raise ValueError("empty pool")
    best_t, best_v = None, -1.0
    for t in pool:
        v = realized_shed(case, load, t, config)
        if v > best_v + 1e-12:
            best_t, best_v = t, v
    return best_t, best_v


# -- reports ---------------------------------------------------------------


@dataclass
class ReportRow:
    profile: int
    method: str
    lam: float | None
    topology: str
    eta_realized: float
    eta_benchmark: float
    gap_pct: float | None
    tau: float | None
    rho: float | None
    status: str
    solve_seconds: float


@dataclass
class ExperimentReport:
    case_name: str
    k: int
    lines: list[int]
    rows: list[ReportRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["profile", "method", "lambda", "topology",
                    "eta_realized", "eta_benchmark", "gap_pct", "tau", "rho",
                    "status", "solve_seconds"])
        for r in self.rows:
            w.writerow([
                r.profile, r.method,
                "" if r.lam is None else f"{r.lam:g}",
                r.topology, f"{r.eta_realized:.9f}", f"{r.eta_benchmark:.9f}",
                "" if r.gap_pct is None else f"{r.gap_pct:.6f}",
                "" if r.tau is None else f"{r.tau:.6f}",
                "" if r.rho is None else f"{r.rho:.6f}",
                r.status, f"{r.solve_seconds:.3f}"])
        return buf.getvalue()

    def aggregate(self) -> dict:
        out = {"schema": REPORT_SCHEMA, "case": self.case_name, "k": self.k,
               "lines": self.lines, "methods": {}}
        methods = sorted({r.method for r in self.rows})
        for m in methods:
            rows = [r for r in self.rows if r.method == m]
            gaps = [r.gap_pct for r in rows if r.gap_pct is not None]
            taus = [r.tau for r in rows if r.tau is not None]
            rhos = [r.rho for r in rows if r.rho is not None]
            out["methods"][m] = {
                "profiles": len(rows),
                "gap_avg": float(np.mean(gaps)) if gaps else None,
                "gap_max": float(np.max(gaps)) if gaps else None,
                "gap_min": float(np.min(gaps)) if gaps else None,
                "tau_avg": float(np.mean(taus)) if taus else None,
                "rho_avg": float(np.mean(rhos)) if rhos else None,
            }
        return out

    def to_json(self) -> str:
        return json.dumps(self.aggregate(), indent=1)


def surrogate_table(net: ReluNet, bench: Benchmark,
                    load: LoadProfile) -> list[float]:
    """Forward-pass predictions aligned with a benchmark's topology table."""
    X = np.array([[*t.status, *load.pd, *load.qd] for t in bench.topologies])
    return list(net.forward_batch(X))


def run_awls_experiment(case: NetworkCase, net: ReluNet, lines: list[int],
                        k: int, profiles: list[LoadProfile],
                        lam: float = 10.0,
                        methods=("direct-nn", "pcnn"),
                        refine: bool = True,
                        config: SolverConfig | None = None,
                        lower: SolverConfig | None = None) -> ExperimentReport:
    """Per-profile: enumerate the benchmark, run each attack method, refine
    the incumbent pool, and record gaps plus per-profile rank metrics."""
    box_lo = np.concatenate([np.zeros(len(case.branches)),
                             [b.pd * BANDS[0][0] for b in case.buses],
                             [b.qd * BANDS[0][0] for b in case.buses]])
    box_hi = np.concatenate([np.ones(len(case.branches)),
                             [b.pd * BANDS[-1][1] for b in case.buses],
                             [b.qd * BANDS[-1][1] for b in case.buses]])
    bounds = compute_bounds(net, box_lo, box_hi)
    report = ExperimentReport(case.name, k, sorted(set(lines)))
    for p, load in enumerate(profiles):
        bench = enumerate_benchmark(case, load, lines, k, lower)
        preds = surrogate_table(net, bench, load)
        tau = kendall_tau(bench.values, preds)
        rho = spearman_rho(bench.values, preds)
        for method in methods:
            t0 = time.monotonic()
            if method == "direct-nn":
                sol = solve_direct_nn(case, load, net, bounds, lines, k,
                                      config)
            elif method == "pcnn":
                sol = solve_pcnn(case, load, net, bounds, lines, k, lam,
                                 config)
            else:
                raise ValueError(f"unknown method {method!r}")
            if refine and sol.pool:
                chosen, realized = refine_pool(case, load, sol.pool, lower)
            else:
                chosen = sol.topology
                realized = realized_shed(case, load, chosen, lower)
            dt = time.monotonic() - t0
            report.rows.append(ReportRow(
                profile=p, method=method,
                lam=lam if method == "pcnn" else None,
                topology=chosen.to_json(),
                eta_realized=realized,
                eta_benchmark=bench.best_value,
                gap_pct=optimality_gap(realized, bench.best_value),
                tau=tau, rho=rho, status=sol.status, solve_seconds=dt))
    return report
