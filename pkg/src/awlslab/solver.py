"""LP / MILP solving for ConstraintSystems.

The LP kernel assembles sparse matrices and delegates the simplex to
scipy's HiGHS backend; convex rows are enforced through a lazy tangent-cut
loop around it. Mixed-integer solves use a best-first branch-and-bound with
most-fractional branching and an incumbent pool. When a system declares
implied binaries with a resolver (e.g. ReLU activations that are functions
of the line statuses), branching is restricted to the decision binaries and
the implied ones are fixed from the resolver at integral nodes.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .consys import (EQ, GE, LE, CircleRow, ConstraintSystem, LinRow,
                     QuadRow)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"

_INT_TOL = 1e-6


@dataclass
class SolverConfig:
    feas_tol: float = 1e-6
    gap_tol: float = 1e-4  # relative optimality gap
    pool_size: int = 10
    node_limit: int = 200_000
    time_limit: float | None = None
    seed: int = 0
    cut_tol: float = 1e-6
    max_cut_rounds: int = 60
    # stop cutting once the objective has been stable for this many rounds;
    # degenerate optima otherwise bounce between vertices and separate
    # fresh (objective-irrelevant) tangents forever
    stall_rounds: int = 3
    # keep searching until the pool holds pool_size incumbents (or the tree
    # is exhausted) instead of stopping at the first proven optimum
    exhaustive_pool: bool = False

    def __post_init__(self):
        if self.feas_tol <= 0 or self.gap_tol <= 0 or self.cut_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveResult:
    status: str
    objective: float | None
    assignment: dict[str, float] | None
    best_bound: float | None
    pool: list[tuple[float, dict[str, float]]] = field(default_factory=list)
    nodes: int = 0
    cuts: int = 0
    # tangent cuts generated during the solve; valid for any system built
    # from the same case and topology (the convex sets are load-independent),
    # so callers may feed them back via solve_lp(warm_cuts=...)
    cut_rows: list[LinRow] = field(default_factory=list)


class _Workspace:
    """Cached sparse LP data for one system plus accumulated tangent cuts."""

    def __init__(self, system: ConstraintSystem):
        self.sys = system
        self.idx = {v: i for i, v in enumerate(system.var_names)}
        self.n = system.n_vars()
        self.lb = np.array(system.lb, dtype=float)
        self.ub = np.array(system.ub, dtype=float)

        sense_mult = 1.0 if system.objective.sense == "min" else -1.0
        self.sense_mult = sense_mult
        self.c = np.zeros(self.n)
        for v, coef in system.objective.coeffs.items():
            self.c[self.idx[v]] = sense_mult * coef

        self._ub_r: list[np.ndarray] = []
        self._ub_c: list[np.ndarray] = []
        self._ub_v: list[np.ndarray] = []
        self._ub_rhs: list[float] = []
        self._eq_r: list[np.ndarray] = []
        self._eq_c: list[np.ndarray] = []
        self._eq_v: list[np.ndarray] = []
        self._eq_rhs: list[float] = []
        for row in system.rows:
            self._append(row)
        for cr in system.convex_rows:
            for cut in cr.seed_cuts():
                self._append(cut)
        self.cut_rows: list[LinRow] = []
        self._dirty = True
        self._A_ub = self._b_ub = self._A_eq = self._b_eq = None
        # base snapshot for incremental A_ub assembly (cuts append-only)
        self._base_A = None
        self._base_n = 0
        self._init_separator()

    def _init_separator(self) -> None:
        """Index-based separation tables for the known convex-row types."""
        self._circles = [cr for cr in self.sys.convex_rows
                         if isinstance(cr, CircleRow)]
        self._quads = [cr for cr in self.sys.convex_rows
                       if isinstance(cr, QuadRow)]
        self._other_convex = [cr for cr in self.sys.convex_rows
                              if not isinstance(cr, (CircleRow, QuadRow))]
        self._cp = np.array([self.idx[c.pvar] for c in self._circles],
                            dtype=np.int32)
        self._cq = np.array([self.idx[c.qvar] for c in self._circles],
                            dtype=np.int32)
        self._cr = np.array([c.radius for c in self._circles])
        self._qv = np.array([self.idx[q.qvar] for q in self._quads],
                            dtype=np.int32)
        self._qc = np.array([q.qcoef for q in self._quads])
        self._qrhs = np.array([q.rhs for q in self._quads])
        r, c, v = [], [], []
        for k, q in enumerate(self._quads):
            for var, coef in q.lin.items():
                r.append(k)
                c.append(self.idx[var])
                v.append(coef)
        self._qlin = sp.csr_matrix((v, (r, c)),
                                   shape=(len(self._quads), self.n))
        self._cut_keys: set = set()
        self._cut_key_list: list = []

    # tangent points are snapped to these grids so repeated separation draws
    # from a finite cut catalog; dedup then keeps the LP bounded across many
    # solves of the same system. A snapped tangent is still a valid support,
    # so the only cost is a residual violation of at most ~r*(grid/2)^2/2.
    _CIRCLE_GRID = 2.0 * np.pi / 256.0
    _QUAD_GRID = 0.01

    def separate(self, x: np.ndarray, tol: float) -> list[LinRow]:
        """Tangent cuts for every convex row violated by more than tol.

        Cuts already emitted for this workspace (same row, same snapped
        tangent point) are not emitted again, so callers can safely keep
        cuts across repeated solves without unbounded growth.
        """
        cuts: list[LinRow] = []
        if len(self._circles):
            p, q = x[self._cp], x[self._cq]
            r = np.hypot(p, q)
            for k in np.nonzero(r - self._cr > tol)[0]:
                raw = np.arctan2(q[k], p[k])
                # coarse snap first; if that cut already exists and the true
                # circle is still violated, fall back to a fine snap whose
                # residual is far below any tolerance in use
                for grid, level in ((self._CIRCLE_GRID, 0),
                                    (self._CIRCLE_GRID / 64.0, 1)):
                    step = round(raw / grid)
                    key = ("C", int(k), level, int(step))
                    if key in self._cut_keys:
                        continue
                    phi = step * grid
                    cuts.append(self._circles[k]._tangent(
                        np.cos(phi), np.sin(phi), int(step)))
                    self._register_key(key)
                    break
        if len(self._quads):
            v = x[self._qv]
            lhs = self._qc * v * v + self._qlin @ x - self._qrhs
            for k in np.nonzero(lhs > tol)[0]:
                for grid, level in ((self._QUAD_GRID, 0),
                                    (self._QUAD_GRID / 64.0, 1)):
                    t = round(float(v[k]) / grid) * grid
                    key = ("Q", int(k), level, round(t, 8))
                    if key in self._cut_keys:
                        continue
                    cuts.append(self._quads[k]._tangent(t, -1))
                    self._register_key(key)
                    break
        if self._other_convex:
            assign = self.to_assignment(x)
            for cr in self._other_convex:
                if cr.violation(assign) > tol:
                    cut = cr.cut_at(assign)
                    if cut is not None:
                        cuts.append(cut)
                        self._register_key(("O", id(cr), len(self._cut_key_list)))
        return cuts

    def _register_key(self, key) -> None:
        self._cut_keys.add(key)
        self._cut_key_list.append(key)

    def truncate_keys(self, n_keys: int) -> None:
        for key in self._cut_key_list[n_keys:]:
            self._cut_keys.discard(key)
        del self._cut_key_list[n_keys:]

    def _append(self, row: LinRow) -> None:
        cols = np.array([self.idx[v] for v in row.coeffs], dtype=np.int32)
        vals = np.array(list(row.coeffs.values()), dtype=float)
        if row.sense == EQ:
            k = len(self._eq_rhs)
            self._eq_r.append(np.full(len(cols), k, dtype=np.int32))
            self._eq_c.append(cols)
            self._eq_v.append(vals)
            self._eq_rhs.append(row.rhs)
        else:
            if row.sense == GE:
                vals = -vals
                rhs = -row.rhs
            else:
                rhs = row.rhs
            k = len(self._ub_rhs)
            self._ub_r.append(np.full(len(cols), k, dtype=np.int32))
            self._ub_c.append(cols)
            self._ub_v.append(vals)
            self._ub_rhs.append(rhs)
        self._dirty = True

    def add_cut(self, row: LinRow) -> None:
        if row.sense != LE:
            raise ValueError("cuts must be <= rows")
        self._append(row)
        self.cut_rows.append(row)

    def _build_ub(self, lo: int, hi: int) -> "sp.csr_matrix":
        return sp.csr_matrix(
            (np.concatenate(self._ub_v[lo:hi]),
             (np.concatenate([a - lo for a in self._ub_r[lo:hi]]),
              np.concatenate(self._ub_c[lo:hi]))),
            shape=(hi - lo, self.n),
        )

    def _matrices(self):
        if self._dirty:
            nub = len(self._ub_rhs)
            if not nub:
                self._A_ub = self._b_ub = None
            elif self._base_A is None or nub < self._base_n:
                # full (re)build; snapshot as the new base
                self._base_A = self._build_ub(0, nub)
                self._base_n = nub
                self._A_ub = self._base_A
                self._b_ub = np.array(self._ub_rhs)
            elif nub == self._base_n:
                self._A_ub = self._base_A
                self._b_ub = np.array(self._ub_rhs)
            else:
                # rows are append-only beyond the base: stack only the tail
                self._A_ub = sp.vstack(
                    [self._base_A, self._build_ub(self._base_n, nub)],
                    format="csr")
                self._b_ub = np.array(self._ub_rhs)
            if self._eq_rhs:
                self._A_eq = sp.csr_matrix(
                    (np.concatenate(self._eq_v),
                     (np.concatenate(self._eq_r), np.concatenate(self._eq_c))),
                    shape=(len(self._eq_rhs), self.n),
                )
                self._b_eq = np.array(self._eq_rhs)
            else:
                self._A_eq = self._b_eq = None
            self._dirty = False
        return self._A_ub, self._b_ub, self._A_eq, self._b_eq

    def solve_once(self, lb: np.ndarray, ub: np.ndarray):
        """One LP solve. Returns (status, objective-in-system-sense, x)."""
        A_ub, b_ub, A_eq, b_eq = self._matrices()
        res = linprog(self.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=np.column_stack([lb, ub]), method="highs")
        if res.status == 0:
            return OPTIMAL, self.sense_mult * res.fun, res.x
        if res.status == 2:
            return INFEASIBLE, None, None
        if res.status == 3:
            return UNBOUNDED, None, None
        return ITERATION_LIMIT, None, None

    def solve_with_cuts(self, lb: np.ndarray, ub: np.ndarray, cfg: SolverConfig):
        """LP solve iterated with tangent-cut separation.

        Stops when no convex row is violated, or when the objective has been
        stationary for cfg.stall_rounds rounds (further cuts only reshuffle
        alternative optima). Cuts only shrink the relaxation, so an early
        stop keeps the returned value a valid relaxation optimum bound.
        """
        added = 0
        prev_obj = None
        stall = 0
        for _ in range(cfg.max_cut_rounds):
            status, obj, x = self.solve_once(lb, ub)
            if status != OPTIMAL:
                return status, obj, x, added
            if prev_obj is not None and \
                    abs(obj - prev_obj) <= cfg.cut_tol * max(1.0, abs(obj)):
                stall += 1
                if stall >= cfg.stall_rounds:
                    return OPTIMAL, obj, x, added
            else:
                stall = 0
            prev_obj = obj
            new_cuts = self.separate(x, cfg.cut_tol)
            if not new_cuts:
                return OPTIMAL, obj, x, added
            for cut in new_cuts:
                self.add_cut(cut)
            added += len(new_cuts)
        return ITERATION_LIMIT, obj, x, added

    def to_assignment(self, x: np.ndarray) -> dict[str, float]:
        return {v: float(x[i]) for v, i in self.idx.items()}


def solve_lp(system: ConstraintSystem, config: SolverConfig | None = None,
             warm_cuts: list[LinRow] | None = None) -> SolveResult:
    """Solve the continuous relaxation (binaries relaxed to their bounds).

    warm_cuts: tangent cuts from a previous solve over the same convex sets
    (e.g. another load profile on the same topology); seeding them usually
    collapses the cut loop to one or two rounds.
    """
    if system.n_vars() < 1:
        raise ValueError("system has no variables")
    cfg = config or SolverConfig()
    work = _Workspace(system)
    for row in warm_cuts or ():
        work.add_cut(row)
    status, obj, x, cuts = work.solve_with_cuts(work.lb, work.ub, cfg)
    if x is None:
        return SolveResult(status, None, None, None, cuts=cuts,
                           cut_rows=work.cut_rows)
    # iteration-limit still carries the last LP iterate: a valid bound on the
    # relaxation optimum (cuts only tighten), which is what callers need
    assign = work.to_assignment(x)
    return SolveResult(status, obj, assign, obj, pool=[(obj, assign)],
                       cuts=cuts, cut_rows=work.cut_rows)


class BoundPatchLP:
    """Repeated LP solves of one system under varying variable bounds.

    The constraint matrix, right-hand sides, and objective stay fixed; only
    variable bounds change between solves (e.g. load profiles of a fixed
    topology, which enter the lower level solely through bounds). Tangent
    cuts can be kept across solves (keep_cuts=True) — they describe
    bound-independent convex sets — or rolled back after the solve so the
    LP does not grow without bound.
    """

    def __init__(self, system: ConstraintSystem,
                 config: SolverConfig | None = None):
        self.cfg = config or SolverConfig()
        self._work = _Workspace(system)
        self._idx = self._work.idx
        self.base_lb = self._work.lb.copy()
        self.base_ub = self._work.ub.copy()

    def index(self, var: str) -> int:
        return self._idx[var]

    def solve(self, lb: np.ndarray | None = None,
              ub: np.ndarray | None = None,
              keep_cuts: bool = True) -> SolveResult:
        w = self._work
        mark_ub = len(w._ub_rhs)
        mark_cuts = len(w.cut_rows)
        mark_keys = len(w._cut_key_list)
        lbv = self.base_lb if lb is None else np.asarray(lb, dtype=float)
        ubv = self.base_ub if ub is None else np.asarray(ub, dtype=float)
        status, obj, x, cuts = w.solve_with_cuts(lbv, ubv, self.cfg)
        if not keep_cuts and len(w._ub_rhs) > mark_ub:
            del w._ub_r[mark_ub:]
            del w._ub_c[mark_ub:]
            del w._ub_v[mark_ub:]
            del w._ub_rhs[mark_ub:]
            del w.cut_rows[mark_cuts:]
            w.truncate_keys(mark_keys)
            w._dirty = True
        if x is None:
            return SolveResult(status, None, None, None, cuts=cuts,
                               cut_rows=w.cut_rows)
        return SolveResult(status, obj, w.to_assignment(x), obj,
                           pool=[(obj, w.to_assignment(x))], cuts=cuts,
                           cut_rows=w.cut_rows)

    def solve_fixed(self, lb: np.ndarray | None = None,
                    ub: np.ndarray | None = None) -> SolveResult:
        """One LP solve over the accumulated cut set, no separation.

        For minimization the result is a valid lower bound on the cut-loop
        optimum (separation only tightens the relaxation); with a warmed-up
        cut set the difference is typically below the cut tolerance scale.
        """
        w = self._work
        lbv = self.base_lb if lb is None else np.asarray(lb, dtype=float)
        ubv = self.base_ub if ub is None else np.asarray(ub, dtype=float)
        status, obj, x = w.solve_once(lbv, ubv)
        if x is None:
            return SolveResult(status, None, None, None,
                               cut_rows=w.cut_rows)
        return SolveResult(status, obj, w.to_assignment(x), obj,
                           pool=[(obj, w.to_assignment(x))],
                           cut_rows=w.cut_rows)


class _Pool:
    """Up to K best distinct binary assignments (best objective first)."""

    def __init__(self, size: int, maximize: bool):
        self.size = size
        self.maximize = maximize
        self.entries: dict[tuple, tuple[float, dict[str, float]]] = {}

    def offer(self, key: tuple, value: float, assign: dict[str, float]) -> None:
        old = self.entries.get(key)
        better = old is None or (value > old[0]) == self.maximize
        if old is not None and value != old[0] and not better:
            return
        self.entries[key] = (value, assign)
        if len(self.entries) > self.size:
            worst = min(self.entries, key=lambda k: self.entries[k][0]) \
                if self.maximize else max(self.entries, key=lambda k: self.entries[k][0])
            del self.entries[worst]

    def full(self) -> bool:
        return len(self.entries) >= self.size

    def worst_value(self) -> float:
        vals = [v for v, _ in self.entries.values()]
        return min(vals) if self.maximize else max(vals)

    def sorted(self) -> list[tuple[float, dict[str, float]]]:
        return sorted(self.entries.values(), key=lambda e: e[0],
                      reverse=self.maximize)


def solve_milp(system: ConstraintSystem, config: SolverConfig | None = None,
               warm_cuts: list[LinRow] | None = None) -> SolveResult:
    """Best-first branch-and-bound over the system's binaries."""
    cfg = config or SolverConfig()
    binaries = system.binary_names()
    if not binaries:
        return solve_lp(system, cfg, warm_cuts)
    work = _Workspace(system)
    for row in warm_cuts or ():
        work.add_cut(row)
    maximize = system.objective.sense == "max"
    sgn = 1.0 if maximize else -1.0  # internal convention: maximize sgn*obj

    implied = set(system.implied_binaries)
    if implied and system.implied_resolver is None:
        raise ValueError("implied binaries declared without a resolver")
    decision = [v for v in binaries if v not in implied]
    # branch preference: lower rank first, then most fractional, then index
    rank = {v: system.branch_rank.get(v, 10) for v in decision}
    dec_idx = [(v, work.idx[v]) for v in decision]

    start = time.monotonic()
    pool = _Pool(cfg.pool_size, maximize)
    incumbent: tuple[float, dict[str, float]] | None = None
    total_cuts = 0
    nodes = 0
    counter = 0
    heap: list = []  # (-score, counter, fixes)

    def out_of_budget() -> bool:
        return nodes >= cfg.node_limit or (
            cfg.time_limit is not None and time.monotonic() - start > cfg.time_limit
        )

    def node_solve(fixes: dict[str, float]):
        lb = work.lb.copy()
        ub = work.ub.copy()
        for v, val in fixes.items():
            i = work.idx[v]
            lb[i] = ub[i] = val
        return work.solve_with_cuts(lb, ub, cfg)

    def accept(fixes: dict[str, float], x):
        """Fix all binaries to integral values, re-solve, record incumbent."""
        nonlocal incumbent, total_cuts, nodes
        full = dict(fixes)
        for v, i in dec_idx:
            if v not in full:
                full[v] = round(float(x[i]))
        if implied:
            resolved = system.implied_resolver({v: full[v] for v in decision})
            for v in implied:
                full[v] = float(round(resolved[v]))
        status, obj, xx, cuts = node_solve(full)
        total_cuts += cuts
        nodes += 1
        if status != OPTIMAL:
            return
        assign = work.to_assignment(xx)
        key = tuple(int(round(assign[v])) for v in binaries)
        pool.offer(key, obj, assign)
        if incumbent is None or (obj > incumbent[0]) == maximize:
            incumbent = (obj, assign)

    def prune_threshold() -> float | None:
        """Objective level below which nodes cannot contribute anything new."""
        if cfg.exhaustive_pool:
            return pool.worst_value() if pool.full() else None
        return incumbent[0] if incumbent is not None else None

    status0, obj0, x0, cuts0 = node_solve({})
    total_cuts += cuts0
    nodes += 1
    if status0 == INFEASIBLE:
        return SolveResult(INFEASIBLE, None, None, None, nodes=nodes, cuts=total_cuts)
    if status0 == UNBOUNDED:
        return SolveResult(UNBOUNDED, None, None, None, nodes=nodes, cuts=total_cuts)
    heapq.heappush(heap, (-sgn * obj0, counter, {}, obj0, x0))
    counter += 1

    best_open = obj0
    limited = False
    while heap:
        _, _, fixes, obj, x = heapq.heappop(heap)
        best_open = obj  # best-first: top of heap carries the global bound
        thr = prune_threshold()
        if thr is not None and sgn * (obj - thr) <= cfg.gap_tol * max(1.0, abs(thr)):
            best_open = incumbent[0] if incumbent is not None else obj
            break
        if out_of_budget():
            limited = True
            break
        frac = [
            (rank[v], -min(x[i] - np.floor(x[i]), np.ceil(x[i]) - x[i]), i, v)
            for v, i in dec_idx
            if v not in fixes and min(x[i] % 1.0, 1.0 - x[i] % 1.0) > _INT_TOL
        ]
        if not frac:
            accept(fixes, x)
            continue
        frac.sort()
        branch_var = frac[0][3]
        for val in (0.0, 1.0):
            child = dict(fixes)
            child[branch_var] = val
            st, ob, xx, cuts = node_solve(child)
            total_cuts += cuts
            nodes += 1
            if st != OPTIMAL:
                continue
            thr = prune_threshold()
            if thr is not None and sgn * (ob - thr) <= 0:
                continue
            heapq.heappush(heap, (-sgn * ob, counter, child, ob, xx))
            counter += 1
    if not heap and not limited:
        best_open = incumbent[0] if incumbent is not None else best_open

    if incumbent is None:
        if limited:
            return SolveResult(ITERATION_LIMIT, None, None, best_open,
                               nodes=nodes, cuts=total_cuts)
        return SolveResult(INFEASIBLE, None, None, None, nodes=nodes, cuts=total_cuts)

    obj, assign = incumbent
    bound = best_open if limited else obj
    status = ITERATION_LIMIT if limited else OPTIMAL
    return SolveResult(status, obj, assign, bound, pool=pool.sorted(),
                       nodes=nodes, cuts=total_cuts, cut_rows=work.cut_rows)
