"""Solver-agnostic constraint system.

Linear rows are kept explicitly; convex rows come from a fixed catalog
(square-underestimator, quadratic cap, circle) and are handled by the solve
loop through tangent-cut separation: each row can seed initial cuts and,
given a candidate point, return one violated supporting hyperplane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LE, GE, EQ = "<=", ">=", "=="


@dataclass
class LinRow:
    coeffs: dict[str, float]
    sense: str
    rhs: float
    name: str = ""
    tag: str = ""

    def violation(self, assign: dict[str, float]) -> float:
        lhs = sum(c * assign[v] for v, c in self.coeffs.items())
        if self.sense == LE:
            return lhs - self.rhs
        if self.sense == GE:
            return self.rhs - lhs
        return abs(lhs - self.rhs)


class ConvexRow:
    """Base class for the registered convex-row catalog."""

    name: str

    def seed_cuts(self) -> list[LinRow]:
        raise NotImplementedError

    def violation(self, assign: dict[str, float]) -> float:
        raise NotImplementedError

    def cut_at(self, assign: dict[str, float]) -> LinRow | None:
        """Violated supporting hyperplane at the point, or None if satisfied."""
        raise NotImplementedError


@dataclass
class QuadRow(ConvexRow):
    """q * var^2 + linear <= rhs with q >= 0.

    Covers both the voltage-square underestimator (V^2 - w <= 0) and the
    on/off cosine cap (kappa * theta^2 + ... <= rhs).
    """

    qcoef: float
    qvar: str
    lin: dict[str, float]
    rhs: float
    name: str = ""
    seed_lo: float = -1.0
    seed_hi: float = 1.0
    n_seeds: int = 8

    def __post_init__(self):
        if self.qcoef < 0:
            raise ValueError("QuadRow requires a nonnegative quadratic coefficient")

    def _tangent(self, t: float, idx: int) -> LinRow:
        # q*v^2 >= q*(2*t*v - t^2) for all v; tangency at v = t.
        coeffs = dict(self.lin)
        coeffs[self.qvar] = coeffs.get(self.qvar, 0.0) + self.qcoef * 2.0 * t
        return LinRow(coeffs, LE, self.rhs + self.qcoef * t * t,
                      name=f"{self.name}@{idx}", tag="cut")

    def seed_cuts(self) -> list[LinRow]:
        ts = np.linspace(self.seed_lo, self.seed_hi, self.n_seeds)
        return [self._tangent(float(t), i) for i, t in enumerate(ts)]

    def violation(self, assign: dict[str, float]) -> float:
        v = assign[self.qvar]
        lhs = self.qcoef * v * v + sum(c * assign[x] for x, c in self.lin.items())
        return lhs - self.rhs

    def cut_at(self, assign: dict[str, float]) -> LinRow | None:
        if self.violation(assign) <= 0.0:
            return None
        return self._tangent(assign[self.qvar], -1)


@dataclass
class CircleRow(ConvexRow):
    """p^2 + q^2 <= r^2, outer-approximated by tangent lines."""

    pvar: str
    qvar: str
    radius: float
    name: str = ""
    n_seeds: int = 16

    def _tangent(self, cphi: float, sphi: float, idx: int) -> LinRow:
        return LinRow({self.pvar: cphi, self.qvar: sphi}, LE, self.radius,
                      name=f"{self.name}@{idx}", tag="cut")

    def seed_cuts(self) -> list[LinRow]:
        out = []
        for i in range(self.n_seeds):
            phi = 2.0 * math.pi * i / self.n_seeds
            out.append(self._tangent(math.cos(phi), math.sin(phi), i))
        return out

    def violation(self, assign: dict[str, float]) -> float:
        p, q = assign[self.pvar], assign[self.qvar]
        return math.hypot(p, q) - self.radius

    def cut_at(self, assign: dict[str, float]) -> LinRow | None:
        p, q = assign[self.pvar], assign[self.qvar]
        r = math.hypot(p, q)
        if r <= self.radius:
            return None
        return self._tangent(p / r, q / r, -1)


@dataclass
class Objective:
    sense: str  # "min" | "max"
    coeffs: dict[str, float] = field(default_factory=dict)


class ConstraintSystem:
    """Variables with bounds, linear rows, convex rows, binaries, objective."""

    def __init__(self, name: str = ""):
        self.name = name
        self.var_names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.binary: list[bool] = []
        self.branch_rank: dict[str, int] = {}
        self._index: dict[str, int] = {}
        self.rows: list[LinRow] = []
        self.convex_rows: list[ConvexRow] = []
        self.objective = Objective("min", {})
        # Optional callback: given integral values of the decision binaries,
        # return values of the remaining ("implied") binaries. Lets the
        # branch-and-bound skip branching on binaries that are functions of
        # the decision set (e.g. ReLU activations driven by line statuses).
        self.implied_binaries: set[str] = set()
        self.implied_resolver = None

    # -- construction --------------------------------------------------------

    def add_var(self, name: str, lb: float, ub: float, binary: bool = False,
                branch_rank: int = 10) -> str:
        if name in self._index:
            raise ValueError(f"duplicate variable {name!r}")
        if lb > ub + 1e-12:
            raise ValueError(f"variable {name!r}: lb > ub")
        self._index[name] = len(self.var_names)
        self.var_names.append(name)
        self.lb.append(lb)
        self.ub.append(ub)
        self.binary.append(binary)
        if binary:
            self.branch_rank[name] = branch_rank
        return name

    def has_var(self, name: str) -> bool:
        return name in self._index

    def add_row(self, coeffs: dict[str, float], sense: str, rhs: float,
                name: str = "", tag: str = "") -> LinRow:
        if sense not in (LE, GE, EQ):
            raise ValueError(f"bad sense {sense!r}")
        for v in coeffs:
            if v not in self._index:
                raise ValueError(f"row {name!r} references unknown variable {v!r}")
        row = LinRow(dict(coeffs), sense, rhs, name=name, tag=tag)
        self.rows.append(row)
        return row

    def add_convex(self, row: ConvexRow) -> ConvexRow:
        self.convex_rows.append(row)
        return row

    def set_objective(self, sense: str, coeffs: dict[str, float]) -> None:
        if sense not in ("min", "max"):
            raise ValueError("objective sense must be min or max")
        for v in coeffs:
            if v not in self._index:
                raise ValueError(f"objective references unknown variable {v!r}")
        self.objective = Objective(sense, dict(coeffs))

    def extend(self, other: "ConstraintSystem",
               shared: dict[str, str] | None = None) -> None:
        """Merge another system's variables and rows into this one.

        `shared` maps the other system's variable names to existing names
        here (used to stitch a surrogate fragment onto model binaries).
        """
        shared = shared or {}
        rename: dict[str, str] = {}
        for i, v in enumerate(other.var_names):
            if v in shared:
                tgt = shared[v]
                if tgt not in self._index:
                    raise ValueError(f"shared target {tgt!r} missing")
                rename[v] = tgt
                continue
            if v in self._index:
                raise ValueError(f"variable collision while merging: {v!r}")
            self.add_var(v, other.lb[i], other.ub[i], other.binary[i],
                         other.branch_rank.get(v, 10))
            rename[v] = v
        for row in other.rows:
            self.add_row({rename[v]: c for v, c in row.coeffs.items()},
                         row.sense, row.rhs, name=row.name, tag=row.tag)
        for cr in other.convex_rows:
            self.add_convex(cr)
        self.implied_binaries |= {rename[v] for v in other.implied_binaries}
        if other.implied_resolver is not None:
            if self.implied_resolver is not None:
                raise ValueError("cannot merge two implied-binary resolvers")
            resolver = other.implied_resolver
            inverse = {new: old for old, new in rename.items()}

            def wrapped(decisions: dict[str, float]) -> dict[str, float]:
                mapped = {inverse.get(k, k): v for k, v in decisions.items()}
                return {rename[k]: v for k, v in resolver(mapped).items()}

            self.implied_resolver = wrapped

    # -- queries -------------------------------------------------------------

    def n_vars(self) -> int:
        return len(self.var_names)

    def binary_names(self) -> list[str]:
        return [v for v, b in zip(self.var_names, self.binary) if b]

    def assignment_violation(self, assign: dict[str, float]) -> float:
        """Worst violation of any row or bound at the assignment."""
        worst = 0.0
        for i, v in enumerate(self.var_names):
            x = assign[v]
            worst = max(worst, self.lb[i] - x, x - self.ub[i])
        for row in self.rows:
            worst = max(worst, row.violation(assign))
        for cr in self.convex_rows:
            worst = max(worst, cr.violation(assign))
        return worst

    def objective_value(self, assign: dict[str, float]) -> float:
        return sum(c * assign[v] for v, c in self.objective.coeffs.items())

    # -- debug dump ----------------------------------------------------------

    def dump(self) -> str:
        """LP-format-like text for inspection (documented, stable)."""
        out = [f"\\ system {self.name}", self.objective.sense]
        out.append("  " + _expr(self.objective.coeffs))
        out.append("subject to")
        for row in self.rows:
            label = f" [{row.name}]" if row.name else ""
            out.append(f"  {_expr(row.coeffs)} {row.sense} {row.rhs:.9g}{label}")
        for cr in self.convex_rows:
            if isinstance(cr, QuadRow):
                out.append(
                    f"  {cr.qcoef:.9g} {cr.qvar}^2 + {_expr(cr.lin)} <= "
                    f"{cr.rhs:.9g} [{cr.name}]"
                )
            elif isinstance(cr, CircleRow):
                out.append(
                    f"  {cr.pvar}^2 + {cr.qvar}^2 <= {cr.radius:.9g}^2 [{cr.name}]"
                )
        out.append("bounds")
        for v, lo, hi in zip(self.var_names, self.lb, self.ub):
            out.append(f"  {lo:.9g} <= {v} <= {hi:.9g}")
        bins = self.binary_names()
        if bins:
            out.append("binary")
            out.append("  " + " ".join(bins))
        out.append("end")
        return "\n".join(out) + "\n"


def _expr(coeffs: dict[str, float]) -> str:
    if not coeffs:
        return "0"
    parts = []
    for v, c in coeffs.items():
        sign = "-" if c < 0 else ("+" if parts else "")
        parts.append(f"{sign} {abs(c):.9g} {v}".strip())
    return " ".join(parts)
