"""Network case model: parsing, validation, topology and budget-set primitives.

Case files are a small text format with `BASE`, `SLACK`, `BUS`, `GEN` and
`BRANCH` sections (see docs/case_format.md). All quantities are per unit;
angles are radians.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from collections import deque
from dataclasses import dataclass, field

__all__ = [
    "Bus",
    "Branch",
    "NetworkCase",
    "Topology",
    "LoadProfile",
    "CaseError",
    "parse_case",
    "serialize_case",
    "is_connected",
    "enumerate_budget_set",
]


class CaseError(ValueError):
    """Malformed case text or violated case invariant."""


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float
    v_max: float
    pd: float
    qd: float
    pg_min: float = 0.0
    pg_max: float = 0.0
    qg_min: float = 0.0
    qg_max: float = 0.0


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    g: float
    b: float
    g_sh: float
    b_sh: float
    tap: float
    theta_min: float
    theta_max: float
    s_max: float

    @property
    def z_mag(self) -> float:
        """Series impedance magnitude |z| = 1/|g + jb|."""
        y = math.hypot(self.g, self.b)
        if y == 0.0:
            raise CaseError(f"branch {self.id}: zero series admittance")
        return 1.0 / y


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float
    slack_bus: int
    name: str = ""
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        _validate(self)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def bus_index(self, bus_id: int) -> int:
        return self._bus_pos[bus_id]

    def branch_index(self, branch_id: int) -> int:
        return self._br_pos[branch_id]

    @property
    def _bus_pos(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def _br_pos(self) -> dict[int, int]:
        return {br.id: i for i, br in enumerate(self.branches)}

    def total_demand(self) -> float:
        """Upper bound on any shed value: sum of all active + reactive demand."""
        return sum(b.pd + b.qd for b in self.buses)


@dataclass(frozen=True)
class Topology:
    """In-service statuses in branch order (1 = in service)."""

    status: tuple[int, ...]

    def __post_init__(self):
        if any(s not in (0, 1) for s in self.status):
            raise ValueError("topology entries must be 0/1")

    def n_off(self) -> int:
        return len(self.status) - sum(self.status)

    def off_branches(self, case: NetworkCase) -> tuple[int, ...]:
        return tuple(br.id for br, s in zip(case.branches, self.status) if s == 0)

    def to_json(self) -> str:
        return json.dumps(list(self.status))

    @staticmethod
    def from_json(text: str) -> "Topology":
        return Topology(tuple(int(v) for v in json.loads(text)))

    @staticmethod
    def all_on(case: NetworkCase) -> "Topology":
        return Topology((1,) * case.n_branches)


@dataclass(frozen=True)
class LoadProfile:
    """Per-bus demand vectors in case bus order."""

    pd: tuple[float, ...]
    qd: tuple[float, ...]

    def __post_init__(self):
        if len(self.pd) != len(self.qd):
            raise ValueError("pd/qd length mismatch")
        if any(v < -1e-12 for v in self.pd) or any(v < -1e-12 for v in self.qd):
            raise ValueError("demands must be nonnegative")

    @staticmethod
    def nominal(case: NetworkCase) -> "LoadProfile":
        return LoadProfile(
            tuple(b.pd for b in case.buses), tuple(b.qd for b in case.buses)
        )

    def total(self) -> float:
        return sum(self.pd) + sum(self.qd)


def _validate(case: NetworkCase) -> None:
    if case.base_mva <= 0:
        raise CaseError("base_mva must be positive")
    bus_ids = [b.id for b in case.buses]
    if len(set(bus_ids)) != len(bus_ids):
        raise CaseError("duplicate bus ids")
    if case.slack_bus not in set(bus_ids):
        raise CaseError(f"slack bus {case.slack_bus} not in bus table")
    br_ids = [br.id for br in case.branches]
    if len(set(br_ids)) != len(br_ids):
        raise CaseError("duplicate branch ids")
    for b in case.buses:
        if not (0 < b.v_min <= b.v_max):
            raise CaseError(f"bus {b.id}: requires 0 < v_min <= v_max")
        if b.pd < 0:
            raise CaseError(f"bus {b.id}: pd must be nonnegative")
        if b.qd < 0:
            raise CaseError(f"bus {b.id}: qd must be nonnegative (shed bounds)")
        if b.pg_min > b.pg_max or b.qg_min > b.qg_max:
            raise CaseError(f"bus {b.id}: generator bounds out of order")
    known = set(bus_ids)
    for br in case.branches:
        if br.from_bus not in known or br.to_bus not in known:
            raise CaseError(f"branch {br.id}: endpoint references unknown bus")
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch {br.id}: self loop")
        if br.tap != 1.0 and not (0.9 <= br.tap <= 1.1):
            raise CaseError(f"branch {br.id}: transformer tap outside [0.9, 1.1]")
        if not (-math.pi / 2 - 1e-12 <= br.theta_min <= br.theta_max <= math.pi / 2 + 1e-12):
            raise CaseError(f"branch {br.id}: angle bounds outside [-pi/2, pi/2]")
        if br.s_max <= 0:
            raise CaseError(f"branch {br.id}: s_max must be positive")


# --- case file format -------------------------------------------------------

_BUS_COLS = ("id", "v_min", "v_max", "pd", "qd")
_GEN_COLS = ("bus", "pg_min", "pg_max", "qg_min", "qg_max")
_BRANCH_COLS = (
    "id", "from", "to", "g", "b", "g_sh", "b_sh", "tap",
    "theta_min", "theta_max", "s_max",
)


def parse_case(text: str, name: str = "") -> NetworkCase:
    """Parse case text; aggregates multiple generators per bus into bus bounds."""
    base_mva = None
    slack = None
    section = None
    bus_rows: list[tuple[int, list[float]]] = []
    gen_rows: list[tuple[int, list[float]]] = []
    br_rows: list[tuple[int, list[float]]] = []
    warns: list[str] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0].upper()
        if head == "BASE":
            base_mva = _num(tokens[1], lineno, "BASE")
            continue
        if head == "SLACK":
            slack = int(_num(tokens[1], lineno, "SLACK"))
            continue
        if head in ("BUS", "GEN", "BRANCH"):
            section = head
            continue
        if section is None:
            raise CaseError(f"line {lineno}: data before any section header")
        vals = [_num(t, lineno, section) for t in tokens]
        if section == "BUS":
            _check_width(vals, _BUS_COLS, lineno, warns)
            bus_rows.append((lineno, vals))
        elif section == "GEN":
            _check_width(vals, _GEN_COLS, lineno, warns)
            gen_rows.append((lineno, vals))
        else:
            _check_width(vals, _BRANCH_COLS, lineno, warns)
            br_rows.append((lineno, vals))

    if base_mva is None:
        raise CaseError("missing BASE line")
    if slack is None:
        raise CaseError("missing SLACK line")

    gen_by_bus: dict[int, list[float]] = {}
    for lineno, v in gen_rows:
        agg = gen_by_bus.setdefault(int(v[0]), [0.0, 0.0, 0.0, 0.0])
        for i in range(4):
            agg[i] += v[1 + i]

    buses = []
    for lineno, v in bus_rows:
        bid = int(v[0])
        g = gen_by_bus.get(bid, [0.0, 0.0, 0.0, 0.0])
        buses.append(
            Bus(id=bid, v_min=v[1], v_max=v[2], pd=v[3], qd=v[4],
                pg_min=g[0], pg_max=g[1], qg_min=g[2], qg_max=g[3])
        )
    known_buses = {b.id for b in buses}
    for lineno, v in gen_rows:
        if int(v[0]) not in known_buses:
            raise CaseError(f"line {lineno}: generator at unknown bus {int(v[0])}")

    branches = []
    for lineno, v in br_rows:
        branches.append(
            Branch(id=int(v[0]), from_bus=int(v[1]), to_bus=int(v[2]),
                   g=v[3], b=v[4], g_sh=v[5], b_sh=v[6], tap=v[7],
                   theta_min=v[8], theta_max=v[9], s_max=v[10])
        )
    case = NetworkCase(
        buses=tuple(buses), branches=tuple(branches),
        base_mva=base_mva, slack_bus=slack, name=name, warnings=tuple(warns),
    )
    for w in warns:
        warnings.warn(w, stacklevel=2)
    return case


def _num(token: str, lineno: int, ctx: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise CaseError(f"line {lineno}: malformed {ctx} field {token!r}") from None


def _check_width(vals, cols, lineno, warns):
    if len(vals) < len(cols):
        raise CaseError(
            f"line {lineno}: expected {len(cols)} columns {cols}, got {len(vals)}"
        )
    if len(vals) > len(cols):
        warns.append(f"line {lineno}: ignoring {len(vals) - len(cols)} extra column(s)")
        del vals[len(cols):]


def serialize_case(case: NetworkCase) -> str:
    out = [f"# {case.name}" if case.name else "# network case"]
    out.append(f"BASE {case.base_mva!r}")
    out.append(f"SLACK {case.slack_bus}")
    out.append("BUS")
    out.append("# " + " ".join(_BUS_COLS))
    for b in case.buses:
        out.append(f"{b.id} {b.v_min!r} {b.v_max!r} {b.pd!r} {b.qd!r}")
    out.append("GEN")
    out.append("# " + " ".join(_GEN_COLS))
    for b in case.buses:
        if (b.pg_min, b.pg_max, b.qg_min, b.qg_max) != (0.0, 0.0, 0.0, 0.0):
            out.append(f"{b.id} {b.pg_min!r} {b.pg_max!r} {b.qg_min!r} {b.qg_max!r}")
    out.append("BRANCH")
    out.append("# " + " ".join(_BRANCH_COLS))
    for br in case.branches:
        out.append(
            f"{br.id} {br.from_bus} {br.to_bus} {br.g!r} {br.b!r} {br.g_sh!r} "
            f"{br.b_sh!r} {br.tap!r} {br.theta_min!r} {br.theta_max!r} {br.s_max!r}"
        )
    return "\n".join(out) + "\n"


def load_case(path) -> NetworkCase:
    from pathlib import Path

    p = Path(path)
    return parse_case(p.read_text(), name=p.stem)


# --- topology primitives ----------------------------------------------------


def is_connected(case: NetworkCase, topo: Topology) -> bool:
    """True iff in-service branches span all buses (BFS)."""
    if len(topo.status) != case.n_branches:
        raise ValueError("topology length does not match branch count")
    if case.n_buses <= 1:
        return True
    adj: dict[int, list[int]] = {b.id: [] for b in case.buses}
    for br, s in zip(case.branches, topo.status):
        if s:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    seen = {case.buses[0].id}
    queue = deque(seen)
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == case.n_buses


def enumerate_budget_set(
    case: NetworkCase,
    candidate_lines: set[int] | list[int],
    k: int,
    exclude_islanding: bool = False,
) -> list[Topology]:
    """All topologies switching off 0..k candidate lines, lexicographic order."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    cand = sorted(set(candidate_lines))
    known = {br.id for br in case.branches}
    missing = set(cand) - known
    if missing:
        raise ValueError(f"candidate lines not in case: {sorted(missing)}")
    if k > len(cand):
        warnings.warn(
            f"budget k={k} exceeds candidate count {len(cand)}; clamped", stacklevel=2
        )
        k = len(cand)
    pos = {br.id: i for i, br in enumerate(case.branches)}
    out = []
    for r in range(k + 1):
        for combo in itertools.combinations(cand, r):
            status = [1] * case.n_branches
            for bid in combo:
                status[pos[bid]] = 0
            topo = Topology(tuple(status))
            if exclude_islanding and r > 0 and not is_connected(case, topo):
                continue
            out.append(topo)
    return out
