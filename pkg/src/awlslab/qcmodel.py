"""Lower-level load-shed model and its on/off quadratic-convex relaxation.

Emits ConstraintSystems with lifted voltage/trig variables (w, w^x, w^c,
w^s, c^x, s^x), McCormick envelopes, on/off cosine and sine relaxations,
linear flow definitions and nodal balances. Line statuses enter either as
constants (fixed topology, lower-level solve) or as binary variables
(single-level interdiction model).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .consys import CircleRow, ConstraintSystem, QuadRow, EQ, GE, LE
from .grid import Branch, LoadProfile, NetworkCase, Topology

M_THETA = math.pi  # angle decoupling bound when a line is switched off

XTerm = str | float  # binary-variable name, or a 0/1 constant


class ModelError(ValueError):
    """Violated builder precondition."""


@dataclass(frozen=True)
class QCConstants:
    """Per-branch relaxation constants derived from the angle box."""

    thbar: float       # max(|theta_min|, |theta_max|)
    kappa: float       # cosine curvature (1 - cos thbar) / thbar^2
    c_half: float      # cos(thbar / 2)
    s_half: float      # sin(thbar / 2)
    alpha: float
    beta: float
    gamma: float
    m_theta: float
    m_c: float
    degenerate: bool   # thbar == 0: sine rows collapse

    @staticmethod
    def for_branch(br: Branch, m_theta: float = M_THETA) -> "QCConstants":
        thbar = max(abs(br.theta_min), abs(br.theta_max))
        if thbar <= 0.0:
            # limit of (1 - cos t) / t^2 as t -> 0
            kappa, degenerate = 0.5, True
        else:
            kappa, degenerate = (1.0 - math.cos(thbar)) / thbar**2, False
        c_half = math.cos(thbar / 2.0)
        s_half = math.sin(thbar / 2.0)
        alpha = s_half - c_half * thbar / 2.0
        beta = s_half + c_half * thbar / 2.0
        gamma = alpha + math.sin(thbar)
        return QCConstants(
            thbar=thbar, kappa=kappa, c_half=c_half, s_half=s_half,
            alpha=alpha, beta=beta, gamma=gamma,
            m_theta=m_theta, m_c=c_half * m_theta, degenerate=degenerate,
        )


# -- variable naming conventions (shared with the surrogate encoder) --------


def x_var(branch_id: int) -> str:
    return f"x_{branch_id}"


def _bus_names(bid: int) -> dict[str, str]:
    return {k: f"{k}_{bid}" for k in ("V", "w", "P", "Q", "dP", "dQ")}


def _br_names(bid: int) -> dict[str, str]:
    return {k: f"{k}_{bid}"
            for k in ("th", "Pf", "Qf", "wx", "wc", "ws", "wij", "cx", "sx")}


def _as_terms(*pairs):
    """Fold (key, coef) pairs into ({var: coef}, constant)."""
    coeffs: dict[str, float] = {}
    const = 0.0
    for key, coef in pairs:
        if isinstance(key, str):
            coeffs[key] = coeffs.get(key, 0.0) + coef
        else:
            const += coef * float(key)
    return coeffs, const


def _row(cs: ConstraintSystem, pairs, sense: str, rhs: float,
         name: str, tag: str = "qc") -> None:
    coeffs, const = _as_terms(*pairs)
    cs.add_row(coeffs, sense, rhs - const, name=name, tag=tag)


def _mccormick(cs: ConstraintSystem, u: str, a: XTerm, b: XTerm,
               abnds: tuple[float, float], bbnds: tuple[float, float],
               name: str) -> None:
    """Standard 4-inequality envelope of u = a * b over a box."""
    al, au = abnds
    bl, bu = bbnds
    _row(cs, [(u, 1.0), (a, -bl), (b, -al)], GE, -al * bl, f"{name}_ll")
    _row(cs, [(u, 1.0), (a, -bu), (b, -au)], GE, -au * bu, f"{name}_uu")
    _row(cs, [(u, 1.0), (a, -bu), (b, -al)], LE, -al * bu, f"{name}_lu")
    _row(cs, [(u, 1.0), (a, -bl), (b, -au)], LE, -au * bl, f"{name}_ul")


def _sx_range(br: Branch, wl: float, wu: float) -> tuple[float, float]:
    sl, su = math.sin(br.theta_min), math.sin(br.theta_max)
    lo = min(wl * sl, wu * sl)
    hi = max(wl * su, wu * su)
    return lo, hi


def add_bus_vars(cs: ConstraintSystem, case: NetworkCase, load: LoadProfile) -> None:
    for i, bus in enumerate(case.buses):
        nm = _bus_names(bus.id)
        pd, qd = load.pd[i], load.qd[i]
        cs.add_var(nm["V"], bus.v_min, bus.v_max)
        cs.add_var(nm["w"], bus.v_min**2, bus.v_max**2)
        cs.add_var(nm["P"], bus.pg_min - pd, bus.pg_max - pd)
        cs.add_var(nm["Q"], bus.qg_min - qd, bus.qg_max - qd)
        cs.add_var(nm["dP"], 0.0, pd)
        cs.add_var(nm["dQ"], 0.0, qd)


def add_branch_vars(cs: ConstraintSystem, case: NetworkCase,
                    x_terms: dict[int, XTerm]) -> None:
    bus_of = {b.id: b for b in case.buses}
    for br in case.branches:
        x = x_terms[br.id]
        qc = QCConstants.for_branch(br)
        nm = _br_names(br.id)
        bi, bj = bus_of[br.from_bus], bus_of[br.to_bus]
        wl, wu = bi.v_min * bj.v_min, bi.v_max * bj.v_max
        if isinstance(x, str):
            cs.add_var(nm["th"], -qc.m_theta, qc.m_theta)
            cs.add_var(nm["Pf"], -br.s_max, br.s_max)
            cs.add_var(nm["Qf"], -br.s_max, br.s_max)
            cs.add_var(nm["wx"], 0.0, bi.v_max**2)
            cs.add_var(nm["cx"], 0.0, 1.0)
            slo, shi = min(0.0, math.sin(br.theta_min)), max(0.0, math.sin(br.theta_max))
            cs.add_var(nm["sx"], slo, shi)
            cs.add_var(nm["wc"], 0.0, wu)
            lo, hi = _sx_range(br, wl, wu)
            cs.add_var(nm["ws"], min(0.0, lo), max(0.0, hi))
        else:
            on = float(x)
            if on:
                cs.add_var(nm["th"], br.theta_min, br.theta_max)
            else:
                cs.add_var(nm["th"], -qc.m_theta, qc.m_theta)
            cs.add_var(nm["Pf"], -br.s_max * on, br.s_max * on)
            cs.add_var(nm["Qf"], -br.s_max * on, br.s_max * on)
            cs.add_var(nm["wx"], bi.v_min**2 * on, bi.v_max**2 * on)
            cs.add_var(nm["cx"], math.cos(qc.thbar) * on, on)
            cs.add_var(nm["sx"], math.sin(br.theta_min) * on,
                       math.sin(br.theta_max) * on)
            cs.add_var(nm["wc"], wl * math.cos(qc.thbar) * on, wu * on)
            lo, hi = _sx_range(br, wl, wu)
            cs.add_var(nm["ws"], lo * on, hi * on)
        cs.add_var(nm["wij"], wl, wu)


def build_qc_envelopes(cs: ConstraintSystem, case: NetworkCase,
                       x_terms: dict[int, XTerm]) -> None:
    """Emit all relaxation rows; variables must already exist."""
    bus_of = {b.id: b for b in case.buses}
    for bus in case.buses:
        nm = _bus_names(bus.id)
        vl, vu = bus.v_min, bus.v_max
        cs.add_convex(QuadRow(1.0, nm["V"], {nm["w"]: -1.0}, 0.0,
                              name=f"wsq_{bus.id}", seed_lo=vl, seed_hi=vu))
        _row(cs, [(nm["w"], 1.0), (nm["V"], -(vl + vu))], LE, -vl * vu,
             f"wub_{bus.id}")

    for br in case.branches:
        x = x_terms[br.id]
        qc = QCConstants.for_branch(br)
        nm = _br_names(br.id)
        bi, bj = bus_of[br.from_bus], bus_of[br.to_bus]
        wi = _bus_names(bi.id)["w"]
        vi, vj = _bus_names(bi.id)["V"], _bus_names(bj.id)["V"]
        wl, wu = bi.v_min * bj.v_min, bi.v_max * bj.v_max
        th, pf, qf = nm["th"], nm["Pf"], nm["Qf"]
        wx, wc, ws, wij, cx, sx = (nm[k] for k in ("wx", "wc", "ws", "wij", "cx", "sx"))
        bid = br.id

        # on/off McCormick link w^x = x * w_i
        _mccormick(cs, wx, x, wi, (0.0, 1.0), (bi.v_min**2, bi.v_max**2),
                   f"wx_{bid}")

        if isinstance(x, str):
            # angle decoupling: theta in [min, max] when on, |theta| <= M when off
            _row(cs, [(th, 1.0), (x, qc.m_theta - br.theta_max)], LE,
                 qc.m_theta, f"thub_{bid}")
            _row(cs, [(th, -1.0), (x, qc.m_theta + br.theta_min)], LE,
                 qc.m_theta, f"thlb_{bid}")
            # flows vanish when off
            _row(cs, [(pf, 1.0), (x, -br.s_max)], LE, 0.0, f"pfub_{bid}")
            _row(cs, [(pf, -1.0), (x, -br.s_max)], LE, 0.0, f"pflb_{bid}")
            _row(cs, [(qf, 1.0), (x, -br.s_max)], LE, 0.0, f"qfub_{bid}")
            _row(cs, [(qf, -1.0), (x, -br.s_max)], LE, 0.0, f"qflb_{bid}")
            # on/off ranges for the lifted trig products
            _row(cs, [(wc, 1.0), (x, -wu)], LE, 0.0, f"wcub_{bid}")
            _row(cs, [(wc, -1.0), (x, wl * math.cos(qc.thbar))], LE, 0.0,
                 f"wclb_{bid}")
            slo, shi = _sx_range(br, wl, wu)
            _row(cs, [(ws, 1.0), (x, -shi)], LE, 0.0, f"wsub_{bid}")
            _row(cs, [(ws, -1.0), (x, slo)], LE, 0.0, f"wslb_{bid}")

        # on/off cosine: x cos(thbar) <= c^x <= x, plus curvature cap
        _row(cs, [(cx, 1.0), (x, -1.0)], LE, 0.0, f"cxub_{bid}")
        _row(cs, [(cx, -1.0), (x, math.cos(qc.thbar))], LE, 0.0, f"cxlb_{bid}")
        cap_lin, cap_const = _as_terms(
            (cx, 1.0), (x, qc.kappa * qc.m_theta**2 - 1.0))
        if isinstance(x, str) or x:
            seed_lo, seed_hi = (br.theta_min, br.theta_max) if not isinstance(x, str) \
                else (-qc.m_theta, qc.m_theta)
            cs.add_convex(QuadRow(qc.kappa, th, cap_lin,
                                  qc.kappa * qc.m_theta**2 - cap_const,
                                  name=f"coscap_{bid}",
                                  seed_lo=seed_lo, seed_hi=seed_hi))
        else:
            # x = 0 constant: kappa*th^2 <= kappa*M^2 holds by the theta bounds
            pass

        # on/off sine: range rows plus the disjunctive linear relaxation
        _row(cs, [(sx, 1.0), (x, -math.sin(br.theta_max))], LE, 0.0, f"sxub_{bid}")
        _row(cs, [(sx, -1.0), (x, math.sin(br.theta_min))], LE, 0.0, f"sxlb_{bid}")
        if not qc.degenerate:
            for sigma in (-1.0, 1.0):
                s = "p" if sigma > 0 else "m"
                _row(cs, [(sx, sigma), (th, -sigma * qc.c_half),
                          (x, qc.m_c - qc.alpha)], LE, qc.m_c,
                     f"sin1{s}_{bid}")
                _row(cs, [(sx, sigma), (x, -qc.beta)], LE, 0.0, f"sin2{s}_{bid}")
                _row(cs, [(th, sigma * qc.c_half), (x, qc.m_c - qc.gamma)],
                     LE, qc.m_c, f"sin3{s}_{bid}")

        # voltage product and sequential McCormick for the trilinear terms
        _mccormick(cs, wij, vi, vj, (bi.v_min, bi.v_max), (bj.v_min, bj.v_max),
                   f"wij_{bid}")
        if isinstance(x, str):
            cx_b, sx_b = (0.0, 1.0), (min(0.0, math.sin(br.theta_min)),
                                      max(0.0, math.sin(br.theta_max)))
        else:
            on = float(x)
            cx_b = (math.cos(qc.thbar) * on, on)
            sx_b = (math.sin(br.theta_min) * on, math.sin(br.theta_max) * on)
        _mccormick(cs, wc, wij, cx, (wl, wu), cx_b, f"wc_{bid}")
        _mccormick(cs, ws, wij, sx, (wl, wu), sx_b, f"ws_{bid}")

        # linear on/off flow definitions over the lifted variables
        a = br.tap
        gsh, bsh = br.g_sh, br.b_sh
        cs.add_row({pf: 1.0, wx: -(br.g / a**2 + gsh),
                    wc: br.g / a, ws: br.b / a}, EQ, 0.0,
                   name=f"pdef_{bid}", tag="flow")
        cs.add_row({qf: 1.0, wx: (br.b / a**2 + bsh),
                    wc: -br.b / a, ws: br.g / a}, EQ, 0.0,
                   name=f"qdef_{bid}", tag="flow")

        # apparent-power (thermal) limit
        cs.add_convex(CircleRow(pf, qf, br.s_max, name=f"thermal_{bid}"))


def add_balances(cs: ConstraintSystem, case: NetworkCase) -> None:
    """Nodal balances: injection plus shed equals net branch outflow."""
    for bus in case.buses:
        nm = _bus_names(bus.id)
        coeffs_p = {nm["P"]: 1.0, nm["dP"]: 1.0}
        coeffs_q = {nm["Q"]: 1.0, nm["dQ"]: 1.0}
        for br in case.branches:
            sgn = -1.0 if br.from_bus == bus.id else (1.0 if br.to_bus == bus.id else 0.0)
            if sgn:
                coeffs_p[_br_names(br.id)["Pf"]] = sgn
                coeffs_q[_br_names(br.id)["Qf"]] = sgn
        cs.add_row(coeffs_p, EQ, 0.0, name=f"balP_{bus.id}", tag="balance")
        cs.add_row(coeffs_q, EQ, 0.0, name=f"balQ_{bus.id}", tag="balance")


def shed_objective_coeffs(case: NetworkCase) -> dict[str, float]:
    coeffs = {}
    for bus in case.buses:
        nm = _bus_names(bus.id)
        coeffs[nm["dP"]] = 1.0
        coeffs[nm["dQ"]] = 1.0
    return coeffs


def _check_remark1(case: NetworkCase) -> None:
    for bus in case.buses:
        if not (bus.pg_min <= 0.0 <= bus.pg_max):
            raise ModelError(
                f"bus {bus.id}: feasibility-for-all-topologies requires "
                f"pg_min <= 0 <= pg_max, got [{bus.pg_min}, {bus.pg_max}]"
            )


def build_lower_level(case: NetworkCase, load: LoadProfile, topo: Topology,
                      relaxation: bool = True) -> ConstraintSystem:
    """Load-shed minimization for a fixed topology (QC-relaxed)."""
    if not relaxation:
        raise ModelError("the exact nonconvex lower level is not represented; "
                         "only the QC relaxation is available")
    if len(topo.status) != case.n_branches:
        raise ValueError("topology length does not match branch count")
    _check_remark1(case)
    cs = ConstraintSystem(name=f"lower_level[{case.name}]")
    x_terms: dict[int, XTerm] = {
        br.id: float(s) for br, s in zip(case.branches, topo.status)
    }
    add_bus_vars(cs, case, load)
    add_branch_vars(cs, case, x_terms)
    build_qc_envelopes(cs, case, x_terms)
    add_balances(cs, case)
    cs.set_objective("min", shed_objective_coeffs(case))
    return cs


def build_ovf_model(case: NetworkCase, load: LoadProfile, k: int,
                    surrogate_rows: ConstraintSystem, lam: float,
                    s_bar: float | None = None,
                    candidate_lines: list[int] | None = None) -> ConstraintSystem:
    """Single-level value-function model: maximize realized shed minus
    penalized slack, physics rows with binary line statuses, and the
    coupling row tying shed to the surrogate output plus slack."""
    if lam < 0:
        raise ModelError("penalty lambda must be nonnegative")
    if s_bar is None:
        s_bar = load.total()
    if s_bar <= 0:
        raise ModelError("slack cap must be positive")
    _check_remark1(case)
    cand = sorted(set(candidate_lines)) if candidate_lines is not None \
        else [br.id for br in case.branches]

    cs = ConstraintSystem(name=f"ovf[{case.name}]")
    x_terms: dict[int, XTerm] = {}
    for br in case.branches:
        if br.id in cand:
            x_terms[br.id] = cs.add_var(x_var(br.id), 0.0, 1.0, binary=True,
                                        branch_rank=5)
        else:
            x_terms[br.id] = 1.0
    add_bus_vars(cs, case, load)
    add_branch_vars(cs, case, x_terms)
    build_qc_envelopes(cs, case, x_terms)
    add_balances(cs, case)

    # budget: at most k of the candidate lines off
    cs.add_row({x_var(b): 1.0 for b in cand}, GE, float(len(cand) - k),
               name="budget")

    shared = {v: v for v in surrogate_rows.var_names
              if v.startswith("x_") and cs.has_var(v)}
    cs.extend(surrogate_rows, shared=shared)
    if not cs.has_var("eta_hat"):
        raise ModelError("surrogate fragment must define variable 'eta_hat'")
    # surrogate inputs for non-candidate lines: pinned in service
    for v in surrogate_rows.var_names:
        if v.startswith("x_") and v not in shared:
            i = cs._index[v]
            cs.lb[i] = cs.ub[i] = 1.0

    s_delta = cs.add_var("s_delta", 0.0, s_bar)
    coupling = dict(shed_objective_coeffs(case))
    coupling["eta_hat"] = -1.0
    coupling[s_delta] = -1.0
    cs.add_row(coupling, LE, 0.0, name="value_coupling")

    obj = dict(shed_objective_coeffs(case))
    obj[s_delta] = -lam
    cs.set_objective("max", obj)
    return cs
