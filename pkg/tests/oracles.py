"""Independent reference implementations used only by the test suite.

Everything here is deliberately naive and written against textbook
definitions, so that agreement with the package is meaningful:

- two-phase tableau simplex with Bland's rule,
- exhaustive binary enumeration for small MILPs,
- a dense grid-search oracle for the exact (nonconvex) load-shed model,
- an exact-feasible Monte-Carlo sampler producing lifted-variable points,
- O(n^2) rank-correlation counters,
- a straight-line extended-precision ReLU forward pass.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

# -- naive two-phase simplex --------------------------------------------------


def simplex_solve(c, A, b):
    """min c'x s.t. Ax <= b, x >= 0 via two-phase tableau simplex, Bland rule.

    Returns (status, objective, x) with status in
    {"optimal", "infeasible", "unbounded"}.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    # slack form: Ax + s = b; rows with b < 0 flipped so b >= 0, then
    # artificials added where the slack coefficient became -1
    T = np.hstack([A, np.eye(m), b.reshape(-1, 1)])
    for i in range(m):
        if T[i, -1] < 0:
            T[i, :] *= -1.0
    needs_art = [i for i in range(m) if T[i, n + i] < 0]
    n_art = len(needs_art)
    if n_art:
        art_cols = np.zeros((m, n_art))
        for j, i in enumerate(needs_art):
            art_cols[i, j] = 1.0
        T = np.hstack([T[:, :-1], art_cols, T[:, -1:]])
    total = n + m + n_art
    basis = list(range(n, n + m))
    for j, i in enumerate(needs_art):
        basis[i] = n + m + j

    def pivot(T, basis, cost):
        """Bland-rule simplex on tableau T minimizing cost (len total)."""
        while True:
            # reduced costs z_j = c_j - c_B (B^-1 A)_j; tableau rows are
            # already B^-1 A
            cb = np.array([cost[bi] for bi in basis])
            z = cost[:total] - cb @ T[:, :total]
            # Bland: entering = lowest-index improving column
            enter = next((j for j in range(total) if z[j] < -1e-9), None)
            if enter is None:
                return "optimal"
            ratios = [(T[i, -1] / T[i, enter], basis[i], i)
                      for i in range(m) if T[i, enter] > 1e-9]
            if not ratios:
                return "unbounded"
            rmin = min(r for r, _, _ in ratios)
            # Bland: leaving = lowest basis index among minimum ratios
            _, row = min((bv, i) for r, bv, i in ratios if r <= rmin + 1e-12)
            T[row, :] /= T[row, enter]
            for i in range(m):
                if i != row and abs(T[i, enter]) > 1e-12:
                    T[i, :] -= T[i, enter] * T[row, :]
            basis[row] = enter

    if n_art:
        phase1 = np.zeros(total)
        phase1[n + m:] = 1.0
        status = pivot(T, basis, phase1)
        assert status == "optimal"
        cb = np.array([phase1[bi] for bi in basis])
        if cb @ T[:, -1] > 1e-7:
            return "infeasible", None, None
        # drive any artificial out of the basis if possible
        for i in range(m):
            if basis[i] >= n + m:
                enter = next((j for j in range(n + m)
                              if abs(T[i, j]) > 1e-9), None)
                if enter is not None:
                    T[i, :] /= T[i, enter]
                    for r in range(m):
                        if r != i and abs(T[r, enter]) > 1e-12:
                            T[r, :] -= T[r, enter] * T[i, :]
                    basis[i] = enter
    cost = np.zeros(total)
    cost[:n] = c
    # forbid re-entering artificials
    cost[n + m:] = 1e9
    status = pivot(T, basis, cost)
    if status != "optimal":
        return status, None, None
    x = np.zeros(total)
    for i, bi in enumerate(basis):
        x[bi] = T[i, -1]
    return "optimal", float(c @ x[:n]), x[:n]


# -- exhaustive binary enumeration -------------------------------------------


def enumerate_binary_max(c, A, b, senses, lo, hi, n):
    """max c'x over x in {lo_j..hi_j} binaries subject to rows (A, sense, b).

    All variables binary with bounds within {0,1}. Returns (best, argmax)
    or (None, None) if infeasible. Vectorized over all 2^n assignments.
    """
    cols = [[v for v in (0.0, 1.0) if lo[j] <= v <= hi[j]]
            for j in range(n)]
    grids = np.array(list(itertools.product(*cols)))
    if grids.size == 0:
        return None, None
    lhs = grids @ np.asarray(A, dtype=float).T
    b = np.asarray(b, dtype=float)
    ok = np.ones(len(grids), dtype=bool)
    for r, s in enumerate(senses):
        if s == "<=":
            ok &= lhs[:, r] <= b[r] + 1e-9
        elif s == ">=":
            ok &= lhs[:, r] >= b[r] - 1e-9
        else:
            ok &= np.abs(lhs[:, r] - b[r]) <= 1e-9
    if not ok.any():
        return None, None
    vals = grids[ok] @ np.asarray(c, dtype=float)
    i = int(np.argmax(vals))
    return float(vals[i]), grids[ok][i]


# -- exact power-flow arithmetic ---------------------------------------------


def exact_flows(br, vi, vj, theta):
    """Branch flow pair of the exact model for an in-service line."""
    a = br.tap
    wxx = vi * vi
    wc = vi * vj * math.cos(theta)
    ws = vi * vj * math.sin(theta)
    pf = (br.g / a**2 + br.g_sh) * wxx - (br.g * wc + br.b * ws) / a
    qf = -(br.b / a**2 + br.b_sh) * wxx + (br.b * wc - br.g * ws) / a
    return pf, qf


def _axis(lo, hi, step):
    k = max(1, int(round((hi - lo) / step)) + 1)
    return np.linspace(lo, hi, k)


def _sweep_grid(case, load, topo, v_combo, t_axes):
    """Vectorized exact-model evaluation over the theta grid at fixed V.

    Returns (best feasible shed, soft score, index of soft argmin), where
    soft score = shed + 1000 * total constraint violation; the soft argmin
    locates the thin feasible sheet even when the grid misses it.
    """
    pos = {b.id: i for i, b in enumerate(case.buses)}
    n = len(case.buses)
    # bus angles broadcast over the grid, bus 0 as the reference
    shape = tuple(len(a) for a in t_axes)
    theta = [np.zeros(shape)]
    for d, ax in enumerate(t_axes):
        view = [None] * len(t_axes)
        view[d] = slice(None)
        theta.append(np.broadcast_to(ax[tuple(view)], shape))
    fp = [np.zeros(shape) for _ in range(n)]
    fq = [np.zeros(shape) for _ in range(n)]
    viol = np.zeros(shape)
    for br, on in zip(case.branches, topo.status):
        if not on:
            continue
        i, j = pos[br.from_bus], pos[br.to_bus]
        tij = theta[i] - theta[j]
        viol += np.maximum(0.0, br.theta_min - tij)
        viol += np.maximum(0.0, tij - br.theta_max)
        a, vi, vj = br.tap, v_combo[i], v_combo[j]
        wc = vi * vj * np.cos(tij)
        ws = vi * vj * np.sin(tij)
        pf = (br.g / a**2 + br.g_sh) * vi * vi - (br.g * wc + br.b * ws) / a
        qf = -(br.b / a**2 + br.b_sh) * vi * vi + (br.b * wc - br.g * ws) / a
        viol += np.maximum(0.0, np.sqrt(pf * pf + qf * qf) - br.s_max)
        fp[i] += pf
        fq[i] += qf
        fp[j] -= pf
        fq[j] -= qf
    shed = np.zeros(shape)
    for idx, bus in enumerate(case.buses):
        pd, qd = load.pd[idx], load.qd[idx]
        for f, gmin, gmax, d in ((fp[idx], bus.pg_min, bus.pg_max, pd),
                                 (fq[idx], bus.qg_min, bus.qg_max, qd)):
            # injection + shed = net outflow; minimal shed at this bus
            viol += np.maximum(0.0, (gmin - d) - f)
            viol += np.maximum(0.0, f - gmax)
            shed += np.clip(f - (gmax - d), 0.0, d)
    feas = viol <= 1e-9
    best = float(shed[feas].min()) if feas.any() else math.inf
    soft = shed + 1000.0 * viol
    return best, float(soft.min()), np.unravel_index(np.argmin(soft), shape)


def _sweep(case, load, topo, v_axes, t_axes):
    best = math.inf
    soft_best = math.inf
    soft_pt = None
    for volts in itertools.product(*v_axes):
        b, s, idx = _sweep_grid(case, load, topo, volts, t_axes)
        best = min(best, b)
        if s < soft_best:
            soft_best = s
            soft_pt = (volts, tuple(t_axes[d][i] for d, i in enumerate(idx)))
    return best, soft_pt


def grid_search_shed(case, load, topo, v_step=0.01, t_step=0.01, coarse=4):
    """Minimum-shed upper bound from a dense grid over exact (V, theta).

    Every feasible grid point satisfies the nonconvex equations exactly, so
    the returned value is a valid upper bound on the true lower-level
    optimum (and hence on the relaxed optimum). A coarse sweep scored by
    shed + penalized violation locates the thin feasible sheet; a fine
    sweep at the requested resolution refines a window around it.
    """
    n = len(case.buses)
    assert 2 <= n <= 3, "oracle is exponential in bus count"
    tmax = math.pi / 2
    v_axes = [_axis(b.v_min, b.v_max, v_step * coarse) for b in case.buses]
    t_axes = [_axis(-tmax, tmax, t_step * coarse) for _ in range(n - 1)]
    best, (volts, angs) = _sweep(case, load, topo, v_axes, t_axes)
    win_v, win_t = 1.5 * v_step * coarse, 1.5 * t_step * coarse
    v_axes = [_axis(max(b.v_min, v - win_v), min(b.v_max, v + win_v), v_step)
              for b, v in zip(case.buses, volts)]
    t_axes = [_axis(max(-tmax, t - win_t), min(tmax, t + win_t), t_step)
              for t in angs]
    fine, _ = _sweep(case, load, topo, v_axes, t_axes)
    return min(best, fine)


def sample_feasible_point(case, topo, rng, max_theta_tries=50,
                          spread=None):
    """One exact-feasible lifted point for the branch-flow equations.

    Samples V per bus and theta per branch (the relaxation carries an
    independent angle variable per branch, so per-branch sampling covers
    exactly its variable space), computes exact flows and lifted values,
    and rejects draws violating the thermal limit. Returns a
    {var_name: value} dict covering the voltage/angle/flow/lifted
    variables, or None when no thermally feasible angle was found.
    """
    pos = {b.id: i for i, b in enumerate(case.buses)}
    if spread is None:
        volts = [rng.uniform(b.v_min, b.v_max) for b in case.buses]
    else:
        # correlated draw: tightly limited lines only admit near-flat
        # voltage profiles, so uniform independent draws rarely pass the
        # thermal check; a common level plus small jitter stays exact
        level = rng.uniform(max(b.v_min for b in case.buses),
                            min(b.v_max for b in case.buses))
        volts = [min(max(level + rng.uniform(-spread, spread), b.v_min),
                     b.v_max) for b in case.buses]
    assign = {}
    for idx, bus in enumerate(case.buses):
        assign[f"V_{bus.id}"] = volts[idx]
        assign[f"w_{bus.id}"] = volts[idx] ** 2
    for br, on in zip(case.branches, topo.status):
        i, j = pos[br.from_bus], pos[br.to_bus]
        vi, vj = volts[i], volts[j]
        if on:
            # progressively shrink the angle window toward 0; early tries
            # cover the full range, later ones favor the small angles that
            # tight thermal limits demand
            for m in range(max_theta_tries):
                shrink = 0.7 ** m
                tij = rng.uniform(br.theta_min * shrink,
                                  br.theta_max * shrink)
                pf, qf = exact_flows(br, vi, vj, tij)
                if pf * pf + qf * qf <= br.s_max**2:
                    break
            else:
                return None
        else:
            tij = rng.uniform(-math.pi, math.pi)
            pf = qf = 0.0
        x = float(on)
        assign[f"th_{br.id}"] = tij
        assign[f"Pf_{br.id}"] = pf
        assign[f"Qf_{br.id}"] = qf
        assign[f"wx_{br.id}"] = x * vi * vi
        assign[f"cx_{br.id}"] = x * math.cos(tij)
        assign[f"sx_{br.id}"] = x * math.sin(tij)
        assign[f"wij_{br.id}"] = vi * vj
        assign[f"wc_{br.id}"] = x * vi * vj * math.cos(tij)
        assign[f"ws_{br.id}"] = x * vi * vj * math.sin(tij)
    return assign


def lifted_point_violation(cs, assign):
    """Worst violation over rows/bounds touching only the given variables.

    Skips rows referencing variables outside the assignment (nodal
    balances involve injections and shed, which a lifted (V, theta, x)
    point does not determine).
    """
    worst = 0.0
    for name, val in assign.items():
        i = cs._index[name]
        worst = max(worst, cs.lb[i] - val, val - cs.ub[i])
    for row in cs.rows:
        if all(v in assign for v in row.coeffs):
            worst = max(worst, row.violation(assign))
    for row in cs.convex_rows:
        worst = max(worst, row.violation(assign))
    return worst


# -- rank correlation ---------------------------------------------------------


def kendall_tau_naive(a, b):
    """tau-b via brute-force pair counting with tie handling."""
    n = len(a)
    conc = disc = ties_a = ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            da, db = a[i] - a[j], b[i] - b[j]
            if da == 0 and db == 0:
                ties_a += 1
                ties_b += 1
            elif da == 0:
                ties_a += 1
            elif db == 0:
                ties_b += 1
            elif da * db > 0:
                conc += 1
            else:
                disc += 1
    n0 = n * (n - 1) / 2
    denom = math.sqrt((n0 - ties_a) * (n0 - ties_b))
    return (conc - disc) / denom if denom > 0 else float("nan")


def average_ranks(a):
    order = sorted(range(len(a)), key=lambda i: a[i])
    ranks = [0.0] * len(a)
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and a[order[j + 1]] == a[order[i]]:
            j += 1
        r = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = r
        i = j + 1
    return ranks


def spearman_rho_naive(a, b):
    ra, rb = average_ranks(a), average_ranks(b)
    ma, mb = sum(ra) / len(ra), sum(rb) / len(rb)
    num = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    da = math.sqrt(sum((x - ma) ** 2 for x in ra))
    db = math.sqrt(sum((y - mb) ** 2 for y in rb))
    return num / (da * db) if da > 0 and db > 0 else float("nan")


# -- extended-precision network evaluation ------------------------------------


def forward_longdouble(layers, x):
    """Straight-line ReLU forward pass in extended precision.

    layers: iterable of (W, b, activation) with numpy arrays.
    """
    v = np.asarray(x, dtype=np.longdouble)
    for W, b, act in layers:
        v = np.asarray(W, dtype=np.longdouble) @ v \
            + np.asarray(b, dtype=np.longdouble)
        if act == "relu":
            v = np.maximum(v, 0.0)
    return float(v[0])
