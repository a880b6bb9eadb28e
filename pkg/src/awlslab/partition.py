"""Electrical-distance spectral partitioning and block-sparse surrogates.

The grid graph is weighted by line admittance magnitude (lambda_ij =
1/|z_ij|); buses are embedded with the smallest nontrivial Laplacian
eigenvectors and clustered by seeded k-means. Areas then define sparsity
masks for a jointly-trained ReluNet: each area owns a sub-network over its
local inputs plus tie-line features, and the output layer sums the per-area
estimates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .grid import NetworkCase
from .surrogate import Layer, ReluNet

PARTITION_SCHEMA = "partition/1"


class PartitionError(Exception):
    pass


@dataclass
class Laplacian:
    matrix: np.ndarray
    bus_ids: list[int]
    case: NetworkCase


@dataclass
class Partition:
    areas: list[list[int]]      # bus ids per area, each sorted
    tie_lines: list[int]        # branch ids crossing areas, sorted

    def area_of(self) -> dict[int, int]:
        return {b: a for a, buses in enumerate(self.areas) for b in buses}

    def to_json(self) -> str:
        return json.dumps({"schema": PARTITION_SCHEMA, "areas": self.areas,
                           "tie_lines": self.tie_lines})

    @staticmethod
    def from_json(text: str) -> "Partition":
        doc = json.loads(text)
        if doc.get("schema") != PARTITION_SCHEMA:
            raise ValueError(f"unsupported schema {doc.get('schema')!r}")
        return Partition([list(a) for a in doc["areas"]],
                         list(doc["tie_lines"]))


def branch_weight(g: float, b: float) -> float:
    # z = 1/(g + jb); lambda = 1/|z| = |g + jb|
    return math.hypot(g, b)


def build_laplacian(case: NetworkCase) -> Laplacian:
    ids = [b.id for b in case.buses]
    pos = {bid: i for i, bid in enumerate(ids)}
    n = len(ids)
    L = np.zeros((n, n))
    for br in case.branches:
        w = branch_weight(br.g, br.b)
        if w <= 0.0:
            raise PartitionError(f"branch {br.id} has zero admittance")
        i, j = pos[br.from_bus], pos[br.to_bus]
        L[i, i] += w
        L[j, j] += w
        L[i, j] -= w
        L[j, i] -= w
    return Laplacian(L, ids, case)


def jacobi_eigh(A: np.ndarray, tol: float = 1e-10,
                max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi diagonalization of a symmetric matrix.

    Returns (eigenvalues ascending, eigenvector columns). Adequate for the
    desk-scale matrices here (N up to a few hundred).
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(np.sum(np.tril(A, -1) ** 2))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < tol / max(n, 1):
                    continue
                theta = 0.5 * (A[q, q] - A[p, p]) / apq
                t = math.copysign(1.0, theta) / (
                    abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot_p, rot_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * rot_p - s * rot_q
                A[:, q] = s * rot_p + c * rot_q
                rot_p, rot_q = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rot_p - s * rot_q
                A[q, :] = s * rot_p + c * rot_q
                rot_p, rot_q = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * rot_p - s * rot_q
                V[:, q] = s * rot_p + c * rot_q
    vals = np.diag(A).copy()
    order = np.argsort(vals)
    return vals[order], V[:, order]


def _kmeans(points: np.ndarray, k: int, seed: int,
            max_iter: int = 100) -> np.ndarray:
    """Seeded k-means with k-means++ initialization; returns labels."""
    rng = np.random.default_rng(seed)
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    while len(centers) < k:
        d2 = np.min(
            [np.sum((points - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(points[rng.integers(n)])
            continue
        centers.append(points[rng.choice(n, p=d2 / total)])
    centers = np.array(centers)
    labels = np.zeros(n, dtype=int)
    for it in range(max_iter):
        dists = np.linalg.norm(points[:, None, :] - centers[None], axis=2)
        new_labels = np.argmin(dists, axis=1)
        if it > 0 and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            sel = points[labels == c]
            if len(sel):
                centers[c] = sel.mean(axis=0)
    return labels


def _adjacency(case: NetworkCase) -> dict[int, dict[int, float]]:
    adj: dict[int, dict[int, float]] = {b.id: {} for b in case.buses}
    for br in case.branches:
        w = branch_weight(br.g, br.b)
        adj[br.from_bus][br.to_bus] = adj[br.from_bus].get(br.to_bus, 0) + w
        adj[br.to_bus][br.from_bus] = adj[br.to_bus].get(br.from_bus, 0) + w
    return adj


def _components(buses: set[int], adj) -> list[set[int]]:
    comps = []
    left = set(buses)
    while left:
        seed_bus = next(iter(left))
        comp = {seed_bus}
        stack = [seed_bus]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v in left and v not in comp:
                    comp.add(v)
                    stack.append(v)
        comps.append(comp)
        left -= comp
    return comps


def spectral_partition(lap: Laplacian, n_areas: int, seed: int = 0,
                       d_max: int | None = None,
                       embed_dim: int | None = None) -> Partition:
    """Partition the grid into n_areas electrically coherent areas.

    Spectral embedding (smallest nontrivial eigenvectors, Jacobi solver) +
    seeded k-means, then connectivity repair (stray components migrate to
    their best-connected neighbor area) and a recursive re-split of any area
    exceeding d_max = ceil(1.5 * N / n_areas) buses.
    """
    case = lap.case
    n = len(lap.bus_ids)
    if not 1 <= n_areas <= n:
        raise PartitionError("need 1 <= n_areas <= bus count")
    if n_areas == 1:
        return _finish(case, {b: 0 for b in lap.bus_ids}, 1)
    vals, vecs = jacobi_eigh(lap.matrix)
    if vals[1] < 1e-9:
        raise PartitionError("disconnected grid (trivial eigenspace > 1)")
    dim = embed_dim if embed_dim is not None else min(n_areas - 1, 3)
    dim = max(1, min(dim, n - 1))
    points = vecs[:, 1:1 + dim]
    labels = _kmeans(points, n_areas, seed)

    assign = {bid: int(labels[i]) for i, bid in enumerate(lap.bus_ids)}
    adj = _adjacency(case)
    _repair_connectivity(assign, adj, n_areas)

    if d_max is None:
        d_max = math.ceil(1.5 * n / n_areas)
    _enforce_size(assign, case, adj, d_max, seed)
    n_final = len(set(assign.values()))
    return _finish(case, assign, n_final)


def _repair_connectivity(assign: dict[int, int], adj, n_areas: int) -> None:
    changed = True
    while changed:
        changed = False
        for a in range(max(assign.values()) + 1):
            buses = {b for b, lab in assign.items() if lab == a}
            if not buses:
                continue
            comps = sorted(_components(buses, adj), key=len)
            for comp in comps[:-1]:   # all but the largest migrate
                best, best_w = None, 0.0
                for u in comp:
                    for v, w in adj[u].items():
                        if v in assign and assign[v] != a:
                            if best is None or w > best_w:
                                best, best_w = assign[v], w
                if best is not None:
                    for u in comp:
                        assign[u] = best
                    changed = True


def _enforce_size(assign, case, adj, d_max: int, seed: int) -> None:
    while True:
        sizes: dict[int, list[int]] = {}
        for b, a in assign.items():
            sizes.setdefault(a, []).append(b)
        over = [a for a, buses in sizes.items() if len(buses) > d_max]
        if not over:
            # renumber compactly
            remap = {a: i for i, a in enumerate(sorted(sizes))}
            for b in assign:
                assign[b] = remap[assign[b]]
            return
        a = over[0]
        buses = sorted(sizes[a])
        sub = _subcase_laplacian(case, buses)
        parts = spectral_partition(
            sub, math.ceil(len(buses) / d_max), seed=seed, d_max=d_max)
        next_label = max(assign.values()) + 1
        for extra, area in enumerate(parts.areas[1:]):
            for b in area:
                assign[b] = next_label + extra


def _subcase_laplacian(case: NetworkCase, buses: list[int]) -> Laplacian:
    keep = set(buses)
    pos = {bid: i for i, bid in enumerate(buses)}
    L = np.zeros((len(buses), len(buses)))
    for br in case.branches:
        if br.from_bus in keep and br.to_bus in keep:
            w = branch_weight(br.g, br.b)
            i, j = pos[br.from_bus], pos[br.to_bus]
            L[i, i] += w
            L[j, j] += w
            L[i, j] -= w
            L[j, i] -= w
    return Laplacian(L, buses, case)


def _finish(case: NetworkCase, assign: dict[int, int],
            n_areas: int) -> Partition:
    areas = [sorted(b for b, a in assign.items() if a == i)
             for i in range(n_areas)]
    areas = [a for a in areas if a]
    ties = sorted(br.id for br in case.branches
                  if br.from_bus in assign and br.to_bus in assign
                  and assign[br.from_bus] != assign[br.to_bus])
    return Partition(areas, ties)


def budget_neurons(labels_by_area: list[list[float]], total: int,
                   h_min: int = 4) -> list[int]:
    """Allocate `total` neurons across areas, proportional to label std.

    Largest-remainder rounding; every area gets at least h_min. Zero total
    variance degrades to a uniform split.
    """
    n = len(labels_by_area)
    if n == 0 or total < n * h_min:
        raise ValueError("budget too small for the per-area floor")
    for s in labels_by_area:
        if len(s) < 2:
            raise ValueError("need >= 2 samples per area")
    stds = np.array([np.std(s) for s in labels_by_area])
    if stds.sum() <= 0:
        stds = np.ones(n)
    quota = total * stds / stds.sum()
    alloc = np.floor(quota).astype(int)
    rema = quota - alloc
    for i in np.argsort(-rema)[: total - alloc.sum()]:
        alloc[i] += 1
    # enforce the per-area floor, taking from the largest allocations
    while np.any(alloc < h_min):
        i = int(np.argmin(alloc))
        j = int(np.argmax(alloc))
        if alloc[j] <= h_min:
            raise ValueError("budget too small for the per-area floor")
        alloc[i] += 1
        alloc[j] -= 1
    return [int(a) for a in alloc]


def build_block_sparse_net(case: NetworkCase, part: Partition,
                           budgets: list[int], seed: int = 0,
                           n_layers: int = 2) -> ReluNet:
    """One masked ReluNet realizing jointly-trained per-area sub-networks.

    Area sub-net inputs: statuses of intra-area lines, local PD/QD columns,
    plus tie-line features (tie status and both end buses' PD/QD). Tie-line
    weight columns are initialized scaled by the line weight 1/|z| in lieu
    of a constant impedance input. The output row sums per-area estimates.
    """
    if len(budgets) != len(part.areas):
        raise ValueError("one budget per area required")
    rng = np.random.default_rng(seed)
    n_lines = len(case.branches)
    n_buses = len(case.buses)
    n_in = n_lines + 2 * n_buses
    bus_pos = {b.id: i for i, b in enumerate(case.buses)}
    br_pos = {br.id: i for i, br in enumerate(case.branches)}
    area_of = part.area_of()
    ties = set(part.tie_lines)

    # input columns visible to each area
    cols: list[list[int]] = [[] for _ in part.areas]
    tie_scale = np.ones(n_in)
    for br in case.branches:
        j = br_pos[br.id]
        if br.id in ties:
            w = branch_weight(br.g, br.b)
            tie_scale[j] = w / (1.0 + w)
            for a in {area_of[br.from_bus], area_of[br.to_bus]}:
                cols[a].append(j)
                cols[a].append(n_lines + bus_pos[br.from_bus])
                cols[a].append(n_lines + bus_pos[br.to_bus])
                cols[a].append(n_lines + n_buses + bus_pos[br.from_bus])
                cols[a].append(n_lines + n_buses + bus_pos[br.to_bus])
        else:
            cols[area_of[br.from_bus]].append(j)
    for b in case.buses:
        a = area_of[b.id]
        cols[a].append(n_lines + bus_pos[b.id])
        cols[a].append(n_lines + n_buses + bus_pos[b.id])
    col_sets = [sorted(set(c)) for c in cols]

    sizes = [sum(budgets)] * n_layers
    neuron_area = np.concatenate(
        [np.full(h, a) for a, h in enumerate(budgets)])

    layers: list[Layer] = []
    prev_dim = n_in
    prev_area = None  # None marks the input layer
    for li in range(n_layers):
        h = sizes[li]
        mask = np.zeros((h, prev_dim))
        for k in range(h):
            a = neuron_area[k]
            if prev_area is None:
                mask[k, col_sets[a]] = 1.0
            else:
                mask[k, prev_area == a] = 1.0
        r = math.sqrt(6.0 / (prev_dim + h))
        W = rng.uniform(-r, r, size=(h, prev_dim))
        if prev_area is None:
            W = W * tie_scale[None, :]
        layers.append(Layer(W, np.zeros(h), "relu", mask))
        prev_dim = h
        prev_area = neuron_area
    r = math.sqrt(6.0 / (prev_dim + 1))
    W = rng.uniform(-r, r, size=(1, prev_dim))
    layers.append(Layer(W, np.zeros(1), "identity", np.ones((1, prev_dim))))
    return ReluNet(layers, n_lines, n_buses)
