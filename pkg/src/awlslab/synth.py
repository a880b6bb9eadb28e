"""Deterministic synthetic network families.

Used for the large-system scaled protocol (118-bus stand-in) and for the
linear-parameter-scaling study, which needs a family of cases with a fixed
area size and growing bus count.
"""

from __future__ import annotations

import math

import numpy as np

from .grid import Branch, Bus, NetworkCase

_THETA = math.pi / 3


def _y(r: float, x: float) -> tuple[float, float]:
    d = r * r + x * x
    return r / d, -x / d


def ring_chain_case(n_areas: int, area_size: int, seed: int = 0,
                    name: str = "") -> NetworkCase:
    """Chain of meshed rings joined by high-impedance tie lines.

    Each area is a ring of `area_size` buses with chord branches; consecutive
    areas are connected by one tie line. Loads and generators are sized so
    the nominal point is dispatchable with margin.
    """
    return _build_ring_chain([area_size] * n_areas, seed,
                             name or f"ring_chain_{n_areas}x{area_size}")


def synth118_case(seed: int = 118) -> NetworkCase:
    """Synthetic 118-bus, 5-area network used as the large-system stand-in."""
    return _build_ring_chain([24, 24, 24, 23, 23], seed, "synth118")


def _build_ring_chain(sizes: list[int], seed: int, name: str) -> NetworkCase:
    if not sizes or min(sizes) < 3:
        raise ValueError("need at least one area of size >= 3")
    rng = np.random.default_rng(seed)
    buses: list[Bus] = []
    branches: list[Branch] = []
    br_id = 0

    def add_branch(f: int, t: int, r: float, x: float, s_max: float,
                   tap: float = 1.0, b_sh: float = 0.0) -> None:
        nonlocal br_id
        br_id += 1
        g, b = _y(r, x)
        branches.append(Branch(
            id=br_id, from_bus=f, to_bus=t, g=g, b=b, g_sh=0.0, b_sh=b_sh,
            tap=tap, theta_min=-_THETA, theta_max=_THETA, s_max=s_max,
        ))

    offsets = [0]
    for s in sizes:
        offsets.append(offsets[-1] + s)
    for a, area_size in enumerate(sizes):
        base = offsets[a]
        area_load_p = 0.0
        gen_buses = []
        for i in range(area_size):
            bid = base + i + 1
            pd = float(rng.uniform(0.05, 0.35)) if rng.random() < 0.7 else 0.0
            qd = pd * float(rng.uniform(0.2, 0.45))
            is_gen = i % 4 == 0
            if is_gen:
                gen_buses.append(bid)
            area_load_p += pd
            buses.append(Bus(id=bid, v_min=0.94, v_max=1.06, pd=round(pd, 4),
                             qd=round(qd, 4), pg_min=0.0, pg_max=0.0,
                             qg_min=0.0, qg_max=0.0))
        # size generators to cover ~1.8x the area load
        cap = 1.8 * max(area_load_p, 0.5) / len(gen_buses)
        for idx in range(base, base + area_size):
            b = buses[idx]
            if b.id in gen_buses:
                buses[idx] = Bus(
                    id=b.id, v_min=b.v_min, v_max=b.v_max, pd=b.pd, qd=b.qd,
                    pg_min=0.0, pg_max=round(cap, 4),
                    qg_min=round(-0.6 * cap, 4), qg_max=round(0.6 * cap, 4),
                )
        # ring
        for i in range(area_size):
            f = base + i + 1
            t = base + (i + 1) % area_size + 1
            r = float(rng.uniform(0.01, 0.03))
            x = float(rng.uniform(0.05, 0.12))
            add_branch(f, t, round(r, 5), round(x, 5), 2.0)
        # chords
        for i in range(0, area_size - area_size // 2, 4):
            f = base + i + 1
            t = base + i + area_size // 2 + 1
            r = float(rng.uniform(0.02, 0.05))
            x = float(rng.uniform(0.1, 0.2))
            add_branch(f, t, round(r, 5), round(x, 5), 1.5)
        # tie to previous area: weak (high-impedance) coupling
        if a > 0:
            prev_mid = offsets[a - 1] + sizes[a - 1] // 2 + 1
            add_branch(prev_mid, base + 1, 0.05, 0.4, 1.2)

    return NetworkCase(buses=tuple(buses), branches=tuple(branches),
                       base_mva=100.0, slack_bus=1, name=name)
