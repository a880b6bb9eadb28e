"""ReLU value-function surrogates and their exact MILP encoding.

A ReluNet maps the concatenated input [line statuses x; bus loads PD; QD]
to a scalar shed estimate eta_hat. Training is plain mini-batch Adam on
squared error, implemented on numpy. encode_milp() turns a trained net with
fixed loads into a ConstraintSystem fragment whose unique eta_hat value
equals the forward pass for every binary x — per-neuron big-M rows with
interval-arithmetic bounds, one-sided neurons simplified to linear or
constant form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .consys import EQ, GE, LE, ConstraintSystem

SCHEMA = "relunet/1"
BIG_M_CLAMP = 100.0

ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8


class TrainError(Exception):
    pass


@dataclass
class Layer:
    W: np.ndarray          # (n_out, n_in)
    b: np.ndarray          # (n_out,)
    activation: str        # "relu" | "identity"
    mask: np.ndarray | None = None  # 1 = trainable, 0 = frozen zero

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError("layer shape mismatch")
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=float)
            if self.mask.shape != self.W.shape:
                raise ValueError("mask shape mismatch")
            self.W = self.W * self.mask


@dataclass
class TrainConfig:
    epochs: int = 1000
    lr: float = 2.5e-3
    lr_final: float | None = None  # cosine-anneal the rate down to this
    batch_size: int = 64   # <= 0 means full batch
    seed: int = 0
    train_fraction: float = 0.9

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.lr_final is not None and not 0 < self.lr_final <= self.lr:
            raise ValueError("final learning rate must be in (0, lr]")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train fraction must be in (0, 1)")


@dataclass
class ReluBounds:
    """Pre-activation intervals per hidden (ReLU) layer, clamp applied."""
    lo: list[np.ndarray]
    hi: list[np.ndarray]


class ReluNet:
    def __init__(self, layers: list[Layer], n_lines: int, n_buses: int):
        if not layers:
            raise ValueError("need at least one layer")
        if layers[-1].activation != "identity" or layers[-1].W.shape[0] != 1:
            raise ValueError("final layer must be identity with scalar output")
        n_in = n_lines + 2 * n_buses
        if layers[0].W.shape[1] != n_in:
            raise ValueError(
                f"first layer expects {layers[0].W.shape[1]} inputs, "
                f"spec implies {n_in}")
        for a, b in zip(layers, layers[1:]):
            if b.W.shape[1] != a.W.shape[0]:
                raise ValueError("layer dimensions do not chain")
        self.layers = layers
        self.n_lines = n_lines
        self.n_buses = n_buses

    @property
    def n_inputs(self) -> int:
        return self.n_lines + 2 * self.n_buses

    def param_count(self) -> int:
        """Trainable parameters: unmasked weights plus biases."""
        total = 0
        for ly in self.layers:
            total += int(ly.mask.sum()) if ly.mask is not None else ly.W.size
            total += ly.b.size
        return total

    def hidden_sizes(self) -> list[int]:
        return [ly.W.shape[0] for ly in self.layers if ly.activation == "relu"]

    def forward(self, x_tilde) -> float:
        x = np.asarray(x_tilde, dtype=float)
        if x.shape != (self.n_inputs,):
            raise ValueError(
                f"input length {x.shape} != ({self.n_inputs},)")
        return float(self.forward_batch(x[None, :])[0])

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        Z = np.asarray(X, dtype=float)
        for ly in self.layers:
            Z = Z @ ly.W.T + ly.b
            if ly.activation == "relu":
                Z = np.maximum(Z, 0.0)
        return Z[:, 0]

    # -- serialization -------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({
            "schema": SCHEMA,
            "n_lines": self.n_lines,
            "n_buses": self.n_buses,
            "layers": [{
                "W": ly.W.tolist(),
                "b": ly.b.tolist(),
                "activation": ly.activation,
                "mask": None if ly.mask is None else ly.mask.tolist(),
            } for ly in self.layers],
        })

    @staticmethod
    def from_json(text: str) -> "ReluNet":
        doc = json.loads(text)
        if doc.get("schema") != SCHEMA:
            raise ValueError(f"unsupported schema {doc.get('schema')!r}")
        layers = [Layer(np.array(d["W"]), np.array(d["b"]), d["activation"],
                        None if d["mask"] is None else np.array(d["mask"]))
                  for d in doc["layers"]]
        return ReluNet(layers, doc["n_lines"], doc["n_buses"])


def dense_net(n_lines: int, n_buses: int, hidden=(50, 50),
              seed: int = 0) -> ReluNet:
    """Fully-connected net, Glorot-uniform init with a fixed seed."""
    rng = np.random.default_rng(seed)
    dims = [n_lines + 2 * n_buses, *hidden, 1]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-r, r, size=(fan_out, fan_in))
        act = "relu" if i < len(dims) - 2 else "identity"
        layers.append(Layer(W, np.zeros(fan_out), act))
    return ReluNet(layers, n_lines, n_buses)


def split_dataset(n: int, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic shuffled train/test index split."""
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    cut = int(round(n * cfg.train_fraction))
    if cut == 0 or cut == n:
        raise ValueError("split leaves an empty side")
    return perm[:cut], perm[cut:]


def train(net: ReluNet, X: np.ndarray, y: np.ndarray,
          cfg: TrainConfig | None = None) -> list[float]:
    """Mini-batch Adam on mean squared error; returns per-epoch loss trace.

    The trace entry for an epoch is the full-batch MSE after that epoch's
    updates. Masked weight entries stay exactly zero throughout.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[0] != y.shape[0]:
        raise ValueError("bad dataset shape")
    if X.shape[1] != net.n_inputs:
        raise ValueError("dataset width does not match net input")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("dataset contains non-finite entries")

    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    bs = n if cfg.batch_size <= 0 else min(cfg.batch_size, n)
    mW = [np.zeros_like(ly.W) for ly in net.layers]
    vW = [np.zeros_like(ly.W) for ly in net.layers]
    mb = [np.zeros_like(ly.b) for ly in net.layers]
    vb = [np.zeros_like(ly.b) for ly in net.layers]
    step = 0
    trace: list[float] = []

    for epoch in range(cfg.epochs):
        if cfg.lr_final is None or cfg.epochs < 2:
            lr = cfg.lr
        else:
            c = 0.5 * (1.0 + np.cos(np.pi * epoch / (cfg.epochs - 1)))
            lr = cfg.lr_final + (cfg.lr - cfg.lr_final) * c
        perm = rng.permutation(n)
        for s in range(0, n, bs):
            idx = perm[s:s + bs]
            xb, yb = X[idx], y[idx]
            # forward, keeping pre-activations
            acts = [xb]
            pres = []
            Z = xb
            for ly in net.layers:
                P = Z @ ly.W.T + ly.b
                pres.append(P)
                Z = np.maximum(P, 0.0) if ly.activation == "relu" else P
                acts.append(Z)
            err = Z[:, 0] - yb
            loss = float(np.mean(err ** 2))
            if not np.isfinite(loss):
                raise TrainError(
                    f"loss became non-finite at epoch {epoch}; "
                    f"try a smaller learning rate (current {cfg.lr})")
            # backward
            G = (2.0 / len(idx)) * err[:, None]
            step += 1
            for li in range(len(net.layers) - 1, -1, -1):
                ly = net.layers[li]
                if ly.activation == "relu":
                    G = G * (pres[li] > 0)
                gW = G.T @ acts[li]
                gb = G.sum(axis=0)
                if ly.mask is not None:
                    gW *= ly.mask
                if li > 0:
                    G = G @ ly.W
                for g, m, v, target in ((gW, mW[li], vW[li], ly.W),
                                        (gb, mb[li], vb[li], ly.b)):
                    m *= ADAM_B1
                    m += (1 - ADAM_B1) * g
                    v *= ADAM_B2
                    v += (1 - ADAM_B2) * g * g
                    mh = m / (1 - ADAM_B1 ** step)
                    vh = v / (1 - ADAM_B2 ** step)
                    target -= lr * mh / (np.sqrt(vh) + ADAM_EPS)
                if ly.mask is not None:
                    ly.W *= ly.mask
        trace.append(float(np.mean((net.forward_batch(X) - y) ** 2)))
    return trace


# -- bounds and MILP encoding -------------------------------------------------


def compute_bounds(net: ReluNet, box_lo, box_hi) -> ReluBounds:
    """Interval propagation of pre-activations, clamped to +-BIG_M_CLAMP."""
    lo = np.asarray(box_lo, dtype=float)
    hi = np.asarray(box_hi, dtype=float)
    if lo.shape != (net.n_inputs,) or hi.shape != (net.n_inputs,):
        raise ValueError("box shape mismatch")
    if np.any(lo > hi):
        raise ValueError("box lo > hi")
    out_lo, out_hi = [], []
    for ly in net.layers:
        Wp = np.maximum(ly.W, 0.0)
        Wn = np.minimum(ly.W, 0.0)
        p_lo = Wp @ lo + Wn @ hi + ly.b
        p_hi = Wp @ hi + Wn @ lo + ly.b
        if ly.activation == "relu":
            p_lo = np.clip(p_lo, -BIG_M_CLAMP, BIG_M_CLAMP)
            p_hi = np.clip(p_hi, -BIG_M_CLAMP, BIG_M_CLAMP)
            out_lo.append(p_lo)
            out_hi.append(p_hi)
            lo, hi = np.maximum(p_lo, 0.0), np.maximum(p_hi, 0.0)
        else:
            lo, hi = p_lo, p_hi
    return ReluBounds(out_lo, out_hi)


def beta_var(layer: int, k: int) -> str:
    return f"beta_{layer}_{k}"


def z_var(layer: int, k: int) -> str:
    return f"z_{layer}_{k}"


def encode_milp(net: ReluNet, bounds: ReluBounds, x_names: list[str],
                pd, qd) -> ConstraintSystem:
    """Exact big-M fragment defining eta_hat from the x binaries.

    x_names gives the fragment's binary input variables in line order; the
    caller stitches them onto its own binaries via extend(shared=...). Loads
    are folded into the first-layer bias. Activation binaries are declared
    implied, with a resolver that replays the forward pass, so the MILP
    search never has to branch on them.
    """
    if len(x_names) != net.n_lines:
        raise ValueError("x_names length != n_lines")
    pd = np.asarray(pd, dtype=float)
    qd = np.asarray(qd, dtype=float)
    if pd.shape != (net.n_buses,) or qd.shape != (net.n_buses,):
        raise ValueError("load vector shape mismatch")
    loads = np.concatenate([pd, qd])

    cs = ConstraintSystem("relu-surrogate")
    for nm in x_names:
        cs.add_var(nm, 0.0, 1.0, binary=True, branch_rank=5)

    # symbolic previous-layer outputs: (affine coeffs over cs vars, constant)
    prev: list[tuple[dict[str, float], float]] = \
        [({nm: 1.0}, 0.0) for nm in x_names]
    ridx = 0  # relu layer counter
    undetermined: list[tuple[int, int]] = []  # (relu layer idx, neuron idx)
    for li, ly in enumerate(net.layers):
        if li == 0:
            b_eff = ly.b + ly.W[:, net.n_lines:] @ loads
            W_eff = ly.W[:, :net.n_lines]
        else:
            b_eff = ly.b
            W_eff = ly.W
        cur: list[tuple[dict[str, float], float]] = []
        for k in range(W_eff.shape[0]):
            coeffs: dict[str, float] = {}
            const = float(b_eff[k])
            for j in np.nonzero(W_eff[k])[0]:
                w = float(W_eff[k, j])
                pc, pconst = prev[j]
                const += w * pconst
                for v, c in pc.items():
                    coeffs[v] = coeffs.get(v, 0.0) + w * c
            if ly.activation == "identity":
                e_lo = e_hi = const
                for v, c in coeffs.items():
                    i = cs._index[v]
                    a, b = c * cs.lb[i], c * cs.ub[i]
                    e_lo += min(a, b)
                    e_hi += max(a, b)
                eta = cs.add_var("eta_hat", e_lo, e_hi)
                row = {eta: 1.0}
                for v, c in coeffs.items():
                    row[v] = row.get(v, 0.0) - c
                cs.add_row(row, EQ, const, name="eta_def", tag="surrogate")
                cur.append(({eta: 1.0}, 0.0))
                continue
            lo = float(bounds.lo[ridx][k])
            hi = float(bounds.hi[ridx][k])
            if hi <= 0.0:
                cur.append(({}, 0.0))      # provably inactive
                continue
            z = cs.add_var(z_var(ridx, k), 0.0 if lo < 0 else lo, hi)
            if lo >= 0.0:
                # provably active: plain linear equality, no binary
                row = {z: 1.0}
                for v, c in coeffs.items():
                    row[v] = row.get(v, 0.0) - c
                cs.add_row(row, EQ, const, name=f"{z}_lin", tag="surrogate")
            else:
                beta = cs.add_var(beta_var(ridx, k), 0.0, 1.0, binary=True,
                                  branch_rank=0)
                undetermined.append((ridx, k))
                neg = {v: -c for v, c in coeffs.items()}
                ge = {z: 1.0, **neg}
                cs.add_row(ge, GE, const, name=f"{z}_ge", tag="surrogate")
                le = dict(ge)
                le[beta] = le.get(beta, 0.0) - lo
                cs.add_row(le, LE, const - lo, name=f"{z}_le", tag="surrogate")
                cs.add_row({z: 1.0, beta: -hi}, LE, 0.0,
                           name=f"{z}_cap", tag="surrogate")
            cur.append(({z: 1.0}, 0.0))
        if ly.activation == "relu":
            ridx += 1
        prev = cur

    beta_names = {beta_var(l, k) for l, k in undetermined}
    cs.implied_binaries = set(beta_names)

    def resolver(decisions: dict[str, float]) -> dict[str, float]:
        x = np.array([decisions[nm] for nm in x_names], dtype=float)
        z = np.concatenate([x, loads])
        out: dict[str, float] = {}
        r = 0
        for ly in net.layers:
            if ly.activation != "relu":
                break
            p = ly.W @ z + ly.b
            for l, k in undetermined:
                if l == r:
                    out[beta_var(l, k)] = 1.0 if p[k] > 0 else 0.0
            z = np.maximum(p, 0.0)
            r += 1
        return out

    cs.implied_resolver = resolver if beta_names else None
    return cs
