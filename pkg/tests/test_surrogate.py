import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from awlslab.consys import EQ
from awlslab.solver import SolverConfig, solve_milp
from awlslab.surrogate import (BIG_M_CLAMP, Layer, ReluNet, TrainConfig,
                               TrainError, beta_var, compute_bounds,
                               dense_net, encode_milp, split_dataset, train,
                               z_var)
from conftest import GOLDEN
from oracles import forward_longdouble


def _rand_net(n_lines, n_buses, hidden=(8, 6), seed=0):
    return dense_net(n_lines, n_buses, hidden, seed=seed)


def _rand_inputs(net, n, rng):
    x = rng.integers(0, 2, size=(n, net.n_lines)).astype(float)
    loads = rng.uniform(0.0, 1.5, size=(n, 2 * net.n_buses))
    return np.hstack([x, loads])


# -- forward ------------------------------------------------------------------


def test_forward_zero_net():
    layers = [Layer(np.zeros((3, 8)), np.zeros(3), "relu"),
              Layer(np.zeros((1, 3)), np.zeros(1), "identity")]
    net = ReluNet(layers, n_lines=2, n_buses=3)
    assert net.forward(np.ones(8)) == 0.0


def test_forward_single_neuron_relu():
    layers = [Layer(np.array([[1.0]]), np.zeros(1), "relu"),
              Layer(np.array([[1.0]]), np.zeros(1), "identity")]
    net = ReluNet(layers, n_lines=1, n_buses=0)
    assert net.forward([-3.0]) == 0.0
    assert net.forward([5.0]) == 5.0


def test_forward_matches_longdouble_oracle():
    rng = np.random.default_rng(4)
    net = _rand_net(5, 4, hidden=(7, 5), seed=4)
    X = _rand_inputs(net, 10, rng)
    spec = [(ly.W, ly.b, ly.activation) for ly in net.layers]
    for row in X:
        assert net.forward(row) == pytest.approx(
            forward_longdouble(spec, row), abs=1e-9)


def test_forward_rejects_length_mismatch():
    net = _rand_net(3, 2)
    with pytest.raises(ValueError, match="input length"):
        net.forward(np.zeros(5))


def test_net_shape_validation():
    with pytest.raises(ValueError, match="identity"):
        ReluNet([Layer(np.zeros((2, 4)), np.zeros(2), "relu")], 2, 1)
    with pytest.raises(ValueError, match="chain"):
        ReluNet([Layer(np.zeros((3, 4)), np.zeros(3), "relu"),
                 Layer(np.zeros((1, 2)), np.zeros(1), "identity")], 2, 1)


# -- training -----------------------------------------------------------------


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    net = _rand_net(4, 3, hidden=(6,), seed=9)
    X = _rand_inputs(net, 32, rng)
    y = rng.normal(size=32)

    def loss(n):
        return float(np.mean((n.forward_batch(X) - y) ** 2))

    # analytic gradient via one manual backward pass
    acts, pres = [X], []
    Z = X
    for ly in net.layers:
        P = Z @ ly.W.T + ly.b
        pres.append(P)
        Z = np.maximum(P, 0.0) if ly.activation == "relu" else P
        acts.append(Z)
    G = (2.0 / len(X)) * (Z[:, 0] - y)[:, None]
    grads = []
    for li in range(len(net.layers) - 1, -1, -1):
        ly = net.layers[li]
        if ly.activation == "relu":
            G = G * (pres[li] > 0)
        grads.append((li, G.T @ acts[li], G.sum(axis=0)))
        if li > 0:
            G = G @ ly.W
    grads = {li: (gW, gb) for li, gW, gb in grads}

    h = 1e-5
    rng2 = np.random.default_rng(1)
    checked = 0
    while checked < 100:
        li = int(rng2.integers(len(net.layers)))
        ly = net.layers[li]
        r = int(rng2.integers(ly.W.shape[0]))
        c = int(rng2.integers(ly.W.shape[1]))
        if abs(pres[li][:, r]).min() < 1e-3 and ly.activation == "relu":
            continue  # kink too close: finite differences are undefined
        orig = ly.W[r, c]
        ly.W[r, c] = orig + h
        up = loss(net)
        ly.W[r, c] = orig - h
        dn = loss(net)
        ly.W[r, c] = orig
        fd = (up - dn) / (2 * h)
        an = grads[li][0][r, c]
        assert abs(fd - an) / max(1e-8, abs(fd)) < 1e-4
        checked += 1


def test_teacher_student_realizable():
    rng = np.random.default_rng(12)
    teacher = _rand_net(4, 3, hidden=(6,), seed=99)
    X = _rand_inputs(teacher, 400, rng)
    y = teacher.forward_batch(X)
    student = _rand_net(4, 3, hidden=(12,), seed=3)
    trace = train(student, X, y, TrainConfig(epochs=1500, lr=5e-3, seed=0))
    assert trace[-1] < 1e-3 * max(y.var(), 1e-12)


def test_constant_label_converges():
    net = _rand_net(3, 2, hidden=(4,), seed=1)
    X = _rand_inputs(net, 50, np.random.default_rng(0))
    y = np.full(50, 0.7)
    trace = train(net, X, y, TrainConfig(epochs=2500, lr=1e-2, seed=0))
    assert trace[-1] < 1e-4
    assert trace[-1] < 1e-3 * trace[0]


def test_nan_loss_aborts_with_lr_hint():
    net = _rand_net(3, 2, hidden=(4,), seed=1)
    X = _rand_inputs(net, 20, np.random.default_rng(0)) * 1e200
    y = np.ones(20) * 1e200
    with np.errstate(over="ignore"), \
            pytest.raises(TrainError, match="learning rate"):
        train(net, X, y, TrainConfig(epochs=5, lr=1e3, seed=0))


def test_training_loss_non_increasing_at_tiny_lr():
    rng = np.random.default_rng(2)
    net = _rand_net(4, 3, hidden=(6,), seed=2)
    X = _rand_inputs(net, 64, rng)
    y = rng.normal(size=64)
    trace = train(net, X, y, TrainConfig(epochs=30, lr=1e-4, batch_size=0,
                                         seed=0))
    diffs = np.diff(trace)
    assert np.all(diffs <= 1e-8)


def test_masks_preserved_exactly_after_training():
    rng = np.random.default_rng(5)
    mask1 = (rng.uniform(size=(8, 10)) > 0.5).astype(float)
    mask2 = (rng.uniform(size=(1, 8)) > 0.3).astype(float)
    layers = [Layer(rng.normal(size=(8, 10)), np.zeros(8), "relu", mask1),
              Layer(rng.normal(size=(1, 8)), np.zeros(1), "identity", mask2)]
    net = ReluNet(layers, n_lines=4, n_buses=3)
    X = _rand_inputs(net, 100, rng)
    y = rng.normal(size=100)
    train(net, X, y, TrainConfig(epochs=50, lr=5e-3, seed=0))
    assert np.all(net.layers[0].W[mask1 == 0] == 0.0)
    assert np.all(net.layers[1].W[mask2 == 0] == 0.0)


def test_split_dataset_deterministic_and_disjoint():
    cfg = TrainConfig(seed=7, train_fraction=0.9)
    tr1, te1 = split_dataset(100, cfg)
    tr2, te2 = split_dataset(100, cfg)
    assert np.array_equal(tr1, tr2) and np.array_equal(te1, te2)
    assert len(tr1) == 90 and len(te1) == 10
    assert set(tr1) | set(te1) == set(range(100))


# -- bounds -------------------------------------------------------------------


def test_bounds_zero_net():
    layers = [Layer(np.zeros((3, 4)), np.zeros(3), "relu"),
              Layer(np.zeros((1, 3)), np.zeros(1), "identity")]
    net = ReluNet(layers, n_lines=2, n_buses=1)
    b = compute_bounds(net, np.zeros(4), np.ones(4))
    assert np.all(b.lo[0] == 0.0) and np.all(b.hi[0] == 0.0)


def test_bounds_single_neuron_interval():
    layers = [Layer(np.array([[2.0]]), np.array([1.0]), "relu"),
              Layer(np.array([[1.0]]), np.zeros(1), "identity")]
    net = ReluNet(layers, n_lines=1, n_buses=0)
    b = compute_bounds(net, np.zeros(1), np.ones(1))
    assert b.lo[0][0] == pytest.approx(1.0)
    assert b.hi[0][0] == pytest.approx(3.0)


def test_bounds_contain_sampled_preactivations():
    rng = np.random.default_rng(8)
    net = _rand_net(5, 4, hidden=(9, 7), seed=8)
    lo = np.concatenate([np.zeros(5), np.zeros(8)])
    hi = np.concatenate([np.ones(5), 1.5 * np.ones(8)])
    b = compute_bounds(net, lo, hi)
    X = rng.uniform(lo, hi, size=(100_000, net.n_inputs))
    Z = X
    r = 0
    for ly in net.layers:
        P = Z @ ly.W.T + ly.b
        if ly.activation == "relu":
            # clamp mirrors the bound computation
            assert np.all(P >= np.minimum(b.lo[r], -BIG_M_CLAMP) - 1e-9)
            assert np.all(P.min(axis=0) >= b.lo[r] - 1e-9)
            assert np.all(P.max(axis=0) <= b.hi[r] + 1e-9)
            Z = np.maximum(P, 0.0)
            r += 1
        else:
            Z = P


def test_bounds_clamped_to_big_m():
    layers = [Layer(np.array([[1000.0]]), np.zeros(1), "relu"),
              Layer(np.array([[1.0]]), np.zeros(1), "identity")]
    net = ReluNet(layers, n_lines=1, n_buses=0)
    b = compute_bounds(net, np.array([-1.0]), np.array([1.0]))
    assert b.lo[0][0] == -BIG_M_CLAMP
    assert b.hi[0][0] == BIG_M_CLAMP


# -- MILP encoding ------------------------------------------------------------


def _box(net):
    lo = np.concatenate([np.zeros(net.n_lines), np.zeros(2 * net.n_buses)])
    hi = np.concatenate([np.ones(net.n_lines),
                         1.5 * np.ones(2 * net.n_buses)])
    return lo, hi


def _solve_fragment_at(net, frag, x):
    fixed = frag  # fragments are rebuilt per test; safe to mutate
    for j, nm in enumerate(f"x_{i}" for i in range(net.n_lines)):
        i = fixed._index[nm]
        fixed.lb[i] = fixed.ub[i] = float(x[j])
    fixed.set_objective("max", {"eta_hat": 1.0})
    res = solve_milp(fixed, SolverConfig())
    assert res.status == "optimal"
    return res.objective


def test_encoding_exactness_50_random_inputs():
    rng = np.random.default_rng(21)
    net = _rand_net(6, 4, hidden=(10, 8), seed=21)
    lo, hi = _box(net)
    bounds = compute_bounds(net, lo, hi)
    pd = rng.uniform(0.2, 1.2, size=net.n_buses)
    qd = rng.uniform(0.1, 0.6, size=net.n_buses)
    x_names = [f"x_{i}" for i in range(net.n_lines)]
    for _ in range(50):
        x = rng.integers(0, 2, size=net.n_lines).astype(float)
        frag = encode_milp(net, bounds, x_names, pd, qd)
        got = _solve_fragment_at(net, frag, x)
        want = net.forward(np.concatenate([x, pd, qd]))
        assert got == pytest.approx(want, abs=1e-6)


def test_binary_count_equals_undetermined_neurons():
    net = _rand_net(5, 3, hidden=(8,), seed=2)
    lo, hi = _box(net)
    bounds = compute_bounds(net, lo, hi)
    pd = 0.5 * np.ones(3)
    qd = 0.2 * np.ones(3)
    frag = encode_milp(net, bounds, [f"x_{i}" for i in range(5)], pd, qd)
    # undetermined = strictly two-sided bounds at the fixed loads' box
    betas = [v for v in frag.var_names if v.startswith("beta_")]
    n_two_sided = sum(
        1 for r in range(len(bounds.lo))
        for k in range(len(bounds.lo[r]))
        if bounds.lo[r][k] < 0.0 < bounds.hi[r][k])
    # one-sided simplifications may only reduce the count
    assert len(betas) <= n_two_sided
    assert set(betas) == frag.implied_binaries


def test_provably_inactive_neuron_has_no_variable():
    layers = [Layer(np.array([[1.0], [-1.0]]), np.array([-5.0, 0.5]), "relu"),
              Layer(np.array([[1.0, 1.0]]), np.zeros(1), "identity")]
    net = ReluNet(layers, n_lines=1, n_buses=0)
    bounds = compute_bounds(net, np.zeros(1), np.ones(1))
    frag = encode_milp(net, bounds, ["x_0"], np.zeros(0), np.zeros(0))
    # neuron 0 is provably inactive on x in [0, 1]: no z, no beta
    assert not frag.has_var(z_var(0, 0))
    assert not frag.has_var(beta_var(0, 0))


def test_provably_active_neuron_is_linear():
    layers = [Layer(np.array([[1.0]]), np.array([2.0]), "relu"),
              Layer(np.array([[1.0]]), np.zeros(1), "identity")]
    net = ReluNet(layers, n_lines=1, n_buses=0)
    bounds = compute_bounds(net, np.zeros(1), np.ones(1))
    frag = encode_milp(net, bounds, ["x_0"], np.zeros(0), np.zeros(0))
    assert frag.has_var(z_var(0, 0))
    assert not frag.has_var(beta_var(0, 0))


@given(st.integers(0, 2**12 - 1))
@settings(max_examples=40, deadline=None)
def test_encoding_exactness_property(bits):
    net = _rand_net(12, 2, hidden=(6,), seed=13)
    lo, hi = _box(net)
    bounds = compute_bounds(net, lo, hi)
    pd = 0.4 * np.ones(2)
    qd = 0.1 * np.ones(2)
    x = np.array([(bits >> i) & 1 for i in range(12)], dtype=float)
    frag = encode_milp(net, bounds, [f"x_{i}" for i in range(12)], pd, qd)
    got = _solve_fragment_at(net, frag, x)
    want = net.forward(np.concatenate([x, pd, qd]))
    assert got == pytest.approx(want, abs=1e-6)


# -- serialization ------------------------------------------------------------


def test_json_roundtrip():
    net = _rand_net(4, 3, hidden=(5, 4), seed=6)
    again = ReluNet.from_json(net.to_json())
    assert again.n_lines == net.n_lines
    for a, b in zip(net.layers, again.layers):
        assert np.array_equal(a.W, b.W)
        assert np.array_equal(a.b, b.b)
        assert a.activation == b.activation


def test_json_rejects_unknown_schema():
    net = _rand_net(2, 1, hidden=(3,), seed=0)
    doc = json.loads(net.to_json())
    doc["schema"] = "relunet/999"
    with pytest.raises(ValueError, match="schema"):
        ReluNet.from_json(json.dumps(doc))


def test_golden_net_file():
    golden = (GOLDEN / "relunet.json").read_text()
    net = ReluNet.from_json(golden)
    # the serialized form is stable byte-for-byte
    assert net.to_json() == golden.strip()
    # and evaluates to the recorded value
    meta = json.loads((GOLDEN / "relunet_eval.json").read_text())
    out = net.forward(np.array(meta["input"]))
    assert out == pytest.approx(meta["output"], abs=1e-12)
