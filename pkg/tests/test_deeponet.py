import math
from types import SimpleNamespace

import numpy as np
import pytest

from fempidon.deeponet import checkpoint
from fempidon.deeponet.jet import Jet2, tanh
from fempidon.deeponet.loss import (RES_KEYS, LossContext, LossWeights, grad_loss, loss_total,
                                    pack, residual_at)
from fempidon.deeponet.network import (Arch, DeepONetParams, Scaling, forward, forward_jet,
                                       init_glorot, predict_grid)
from fempidon.deeponet.optim import AdamConfig, Schedule, TrainState, adam_step
from fempidon.errors import FempidonError

TINY = Arch(m=3, w_b=8, L_b=2, w_t=8, L_t=2, q=4)
SC = Scaling(10.0, 10.0, 50.0)


def random_params(arch=TINY, seed=0, bias=0.1):
    rng = np.random.default_rng(seed)
    p = init_glorot(rng, arch)
    return DeepONetParams.from_tensors(
        arch, [t + bias * rng.standard_normal(t.shape) for t in p.tensors()])


def zero_params(arch=TINY):
    return init_glorot(np.random.default_rng(0), arch).zeros_like()


def plain_mlp(p, x):
    """Loop-by-loop modified MLP, written independently of the batched code."""
    def layer(W, b, inp, act=True):
        out = []
        for i in range(len(b)):
            s = b[i] + sum(W[i][j] * inp[j] for j in range(len(inp)))
            out.append(math.tanh(s) if act else s)
        return out

    U = layer(p.Wu, p.bu, x)
    V = layer(p.Wv, p.bv, x)
    H = layer(*p.hidden[0], x)
    for W, b in p.hidden[1:]:
        Z = layer(W, b, H)
        H = [(1 - z) * u + z * v for z, u, v in zip(Z, U, V)]
    return layer(p.Wh, p.bh, H, act=False)


def plain_forward(p, sensors, xt, sc):
    br = plain_mlp(p.branch, list(sensors))
    tr = plain_mlp(p.trunk, [xt[0] / sc.Lx, xt[1] / sc.Ly, xt[2] / sc.T])
    return sc.output_scale * sum(a * b for a, b in zip(br, tr)) / math.sqrt(len(br)) + p.b0[0]


def instance(rng, n_res=5, n_bcs=3, n_ics=2, T=50.0, f=None):
    res = {k: rng.uniform(0, 1, n_res) for k in RES_KEYS}
    res["x"] *= 10
    res["y"] *= 10
    res["t"] *= T
    if f is not None:
        res["f"] = np.full(n_res, f)
    bcs = {"x": rng.uniform(0, 10, n_bcs), "y": np.zeros(n_bcs), "t": rng.uniform(0, T, n_bcs),
           "nx": np.zeros(n_bcs), "ny": -np.ones(n_bcs)}
    ics = {"x": rng.uniform(0, 10, n_ics), "y": rng.uniform(0, 10, n_ics)}
    return rng.uniform(0, 1, 9), SimpleNamespace(res=res, bcs=bcs, ics=ics)


# -- initialisation ---------------------------------------------------------------------------

def test_glorot_variance_and_zero_biases():
    arch = Arch(m=2, w_b=4, L_b=1, w_t=128, L_t=2, q=4)
    p = init_glorot(np.random.default_rng(0), arch)
    W = p.trunk.hidden[1][0]
    assert W.shape == (128, 128)
    assert W.var() == pytest.approx(2 / 256, rel=0.2)
    for t in p.tensors():
        if t.ndim == 1:
            assert not t.any()
    q = init_glorot(np.random.default_rng(0), arch)
    assert p.flat().tobytes() == q.flat().tobytes()


def test_flat_round_trip():
    p = random_params()
    q = DeepONetParams.from_flat(TINY, p.flat())
    assert q.flat().tobytes() == p.flat().tobytes()
    with pytest.raises(ValueError):
        DeepONetParams.from_flat(TINY, p.flat()[:-1])


# -- forward ----------------------------------------------------------------------------------

def test_zero_branch_head_gives_zero():
    p = random_params()
    p.branch.Wh[:] = 0
    p.branch.bh[:] = 0
    p.b0[:] = 0
    xt = np.random.default_rng(1).uniform(0, 10, (20, 3))
    assert not forward(p, np.ones(9), xt, SC).any()


def test_inner_product_definition():
    arch = Arch(m=2, w_b=3, L_b=2, w_t=3, L_t=2, q=1)
    p = random_params(arch)
    p.branch.Wh[:] = 0
    p.branch.bh[:] = 2.0
    p.trunk.Wh[:] = 0
    p.trunk.bh[:] = 3.0
    p.b0[:] = 0.5
    assert forward(p, np.ones(4), (1.0, 2.0, 3.0), SC) == pytest.approx(6.5, abs=1e-15)


def test_forward_matches_plain_loops():
    rng = np.random.default_rng(2)
    for seed in range(3):
        p = random_params(seed=seed)
        sensors = rng.uniform(0, 1, 9)
        xt = rng.uniform(0, 1, (5, 3)) * [10, 10, 50]
        got = forward(p, sensors, xt, SC)
        want = [plain_forward(p, sensors, x, SC) for x in xt]
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_branch_head_linearity():
    p = random_params()
    xt = np.random.default_rng(3).uniform(0, 10, (10, 3))
    base = forward(p, np.ones(9), xt, SC) - p.b0[0]
    p.branch.Wh *= 2.5
    p.branch.bh *= 2.5
    np.testing.assert_allclose(forward(p, np.ones(9), xt, SC) - p.b0[0], 2.5 * base, rtol=1e-13)


def test_predict_grid_matches_forward():
    p = random_params()
    sensors = np.linspace(0, 1, 9)
    xy = np.random.default_rng(4).uniform(0, 10, (37, 2))
    times = np.array([5.0, 25.0, 50.0])
    grid = predict_grid(p, sensors, xy, times, SC, chunk=16)
    for j, t in enumerate(times):
        xt = np.column_stack([xy, np.full(len(xy), t)])
        np.testing.assert_allclose(grid[j], forward(p, sensors, xt, SC), atol=1e-13)
    g32 = predict_grid(p.astype(np.float32), sensors, xy, times, SC)
    np.testing.assert_allclose(g32, grid, atol=1e-5 * np.abs(grid).max())


# -- jets -------------------------------------------------------------------------------------

def test_jet_value_slot_equals_forward():
    rng = np.random.default_rng(5)
    for seed in range(10):
        p = random_params(seed=seed)
        sensors = rng.uniform(0, 1, 9)
        xt = rng.uniform(0, 1, (100, 3)) * [10, 10, 50]
        j = forward_jet(p, sensors, xt, SC)
        np.testing.assert_allclose(j.value, forward(p, sensors, xt, SC), rtol=0, atol=1e-14)


def test_jet_slots_match_finite_differences():
    rng = np.random.default_rng(6)
    h = 1e-4
    scale = np.array([10.0, 10.0, 50.0])
    worst = 0.0
    for seed in range(5):
        p = random_params(seed=seed, bias=0.3)
        sensors = rng.uniform(0, 1, 9)
        xt = rng.uniform(0.1, 0.9, (20, 3)) * scale
        j = forward_jet(p, sensors, xt, SC)
        f = lambda x: forward(p, sensors, x, SC)     # noqa: E731
        c0 = f(xt)
        for d in range(3):
            e = np.zeros(3)
            e[d] = h * scale[d]
            fd = (f(xt + e) - f(xt - e)) / (2 * e[d])
            ref = np.abs(j.slots[1 + d]) * scale[d]
            worst = max(worst, np.max(np.abs(fd - j.slots[1 + d]) * scale[d] / np.maximum(ref, 1e-3)))
            if d < 2:
                fd2 = (f(xt + e) - 2 * c0 + f(xt - e)) / e[d] ** 2
                ref2 = np.abs(j.slots[4 + d]) * scale[d] ** 2
                err = np.abs(fd2 - j.slots[4 + d]) * scale[d] ** 2 / np.maximum(ref2, 1e-2)
                worst = max(worst, err.max())
    assert worst <= 1e-5


def test_constant_trunk_has_zero_derivatives():
    p = random_params()
    for W in (p.trunk.Wu, p.trunk.Wv, p.trunk.hidden[0][0]):
        W[:] = 0
    xt = np.random.default_rng(7).uniform(0, 10, (10, 3))
    j = forward_jet(p, np.ones(9), xt, SC)
    assert not j.slots[1:].any()


def test_linear_probe_jet():
    x = np.array([0.0, 2.5, 7.0])
    j = Jet2.variable(x, 0, 1 / 10.0)
    # the chain factor is applied as a multiplication by 1 / Lx
    np.testing.assert_array_equal(j.value, x * (1 / 10.0))
    np.testing.assert_array_equal(j.dx, 0.1)
    assert not (j.dy.any() or j.dt.any() or j.dxx.any() or j.dyy.any())


def test_jet_algebra_chain_rule():
    x = np.linspace(0.1, 2.0, 7)
    X = Jet2.variable(x, 0)
    Y = Jet2.variable(x, 1)
    u = tanh(X * X + 3.0 * Y) - 1.0
    s = 1 - np.tanh(x * x + 3 * x) ** 2
    np.testing.assert_allclose(u.value, np.tanh(x * x + 3 * x) - 1)
    np.testing.assert_allclose(u.dx, s * 2 * x)
    np.testing.assert_allclose(u.dy, s * 3)
    t = np.tanh(x * x + 3 * x)
    np.testing.assert_allclose(u.dxx, s * 2 + (-2 * t * s) * (2 * x) ** 2)
    np.testing.assert_allclose(u.dyy, (-2 * t * s) * 9)


# -- residual and loss ------------------------------------------------------------------------

def test_residual_of_zero_network():
    p = zero_params()
    pt = {"x": 1.0, "y": 2.0, "t": 3.0, "vx": 0.1, "vy": -0.2, "div_v": 0.3, "f": 0.0}
    assert residual_at(p, np.ones(9), pt) == 0.0
    pt["f"] = 1.0
    assert residual_at(p, np.ones(9), pt, LossContext(beta2=5 / 240)) == pytest.approx(-5 / 240)
    with pytest.raises(ValueError):
        residual_at(p, np.ones(9), {"x": 1.0})


def test_residual_matches_finite_difference_reconstruction():
    rng = np.random.default_rng(8)
    p = random_params(seed=3, bias=0.3)
    ctx = LossContext(D=0.3, beta2=0.5, scaling=SC)
    sensors = rng.uniform(0, 1, 9)
    pt = {"x": 4.0, "y": 6.0, "t": 20.0, "vx": 0.7, "vy": -0.4, "div_v": 0.2, "f": 0.9}
    f = lambda x, y, t: forward(p, sensors, (x, y, t), SC)   # noqa: E731
    hx, ht = 1e-3, 5e-3
    x, y, t = pt["x"], pt["y"], pt["t"]
    c = f(x, y, t)
    cx = (f(x + hx, y, t) - f(x - hx, y, t)) / (2 * hx)
    cy = (f(x, y + hx, t) - f(x, y - hx, t)) / (2 * hx)
    ct = (f(x, y, t + ht) - f(x, y, t - ht)) / (2 * ht)
    cxx = (f(x + hx, y, t) - 2 * c + f(x - hx, y, t)) / hx ** 2
    cyy = (f(x, y + hx, t) - 2 * c + f(x, y - hx, t)) / hx ** 2
    fd = ct - ctx.D * (cxx + cyy) + pt["vx"] * cx + pt["vy"] * cy + pt["div_v"] * c - ctx.beta2 * pt["f"]
    assert residual_at(p, sensors, pt, ctx) == pytest.approx(fd, rel=1e-4)


def test_loss_of_zero_network():
    rng = np.random.default_rng(9)
    p = zero_params()
    b = pack([instance(rng, f=0.0), instance(rng, f=0.0)])
    total, _ = loss_total(p, b)
    assert total == 0.0
    _, _, g = grad_loss(p, b)
    assert not g.flat().any()
    b = pack([instance(rng), instance(rng)])
    ctx = LossContext(beta2=5 / 240)
    total, parts = loss_total(p, b, ctx)
    assert total == pytest.approx(10.0 * (5 / 240) ** 2 * np.mean(b.res["f"] ** 2), rel=1e-13)
    assert parts["bcs"] == 0 and parts["ics"] == 0


def test_breakdown_recombines():
    rng = np.random.default_rng(10)
    p = random_params()
    b = pack([instance(rng) for _ in range(3)])
    ctx = LossContext(scaling=SC, weights=LossWeights(10.0, 1e-3, 1.0))
    total, parts = loss_total(p, b, ctx)
    assert abs(total - (10 * parts["res"] + 1e-3 * parts["bcs"] + parts["ics"])) <= 1e-12 * total
    t2, p2, _ = grad_loss(p, b, ctx)
    assert t2 == pytest.approx(total, rel=1e-12)
    assert p2 == pytest.approx(parts, rel=1e-12)


def test_loss_is_permutation_invariant():
    rng = np.random.default_rng(11)
    p = random_params()
    sensors, c = instance(rng, n_res=12, n_bcs=6, n_ics=4)
    perm = {k: rng.permutation(len(c.__dict__[k]["x"])) for k in ("res", "bcs", "ics")}
    shuffled = SimpleNamespace(**{k: {kk: v[perm[k]] for kk, v in c.__dict__[k].items()}
                                  for k in ("res", "bcs", "ics")})
    ctx = LossContext(scaling=SC)
    a = loss_total(p, pack([(sensors, c)]), ctx)[0]
    b = loss_total(p, pack([(sensors, shuffled)]), ctx)[0]
    assert a == pytest.approx(b, rel=1e-13)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(12)
    p = random_params(seed=1)
    # 10 collocation points across the three kinds
    b = pack([instance(rng, n_res=3, n_bcs=1, n_ics=1), instance(rng, n_res=3, n_bcs=1, n_ics=1)])
    ctx = LossContext(D=0.3, beta2=0.5, scaling=SC, weights=LossWeights(10, 0.5, 1))
    _, _, g = grad_loss(p, b, ctx)
    v, gv = p.flat(), g.flat()
    h = 1e-5
    worst = 0.0
    for i in range(len(v)):
        e = np.zeros_like(v)
        e[i] = h
        lp = loss_total(DeepONetParams.from_flat(TINY, v + e), b, ctx)[0]
        lm = loss_total(DeepONetParams.from_flat(TINY, v - e), b, ctx)[0]
        fd = (lp - lm) / (2 * h)
        worst = max(worst, abs(fd - gv[i]) / max(abs(fd), abs(gv[i]), 1e-6))
    assert worst <= 1e-4


def test_gradient_linear_in_residual_weight():
    rng = np.random.default_rng(13)
    p = random_params()
    b = pack([instance(rng), instance(rng)])

    def grad(w_res, w_bcs=1e-3, w_ics=1.0):
        ctx = LossContext(scaling=SC, weights=LossWeights(w_res, w_bcs, w_ics))
        return grad_loss(p, b, ctx)[2].flat()

    rest = grad(0.0)
    np.testing.assert_allclose(grad(20.0) - rest, 2 * (grad(10.0) - rest), rtol=0,
                               atol=1e-10 * np.abs(grad(20.0)).max())


def test_float32_gradient_close_to_float64():
    rng = np.random.default_rng(14)
    p = random_params()
    b = pack([instance(rng, n_res=40) for _ in range(4)])
    ctx = LossContext(scaling=SC)
    t64, _, g64 = grad_loss(p, b, ctx)
    t32, _, g32 = grad_loss(p.astype(np.float32), b, ctx)
    assert t32 == pytest.approx(t64, rel=1e-4)
    cos = g32.flat() @ g64.flat() / np.linalg.norm(g32.flat()) / np.linalg.norm(g64.flat())
    assert cos > 1 - 1e-6
    small = LossContext(scaling=SC, chunk=7)
    np.testing.assert_allclose(grad_loss(p, b, small)[2].flat(), g64.flat(), rtol=1e-10, atol=1e-14)


# -- optimiser and checkpoints ----------------------------------------------------------------

def test_schedule_staircase():
    s = Schedule()
    assert s(0) == 1e-3 and s(4999) == 1e-3
    assert s(5000) == pytest.approx(9.5e-4)
    assert s(10000) == pytest.approx(9.025e-4, rel=1e-12)


def test_adam_zero_gradient():
    st = TrainState.fresh(random_params())
    before = st.params.flat().copy()
    adam_step(st, st.params.zeros_like())
    assert st.step == 1
    np.testing.assert_array_equal(st.params.flat(), before)


def test_adam_first_step_is_sign_step():
    st = TrainState.fresh(random_params())
    before = st.params.flat().copy()
    rng = np.random.default_rng(0)
    gv = rng.choice([-1.0, 1.0], len(before)) * rng.uniform(0.1, 2.0, len(before))
    g = DeepONetParams.from_flat(TINY, gv)
    adam_step(st, g)
    step = before - st.params.flat()
    gv = g.flat()
    # bias-corrected t = 1: m_hat = g, v_hat = g^2, so the update is lr g / (|g| + eps)
    np.testing.assert_allclose(step, 1e-3 * gv / (np.abs(gv) + 1e-8), rtol=1e-12)
    eps_alt = 1e-8 * np.sqrt(1 - 0.999)
    np.testing.assert_allclose(step, 1e-3 * gv / (np.abs(gv) + eps_alt), rtol=1e-6)
    assert np.abs(np.abs(step) - 1e-3).max() < 1e-9


def test_adam_uses_schedule_and_checks_shapes():
    st = TrainState.fresh(random_params(), Schedule(1e-2, 2, 0.5))
    st.step = 4
    assert st.lr == pytest.approx(2.5e-3)
    with pytest.raises(ValueError):
        adam_step(st, random_params(Arch(m=3, w_b=8, L_b=2, w_t=4, L_t=2, q=4)))


def test_checkpoint_round_trip(tmp_path):
    st = TrainState.fresh(random_params(), Schedule(), AdamConfig())
    g = random_params(seed=5)
    for _ in range(3):
        adam_step(st, g)
    path = tmp_path / "sub" / "ckpt.bin"
    checkpoint.save(path, st)
    back = checkpoint.load(path)
    assert back.step == 3 and back.params.arch == TINY
    for a, b in ((st.params, back.params), (st.m, back.m), (st.v, back.v)):
        assert a.flat().tobytes() == b.flat().tobytes()
    raw = path.read_bytes()
    assert raw[:5] == b"PIDN1"
    assert np.frombuffer(raw, "<i8", 6, 5).tolist() == [3, 8, 2, 8, 2, 4]
    n = st.params.size
    assert len(raw) == 5 + 48 + 3 * 8 * n + 8
    # tensor order: branch U-encoder weight comes first
    np.testing.assert_array_equal(np.frombuffer(raw, "<f8", 8 * 9, 53), st.params.branch.Wu.ravel())


def test_checkpoint_rejects_corruption(tmp_path):
    st = TrainState.fresh(random_params())
    path = tmp_path / "c.bin"
    checkpoint.save(path, st)
    raw = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-9])
    with pytest.raises(FempidonError, match="size"):
        checkpoint.load(tmp_path / "short.bin")
    (tmp_path / "magic.bin").write_bytes(b"XXXXX" + raw[5:])
    with pytest.raises(FempidonError, match="PIDN1"):
        checkpoint.load(tmp_path / "magic.bin")
