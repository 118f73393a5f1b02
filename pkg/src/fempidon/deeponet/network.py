"""Modified DeepONet: parameters, initialisation and forward passes.

Both sub-networks are "modified MLPs": two encoders U and V of the input
are blended into every hidden layer through a tanh gate,

    U = tanh(W_U x + b_U),  V = tanh(W_V x + b_V),  H_1 = tanh(W_1 x + b_1),
    Z_k = tanh(W_{k+1} H_k + b_{k+1}),  H_{k+1} = (1 - Z_k) U + Z_k V,

followed by a linear head to R^q.  The operator output is

    c(x, y, t) = scale * <branch(f), trunk(x/Lx, y/Ly, t/T)> / sqrt(q) + b0.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import jet as J
from .jet import Jet2, Layout


@dataclass(frozen=True)
class Arch:
    m: int = 30
    w_b: int = 128
    L_b: int = 4
    w_t: int = 128
    L_t: int = 4
    q: int = 128
    trunk_in: int = 3

    def __post_init__(self):
        if min(self.m, self.w_b, self.L_b, self.w_t, self.L_t, self.q) < 1:
            raise ValueError("architecture sizes must be positive")

    @property
    def branch_in(self):
        return self.m * self.m


@dataclass
class MLPParams:
    Wu: np.ndarray
    bu: np.ndarray
    Wv: np.ndarray
    bv: np.ndarray
    hidden: list  # [(W, b)] for hidden layers 1..L
    Wh: np.ndarray
    bh: np.ndarray

    def tensors(self):
        out = [self.Wu, self.bu, self.Wv, self.bv]
        for W, b in self.hidden:
            out += [W, b]
        return out + [self.Wh, self.bh]

    @classmethod
    def from_tensors(cls, ts):
        ts = list(ts)
        hidden = [(ts[k], ts[k + 1]) for k in range(4, len(ts) - 2, 2)]
        return cls(ts[0], ts[1], ts[2], ts[3], hidden, ts[-2], ts[-1])

    @property
    def depth(self):
        return len(self.hidden)


def mlp_shapes(n_in, width, depth, n_out):
    shapes = [(width, n_in), (width,), (width, n_in), (width,), (width, n_in), (width,)]
    for _ in range(depth - 1):
        shapes += [(width, width), (width,)]
    return shapes + [(n_out, width), (n_out,)]


@dataclass
class DeepONetParams:
    arch: Arch
    branch: MLPParams
    trunk: MLPParams
    b0: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def tensors(self):
        return self.branch.tensors() + self.trunk.tensors() + [self.b0]

    @classmethod
    def from_tensors(cls, arch, ts):
        ts = list(ts)
        nb = len(mlp_shapes(1, 1, arch.L_b, 1))
        nt = len(mlp_shapes(1, 1, arch.L_t, 1))
        return cls(arch, MLPParams.from_tensors(ts[:nb]), MLPParams.from_tensors(ts[nb:nb + nt]),
                   ts[nb + nt])

    @staticmethod
    def shapes(arch):
        return (mlp_shapes(arch.branch_in, arch.w_b, arch.L_b, arch.q)
                + mlp_shapes(arch.trunk_in, arch.w_t, arch.L_t, arch.q) + [(1,)])

    def flat(self):
        return np.concatenate([t.ravel() for t in self.tensors()])

    @classmethod
    def from_flat(cls, arch, vec):
        ts, off = [], 0
        for shp in cls.shapes(arch):
            n = int(np.prod(shp))
            ts.append(np.array(vec[off:off + n], dtype=np.float64).reshape(shp))
            off += n
        if off != len(vec):
            raise ValueError("flat vector length does not match the architecture")
        return cls.from_tensors(arch, ts)

    def zeros_like(self):
        return DeepONetParams.from_tensors(self.arch, [np.zeros_like(t) for t in self.tensors()])

    def astype(self, dtype):
        return DeepONetParams.from_tensors(self.arch, [t.astype(dtype) for t in self.tensors()])

    def copy(self):
        return DeepONetParams.from_tensors(self.arch, [t.copy() for t in self.tensors()])

    @property
    def size(self):
        return sum(t.size for t in self.tensors())


def init_glorot(rng: np.random.Generator, arch: Arch) -> DeepONetParams:
    """Weights ~ N(0, 2 / (fan_in + fan_out)), biases and b0 zero."""
    ts = []
    for shp in DeepONetParams.shapes(arch):
        if len(shp) == 2:
            fan_out, fan_in = shp
            ts.append(rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shp))
        else:
            ts.append(np.zeros(shp))
    return DeepONetParams.from_tensors(arch, ts)


@dataclass(frozen=True)
class Scaling:
    """Trunk-input normalisation and output scale."""

    Lx: float = 10.0
    Ly: float = 10.0
    T: float = 500.0
    output_scale: float = 1.0

    @property
    def input_scale(self):
        return np.array([1.0 / self.Lx, 1.0 / self.Ly, 1.0 / self.T])


# -- batched modified-MLP on jets -----------------------------------------------------------

def mlp_hidden_fwd(p: MLPParams, X0, seeds, lay: Layout):
    """Run encoders and hidden layers on seeded inputs; return H_L and the tape."""
    W1, b1 = p.hidden[0]
    w = len(b1)
    # U, V and H_1 all read the raw inputs: one fused layer, then split.
    Wcat = np.concatenate([p.Wu, p.Wv, W1])
    bcat = np.concatenate([p.bu, p.bv, b1])
    UVH, cin = J.input_tanh_fwd(X0, seeds, Wcat, bcat, lay)
    U, V, H = UVH[..., :w], UVH[..., w:2 * w], UVH[..., 2 * w:]
    tape = {"seeds": seeds, "cin": cin, "w": w, "layers": []}
    for W, b in p.hidden[1:]:
        A, _ = J.affine_fwd(H, W, b)
        Z, cz = J.tanh_fwd(A, lay)
        Hn, E = J.gate_fwd(U, V, Z, lay)
        tape["layers"].append((H, cz, Z, E))
        H = Hn
    tape["H"] = H
    return H, tape


def mlp_hidden_bwd(p: MLPParams, gH, tape, lay: Layout):
    """Cotangents of the MLP tensors (head excluded) given dL/dH_L.

    ``gH`` is used as scratch space and is overwritten.
    """
    grads_hidden = [None] * p.depth
    gU = gV = None
    for k in range(p.depth - 1, 0, -1):
        H, cz, Z, E = tape["layers"][k - 1]
        gu, gv, gZ = J.gate_bwd(gH, Z, E, lay)
        gU = gu if gU is None else np.add(gU, gu, out=gU)
        gV = gv if gV is None else np.add(gV, gv, out=gV)
        gA = J.tanh_bwd(gZ, cz, lay)
        W, _ = p.hidden[k]
        gH, gW, gb = J.affine_bwd(gA, H, W)
        grads_hidden[k] = (gW, gb)
    seeds, cin, w = tape["seeds"], tape["cin"], tape["w"]
    G = np.empty(gH.shape[:-1] + (3 * w,), dtype=gH.dtype)
    G[..., 2 * w:] = gH
    if gU is None:
        G[..., :2 * w] = 0.0
    else:
        G[..., :w] = gU
        G[..., w:2 * w] = gV
    gW, gb = J.input_tanh_bwd(G, cin, seeds, lay)
    gWu, gWv, grads_hidden[0] = gW[:w], gW[w:2 * w], (gW[2 * w:], gb[2 * w:])
    gbu, gbv = gb[:w], gb[w:2 * w]
    return MLPParams(gWu, gbu, gWv, gbv, grads_hidden, None, None)


def trunk_input_jet(x, y, t, scaling: Scaling, lay: Layout, dirs=(0, 1, 2), dtype=np.float64):
    """Normalised trunk inputs (N, 3) and their chain-rule seeds along ``dirs``."""
    s = scaling.input_scale
    X0 = np.stack([x * s[0], y * s[1], t * s[2]], axis=1).astype(dtype, copy=False)
    seeds = tuple((dirs[k], s[dirs[k]]) for k in range(lay.K))
    return X0, seeds


def branch_fwd(params: DeepONetParams, sensors):
    """Branch embedding (n_inst, q) and its tape."""
    X = np.asarray(sensors, dtype=params.branch.Wu.dtype)
    H, tape = mlp_hidden_fwd(params.branch, X, (), J.VALUE)
    B, _ = J.affine_fwd(H, params.branch.Wh, params.branch.bh)
    return B[0], tape


def branch_bwd(params: DeepONetParams, gB, tape):
    gHb, gWh, gbh = J.affine_bwd(gB[None], tape["H"], params.branch.Wh)
    g = mlp_hidden_bwd(params.branch, gHb, tape, J.VALUE)
    g.Wh, g.bh = gWh, gbh
    return g


def folded_head(params: DeepONetParams, B, scaling: Scaling):
    """Per-instance trunk-head fold: c = H_L . g + c0 on the value slot."""
    dtype = params.trunk.Wh.dtype
    k = scaling.output_scale / np.sqrt(params.arch.q)
    g = k * (B @ params.trunk.Wh)                  # (n_inst, w_t)
    c0 = k * (B @ params.trunk.bh) + params.b0[0]  # (n_inst,)
    return g.astype(dtype, copy=False), c0.astype(dtype, copy=False)


def trunk_jet_output(params: DeepONetParams, B, inst, x, y, t, scaling: Scaling, lay: Layout,
                     dirs=(0, 1, 2)):
    """Jet of c at points (x, y, t); point n belongs to instance inst[n]."""
    dtype = params.trunk.Wu.dtype
    X0, seeds = trunk_input_jet(x, y, t, scaling, lay, dirs, dtype)
    H, tape = mlp_hidden_fwd(params.trunk, X0, seeds, lay)
    g, c0 = folded_head(params, B, scaling)
    c = np.einsum("snw,nw->sn", H, g[inst])
    c[0] += c0[inst]
    return c, tape


def forward(params: DeepONetParams, sensors, xt, scaling: Scaling = Scaling()):
    """Predict c for one branch input at points xt (n, 3) or (3,)."""
    xt = np.asarray(xt, dtype=float)
    single = xt.ndim == 1
    xt = np.atleast_2d(xt)
    B, _ = branch_fwd(params, np.atleast_2d(sensors))
    inst = np.zeros(len(xt), dtype=np.int64)
    c, _ = trunk_jet_output(params, B, inst, xt[:, 0], xt[:, 1], xt[:, 2], scaling, J.VALUE)
    return float(c[0, 0]) if single else c[0]


class _TrunkValues:
    """Value-only trunk evaluation with weights pre-packed for repeated calls."""

    def __init__(self, p: MLPParams, dtype):
        W1, b1 = p.hidden[0]
        self.w = len(b1)
        Wcat = np.concatenate([p.Wu, p.Wv, W1])
        bcat = np.concatenate([p.bu, p.bv, b1])
        # bias folded in through a trailing column of ones
        self.Win = np.concatenate([Wcat.T, bcat[None]]).astype(dtype)
        self.hidden = [(np.ascontiguousarray(W.T, dtype=dtype), b.astype(dtype)) for W, b in p.hidden[1:]]
        self.dtype = dtype

    def __call__(self, X1):
        w = self.w
        UVH = np.tanh(X1 @ self.Win)
        U, V, H = UVH[:, :w], UVH[:, w:2 * w], UVH[:, 2 * w:]
        if self.hidden:
            E = V - U
        for WT, b in self.hidden:
            Z = H @ WT
            Z += b
            np.tanh(Z, out=Z)
            Z *= E
            Z += U
            H = Z
        return H


def predict_grid(params: DeepONetParams, sensors, xy, times, scaling: Scaling = Scaling(),
                 chunk=2048):
    """Predictions (n_times, n_points) for one source on fixed spatial points."""
    dtype = params.trunk.Wu.dtype
    B, _ = branch_fwd(params, np.atleast_2d(sensors))
    g, c0 = folded_head(params, B, scaling)
    g, c0 = g[0], c0[0]
    trunk = _TrunkValues(params.trunk, dtype)
    xy = np.asarray(xy, dtype=float)
    n = len(xy)
    s = scaling.input_scale
    X1 = np.empty((len(times) * n, 4), dtype=dtype)
    X1[:, 0] = np.tile(xy[:, 0] * s[0], len(times))
    X1[:, 1] = np.tile(xy[:, 1] * s[1], len(times))
    X1[:, 2] = np.repeat(np.asarray(times, dtype=float) * s[2], n)
    X1[:, 3] = 1.0
    out = np.empty(len(X1))
    for a in range(0, len(X1), chunk):
        H = trunk(X1[a:a + chunk])
        out[a:a + len(H)] = H @ g + c0
    return out.reshape(len(times), n)


def forward_jet(params: DeepONetParams, sensors, xt, scaling: Scaling = Scaling()) -> Jet2:
    """Jet2 of c (value, c_x, c_y, c_t, c_xx, c_yy) at points xt."""
    xt = np.asarray(xt, dtype=float)
    single = xt.ndim == 1
    xt = np.atleast_2d(xt)
    B, _ = branch_fwd(params, np.atleast_2d(sensors))
    inst = np.zeros(len(xt), dtype=np.int64)
    c, _ = trunk_jet_output(params, B, inst, xt[:, 0], xt[:, 1], xt[:, 2], scaling, Jet2.LAYOUT)
    return Jet2(c[:, 0] if single else c)
