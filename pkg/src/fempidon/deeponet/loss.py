"""Physics-informed loss and its exact parameter gradient.

The residual of the transport equation at a collocation point is

    R = c_t - D (c_xx + c_yy) + v . grad c + (div v) c - beta2 f,

using div(v c) = v . grad c + (div v) c.  The total loss pools each point
kind over the whole batch:

    L = w_res mean(R^2) + w_bcs mean((n . grad c)^2) + w_ics mean(c(x, 0)^2).

Gradients are obtained by running the jet computation forward, then
reversing it primitive by primitive (see ``jet.py``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import jet as J
from .jet import Layout
from .network import (DeepONetParams, MLPParams, Scaling, branch_bwd, branch_fwd, folded_head,
                      mlp_hidden_bwd, trunk_input_jet, mlp_hidden_fwd, trunk_jet_output)

RES_LAYOUT = Layout(3, 2)   # x, y, t; xx, yy
BCS_LAYOUT = Layout(2, 0)   # x, y
ICS_LAYOUT = J.VALUE


@dataclass(frozen=True)
class LossWeights:
    res: float = 10.0
    bcs: float = 1e-3
    ics: float = 1.0

    def __post_init__(self):
        if min(self.res, self.bcs, self.ics) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossContext:
    D: float = 4e-6
    beta2: float = 5.0 / 240.0
    scaling: Scaling = Scaling()
    weights: LossWeights = LossWeights()
    chunk: int = 16384


@dataclass
class PackedBatch:
    """Collocation data of several instances, grouped contiguously by instance.

    ``*_inst`` give the owning instance (row of ``sensors``) of each point.
    """

    sensors: np.ndarray
    res: dict
    res_inst: np.ndarray
    bcs: dict
    bcs_inst: np.ndarray
    ics: dict
    ics_inst: np.ndarray

    @property
    def n_instances(self):
        return len(self.sensors)


RES_KEYS = ("x", "y", "t", "vx", "vy", "div_v", "f")
BCS_KEYS = ("x", "y", "t", "nx", "ny")
ICS_KEYS = ("x", "y")


def pack(instances) -> PackedBatch:
    """Pack (BranchInput-like, CollocationSet-like) pairs into one batch."""
    sensors = np.stack([np.asarray(b.values if hasattr(b, "values") else b, dtype=float)
                        for b, _ in instances])

    def cat(group, keys):
        data = {k: np.concatenate([np.asarray(getattr(c, group)[k], dtype=float) for _, c in instances])
                for k in keys}
        inst = np.concatenate([np.full(len(getattr(c, group)["x"]), i, dtype=np.int64)
                               for i, (_, c) in enumerate(instances)])
        return data, inst

    res, ri = cat("res", RES_KEYS)
    bcs, bi = cat("bcs", BCS_KEYS)
    ics, ii = cat("ics", ICS_KEYS)
    return PackedBatch(sensors, res, ri, bcs, bi, ics, ii)


def _residual_from_jet(c, d, ctx: LossContext):
    return (c[3] - ctx.D * (c[4] + c[5]) + d["vx"] * c[1] + d["vy"] * c[2]
            + d["div_v"] * c[0] - ctx.beta2 * d["f"])


def residual_at(params: DeepONetParams, sensors, pt: dict, ctx: LossContext = LossContext()):
    """PDE residual at residual-kind points ``pt`` (dict of arrays or scalars)."""
    missing = [k for k in RES_KEYS if k not in pt]
    if missing:
        raise ValueError(f"residual point lacks attached data: {missing}")
    d = {k: np.atleast_1d(np.asarray(pt[k], dtype=float)) for k in RES_KEYS}
    B, _ = branch_fwd(params, np.atleast_2d(sensors))
    inst = np.zeros(len(d["x"]), dtype=np.int64)
    c, _ = trunk_jet_output(params, B, inst, d["x"], d["y"], d["t"], ctx.scaling, RES_LAYOUT)
    R = _residual_from_jet(c, d, ctx)
    return float(R[0]) if np.ndim(pt["x"]) == 0 else R


def _chunks(n, size):
    for a in range(0, n, size):
        yield slice(a, min(n, a + size))


def _kind_terms(kind):
    if kind == "res":
        return RES_LAYOUT, (0, 1, 2)
    if kind == "bcs":
        return BCS_LAYOUT, (0, 1)
    return ICS_LAYOUT, ()


def _point_values(kind, c, d, ctx):
    """Per-point quantity whose mean square is the sub-loss."""
    if kind == "res":
        return _residual_from_jet(c, d, ctx)
    if kind == "bcs":
        return d["nx"] * c[1] + d["ny"] * c[2]
    return c[0]


def _cotangent(kind, q, d, ctx, scale):
    """dL/dc slots given dL/dq = scale * q."""
    g = scale * q
    if kind == "res":
        return np.stack([g * d["div_v"], g * d["vx"], g * d["vy"], g, -ctx.D * g, -ctx.D * g])
    if kind == "bcs":
        return np.stack([np.zeros_like(g), g * d["nx"], g * d["ny"]])
    return g[None]


def _iter_kind(batch: PackedBatch, kind):
    data = getattr(batch, kind)
    inst = getattr(batch, kind + "_inst")
    t = data["t"] if "t" in data else np.zeros(len(data["x"]))
    return data, inst, t


def loss_total(params: DeepONetParams, batch: PackedBatch, ctx: LossContext = LossContext()):
    """Total loss and its unweighted breakdown {'res', 'bcs', 'ics'}."""
    B, _ = branch_fwd(params, batch.sensors)
    parts = {}
    for kind in ("res", "bcs", "ics"):
        data, inst, t = _iter_kind(batch, kind)
        n = len(data["x"])
        lay, dirs = _kind_terms(kind)
        acc = 0.0
        for sl in _chunks(n, ctx.chunk):
            d = {k: v[sl] for k, v in data.items()}
            c, _ = trunk_jet_output(params, B, inst[sl], d["x"], d["y"], t[sl], ctx.scaling, lay, dirs)
            acc += float(np.sum(_point_values(kind, c, d, ctx) ** 2))
        parts[kind] = acc / n if n else 0.0
    w = ctx.weights
    total = w.res * parts["res"] + w.bcs * parts["bcs"] + w.ics * parts["ics"]
    return total, parts


def _add_mlp(acc: MLPParams, g: MLPParams):
    if acc is None:
        return g
    acc.Wu += g.Wu
    acc.bu += g.bu
    acc.Wv += g.Wv
    acc.bv += g.bv
    for (aW, ab), (gW, gb) in zip(acc.hidden, g.hidden):
        aW += gW
        ab += gb
    return acc


def grad_loss(params: DeepONetParams, batch: PackedBatch, ctx: LossContext = LossContext()):
    """(total, breakdown, gradient) with the gradient shaped like ``params``."""
    B, btape = branch_fwd(params, batch.sensors)
    g_fold, c0 = folded_head(params, B, ctx.scaling)
    k = ctx.scaling.output_scale / np.sqrt(params.arch.q)
    w = {"res": ctx.weights.res, "bcs": ctx.weights.bcs, "ics": ctx.weights.ics}

    dtype = params.trunk.Wu.dtype
    gg = np.zeros(g_fold.shape)     # dL/d g_fold, accumulated in float64
    gc0 = np.zeros(c0.shape)        # dL/d c0
    trunk_acc = None
    parts = {}
    for kind in ("res", "bcs", "ics"):
        data, inst, t = _iter_kind(batch, kind)
        n = len(data["x"])
        lay, dirs = _kind_terms(kind)
        acc = 0.0
        for sl in _chunks(n, ctx.chunk):
            d = {kk: v[sl].astype(dtype, copy=False) for kk, v in data.items()}
            ii = inst[sl]
            X0, seeds = trunk_input_jet(d["x"], d["y"], t[sl], ctx.scaling, lay, dirs, dtype)
            H, tape = mlp_hidden_fwd(params.trunk, X0, seeds, lay)
            gpt = g_fold[ii]
            c = np.einsum("snw,nw->sn", H, gpt)
            c[0] += c0[ii]
            q = _point_values(kind, c, d, ctx)
            acc += float(np.sum(q * q))
            if w[kind] == 0.0:
                continue
            Gc = _cotangent(kind, q, d, ctx, 2.0 * w[kind] / n).astype(H.dtype, copy=False)
            # c = sum_w H * g_fold[inst] ; c[0] += c0[inst]
            gH = Gc[:, :, None] * gpt[None]
            _segment_add(gc0, ii, Gc[0])
            _segment_add(gg, ii, np.einsum("sn,snw->nw", Gc, H))
            trunk_acc = _add_mlp(trunk_acc, mlp_hidden_bwd(params.trunk, gH, tape, lay))
        parts[kind] = acc / n if n else 0.0

    total = w["res"] * parts["res"] + w["bcs"] * parts["bcs"] + w["ics"] * parts["ics"]

    # g_fold = k B Wh_t ; c0 = k B bh_t + b0
    gWh_t = k * (B.T @ gg)
    gbh_t = k * (B.T @ gc0)
    gB = k * (gg @ params.trunk.Wh.T + np.outer(gc0, params.trunk.bh))
    gb0 = np.array([gc0.sum()])
    gbranch = branch_bwd(params, gB, btape)
    if trunk_acc is None:
        trunk_acc = params.zeros_like().trunk
    trunk_acc.Wh, trunk_acc.bh = gWh_t, gbh_t
    grad = DeepONetParams(params.arch, gbranch, trunk_acc, gb0)
    return total, parts, grad


def _segment_add(out, idx, vals):
    """out[idx[n]] += vals[n] for idx sorted into contiguous runs."""
    if len(idx) == 0:
        return
    starts = np.flatnonzero(np.r_[True, idx[1:] != idx[:-1]])
    sums = np.add.reduceat(vals, starts, axis=0)
    owners = idx[starts]
    if len(np.unique(owners)) == len(owners):
        out[owners] += sums
    else:
        np.add.at(out, owners, sums)
