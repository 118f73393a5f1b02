"""Second-order input jets.

A jet stacks a value with first derivatives along K input directions and
pure second derivatives along the first K2 of them.  Batched jets are
arrays of shape ``(1 + K + K2, N, width)``:

    slot 0            value
    slots 1..K        d/d(dir_k)
    slots 1+K..K+K2   d2/d(dir_k)^2,  k < K2

Each primitive below has a forward returning ``(out, cache)`` and a
backward mapping output cotangents to input cotangents, so the jet
computation can itself be differentiated in reverse mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Layout:
    K: int
    K2: int

    def __post_init__(self):
        if not 0 <= self.K2 <= self.K:
            raise ValueError("need 0 <= K2 <= K")

    @property
    def slots(self):
        return 1 + self.K + self.K2


VALUE = Layout(0, 0)


def affine_fwd(X, W, b):
    out = X @ W.T
    out[0] += b
    return out, X


def affine_bwd(G, X, W, want_input=True):
    n_out = G.shape[-1]
    gW = G.reshape(-1, n_out).T @ X.reshape(-1, X.shape[-1])
    gb = G[0].sum(axis=0)
    gX = G @ W if want_input else None
    return gX, gW, gb


def tanh_fwd(A, lay: Layout):
    K, K2 = lay.K, lay.K2
    out = np.empty_like(A)
    s = np.tanh(A[0], out=out[0])
    p = 1.0 - s * s
    s2 = None
    if K:
        np.multiply(A[1:1 + K], p, out=out[1:1 + K])
        s2 = -2.0 * s * p
    for j in range(K2):
        o = out[1 + K + j]
        np.multiply(A[1 + j], A[1 + j], out=o)
        o *= s2
        o += p * A[1 + K + j]
    return out, (A, s, p, s2)


def tanh_bwd(G, cache, lay: Layout):
    A, s, p, s2 = cache
    K, K2 = lay.K, lay.K2
    gA = np.empty_like(G)
    g0 = np.multiply(G[0], p, out=gA[0])
    if not K:
        return gA
    np.multiply(G[1:1 + K], p, out=gA[1:1 + K])
    # first-order part of the value cotangent: s2 * sum_k G_k A_k
    acc = G[1] * A[1]
    for k in range(1, K):
        acc += G[1 + k] * A[1 + k]
    if K2:
        s3 = p * (4.0 * s * s - 2.0 * p)
        for j in range(K2):
            gjj = G[1 + K + j]
            a = A[1 + j]
            t = gjj * a                     # gjj a
            acc += gjj * A[1 + K + j]
            g0 += (t * a) * s3
            t *= 2.0 * s2
            gA[1 + j] += t
            np.multiply(gjj, p, out=gA[1 + K + j])
    acc *= s2
    g0 += acc
    return gA


def input_tanh_fwd(X0, seeds, W, b, lay: Layout):
    """tanh(W x + b) on raw inputs whose jet is a constant seed.

    ``X0`` (N, d) holds input values; ``seeds`` lists (input index, scale)
    for each of the K directions.  The pre-activation then has constant
    first-derivative slots ``a_k = scale_k W[:, index_k]`` and zero second
    derivatives, which removes the per-point matmul on derivative slots.
    """
    K, K2 = lay.K, lay.K2
    a = np.stack([sc * W[:, i] for i, sc in seeds]).astype(W.dtype) if K else None
    out = np.empty((lay.slots,) + (len(X0), W.shape[0]), dtype=W.dtype)
    A0 = X0 @ W.T
    A0 += b
    s = np.tanh(A0, out=out[0])
    p = 1.0 - s * s
    s2 = None
    if K:
        np.multiply(p[None], a[:, None, :], out=out[1:1 + K])
        s2 = -2.0 * s * p
    for j in range(K2):
        np.multiply(s2, a[j] * a[j], out=out[1 + K + j])
    return out, (X0, a, s, p, s2)


def input_tanh_bwd(G, cache, seeds, lay: Layout):
    """(gW, gb) for ``input_tanh_fwd`` given output cotangents G."""
    X0, a, s, p, s2 = cache
    K, K2 = lay.K, lay.K2
    g0 = G[0] * p
    col = []
    if K:
        acc = G[1] * a[0]
        for k in range(1, K):
            acc += G[1 + k] * a[k]
        acc *= s2
        g0 += acc
        col = [(G[1 + k] * p).sum(axis=0) for k in range(K)]
    if K2:
        s3 = p * (4.0 * s * s - 2.0 * p)
        for j in range(K2):
            gjj = G[1 + K + j]
            g0 += (gjj * s3) * (a[j] * a[j])
            col[j] = col[j] + 2.0 * a[j] * (gjj * s2).sum(axis=0)
    gW = g0.T @ X0
    for (i, sc), c in zip(seeds, col):
        gW[:, i] += sc * c
    return gW, g0.sum(axis=0)


def product_fwd(Z, E, lay: Layout):
    """Jet of the elementwise product Z * E."""
    K, K2 = lay.K, lay.K2
    out = np.empty_like(Z)
    np.multiply(Z[0], E[0], out=out[0])
    if K:
        np.multiply(Z[1:1 + K], E[0], out=out[1:1 + K])
        out[1:1 + K] += Z[0] * E[1:1 + K]
    for j in range(K2):
        o = out[1 + K + j]
        np.multiply(Z[1 + j], E[1 + j], out=o)
        o *= 2.0
        o += Z[1 + K + j] * E[0]
        o += Z[0] * E[1 + K + j]
    return out


def product_bwd(G, Z, E, lay: Layout):
    K, K2 = lay.K, lay.K2

    def one_side(B):
        # cotangent w.r.t. A for out = A * B
        gA = np.empty_like(G)
        g0 = np.multiply(G[0], B[0], out=gA[0])
        if K:
            np.multiply(G[1:1 + K], B[0], out=gA[1:1 + K])
        for k in range(K):
            g0 += G[1 + k] * B[1 + k]
        for j in range(K2):
            gjj = G[1 + K + j]
            g0 += gjj * B[1 + K + j]
            gA[1 + j] += 2.0 * (gjj * B[1 + j])
            np.multiply(gjj, B[0], out=gA[1 + K + j])
        return gA

    return one_side(E), one_side(Z)


def gate_fwd(U, V, Z, lay: Layout):
    """H = (1 - Z) * U + Z * V = U + Z * (V - U)."""
    E = V - U
    return U + product_fwd(Z, E, lay), E


def gate_bwd(G, Z, E, lay: Layout):
    gZ, gE = product_bwd(G, Z, E, lay)
    gU = np.subtract(G, gE, out=G)
    return gU, gE, gZ


class Jet2:
    """Scalar (or elementwise array) jet in (x, y, t) with pure seconds in x and y.

    Slots: value, d/dx, d/dy, d/dt, d2/dx2, d2/dy2.
    """

    LAYOUT = Layout(3, 2)
    __array_priority__ = 100

    def __init__(self, slots):
        self.slots = np.asarray(slots, dtype=float)
        if self.slots.shape[0] != 6:
            raise ValueError("Jet2 needs six slots")

    @classmethod
    def constant(cls, value):
        value = np.asarray(value, dtype=float)
        s = np.zeros((6,) + value.shape)
        s[0] = value
        return cls(s)

    @classmethod
    def variable(cls, value, direction, scale=1.0):
        """The input coordinate ``scale * value`` seeded along ``direction`` (0, 1, 2)."""
        j = cls.constant(np.asarray(value, dtype=float) * scale)
        j.slots[1 + direction] = scale
        return j

    value = property(lambda self: self.slots[0])
    dx = property(lambda self: self.slots[1])
    dy = property(lambda self: self.slots[2])
    dt = property(lambda self: self.slots[3])
    dxx = property(lambda self: self.slots[4])
    dyy = property(lambda self: self.slots[5])

    def _lift(self, other):
        if isinstance(other, Jet2):
            return other
        return Jet2.constant(np.broadcast_to(np.asarray(other, dtype=float), self.slots.shape[1:]))

    def __add__(self, other):
        return Jet2(self.slots + self._lift(other).slots)

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.slots)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        if not isinstance(other, Jet2):
            return Jet2(self.slots * np.asarray(other, dtype=float))
        return Jet2(product_fwd(self.slots, other.slots, self.LAYOUT))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet2):
            raise TypeError("division by a jet is not supported")
        return Jet2(self.slots / other)

    def tanh(self):
        return Jet2(tanh_fwd(self.slots, self.LAYOUT)[0])

    def sum(self, axis=-1):
        return Jet2(self.slots.sum(axis=axis if axis < 0 else axis + 1))

    def __repr__(self):
        names = ("v", "x", "y", "t", "xx", "yy")
        return "Jet2(" + ", ".join(f"{n}={s!r}" for n, s in zip(names, self.slots)) + ")"


def tanh(j):
    return j.tanh() if isinstance(j, Jet2) else np.tanh(j)
