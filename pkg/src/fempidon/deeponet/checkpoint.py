"""Binary checkpoint format.

Layout (little-endian):

    b"PIDN1"
    int64 x 6        m, w_b, L_b, w_t, L_t, q
    float64 tensors  parameters in checkpoint order
    float64 tensors  Adam first moments, same order
    float64 tensors  Adam second moments, same order
    int64            step

Checkpoint order within each network is: U-encoder (W, b), V-encoder
(W, b), hidden layers 1..L (W, b), head (W, b); the branch comes first,
then the trunk, then the scalar output bias b0.  Weight matrices are
stored row-major with shape (out, in).
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import FempidonError
from .network import Arch, DeepONetParams
from .optim import TrainState

MAGIC = b"PIDN1"


def _arch_header(arch: Arch):
    return np.array([arch.m, arch.w_b, arch.L_b, arch.w_t, arch.L_t, arch.q], dtype="<i8")


def save(path, state: TrainState):
    arch = state.params.arch
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_arch_header(arch).tobytes())
        for group in (state.params, state.m, state.v):
            for t in group.tensors():
                fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())
        fh.write(np.array([state.step], dtype="<i8").tobytes())
    os.replace(tmp, path)


def load(path, **state_kwargs) -> TrainState:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != MAGIC:
        raise FempidonError(f"{path}: not a PIDN1 checkpoint")
    hdr = np.frombuffer(data, dtype="<i8", count=6, offset=5)
    arch = Arch(*(int(v) for v in hdr))
    n = sum(int(np.prod(s)) for s in DeepONetParams.shapes(arch))
    off = 5 + 48
    expected = off + 3 * 8 * n + 8
    if len(data) != expected:
        raise FempidonError(f"{path}: size {len(data)} does not match architecture ({expected})")
    groups = []
    for _ in range(3):
        vec = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
        groups.append(DeepONetParams.from_flat(arch, vec))
        off += 8 * n
    step = int(np.frombuffer(data, dtype="<i8", count=1, offset=off)[0])
    return TrainState(groups[0], groups[1], groups[2], step, **state_kwargs)
