"""Training loop: sample instances with replacement, one Adam step per batch."""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass

import numpy as np

from ..config import ExperimentConfig
from ..deeponet import checkpoint
from ..deeponet.loss import LossContext, PackedBatch, grad_loss
from ..deeponet.network import init_glorot
from ..deeponet.optim import TrainState, adam_step
from ..errors import NumericalError
from .dataset import Dataset

HISTORY_FIELDS = ("iteration", "total", "res", "bcs", "ics")


class BatchSource:
    """Instance arrays pre-converted to the compute dtype; gathers packed batches."""

    def __init__(self, ds: Dataset, dtype):
        self.n = len(ds)
        self.sensors = np.stack([inst.branch.values for inst in ds.instances]).astype(dtype)
        self.groups = {}
        for kind, keys in (("res", ("x", "y", "t", "vx", "vy", "div_v", "f")),
                           ("bcs", ("x", "y", "t", "nx", "ny")), ("ics", ("x", "y"))):
            arrays = [{k: np.asarray(getattr(inst.colloc, kind)[k], dtype=dtype) for k in keys}
                      for inst in ds.instances]
            self.groups[kind] = (keys, arrays)

    def batch(self, idx) -> PackedBatch:
        parts = {}
        for kind, (keys, arrays) in self.groups.items():
            data = {k: np.concatenate([arrays[i][k] for i in idx]) for k in keys}
            inst = np.concatenate([np.full(len(arrays[i]["x"]), j, dtype=np.int64)
                                   for j, i in enumerate(idx)])
            parts[kind] = (data, inst)
        return PackedBatch(self.sensors[idx], parts["res"][0], parts["res"][1],
                           parts["bcs"][0], parts["bcs"][1], parts["ics"][0], parts["ics"][1])


@dataclass
class TrainResult:
    state: TrainState
    history: list
    seconds: float


def batch_indices(seed: int, step: int, n: int, batch_size: int):
    """Instances drawn (with replacement) for a given step; depends only on (seed, step)."""
    return np.random.default_rng([seed, step]).integers(0, n, size=batch_size)


def init_state(cfg: ExperimentConfig, seed: int) -> TrainState:
    params = init_glorot(np.random.default_rng(seed), cfg.network)
    return TrainState.fresh(params, cfg.schedule, cfg.adam)


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def train(ds: Dataset, cfg: ExperimentConfig, iterations: int | None = None,
          seed: int | None = None, state: TrainState | None = None,
          checkpoint_path=None, log=None) -> TrainResult:
    """Train from ``state`` (fresh Glorot init from ``seed`` if None).

    History rows (iteration, total, res, bcs, ics) hold the loss of the
    batch used at that iteration, before its update, every ``log_every``
    steps.  The checkpoint is written every ``checkpoint_every`` steps and
    at the end.
    """
    o = cfg.optimizer
    iterations = o.iterations if iterations is None else iterations
    seed = cfg.seed if seed is None else seed
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    if ds.m != cfg.sampling.m:
        raise ValueError(f"dataset has m = {ds.m}, configuration expects {cfg.sampling.m}")
    if state is None:
        state = init_state(cfg, seed)
    if state.params.arch != cfg.network:
        raise ValueError("checkpoint architecture does not match the configuration")
    dtype = np.float32 if o.precision == "float32" else np.float64
    p = cfg.phys
    ctx = LossContext(p.D, p.beta2, cfg.scaling, cfg.loss_weights, o.chunk)
    source = BatchSource(ds, dtype)
    history = []
    start = state.step
    t0 = time.perf_counter()
    for it in range(start, start + iterations):
        batch = source.batch(batch_indices(seed, it, len(ds), o.batch_size))
        total, parts, grad = grad_loss(state.params.astype(dtype), batch, ctx)
        if not np.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grad.tensors()):
            raise NumericalError(f"non-finite loss or gradient at iteration {it}")
        if it % o.log_every == 0:
            history.append((it, total, parts["res"], parts["bcs"], parts["ics"]))
            if log:
                log(f"iter {it:7d}  loss {total:.4e}  res {parts['res']:.3e}  "
                    f"bcs {parts['bcs']:.3e}  ics {parts['ics']:.3e}  lr {state.lr:.3e}  "
                    f"{time.perf_counter() - t0:.0f}s")
        adam_step(state, grad)
        if checkpoint_path and state.step % o.checkpoint_every == 0:
            checkpoint.save(checkpoint_path, state)
    if checkpoint_path:
        checkpoint.save(checkpoint_path, state)
    return TrainResult(state, history, time.perf_counter() - t0)


def save_history(out_dir, history):
    os.makedirs(out_dir, exist_ok=True)
    write_history(os.path.join(out_dir, "history.csv"), history)
