"""Training-set generation and the "PIDS1" dataset file.

File layout (little-endian):

    b"PIDS1"
    uint32          length of the JSON header in bytes
    header          UTF-8 JSON, key-sorted: n_records, m, failed (indices),
                    master_seed, config_sha256, config (resolved document)
    records         n_records times, in instance order:
        int64       index                 (instance number; its seed is spawn child ``index``)
        int64       n_components
        float64     n_components x (x0, y0, sigma)
        float64     norm_const
        int64       n_vertices, n_triangles
        float64     h_min_mesh, h_max_mesh        (smallest/largest element diameter)
        float64     m*m branch sensor values
        int64       n_res, n_source
        float64     8 x n_res   x, y, t, vx, vy, div_v, f, p   (one array after another)
        int64       n_bcs
        float64     5 x n_bcs   x, y, t, nx, ny
        int64       n_ics
        float64     2 x n_ics   x, y

Instance ``i`` draws all of its randomness from
``np.random.SeedSequence(master_seed).spawn(N)[i]``, so an instance does
not depend on which worker produced it or on the other instances.
"""

from __future__ import annotations

import io
import json
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..config import ExperimentConfig
from ..errors import FempidonError, NumericalError
from ..fem_darcy import solve_darcy
from ..mesh import generate_mesh
from ..physics import GaussianComponent, SourceMixture, sample_mixture
from ..sampling import BranchInput, CollocationSet, branch_sensors, build_collocation

MAGIC = b"PIDS1"
RES_ORDER = ("x", "y", "t", "vx", "vy", "div_v", "f", "p")
BCS_ORDER = ("x", "y", "t", "nx", "ny")
ICS_ORDER = ("x", "y")


@dataclass(frozen=True, eq=False)
class TrainingInstance:
    index: int
    branch: BranchInput
    colloc: CollocationSet
    mixture: SourceMixture
    mesh_stats: dict


@dataclass(frozen=True, eq=False)
class Dataset:
    header: dict
    instances: tuple

    def __len__(self):
        return len(self.instances)

    @property
    def m(self):
        return self.header["m"]

    def pairs(self, indices=None):
        idx = range(len(self)) if indices is None else indices
        return [(self.instances[i].branch, self.instances[i].colloc) for i in idx]


def instance_seeds(master_seed: int, n: int):
    return np.random.SeedSequence(master_seed).spawn(n)


def make_instance(cfg: ExperimentConfig, index: int, seed_seq) -> TrainingInstance:
    """Sample a mixture, mesh it, solve Darcy, and build collocation and sensors."""
    rng = np.random.default_rng(seed_seq)
    phys = cfg.phys
    mix = sample_mixture(rng, cfg.sampler, phys)
    mesh = generate_mesh(mix, cfg.size_field, phys)
    darcy = solve_darcy(mesh, phys, mix)
    colloc = build_collocation(mix, darcy.pressure, darcy.velocity, phys, cfg.collocation,
                               phys.T, rng)
    stats = {"n_vertices": mesh.n_vertices, "n_triangles": mesh.n_triangles,
             "h_min": float(mesh.diameters.min()), "h_max": float(mesh.diameters.max())}
    return TrainingInstance(index, branch_sensors(mix, cfg.sampling.m, phys), colloc, mix, stats)


def _worker(args):
    cfg, index, seed_seq = args
    try:
        return make_instance(cfg, index, seed_seq)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return index, f"{type(exc).__name__}: {exc}"


def gen_dataset(cfg: ExperimentConfig, n: int | None = None, seed: int | None = None,
                workers: int = 1, log=None) -> Dataset:
    """Generate ``n`` instances (default ``cfg.data.N``) from master ``seed`` (default ``cfg.seed``)."""
    n = cfg.data.N if n is None else n
    seed = cfg.seed if seed is None else seed
    if n < 1:
        raise ValueError("dataset needs at least one instance")
    jobs = [(cfg, i, s) for i, s in enumerate(instance_seeds(seed, n))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, jobs, chunksize=max(1, n // (4 * workers))))
    else:
        results = []
        for job in jobs:
            results.append(_worker(job))
            if log and (job[1] + 1) % max(1, n // 10) == 0:
                log(f"generated {job[1] + 1}/{n} instances")
    good = [r for r in results if isinstance(r, TrainingInstance)]
    failed = [r for r in results if not isinstance(r, TrainingInstance)]
    if len(failed) > cfg.data.max_failure_fraction * n:
        detail = "; ".join(f"#{i}: {msg}" for i, msg in failed[:5])
        raise NumericalError(f"{len(failed)} of {n} instances failed ({detail})")
    header = {"n_records": len(good), "m": cfg.sampling.m, "failed": [i for i, _ in failed],
              "master_seed": int(seed), "config_sha256": cfg.digest(), "config": cfg.to_dict()}
    return Dataset(header, tuple(good))


# -- binary I/O ------------------------------------------------------------------------------------

def _i64(fh, *vals):
    fh.write(np.asarray(vals, dtype="<i8").tobytes())


def _f64(fh, arr):
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def write_dataset(path, ds: Dataset):
    buf = io.BytesIO()
    head = json.dumps(ds.header, sort_keys=True).encode()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(head)))
    buf.write(head)
    for inst in ds.instances:
        comps = inst.mixture.components
        _i64(buf, inst.index, len(comps))
        _f64(buf, [[c.x0, c.y0, c.sigma] for c in comps])
        _f64(buf, [inst.mixture.norm_const])
        s = inst.mesh_stats
        _i64(buf, s["n_vertices"], s["n_triangles"])
        _f64(buf, [s["h_min"], s["h_max"]])
        _f64(buf, inst.branch.values)
        c = inst.colloc
        _i64(buf, c.n_res, c.n_source)
        for k in RES_ORDER:
            _f64(buf, c.res[k])
        _i64(buf, c.n_bcs)
        for k in BCS_ORDER:
            _f64(buf, c.bcs[k])
        _i64(buf, c.n_ics)
        for k in ICS_ORDER:
            _f64(buf, c.ics[k])
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, dtype, count):
        size = np.dtype(dtype).itemsize * count
        if self.pos + size > len(self.data):
            raise FempidonError(f"{self.path}: truncated dataset")
        out = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos)
        self.pos += size
        return out

    def i64(self, count=1):
        v = self.take("<i8", count)
        return int(v[0]) if count == 1 else [int(x) for x in v]

    def f64(self, count):
        return self.take("<f8", count).astype(np.float64)


def read_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != MAGIC:
        raise FempidonError(f"{path}: not a PIDS1 dataset")
    (hlen,) = struct.unpack("<I", data[5:9])
    header = json.loads(data[9:9 + hlen].decode())
    r = _Reader(data, path)
    r.pos = 9 + hlen
    m = header["m"]
    out = []
    for _ in range(header["n_records"]):
        index, ncomp = r.i64(2)
        comp = r.f64(3 * ncomp).reshape(ncomp, 3)
        norm = float(r.f64(1)[0])
        nv, nt = r.i64(2)
        hmin, hmax = r.f64(2)
        sensors = r.f64(m * m)
        n_res, n_source = r.i64(2)
        res = {k: r.f64(n_res) for k in RES_ORDER}
        n_bcs = r.i64()
        bcs = {k: r.f64(n_bcs) for k in BCS_ORDER}
        n_ics = r.i64()
        ics = {k: r.f64(n_ics) for k in ICS_ORDER}
        mix = SourceMixture(tuple(GaussianComponent(*map(float, row)) for row in comp), norm)
        stats = {"n_vertices": nv, "n_triangles": nt, "h_min": float(hmin), "h_max": float(hmax)}
        out.append(TrainingInstance(index, BranchInput(sensors, m),
                                    CollocationSet(res, bcs, ics, n_source), mix, stats))
    if r.pos != len(data):
        raise FempidonError(f"{path}: {len(data) - r.pos} trailing bytes")
    return Dataset(header, tuple(out))
