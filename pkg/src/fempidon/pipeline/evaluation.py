"""Test-set evaluation against FEM references, and inference/FEM timing.

For every fresh test source the FEM reference is computed on the source's
own adaptive mesh and interpolated to a k x k grid at N_t times.  Per
case the relative L2 error is pooled over all grid points and times
(``full``) and taken at t = T (``final``); E_full and E_T are their means
over cases.  Per-time errors are kept so a per-time average can be
recomputed from the report.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..config import ExperimentConfig
from ..deeponet.network import DeepONetParams, predict_grid
from ..fem_darcy import solve_darcy
from ..fem_transport import grid_points, interpolate_to_grid, run_transport
from ..mesh import generate_mesh
from ..physics import SourceMixture, sample_mixture
from ..sampling import branch_sensors

TEST_STREAM = 0x7E57  # keeps test sources disjoint from the training stream of the same seed


def rel_l2(pred, ref):
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    den = np.sqrt(np.sum(ref * ref))
    if den == 0.0:
        raise ZeroDivisionError("reference field is identically zero")
    return float(np.sqrt(np.sum((pred - ref) ** 2)) / den)


@dataclass(frozen=True, eq=False)
class EvalCase:
    index: int
    mixture: SourceMixture
    mesh: object
    velocity: object
    times: np.ndarray
    reference: np.ndarray       # (N_t, k, k)
    fem_seconds: float
    peclet: float


@dataclass
class CaseResult:
    index: int
    times: np.ndarray
    per_time: np.ndarray
    full: float
    final: float


@dataclass
class EvalReport:
    cases: list
    E_full: float
    E_T: float
    fem_seconds: float
    model_seconds: float
    max_peclet: float
    extra: dict = field(default_factory=dict)

    @property
    def speedup(self):
        return self.fem_seconds / self.model_seconds if self.model_seconds > 0 else float("inf")

    def summary(self):
        """Deterministic metrics (timings are kept separately)."""
        return {"E_full": self.E_full, "E_T": self.E_T, "n_cases": len(self.cases),
                "max_peclet": self.max_peclet,
                "per_case": [{"case": c.index, "full": c.full, "final": c.final} for c in self.cases],
                **self.extra}

    def timings(self):
        return {"fem_seconds": self.fem_seconds, "model_seconds": self.model_seconds,
                "speedup": self.speedup}

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "time", "rel_err"])
            for c in self.cases:
                for t, e in zip(c.times, c.per_time):
                    w.writerow([c.index, repr(float(t)), repr(float(e))])
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(os.path.join(out_dir, "timings.json"), "w") as fh:
            json.dump(self.timings(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def case_seeds(seed: int, n: int):
    return np.random.SeedSequence([seed, TEST_STREAM]).spawn(n)


def peclet(velocity_values, D: float, L: float = 10.0) -> float:
    """Diagnostic max |v| L / D."""
    return float(np.linalg.norm(velocity_values, axis=1).max() * L / D)


def build_case(cfg: ExperimentConfig, index: int, seed_seq) -> EvalCase:
    rng = np.random.default_rng(seed_seq)
    phys = cfg.phys
    mix = sample_mixture(rng, cfg.sampler, phys)
    mesh = generate_mesh(mix, cfg.size_field, phys)
    darcy = solve_darcy(mesh, phys, mix)
    tcfg = cfg.transport_config
    t0 = time.perf_counter()
    series = run_transport(mesh, darcy.velocity, mix, phys, tcfg)
    fem_s = time.perf_counter() - t0
    ref = interpolate_to_grid(series, cfg.evaluation.k, phys)
    return EvalCase(index, mix, mesh, darcy.velocity, np.asarray(series.times), ref, fem_s,
                    peclet(darcy.velocity.values, phys.D, max(phys.Lx, phys.Ly)))


def build_cases(cfg: ExperimentConfig, n_test: int | None = None, seed: int | None = None):
    n_test = cfg.evaluation.N_test if n_test is None else n_test
    seed = cfg.seed if seed is None else seed
    return [build_case(cfg, i, s) for i, s in enumerate(case_seeds(seed, n_test))]


def model_predictor(params: DeepONetParams, cfg: ExperimentConfig, dtype=np.float32):
    """Callable case -> (N_t, k, k) prediction; the whole inference path is inside."""
    params = params.astype(dtype)
    phys = cfg.phys
    k = cfg.evaluation.k
    pts = grid_points(k, phys)
    scaling = cfg.scaling

    def predict(case: EvalCase):
        sensors = branch_sensors(case.mixture, cfg.sampling.m, phys).values
        return predict_grid(params, sensors, pts, case.times, scaling).reshape(len(case.times), k, k)

    return predict


def score(cases, predictor) -> EvalReport:
    results = []
    model_s = 0.0
    for case in cases:
        t0 = time.perf_counter()
        pred = np.asarray(predictor(case), dtype=float)
        model_s += time.perf_counter() - t0
        ref = case.reference
        if pred.shape != ref.shape:
            raise ValueError(f"prediction shape {pred.shape} != reference shape {ref.shape}")
        per_time = np.array([rel_l2(pred[j], ref[j]) for j in range(len(ref))])
        results.append(CaseResult(case.index, case.times, per_time, rel_l2(pred, ref), per_time[-1]))
    n = len(cases)
    return EvalReport(results, float(np.mean([r.full for r in results])),
                      float(np.mean([r.final for r in results])),
                      sum(c.fem_seconds for c in cases) / n, model_s / n,
                      max(c.peclet for c in cases))


def evaluate(params: DeepONetParams, cfg: ExperimentConfig, n_test: int | None = None,
             seed: int | None = None, predictor=None, cases=None) -> EvalReport:
    """E_full / E_T of ``params`` (or of a mock ``predictor``) on fresh test sources."""
    if params is not None and params.arch != cfg.network:
        raise ValueError("checkpoint architecture does not match the configuration")
    if cases is None:
        cases = build_cases(cfg, n_test, seed)
    if predictor is None:
        predictor = model_predictor(params, cfg)
    return score(cases, predictor)


# -- timing ------------------------------------------------------------------------------------------

@dataclass
class BenchReport:
    fem_seconds: float          # mean over cases of the per-case median
    model_seconds: float
    repeats: int
    per_case: list

    @property
    def speedup(self):
        return self.fem_seconds / self.model_seconds

    def to_dict(self):
        return {"fem_seconds": self.fem_seconds, "model_seconds": self.model_seconds,
                "speedup": self.speedup, "repeats": self.repeats, "per_case": self.per_case}


def _median_time(fn, repeats):
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def bench(params: DeepONetParams, cfg: ExperimentConfig, n_test: int | None = None,
          seed: int | None = None, repeats: int | None = None) -> BenchReport:
    """FEM transport solve vs model inference on the k x k x N_t grid, I/O excluded.

    The FEM time covers operator assembly and all time steps on a prepared
    mesh and velocity; the model time covers sensor evaluation, the branch
    pass and the grid prediction.  Each is the median of ``repeats`` runs
    after one warm-up.
    """
    repeats = cfg.evaluation.repeats if repeats is None else repeats
    if repeats < 3:
        raise ValueError("timing needs at least 3 repetitions")
    n_test = cfg.evaluation.N_test if n_test is None else n_test
    seed = cfg.seed if seed is None else seed
    phys = cfg.phys
    tcfg = cfg.transport_config
    predict = model_predictor(params, cfg)
    per_case = []
    for i, s in enumerate(case_seeds(seed, n_test)):
        rng = np.random.default_rng(s)
        mix = sample_mixture(rng, cfg.sampler, phys)
        mesh = generate_mesh(mix, cfg.size_field, phys)
        v = solve_darcy(mesh, phys, mix).velocity
        case = EvalCase(i, mix, mesh, v, np.asarray(tcfg.save_times), None, 0.0, 0.0)
        fem = lambda: run_transport(mesh, v, mix, phys, tcfg)   # noqa: E731
        model = lambda: predict(case)                            # noqa: E731
        fem()
        model()
        per_case.append({"case": i, "fem_seconds": _median_time(fem, repeats),
                         "model_seconds": _median_time(model, repeats)})
    return BenchReport(float(np.mean([c["fem_seconds"] for c in per_case])),
                       float(np.mean([c["model_seconds"] for c in per_case])), repeats, per_case)
