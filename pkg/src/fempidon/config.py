"""Experiment configuration: one JSON document, every field defaulted.

The document is a JSON object with the sections below; omitted keys take
their defaults, unknown keys are rejected, and all problems found are
reported together with the line they occur on.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field, fields
from typing import Optional

from .deeponet.loss import LossWeights
from .deeponet.network import Arch, Scaling
from .deeponet.optim import AdamConfig, Schedule
from .errors import ConfigError
from .fem_transport import TransportConfig, default_dt
from .mesh import SizeFieldParams
from .physics import PhysParams, SourceSamplerConfig
from .sampling import SamplingConfig


@dataclass(frozen=True)
class PhysicsSection:
    Lx: float = 10.0
    Ly: float = 10.0
    K: float = 1e-9
    mu: float = 9e-4
    alpha: float = 1e-2
    D: float = 4e-6
    beta1: float = 5.0 / 60.0
    beta2: float = 5.0 / 240.0


@dataclass(frozen=True)
class SourceSection:
    src_region: list = field(default_factory=lambda: [[3.0, 7.0], [3.0, 7.0]])
    sigma_range: list = field(default_factory=lambda: [0.25, 0.60])
    count: object = 1
    fixed_centers: Optional[list] = None
    fixed_sigma: Optional[float] = None


@dataclass(frozen=True)
class MeshSection:
    k0: float = 10.0
    k1: float = 10.0
    sigma_ref: float = 1e-3
    h_max_factor: float = 0.04
    h_min_divisor: float = 6.0
    floor_radius_factor: float = 0.1
    h_min_override: Optional[float] = None
    h_max_override: Optional[float] = None
    max_leaves: int = 2_000_000


@dataclass(frozen=True)
class SamplingSection:
    m: int = 30
    n_r: int = 30
    n_theta: int = 30
    n_rand: int = 300
    P_bcs: int = 100
    P_ics: int = 5


@dataclass(frozen=True)
class DataSection:
    N: int = 2000
    max_failure_fraction: float = 0.01


@dataclass(frozen=True)
class ArchSection:
    w_b: int = 128
    L_b: int = 4
    w_t: int = 128
    L_t: int = 4
    q: int = 128
    output_scale: float = 1.0


@dataclass(frozen=True)
class OptimizerSection:
    lr: float = 1e-3
    decay_steps: int = 5000
    decay_rate: float = 0.95
    iterations: int = 300_000
    batch_size: int = 200
    lambda_res: float = 10.0
    lambda_bcs: float = 1e-3
    lambda_ics: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    precision: str = "float32"
    chunk: int = 2048
    log_every: int = 100
    checkpoint_every: int = 10_000


@dataclass(frozen=True)
class TransportSection:
    T: float = 500.0
    dt: Optional[float] = None
    save_times: Optional[list] = None


@dataclass(frozen=True)
class EvaluationSection:
    k: int = 80
    N_t: int = 10
    N_test: int = 30
    repeats: int = 3


SECTIONS = {
    "physics": PhysicsSection,
    "source": SourceSection,
    "mesh": MeshSection,
    "sampling": SamplingSection,
    "data": DataSection,
    "arch": ArchSection,
    "optimizer": OptimizerSection,
    "transport": TransportSection,
    "evaluation": EvaluationSection,
}

TOP_LEVEL = {"seed": 0, "threads": None}


@dataclass(frozen=True)
class ExperimentConfig:
    physics: PhysicsSection = PhysicsSection()
    source: SourceSection = SourceSection()
    mesh: MeshSection = MeshSection()
    sampling: SamplingSection = SamplingSection()
    data: DataSection = DataSection()
    arch: ArchSection = ArchSection()
    optimizer: OptimizerSection = OptimizerSection()
    transport: TransportSection = TransportSection()
    evaluation: EvaluationSection = EvaluationSection()
    seed: int = 0
    threads: Optional[int] = None

    # -- conversions to the domain objects ---------------------------------------------------

    @property
    def phys(self) -> PhysParams:
        return PhysParams(**dataclasses.asdict(self.physics), T=float(self.transport.T))

    @property
    def sampler(self) -> SourceSamplerConfig:
        s = self.source
        count = s.count if isinstance(s.count, int) else tuple(s.count)
        centers = None if s.fixed_centers is None else tuple(tuple(c) for c in s.fixed_centers)
        return SourceSamplerConfig(tuple(tuple(r) for r in s.src_region), tuple(s.sigma_range),
                                   count, centers, s.fixed_sigma)

    @property
    def size_field(self) -> SizeFieldParams:
        return SizeFieldParams(**dataclasses.asdict(self.mesh))

    @property
    def collocation(self) -> SamplingConfig:
        return SamplingConfig(**dataclasses.asdict(self.sampling))

    @property
    def network(self) -> Arch:
        a = self.arch
        return Arch(self.sampling.m, a.w_b, a.L_b, a.w_t, a.L_t, a.q)

    @property
    def scaling(self) -> Scaling:
        p = self.physics
        return Scaling(p.Lx, p.Ly, float(self.transport.T), self.arch.output_scale)

    @property
    def loss_weights(self) -> LossWeights:
        o = self.optimizer
        return LossWeights(o.lambda_res, o.lambda_bcs, o.lambda_ics)

    @property
    def schedule(self) -> Schedule:
        o = self.optimizer
        return Schedule(o.lr, o.decay_steps, o.decay_rate)

    @property
    def adam(self) -> AdamConfig:
        o = self.optimizer
        return AdamConfig(o.beta1, o.beta2, o.eps)

    @property
    def transport_config(self) -> TransportConfig:
        t = self.transport
        dt = default_dt(t.T) if t.dt is None else t.dt
        if t.save_times is None:
            return TransportConfig.uniform(t.T, self.evaluation.N_t, dt)
        return TransportConfig(dt, t.T, tuple(float(s) for s in t.save_times))

    # -- serialisation -------------------------------------------------------------------------

    def to_dict(self):
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        """Resolved configuration, key-sorted and stable across runs."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def replace(self, **sections):
        return dataclasses.replace(self, **sections)


# -- validation --------------------------------------------------------------------------------

def _key_line(text: str, path) -> Optional[int]:
    """Line (1-based) of the last key of ``path`` in the JSON text, best effort."""
    if text is None:
        return None
    pos = 0
    for key in path:
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            return None
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def _type_ok(value, default, name):
    if name == "count":     # int or list of ints; checked with the ranges
        return True
    if isinstance(value, bool):
        return isinstance(default, bool)
    if isinstance(default, bool):
        return False
    if isinstance(default, float):
        return isinstance(value, (int, float))
    if isinstance(default, int):
        return isinstance(value, int)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


_POSITIVE_INT = {
    ("sampling", "m"), ("data", "N"), ("arch", "w_b"), ("arch", "L_b"), ("arch", "w_t"),
    ("arch", "L_t"), ("arch", "q"), ("optimizer", "decay_steps"), ("optimizer", "batch_size"),
    ("optimizer", "chunk"), ("optimizer", "log_every"), ("optimizer", "checkpoint_every"),
    ("evaluation", "k"), ("evaluation", "N_t"), ("evaluation", "N_test"), ("evaluation", "repeats"),
    ("mesh", "max_leaves"),
}
_NONNEG_INT = {("sampling", "n_r"), ("sampling", "n_theta"), ("sampling", "n_rand"),
               ("sampling", "P_bcs"), ("sampling", "P_ics"), ("optimizer", "iterations")}
_POSITIVE_FLOAT = {("physics", k) for k in ("Lx", "Ly", "K", "mu", "alpha", "D", "beta1", "beta2")} | {
    ("mesh", k) for k in ("k0", "k1", "sigma_ref", "h_max_factor", "h_min_divisor",
                          "floor_radius_factor")} | {
    ("optimizer", "lr"), ("optimizer", "eps"), ("transport", "T"), ("arch", "output_scale")}


def _range_problems(cfg: dict):
    """Semantic checks on a type-correct nested dict; returns [(path, message)]."""
    out = []
    for (sec, key) in _POSITIVE_INT:
        if cfg[sec][key] < 1:
            out.append(((sec, key), "must be a positive integer"))
    for (sec, key) in _NONNEG_INT:
        if cfg[sec][key] < 0:
            out.append(((sec, key), "must be non-negative"))
    for (sec, key) in _POSITIVE_FLOAT:
        if not cfg[sec][key] > 0:
            out.append(((sec, key), "must be strictly positive"))
    s = cfg["source"]
    sr = s["sigma_range"]
    if not (len(sr) == 2 and all(isinstance(v, (int, float)) for v in sr)):
        out.append((("source", "sigma_range"), "must be [sigma_min, sigma_max]"))
    elif sr[0] > sr[1]:
        out.append((("source", "sigma_range"), f"sigma_min {sr[0]} exceeds sigma_max {sr[1]}"))
    elif sr[0] <= 1e-6:
        out.append((("source", "sigma_range"), "sigma_min must exceed 1e-6"))
    reg = s["src_region"]
    try:
        (x0, x1), (y0, y1) = reg
        if x0 > x1 or y0 > y1:
            out.append((("source", "src_region"), "bounds are reversed"))
        px, py = cfg["physics"]["Lx"], cfg["physics"]["Ly"]
        if x0 < 0 or y0 < 0 or x1 > px or y1 > py:
            out.append((("source", "src_region"), "region must lie inside the domain"))
    except (TypeError, ValueError):
        out.append((("source", "src_region"), "must be [[x_min, x_max], [y_min, y_max]]"))
    count = s["count"]
    counts = [count] if isinstance(count, int) and not isinstance(count, bool) else count
    if not (isinstance(counts, list) and counts
            and all(isinstance(c, int) and not isinstance(c, bool) and c >= 1 for c in counts)):
        out.append((("source", "count"), "must be a positive integer or a list of them"))
    elif s["fixed_centers"] is not None:
        fc = s["fixed_centers"]
        if not isinstance(fc, list) or any(len(fc) != c for c in counts):
            out.append((("source", "fixed_centers"), "length must match the component count"))
    if s["fixed_sigma"] is not None and not (isinstance(s["fixed_sigma"], (int, float))
                                             and s["fixed_sigma"] > 1e-6):
        out.append((("source", "fixed_sigma"), "must be a number above 1e-6"))
    sm = cfg["sampling"]
    if (sm["n_r"] == 0) != (sm["n_theta"] == 0):
        out.append((("sampling", "n_r"), "n_r and n_theta must both be zero or both positive"))
    if sm["m"] < 2:
        out.append((("sampling", "m"), "must be at least 2"))
    o = cfg["optimizer"]
    if not 0 < o["decay_rate"] <= 1:
        out.append((("optimizer", "decay_rate"), "must lie in (0, 1]"))
    for k in ("beta1", "beta2"):
        if not 0 <= o[k] < 1:
            out.append((("optimizer", k), "must lie in [0, 1)"))
    for k in ("lambda_res", "lambda_bcs", "lambda_ics"):
        if o[k] < 0:
            out.append((("optimizer", k), "must be non-negative"))
    if o["precision"] not in ("float32", "float64"):
        out.append((("optimizer", "precision"), "must be 'float32' or 'float64'"))
    if not 0 <= cfg["data"]["max_failure_fraction"] <= 1:
        out.append((("data", "max_failure_fraction"), "must lie in [0, 1]"))
    t = cfg["transport"]
    if t["dt"] is not None:
        if not (isinstance(t["dt"], (int, float)) and t["dt"] > 0):
            out.append((("transport", "dt"), "must be positive"))
        elif t["T"] > 0:
            n = t["T"] / t["dt"]
            if abs(n - round(n)) > 1e-9 * max(1.0, n):
                out.append((("transport", "dt"), "T must be an integer multiple of dt"))
    if t["save_times"] is not None:
        st = t["save_times"]
        if not (isinstance(st, list) and st and all(isinstance(v, (int, float)) for v in st)):
            out.append((("transport", "save_times"), "must be a non-empty list of times"))
        elif any(not 0 < v <= t["T"] for v in st) or any(b <= a for a, b in zip(st, st[1:])):
            out.append((("transport", "save_times"), "must be increasing and lie in (0, T]"))
    th = cfg["threads"]
    if th is not None and (not isinstance(th, int) or isinstance(th, bool) or th < 1):
        out.append((("threads",), "must be a positive integer or null"))
    sd = cfg["seed"]
    if not isinstance(sd, int) or isinstance(sd, bool) or sd < 0:
        out.append((("seed",), "must be a non-negative integer"))
    return out


def validate_config(document, text: Optional[str] = None) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed JSON object, reporting all problems at once.

    ``text`` is the raw JSON source, used only to attach line numbers.
    """
    problems = []

    def report(path, message):
        line = _key_line(text, path)
        where = ".".join(str(p) for p in path)
        problems.append(f"line {line}: {where}: {message}" if line else f"{where}: {message}")

    if not isinstance(document, dict):
        raise ConfigError(["configuration must be a JSON object"])

    merged = dict(TOP_LEVEL)
    for key, value in document.items():
        if key in TOP_LEVEL:
            merged[key] = value
        elif key not in SECTIONS:
            report((key,), "unknown key")

    for name, cls in SECTIONS.items():
        defaults = dataclasses.asdict(cls())
        given = document.get(name, {})
        if not isinstance(given, dict):
            report((name,), "must be an object")
            given = {}
        section = dict(defaults)
        for key, value in given.items():
            if key not in defaults:
                report((name, key), "unknown key")
                continue
            default = defaults[key]
            if default is not None and value is not None and not _type_ok(value, default, key):
                report((name, key), f"expected {type(default).__name__}, got {type(value).__name__}")
                continue
            if default is not None and value is None:
                report((name, key), "may not be null")
                continue
            if isinstance(default, float) and isinstance(value, int):
                value = float(value)
            section[key] = value
        merged[name] = section

    # mistyped values were left at their defaults above, so range checks are safe to run
    for path, msg in _range_problems(merged):
        report(path, msg)
    if problems:
        raise ConfigError(problems)

    sections = {name: SECTIONS[name](**merged[name]) for name in SECTIONS}
    return ExperimentConfig(**sections, seed=merged["seed"], threads=merged["threads"])


def loads(text: str) -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}: invalid JSON: {exc.msg}"]) from None
    return validate_config(doc, text)


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        return loads(text)
    except ConfigError as exc:
        raise ConfigError([f"{path}: {p}" for p in exc.problems]) from None


def field_names(section: str):
    return [f.name for f in fields(SECTIONS[section])]
