"""Physical parameters and Gaussian source functions.

A source is a sum of isotropic Gaussian bumps sharing one normalisation
constant, so that its integral over the rectangular domain is one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class PhysParams:
    Lx: float = 10.0
    Ly: float = 10.0
    K: float = 1e-9
    mu: float = 9e-4
    alpha: float = 1e-2
    D: float = 4e-6
    beta1: float = 5.0 / 60.0
    beta2: float = 5.0 / 240.0
    T: float = 500.0

    def __post_init__(self):
        for name in ("Lx", "Ly", "K", "mu", "alpha", "D", "beta1", "beta2", "T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)}")

    @property
    def mobility(self) -> float:
        """Darcy mobility K/mu."""
        return self.K / self.mu

    @property
    def area(self) -> float:
        return self.Lx * self.Ly


@dataclass(frozen=True)
class GaussianComponent:
    x0: float
    y0: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > SIGMA_FLOOR:
            raise ValueError(f"sigma must exceed {SIGMA_FLOOR} mm, got {self.sigma}")

    @property
    def center(self):
        return (self.x0, self.y0)


def _check_inside(comp: GaussianComponent, params: PhysParams):
    if not (0.0 <= comp.x0 <= params.Lx and 0.0 <= comp.y0 <= params.Ly):
        raise ValueError(f"center {comp.center} lies outside the domain")


def normalize(components: Sequence[GaussianComponent], params: PhysParams,
              quad_n: int = 2048) -> float:
    """Integral of the unnormalised Gaussian sum over the domain.

    Midpoint rule on a ``quad_n x quad_n`` grid.  Each component is a
    product of 1-D Gaussians, so the 2-D midpoint sum factorises exactly
    into two 1-D sums per component.
    """
    if quad_n < 256:
        raise ValueError("quad_n must be at least 256")
    hx = params.Lx / quad_n
    hy = params.Ly / quad_n
    xm = (np.arange(quad_n) + 0.5) * hx
    ym = (np.arange(quad_n) + 0.5) * hy
    total = 0.0
    for c in components:
        gx = np.exp(-((xm - c.x0) ** 2) / (2.0 * c.sigma ** 2)).sum() * hx
        gy = np.exp(-((ym - c.y0) ** 2) / (2.0 * c.sigma ** 2)).sum() * hy
        total += gx * gy
    if not total > 1e-300:
        raise ValueError("source integral vanishes; sigma is degenerate")
    return float(total)


@dataclass(frozen=True)
class SourceMixture:
    """Normalised sum of Gaussian components; callable on coordinate arrays."""

    components: tuple
    norm_const: float

    def __post_init__(self):
        if len(self.components) < 1:
            raise ValueError("a source mixture needs at least one component")
        if not self.norm_const > 0:
            raise ValueError("norm_const must be positive")

    @classmethod
    def build(cls, components, params: PhysParams, quad_n: int = 2048) -> "SourceMixture":
        comps = tuple(c if isinstance(c, GaussianComponent) else GaussianComponent(*c)
                      for c in components)
        for c in comps:
            _check_inside(c, params)
        return cls(comps, normalize(comps, params, quad_n))

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape)
        for c in self.components:
            out += np.exp(-((x - c.x0) ** 2 + (y - c.y0) ** 2) / (2.0 * c.sigma ** 2))
        return out / self.norm_const

    def eval_source(self, p):
        return float(self(p[0], p[1]))

    @property
    def sigmas(self):
        return np.array([c.sigma for c in self.components])

    @property
    def centers(self):
        return np.array([c.center for c in self.components], dtype=float)

    def to_json(self):
        return [{"center": [c.x0, c.y0], "sigma": c.sigma} for c in self.components]

    @classmethod
    def from_json(cls, items, params: PhysParams) -> "SourceMixture":
        comps = [GaussianComponent(float(d["center"][0]), float(d["center"][1]), float(d["sigma"]))
                 for d in items]
        return cls.build(comps, params)


def eval_source(mix: SourceMixture, p) -> float:
    return mix.eval_source(p)


@dataclass(frozen=True)
class SourceSamplerConfig:
    """How random source mixtures are drawn.

    ``count`` is either an int (fixed number of components) or a tuple of
    admissible counts chosen uniformly.
    """

    src_region: tuple = ((3.0, 7.0), (3.0, 7.0))
    sigma_range: tuple = (0.25, 0.60)
    count: object = 1
    fixed_centers: Optional[tuple] = None
    fixed_sigma: Optional[float] = None

    def __post_init__(self):
        (x0, x1), (y0, y1) = self.src_region
        if not (x0 <= x1 and y0 <= y1):
            raise ValueError("src_region bounds are reversed")
        if self.sigma_range[0] > self.sigma_range[1]:
            raise ValueError("sigma_range must satisfy sigma_min <= sigma_max")
        counts = self.counts
        if not counts or min(counts) < 1:
            raise ValueError("component counts must be >= 1")
        if self.fixed_centers is not None:
            if any(len(self.fixed_centers) != n for n in counts):
                raise ValueError("fixed_centers length must match the component count")

    @property
    def counts(self):
        if isinstance(self.count, (int, np.integer)):
            return (int(self.count),)
        return tuple(int(n) for n in self.count)


def sample_mixture(rng: np.random.Generator, cfg: SourceSamplerConfig,
                   params: PhysParams) -> SourceMixture:
    counts = cfg.counts
    n = counts[0] if len(counts) == 1 else int(counts[rng.integers(len(counts))])
    if cfg.fixed_centers is not None:
        centers = [tuple(map(float, c)) for c in cfg.fixed_centers]
    else:
        (x0, x1), (y0, y1) = cfg.src_region
        centers = [(float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1))) for _ in range(n)]
    if cfg.fixed_sigma is not None:
        sigmas = [float(cfg.fixed_sigma)] * n
    else:
        sigmas = [float(s) for s in rng.uniform(cfg.sigma_range[0], cfg.sigma_range[1], size=n)]
    comps = [GaussianComponent(cx, cy, s) for (cx, cy), s in zip(centers, sigmas)]
    return SourceMixture.build(comps, params)


def support_fraction(mix: SourceMixture, params: PhysParams, radius_factor: float = 3.0,
                     grid: int = 400) -> float:
    """Area fraction of the union of ``radius_factor * sigma`` disks.

    For one component not clipped by the boundary this is the disk area; for
    several components the union is estimated on a midpoint grid.
    """
    if len(mix.components) == 1:
        c = mix.components[0]
        r = radius_factor * c.sigma
        if r <= min(c.x0, c.y0, params.Lx - c.x0, params.Ly - c.y0):
            return float(np.pi * r * r / params.area)
    xs = (np.arange(grid) + 0.5) * params.Lx / grid
    ys = (np.arange(grid) + 0.5) * params.Ly / grid
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    inside = np.zeros(X.shape, dtype=bool)
    for c in mix.components:
        inside |= (X - c.x0) ** 2 + (Y - c.y0) ** 2 <= (radius_factor * c.sigma) ** 2
    return float(inside.mean())


def mean_support_fraction(rng, n_draws: int, sigma_range=(0.25, 0.60),
                          radius_factor: float = 3.0, params: PhysParams = PhysParams(),
                          src_region=((3.0, 7.0), (3.0, 7.0))) -> float:
    """Monte Carlo mean of the single-source support fraction."""
    (x0, x1), (y0, y1) = src_region
    cx = rng.uniform(x0, x1, n_draws)
    cy = rng.uniform(y0, y1, n_draws)
    s = rng.uniform(sigma_range[0], sigma_range[1], n_draws)
    r = radius_factor * s
    # disks never clip for the default region and widths; fall back otherwise
    clear = r <= np.minimum.reduce([cx, cy, params.Lx - cx, params.Ly - cy])
    frac = np.pi * r * r / params.area
    if not clear.all():
        for i in np.flatnonzero(~clear):
            m = SourceMixture((GaussianComponent(cx[i], cy[i], s[i]),), 1.0)
            frac[i] = support_fraction(m, params, radius_factor)
    return float(frac.mean())
