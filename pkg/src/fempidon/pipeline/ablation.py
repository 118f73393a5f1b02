"""Structured-polar vs all-random residual sampling at equal point count."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from ..config import ExperimentConfig
from .dataset import gen_dataset
from .evaluation import EvalReport, build_cases, evaluate
from .training import train


def random_variant(cfg: ExperimentConfig) -> ExperimentConfig:
    """Same configuration with the polar grid removed and its points given to random sampling.

    The residual budget is preserved for the largest admissible component
    count, e.g. 30*30 + 300 = 1200 points for one source, 3000 for three.
    """
    s = cfg.sampling
    total = s.n_r * s.n_theta * max(cfg.sampler.counts) + s.n_rand
    return cfg.replace(sampling=dataclasses.replace(s, n_r=0, n_theta=0, n_rand=total))


@dataclass
class AblationResult:
    seed: int
    structured: EvalReport
    random: EvalReport

    @property
    def difference(self):
        """Random minus structured, for (E_full, E_T)."""
        return (self.random.E_full - self.structured.E_full, self.random.E_T - self.structured.E_T)

    def to_dict(self):
        return {"seed": self.seed,
                "structured": {"E_full": self.structured.E_full, "E_T": self.structured.E_T},
                "random": {"E_full": self.random.E_full, "E_T": self.random.E_T},
                "difference": {"E_full": self.difference[0], "E_T": self.difference[1]}}


def ablate_sampling(cfg: ExperimentConfig, seed: int | None = None, iterations: int | None = None,
                    n_test: int | None = None, workers: int = 1, log=None) -> AblationResult:
    """Train both variants with identical seeds and budgets; score them on the same test cases."""
    seed = cfg.seed if seed is None else seed
    cases = build_cases(cfg, n_test, seed)
    reports = []
    for variant in (cfg, random_variant(cfg)):
        ds = gen_dataset(variant, seed=seed, workers=workers)
        result = train(ds, variant, iterations, seed=seed, log=log)
        reports.append(evaluate(result.state.params, variant, cases=cases))
    return AblationResult(seed, reports[0], reports[1])
