"""Dataset generation, training, evaluation, ablation and timing drivers."""

from .ablation import AblationResult, ablate_sampling, random_variant
from .dataset import Dataset, TrainingInstance, gen_dataset, read_dataset, write_dataset
from .evaluation import BenchReport, EvalReport, bench, build_cases, evaluate, rel_l2
from .training import TrainResult, train

__all__ = [
    "AblationResult", "ablate_sampling", "random_variant", "Dataset", "TrainingInstance",
    "gen_dataset", "read_dataset", "write_dataset", "BenchReport", "EvalReport", "bench",
    "build_cases", "evaluate", "rel_l2", "TrainResult", "train",
]
