"""End-to-end pipelines: synthetic benchmark, images, text and CSV data."""

from .synthetic import ESTIMATORS, BenchResult, SyntheticSpec, gen_gaussian_pairs, synthetic_bench
from .tabular import load_csv_dataset, write_csv_dataset

__all__ = [
    "ESTIMATORS",
    "BenchResult",
    "SyntheticSpec",
    "gen_gaussian_pairs",
    "synthetic_bench",
    "load_csv_dataset",
    "write_csv_dataset",
]
