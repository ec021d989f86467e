"""
Benchmark functions and training data generation.

Peaks, Ackley and Himmelblau on their standard 2-D domains, Latin-hypercube
sampling and z-score normalization of inputs and targets.
"""
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import qmc
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

logger = logging.getLogger(__name__)

TEST_FRACTION = 0.3


class BenchmarkName(str, Enum):
    PEAKS = "peaks"
    ACKLEY = "ackley"
    HIMMELBLAU = "himmelblau"


def _peaks(x, y):
    return (
        3.0 * (1.0 - x) ** 2 * np.exp(-(x ** 2) - (y + 1.0) ** 2)
        - 10.0 * (x / 5.0 - x ** 3 - y ** 5) * np.exp(-(x ** 2) - y ** 2)
        - np.exp(-((x + 1.0) ** 2) - y ** 2) / 3.0
    )


def _ackley(x, y):
    # Grouped so that (0, 0) evaluates to exactly 0.0
    radial = 20.0 * (1.0 - np.exp(-0.2 * np.sqrt(0.5 * (x ** 2 + y ** 2))))
    periodic = np.e - np.exp(0.5 * (np.cos(2.0 * np.pi * x) + np.cos(2.0 * np.pi * y)))
    return radial + periodic


def _himmelblau(x, y):
    return (x ** 2 + y - 11.0) ** 2 + (x + y ** 2 - 7.0) ** 2


@dataclass(frozen=True)
class BenchmarkFunction:
    """A 2-D test function with its domain and known global minima (point, value)."""

    name: BenchmarkName
    domain: Tuple[Tuple[float, float], ...]
    known_minima: Tuple[Tuple[Tuple[float, float], float], ...]
    default_samples: int
    formula: Callable = field(repr=False, compare=False)

    def __call__(self, x, y):
        return self.formula(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))

    @property
    def input_bounds(self) -> np.ndarray:
        return np.array(self.domain, dtype=np.float64)

    @property
    def global_minimum(self) -> Tuple[Tuple[float, float], float]:
        return self.known_minima[0]


BENCHMARKS: Dict[BenchmarkName, BenchmarkFunction] = {
    BenchmarkName.PEAKS: BenchmarkFunction(
        BenchmarkName.PEAKS,
        ((-2.0, 2.0), (-2.0, 2.0)),
        (((0.228, -1.626), -6.551),),
        100_000,
        _peaks,
    ),
    BenchmarkName.ACKLEY: BenchmarkFunction(
        BenchmarkName.ACKLEY,
        ((-3.5, 3.5), (-3.5, 3.5)),
        (((0.0, 0.0), 0.0),),
        150_000,
        _ackley,
    ),
    BenchmarkName.HIMMELBLAU: BenchmarkFunction(
        BenchmarkName.HIMMELBLAU,
        ((-5.0, 5.0), (-5.0, 5.0)),
        (
            ((3.0, 2.0), 0.0),
            ((-2.805, 3.131), 0.0),
            ((-3.779, -3.283), 0.0),
            ((3.584, -1.848), 0.0),
        ),
        100_000,
        _himmelblau,
    ),
}


def get_benchmark(name: Union[str, BenchmarkName]) -> BenchmarkFunction:
    if isinstance(name, BenchmarkName):
        return BENCHMARKS[name]
    try:
        return BENCHMARKS[BenchmarkName(str(name).lower())]
    except ValueError:
        raise ValueError(f"unknown benchmark '{name}', expected one of {[b.value for b in BenchmarkName]}") from None


def evaluate(f: BenchmarkFunction, x, y):
    """Exact function value; broadcasts over arrays."""
    return f(x, y)


@dataclass
class Dataset:
    """
    Sampled inputs and targets of one benchmark function.

    Normalization is z-score with population standard deviation; ``stats_from``
    records whether the statistics were fitted on all samples or the train split.
    """

    function: BenchmarkName
    inputs: np.ndarray
    targets: np.ndarray
    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: float
    target_std: float
    train_idx: np.ndarray
    test_idx: np.ndarray
    seed: int
    stats_from: str = "all"

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[1]

    def normalize_inputs(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.input_mean) / self.input_std

    def denormalize_inputs(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.input_std + self.input_mean

    def normalize_targets(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.target_mean) / self.target_std

    def denormalize_targets(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.target_std + self.target_mean

    def split(self, which: str) -> Tuple[np.ndarray, np.ndarray]:
        """Raw (inputs, targets) of the 'train' or 'test' split."""
        idx = {"train": self.train_idx, "test": self.test_idx}[which]
        return self.inputs[idx], self.targets[idx]

    def normalization(self) -> Dict:
        return {
            "stats_from": self.stats_from,
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
        }

    def to_csv(self, path: Union[str, Path]) -> Path:
        """
        Export samples as CSV with a JSON sidecar.

        Args:
            path: CSV file path; the sidecar is written next to it as ``<stem>.json``

        Returns:
            Path of the sidecar file
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        columns = {f"x{j + 1}": self.inputs[:, j] for j in range(self.n_inputs)}
        columns["target"] = self.targets
        pd.DataFrame(columns).to_csv(path, index=False, float_format="%.17g")

        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps({
            "function": self.function.value,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "normalization": self.normalization(),
            "train_idx": self.train_idx.tolist(),
            "test_idx": self.test_idx.tolist(),
        }, indent=1))
        return sidecar


def latin_hypercube(bounds: np.ndarray, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """One point per axis stratum, strata pairing permuted by ``rng``."""
    bounds = np.asarray(bounds, dtype=np.float64)
    sampler = qmc.LatinHypercube(d=bounds.shape[0], seed=rng)
    return qmc.scale(sampler.random(n_samples), bounds[:, 0], bounds[:, 1])


def generate(f: BenchmarkFunction, n_samples: int = None, seed: int = 0, stats_from: str = "all") -> Dataset:
    """
    Generate a normalized training data set for a benchmark function.

    Args:
        f: Benchmark function
        n_samples: Number of Latin-hypercube samples (default per function)
        seed: Seed for sampling and the train/test split
        stats_from: 'all' fits normalization on every sample, 'train' on the train split

    Returns:
        Dataset with a 70/30 train/test split
    """
    n_samples = f.default_samples if n_samples is None else int(n_samples)
    if n_samples < 10:
        raise ValueError(f"n_samples must be at least 10, got {n_samples}")
    if stats_from not in ("all", "train"):
        raise ValueError(f"stats_from must be 'all' or 'train', got '{stats_from}'")

    rng = np.random.default_rng(seed)
    inputs = latin_hypercube(f.input_bounds, n_samples, rng)
    targets = f(inputs[:, 0], inputs[:, 1])

    train_idx, test_idx = train_test_split(np.arange(n_samples), test_size=TEST_FRACTION, random_state=seed)

    fit_idx = np.arange(n_samples) if stats_from == "all" else train_idx
    x_scaler = StandardScaler().fit(inputs[fit_idx])
    y_scaler = StandardScaler().fit(targets[fit_idx].reshape(-1, 1))

    logger.info(f"Generated {n_samples} samples of {f.name.value} (seed={seed})")
    return Dataset(
        function=f.name,
        inputs=inputs,
        targets=targets,
        input_mean=x_scaler.mean_.copy(),
        input_std=x_scaler.scale_.copy(),
        target_mean=float(y_scaler.mean_[0]),
        target_std=float(y_scaler.scale_[0]),
        train_idx=np.asarray(train_idx),
        test_idx=np.asarray(test_idx),
        seed=seed,
        stats_from=stats_from,
    )

