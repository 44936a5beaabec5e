"""
Latency and fragment-size distributions.

Latency distributions produce integer picoseconds; fragment-size
distributions produce positive byte counts. All validation happens when a
distribution is built, so sampling never fails.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ebsim.core.engine import PS_PER_NS
from ebsim.core.errors import ConfigError
from ebsim.utils.helpers import ConfigSection

# Stand-in for the measured PCIe + stack latency: 600 ns floor, ~850 ns median, long tail.
DEFAULT_STACK_SHIFT_NS = 600.0
DEFAULT_STACK_MEDIAN_NS = 850.0
DEFAULT_STACK_SIGMA = 0.5


@dataclass(frozen=True)
class DeterministicLatency:
    """Always the same latency."""

    value_ps: int

    kind = "deterministic"

    def __post_init__(self) -> None:
        if self.value_ps < 0:
            raise ConfigError(f"latency must be >= 0, got {self.value_ps} ps")

    def sample(self, rng: np.random.Generator) -> int:
        return self.value_ps

    def sample_many(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return np.full(count, self.value_ps, dtype=np.int64)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "value_ns": self.value_ps / PS_PER_NS}


@dataclass(frozen=True)
class HistogramLatency:
    """
    Piecewise-uniform latency over half-open bins [start, end).

    Attributes:
        edges_ps: (start, end) pair of every bin, in picoseconds
        weights: Non-negative bin weights (need not be normalised)
    """

    edges_ps: Tuple[Tuple[int, int], ...]
    weights: Tuple[float, ...]

    kind = "histogram"

    def __post_init__(self) -> None:
        if not self.edges_ps:
            raise ConfigError("histogram needs at least one bin")
        if len(self.edges_ps) != len(self.weights):
            raise ConfigError("histogram bins and weights differ in length")
        previous_end = None
        for start, end in self.edges_ps:
            if start < 0 or end <= start:
                raise ConfigError(f"histogram bin [{start}, {end}) ps is empty or negative")
            if previous_end is not None and start < previous_end:
                raise ConfigError("histogram bins must be strictly increasing and non-overlapping")
            previous_end = end
        if any(w < 0 for w in self.weights):
            raise ConfigError("histogram weights must be non-negative")
        if sum(self.weights) <= 0:
            raise ConfigError("histogram weights must sum to a positive value")

    @property
    def probabilities(self) -> np.ndarray:
        weights = np.asarray(self.weights, dtype=float)
        return weights / weights.sum()

    def sample(self, rng: np.random.Generator) -> int:
        index = int(rng.choice(len(self.weights), p=self.probabilities))
        start, end = self.edges_ps[index]
        return int(rng.integers(start, end))

    def sample_many(self, rng: np.random.Generator, count: int) -> np.ndarray:
        edges = np.asarray(self.edges_ps, dtype=np.int64)
        index = rng.choice(len(self.weights), size=count, p=self.probabilities)
        return rng.integers(edges[index, 0], edges[index, 1])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "bins": [
                [start / PS_PER_NS, end / PS_PER_NS, weight]
                for (start, end), weight in zip(self.edges_ps, self.weights)
            ],
        }


@dataclass(frozen=True)
class ShiftedLognormalLatency:
    """
    shift + LogNormal(mu, sigma), the lognormal part expressed in nanoseconds.
    """

    mu: float
    sigma: float
    shift_ps: int

    kind = "shifted_lognormal"

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ConfigError("shifted_lognormal sigma must be >= 0")
        if self.shift_ps < 0:
            raise ConfigError("shifted_lognormal shift must be >= 0")

    def sample(self, rng: np.random.Generator) -> int:
        return self.shift_ps + int(round(rng.lognormal(self.mu, self.sigma) * PS_PER_NS))

    def sample_many(self, rng: np.random.Generator, count: int) -> np.ndarray:
        tail = np.rint(rng.lognormal(self.mu, self.sigma, size=count) * PS_PER_NS)
        return self.shift_ps + tail.astype(np.int64)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "shift_ns": self.shift_ps / PS_PER_NS,
            "mu": self.mu,
            "sigma": self.sigma,
        }


LatencyDistribution = Union[DeterministicLatency, HistogramLatency, ShiftedLognormalLatency]


def default_stack_latency() -> ShiftedLognormalLatency:
    return ShiftedLognormalLatency(
        mu=math.log(DEFAULT_STACK_MEDIAN_NS - DEFAULT_STACK_SHIFT_NS),
        sigma=DEFAULT_STACK_SIGMA,
        shift_ps=int(DEFAULT_STACK_SHIFT_NS * PS_PER_NS),
    )


def load_histogram_file(path: Union[str, Path]) -> HistogramLatency:
    """
    Load a latency histogram from CSV rows "bin_start_ns,bin_end_ns,weight".

    Blank lines, '#' comments and a non-numeric header row are skipped.

    Raises:
        ConfigError: If the file is missing or malformed
    """
    edges: List[Tuple[int, int]] = []
    weights: List[float] = []
    try:
        with open(path, encoding="utf-8", newline="") as handle:
            for number, row in enumerate(csv.reader(handle), start=1):
                if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                    continue
                if len(row) != 3:
                    raise ConfigError(f"{path}:{number}: expected 3 columns, got {len(row)}")
                try:
                    start, end, weight = float(row[0]), float(row[1]), float(row[2])
                except ValueError:
                    if number == 1:
                        continue
                    raise ConfigError(f"{path}:{number}: non-numeric value in {row!r}")
                edges.append((int(round(start * PS_PER_NS)), int(round(end * PS_PER_NS))))
                weights.append(weight)
    except FileNotFoundError:
        raise ConfigError(f"Histogram file not found: {path}")
    try:
        return HistogramLatency(tuple(edges), tuple(weights))
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}")


def latency_from_config(data: Any, path: str, base_dir: Optional[Path] = None) -> LatencyDistribution:
    """
    Build a latency distribution from its scenario mapping.

    Accepted forms:
        {"kind": "deterministic", "value_ns": 800}
        {"kind": "histogram", "bins": [[1000, 1100, 1.0], ...]}
        {"kind": "histogram", "file": "latency.csv"}
        {"kind": "shifted_lognormal", "shift_ns": 600, "median_ns": 850, "sigma": 0.5}
        {"kind": "shifted_lognormal", "shift_ns": 600, "mu": 5.52, "sigma": 0.5}
    """
    if data is None:
        return default_stack_latency()
    section = ConfigSection(data, path)
    kind = section.get_str(
        "kind", choices=["deterministic", "histogram", "shifted_lognormal"], required=True
    )
    try:
        if kind == "deterministic":
            value = section.get_float("value_ns", minimum=0.0, required=True)
            dist: LatencyDistribution = DeterministicLatency(int(round(value * PS_PER_NS)))
        elif kind == "histogram":
            file_name = section.get_str("file")
            if file_name is not None:
                file_path = Path(file_name)
                if base_dir is not None and not file_path.is_absolute():
                    file_path = base_dir / file_path
                dist = load_histogram_file(file_path)
            else:
                bins = section.get_list("bins")
                dist = _histogram_from_rows(bins, f"{path}.bins")
        else:
            shift = section.get_float("shift_ns", DEFAULT_STACK_SHIFT_NS, minimum=0.0)
            sigma = section.get_float("sigma", DEFAULT_STACK_SIGMA, minimum=0.0)
            if section.has("mu"):
                mu = section.get_float("mu")
            else:
                median = section.get_float("median_ns", DEFAULT_STACK_MEDIAN_NS)
                if median <= shift:
                    raise ConfigError(f"{path}.median_ns: must exceed shift_ns")
                mu = math.log(median - shift)
            dist = ShiftedLognormalLatency(mu=mu, sigma=sigma, shift_ps=int(round(shift * PS_PER_NS)))
    except ConfigError as e:
        if str(e).startswith(path):
            raise
        raise ConfigError(f"{path}: {e}")
    section.finish()
    return dist


def _histogram_from_rows(rows: Sequence[Any], path: str) -> HistogramLatency:
    edges = []
    weights = []
    for index, row in enumerate(rows):
        if not isinstance(row, (list, tuple)) or len(row) != 3:
            raise ConfigError(f"{path}[{index}]: expected [bin_start_ns, bin_end_ns, weight]")
        start, end, weight = row
        edges.append((int(round(float(start) * PS_PER_NS)), int(round(float(end) * PS_PER_NS))))
        weights.append(float(weight))
    return HistogramLatency(tuple(edges), tuple(weights))


@dataclass(frozen=True)
class FixedSize:
    size: int

    kind = "fixed"

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ConfigError("fragment size must be >= 1 byte")

    def sample(self, rng: np.random.Generator) -> int:
        return self.size

    def mean(self) -> float:
        return float(self.size)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "bytes": self.size}


@dataclass(frozen=True)
class UniformSize:
    """Uniform integer size in [low, high], both ends included."""

    low: int
    high: int

    kind = "uniform"

    def __post_init__(self) -> None:
        if self.low < 1 or self.high < self.low:
            raise ConfigError("uniform fragment size needs 1 <= low <= high")

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.low, self.high, endpoint=True))

    def mean(self) -> float:
        return (self.low + self.high) / 2

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "low": self.low, "high": self.high}


@dataclass(frozen=True)
class LognormalSize:
    """LogNormal(mu, sigma) bytes, rounded and truncated to at least 1 byte."""

    mu: float
    sigma: float

    kind = "lognormal"

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ConfigError("lognormal sigma must be >= 0")

    @classmethod
    def with_mean(cls, mean: float, sigma: float) -> "LognormalSize":
        if mean < 1:
            raise ConfigError("lognormal mean must be >= 1 byte")
        return cls(mu=math.log(mean) - sigma * sigma / 2, sigma=sigma)

    def sample(self, rng: np.random.Generator) -> int:
        return max(1, int(round(rng.lognormal(self.mu, self.sigma))))

    def mean(self) -> float:
        return math.exp(self.mu + self.sigma * self.sigma / 2)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "mu": self.mu, "sigma": self.sigma}


FragmentSizeDistribution = Union[FixedSize, UniformSize, LognormalSize]


def fragment_size_from_config(data: Any, path: str) -> FragmentSizeDistribution:
    """
    Build a fragment-size distribution.

    Accepted forms:
        {"kind": "fixed", "bytes": 1048576}
        {"kind": "uniform", "low": 100000, "high": 200000}
        {"kind": "lognormal", "mean": 1048576, "sigma": 0.3}   (or "mu" instead of "mean")
    """
    if data is None:
        return FixedSize(1 << 20)
    section = ConfigSection(data, path)
    kind = section.get_str("kind", choices=["fixed", "uniform", "lognormal"], required=True)
    try:
        if kind == "fixed":
            dist: FragmentSizeDistribution = FixedSize(section.get_int("bytes", required=True))
        elif kind == "uniform":
            dist = UniformSize(
                section.get_int("low", required=True), section.get_int("high", required=True)
            )
        else:
            sigma = section.get_float("sigma", required=True, minimum=0.0)
            if section.has("mu"):
                dist = LognormalSize(mu=section.get_float("mu"), sigma=sigma)
            else:
                dist = LognormalSize.with_mean(section.get_float("mean", required=True), sigma)
    except ConfigError as e:
        if str(e).startswith(path):
            raise
        raise ConfigError(f"{path}: {e}")
    section.finish()
    return dist
