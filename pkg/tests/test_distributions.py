"""
Tests for latency and fragment-size distributions.
"""

import math
import os
import tempfile
from pathlib import Path

import numpy as np
import pytest

from ebsim.core.distributions import (
    DeterministicLatency,
    FixedSize,
    HistogramLatency,
    LognormalSize,
    ShiftedLognormalLatency,
    UniformSize,
    default_stack_latency,
    fragment_size_from_config,
    latency_from_config,
    load_histogram_file,
)
from ebsim.core.engine import derive_rng
from ebsim.core.errors import ConfigError


class TestLatencyDistributions:
    """Sampling and validation of stack latencies."""

    def setup_method(self):
        self.rng = derive_rng(123, "test")

    def test_deterministic(self):
        dist = DeterministicLatency(800_000)

        assert dist.sample(self.rng) == 800_000
        assert set(dist.sample_many(self.rng, 10).tolist()) == {800_000}
        assert dist.to_dict() == {"kind": "deterministic", "value_ns": 800.0}

    def test_negative_latency_rejected(self):
        with pytest.raises(ConfigError):
            DeterministicLatency(-1)

    def test_histogram_samples_stay_in_bins(self):
        dist = HistogramLatency(((1_000_000, 1_100_000), (2_000_000, 2_100_000)), (3.0, 1.0))

        draws = dist.sample_many(self.rng, 20_000)

        in_first = (draws >= 1_000_000) & (draws < 1_100_000)
        in_second = (draws >= 2_000_000) & (draws < 2_100_000)
        assert np.all(in_first | in_second)
        assert abs(in_first.mean() - 0.75) < 0.02

    @pytest.mark.slow
    def test_histogram_frequencies_within_one_percent(self):
        edges = ((600_000, 700_000), (700_000, 900_000), (900_000, 1_000_000), (1_500_000, 3_000_000))
        dist = HistogramLatency(edges, (1.0, 2.0, 3.0, 4.0))

        draws = dist.sample_many(self.rng, 1_000_000)

        for (start, end), expected in zip(edges, dist.probabilities):
            inside = (draws >= start) & (draws < end)
            assert abs(inside.mean() / expected - 1) < 0.01
            # uniform inside the bin: the lower half holds half of the bin's draws
            lower = inside & (draws < (start + end) // 2)
            assert abs(lower.sum() / inside.sum() - 0.5) < 0.01

    def test_histogram_single_sample_in_range(self):
        dist = HistogramLatency(((500, 600),), (1.0,))

        for _ in range(50):
            assert 500 <= dist.sample(self.rng) < 600

    @pytest.mark.parametrize(
        "edges,weights",
        [
            ((), ()),
            (((10, 10),), (1.0,)),
            (((0, 10), (5, 20)), (1.0, 1.0)),
            (((0, 10),), (-1.0,)),
            (((0, 10),), (0.0,)),
            (((0, 10),), (1.0, 2.0)),
        ],
    )
    def test_invalid_histograms(self, edges, weights):
        with pytest.raises(ConfigError):
            HistogramLatency(edges, weights)

    def test_shifted_lognormal_floor_and_median(self):
        dist = ShiftedLognormalLatency(mu=math.log(250.0), sigma=0.5, shift_ps=600_000)

        draws = dist.sample_many(self.rng, 50_000)

        assert draws.min() >= 600_000
        assert abs(np.median(draws) - 850_000) < 10_000

    def test_default_stack_latency(self):
        dist = default_stack_latency()

        assert dist.shift_ps == 600_000
        assert dist.sigma == 0.5


class TestLatencyFromConfig:
    """Scenario mappings for latency distributions."""

    def test_missing_returns_default(self):
        assert latency_from_config(None, "host.stack_latency") == default_stack_latency()

    def test_deterministic_mapping(self):
        dist = latency_from_config({"kind": "deterministic", "value_ns": 800}, "host.stack_latency")

        assert dist == DeterministicLatency(800_000)

    def test_histogram_bins(self):
        dist = latency_from_config(
            {"kind": "histogram", "bins": [[1000, 1100, 1.0], [1100, 1200, 3.0]]}, "h"
        )

        assert dist.edges_ps == ((1_000_000, 1_100_000), (1_100_000, 1_200_000))
        assert np.allclose(dist.probabilities, [0.25, 0.75])

    def test_lognormal_by_median(self):
        dist = latency_from_config(
            {"kind": "shifted_lognormal", "shift_ns": 600, "median_ns": 850, "sigma": 0.4}, "h"
        )

        assert dist.mu == pytest.approx(math.log(250.0))

    def test_median_below_shift_rejected(self):
        with pytest.raises(ConfigError, match="median_ns"):
            latency_from_config({"kind": "shifted_lognormal", "shift_ns": 600, "median_ns": 500}, "h")

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            latency_from_config({"kind": "deterministic", "value_ns": 1, "jitter": 2}, "host.stack_latency")

    def test_invalid_kind_rejected(self):
        with pytest.raises(ConfigError):
            latency_from_config({"kind": "gaussian"}, "host.stack_latency")


class TestHistogramFile:
    """Latency histograms loaded from CSV."""

    def setup_method(self):
        self.temp_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.temp_dir, "latency.csv")

    def write(self, text):
        with open(self.path, "w") as f:
            f.write(text)

    def test_load_with_header_and_comments(self):
        self.write("bin_start_ns,bin_end_ns,weight\n# measured\n900,1000,2\n1000,1100,1\n")

        dist = load_histogram_file(self.path)

        assert dist.edges_ps == ((900_000, 1_000_000), (1_000_000, 1_100_000))
        assert dist.weights == (2.0, 1.0)

    def test_relative_file_resolved_against_base_dir(self):
        self.write("100,200,1\n")

        dist = latency_from_config({"kind": "histogram", "file": "latency.csv"}, "h", base_dir=Path(self.temp_dir))

        assert dist.edges_ps == ((100_000, 200_000),)

    def test_wrong_column_count(self):
        self.write("100,200\n")

        with pytest.raises(ConfigError, match="expected 3 columns"):
            load_histogram_file(self.path)

    def test_non_numeric_row_after_header(self):
        self.write("100,200,1\n100,abc,1\n")

        with pytest.raises(ConfigError, match="non-numeric"):
            load_histogram_file(self.path)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_histogram_file(os.path.join(self.temp_dir, "nope.csv"))


class TestFragmentSizes:
    """Fragment-size distributions."""

    def setup_method(self):
        self.rng = derive_rng(9, "fragments")

    def test_fixed(self):
        dist = FixedSize(1 << 20)

        assert dist.sample(self.rng) == 1 << 20
        assert dist.mean() == float(1 << 20)

    def test_uniform_inclusive_bounds(self):
        dist = UniformSize(10, 12)

        draws = {dist.sample(self.rng) for _ in range(200)}

        assert draws == {10, 11, 12}

    def test_lognormal_with_mean(self):
        dist = LognormalSize.with_mean(100_000, 0.3)

        draws = [dist.sample(self.rng) for _ in range(20_000)]

        assert dist.mean() == pytest.approx(100_000)
        assert abs(np.mean(draws) / 100_000 - 1) < 0.02
        assert min(draws) >= 1

    def test_invalid_sizes(self):
        with pytest.raises(ConfigError):
            FixedSize(0)
        with pytest.raises(ConfigError):
            UniformSize(5, 4)
        with pytest.raises(ConfigError):
            LognormalSize.with_mean(0.5, 0.1)

    def test_from_config(self):
        assert fragment_size_from_config(None, "f") == FixedSize(1 << 20)
        assert fragment_size_from_config({"kind": "fixed", "bytes": 4096}, "f") == FixedSize(4096)
        assert fragment_size_from_config({"kind": "uniform", "low": 1, "high": 9}, "f") == UniformSize(1, 9)
        lognormal = fragment_size_from_config({"kind": "lognormal", "mean": 1000, "sigma": 0.2}, "f")
        assert lognormal.mean() == pytest.approx(1000)

    def test_from_config_errors_carry_path(self):
        with pytest.raises(ConfigError, match="traffic.fragment_size"):
            fragment_size_from_config({"kind": "fixed", "bytes": 0}, "traffic.fragment_size")
