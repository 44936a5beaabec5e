"""
Tests for CLI commands and user interface.
"""

import json
import shutil
from pathlib import Path

import pytest
from click.testing import CliRunner

from ebsim.cli.commands import cli

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


class TestCLICommands:
    """Each command against small scenarios in a temporary directory."""

    @pytest.fixture(autouse=True)
    def workspace(self, tmp_path):
        self.runner = CliRunner()
        self.tmp = tmp_path
        self.out = tmp_path / "out"

    def write_scenario(self, document, name="scenario.json"):
        path = self.tmp / name
        path.write_text(json.dumps(document))
        return path

    def invoke(self, *args):
        return self.runner.invoke(cli, [str(a) for a in args])

    def test_help_lists_commands(self):
        result = self.invoke("--help")

        assert result.exit_code == 0
        for name in ("run", "sweep", "estimate-buffer", "verify-routing"):
            assert name in result.output

    def test_run_writes_outputs(self):
        result = self.invoke("run", SCENARIO_DIR / "ping_direct.json", "--out", self.out)

        assert result.exit_code == 0, result.output
        assert "Run complete" in result.output
        for name in (
            "report.csv",
            "ports.csv",
            "events.csv",
            "goodput.dat",
            "latency_hist.dat",
            "summary.txt",
            "config.echo.json",
        ):
            assert (self.out / name).exists(), name

    def test_run_echo_has_overrides(self):
        result = self.invoke("run", SCENARIO_DIR / "ping_direct.json", "--out", self.out, "--seed", 77)

        assert result.exit_code == 0, result.output
        echo = json.loads((self.out / "config.echo.json").read_text())
        assert echo["run"]["seed"] == 77
        assert echo["name"] == "ping_direct"

    def test_run_same_seed_same_files(self):
        first = self.invoke("run", SCENARIO_DIR / "ping_direct.json", "--out", self.tmp / "a")
        second = self.invoke("run", SCENARIO_DIR / "ping_direct.json", "--out", self.tmp / "b")

        assert first.exit_code == second.exit_code == 0
        for name in ("report.csv", "ports.csv", "summary.txt"):
            assert (self.tmp / "a" / name).read_bytes() == (self.tmp / "b" / name).read_bytes()

    def test_run_log_file(self):
        log_file = self.tmp / "run.log"

        result = self.invoke("run", SCENARIO_DIR / "ping_direct.json", "--out", self.out, "-v", "--log-file", log_file)

        assert result.exit_code == 0, result.output
        assert "ping_direct finished" in log_file.read_text()

    def test_invalid_scenario_exits_2(self):
        path = self.write_scenario({"run": {"seeed": 1}})

        result = self.invoke("run", path, "--out", self.out)

        assert result.exit_code == 2
        assert "unknown key" in result.output

    def test_broken_topology_exits_3(self):
        (self.tmp / "broken.topo").write_text("HOST a 1 SWITCH s 0\n")
        path = self.write_scenario(
            {"topology": {"kind": "file", "file": "broken.topo"}, "routing": {"algorithm": "generic"}}
        )

        result = self.invoke("verify-routing", path, "--out", self.out)

        assert result.exit_code == 3
        assert "syntax error" in result.output

    def test_missing_config_file(self):
        result = self.invoke("run", self.tmp / "nope.json")

        assert result.exit_code == 2
        assert "does not exist" in result.output

    def test_sweep_matrix(self):
        path = self.write_scenario(
            {
                "name": "tiny_sweep",
                "topology": {"kind": "star", "num_hosts": 4},
                "traffic": {"kind": "daqpipe", "fragment_size": {"kind": "fixed", "bytes": 65536}},
                "run": {"duration_ms": 0.3, "warmup_ms": 0.1, "drain_ms": 1, "sample_interval_us": 50},
            }
        )

        result = self.invoke("sweep", path, "--credits", "1,2", "--parallel-sends", "1", "--out", self.out)

        assert result.exit_code == 0, result.output
        assert "Sweep complete" in result.output
        assert "Cells: 2 (0 failed)" in result.output
        lines = (self.out / "sweep.dat").read_text().splitlines()
        assert len(lines) == 3
        assert (self.out / "sweep.csv").exists()

    def test_sweep_bad_list(self):
        path = self.write_scenario({"traffic": {"kind": "daqpipe"}})

        result = self.invoke("sweep", path, "--credits", "1,x", "--out", self.out)

        assert result.exit_code == 2

    def test_sweep_needs_daqpipe(self):
        path = self.write_scenario({"topology": {"kind": "direct"}})

        result = self.invoke("sweep", path, "--credits", "1", "--parallel-sends", "1", "--out", self.out)

        assert result.exit_code == 2
        assert "daqpipe" in result.output

    def test_estimate_buffer_without_congestion(self):
        path = self.write_scenario(
            {
                "topology": {"kind": "star", "num_hosts": 3},
                "buffer_experiment": {"background": False, "max_burst_bytes": 16384},
            }
        )

        result = self.invoke("estimate-buffer", path, "--out", self.out)

        assert result.exit_code == 0, result.output
        assert "did not converge" in result.output
        assert "converged: no" in (self.out / "summary.txt").read_text()
        assert (self.out / "buffer_trials.csv").exists()

    def test_verify_routing_conflict_free(self):
        table = self.tmp / "table.txt"

        result = self.invoke("verify-routing", SCENARIO_DIR / "routing_2_4_2.json", "--out", self.out, "--write-table", table)

        assert result.exit_code == 0, result.output
        assert "0 conflicting links in all phases" in result.output
        lines = table.read_text().splitlines()
        assert all(line.startswith("SWITCH ") for line in lines)
        assert lines == sorted(lines)

    def test_written_table_verifies(self):
        table = self.tmp / "table.txt"
        self.invoke("verify-routing", SCENARIO_DIR / "routing_2_4_2.json", "--out", self.out, "--write-table", table)
        path = self.write_scenario(
            {
                "topology": {"kind": "fat_tree", "spines": 2, "leaves": 4, "hosts_per_leaf": 2},
                "routing": {"algorithm": "table", "table": str(table)},
            }
        )

        result = self.invoke("verify-routing", path, "--out", self.out)

        assert result.exit_code == 0, result.output
        assert "0 conflicting links" in result.output

    def test_verify_routing_conflicts(self):
        path = self.write_scenario({"topology": {"spines": 1, "leaves": 2, "hosts_per_leaf": 2}})

        relaxed = self.invoke("verify-routing", path, "--out", self.out)
        strict = self.invoke("verify-routing", path, "--out", self.out, "--strict")

        assert relaxed.exit_code == 0
        assert "4 conflicting link(s) in 1 phase(s)" in relaxed.output
        assert strict.exit_code == 5

    def test_scenario_copied_elsewhere(self):
        shutil.copy(SCENARIO_DIR / "routing_2_4_2.json", self.tmp / "copy.json")

        result = self.invoke("verify-routing", self.tmp / "copy.json", "--out", self.out)

        assert result.exit_code == 0, result.output
        assert (self.out / "config.echo.json").exists()

    def snapshot(self):
        return {path.name: path.read_bytes() for path in sorted(self.out.iterdir()) if path.is_file()}

    def assert_rerun_identical(self, *args):
        first = self.invoke(*args, "--out", self.out)
        assert first.exit_code == 0, first.output
        before = self.snapshot()

        second = self.invoke(*args, "--out", self.out)

        assert second.exit_code == 0, second.output
        assert self.snapshot() == before

    @pytest.mark.slow
    def test_shifter_run_reproduces_byte_identical_files(self):
        self.assert_rerun_identical("run", SCENARIO_DIR / "shifter_8_grace0.json")

    @pytest.mark.slow
    def test_buffer_estimate_reproduces_byte_identical_files(self):
        self.assert_rerun_identical("estimate-buffer", SCENARIO_DIR / "buffer_64k.json")

    @pytest.mark.slow
    def test_degraded_sweep_reproduces_byte_identical_files(self):
        self.assert_rerun_identical(
            "sweep",
            SCENARIO_DIR / "daqpipe_degraded_64.json",
            "--credits", "1,8",
            "--parallel-sends", "8",
            "--duration", 3,
            "--workers", 2,
        )
