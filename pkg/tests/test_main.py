"""
Tests for main entry point.
"""

import inspect
from unittest.mock import patch

import pytest
from click import Abort

from ebsim.__main__ import main


class TestMainEntryPoint:
    """The module entry point delegates to the click group."""

    @patch("ebsim.__main__.cli")
    def test_main_calls_cli(self, mock_cli):
        main()

        mock_cli.assert_called_once_with()

    @patch("ebsim.__main__.cli")
    def test_main_propagates_abort(self, mock_cli):
        mock_cli.side_effect = Abort()

        with pytest.raises(Abort):
            main()

    def test_main_takes_no_arguments(self):
        assert len(inspect.signature(main).parameters) == 0
        assert "Main entry point" in main.__doc__

    def test_cli_group_lists_commands(self):
        from ebsim.cli.commands import cli

        assert set(cli.commands) == {"run", "sweep", "estimate-buffer", "verify-routing"}
