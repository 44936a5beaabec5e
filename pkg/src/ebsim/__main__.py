"""
Main entry point for ebsim.

Usage: python -m ebsim <command> [options]
"""

from ebsim.cli.commands import cli


def main() -> None:
    """Main entry point for the ebsim CLI."""
    cli()


if __name__ == "__main__":
    main()
