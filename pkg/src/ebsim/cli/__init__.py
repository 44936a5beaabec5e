"""Command-line interface for ebsim."""
