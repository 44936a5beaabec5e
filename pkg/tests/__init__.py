"""Tests for config migrator."""
