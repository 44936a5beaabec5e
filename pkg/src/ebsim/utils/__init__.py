"""Utility helpers for ebsim."""
