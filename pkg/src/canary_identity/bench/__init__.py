"""Experiment harness and statistics."""
