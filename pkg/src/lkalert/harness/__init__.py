"""Orchestration: synthetic fixtures, pipeline wiring, CLI, annotation service."""
