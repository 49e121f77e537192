"""Experiment driver: configs, runs, sweeps, artifacts and the command line."""
