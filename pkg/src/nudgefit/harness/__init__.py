"""Experiment configuration, runs, sweeps, records and the command line."""
