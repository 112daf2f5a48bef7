"""Streaming benchmark harness: synthetic video, FLOPs model, metrics, sweeps, CLI."""
