"""End-to-end causal inference pipeline: discovery, identification, targeted estimation, sensitivity."""

__version__ = "0.1.0"
