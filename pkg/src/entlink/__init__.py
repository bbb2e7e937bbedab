"""Entangled-link protocol: a four-phase, atomically confirmed point-to-point transfer."""

__version__ = "0.1.0"
