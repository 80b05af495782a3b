"""Surgical post-training toolkit: data rectification, reference-tethered
preference objectives, and a Connect4 out-of-domain benchmark, all on an
exactly differentiable toy policy."""

__version__ = "0.1.0"
