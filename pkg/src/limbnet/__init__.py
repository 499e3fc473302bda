"""Attention-based 1-D CNN for lower-limb activity recognition from 4-channel sEMG."""

__version__ = "0.1.0"
