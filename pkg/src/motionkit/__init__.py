"""Pose-sequence augmentation, diffusion numerics, query cross-attention and
image metrics for pose-guided character animation experiments."""

__version__ = "0.1.0"
