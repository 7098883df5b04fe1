"""Action-reaction motion synthesis at desk scale.

Pipeline: unit-split VAE tokenizer -> masked reaction transformer with
actor-conditioned fusion and cross-unit modulation -> per-token diffusion
heads -> iterative cosine-schedule decoding, plus FID/accuracy/diversity
evaluation on a procedural synthetic dataset. Everything runs on the
from-scratch autodiff kernel in ``reactgen.tensor``.
"""

__version__ = "0.1.0"
