"""Diffusion-generated latent queries for controllable cross-modal retrieval.

Train a conditional denoiser over precomputed latent-embedding sequences,
generate text-conditioned queries directly in the audio latent space,
retrieve nearest keys by cosine, and steer results with negative prompting
or deterministic inversion editing. Everything is verifiable on synthetic
corpora with a known ground-truth attribute grid.
"""

from . import alignmetrics, denoiser, diffusion, experiments, latentdata, numerics, retrieval

__all__ = [
    "alignmetrics",
    "denoiser",
    "diffusion",
    "experiments",
    "latentdata",
    "numerics",
    "retrieval",
]

__version__ = "0.1.0"
