"""Joint image/mask synthesis with implicit neural representations and latent diffusion."""

__version__ = "0.1.0"
