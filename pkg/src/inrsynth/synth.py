"""End-to-end sampling of synthetic image/mask volumes from the latent prior."""
import os
from functools import partial

import numpy as np

from .diffusion import sample_latent
from .embed import decode_volume
from .errors import InvalidArgumentError, StageError
from .parallel import pmap
from .manifest import write_cases


def _decode_one(model, dims, spacing, z):
    return decode_volume(z, model, dims, spacing)


def synthesize(n, embed_model, denoiser, schedule, dims, seed, spacing=(1.0, 1.0, 1.0), scale=1,
               sampler_noise=True, jobs=1, form="literal"):
    """Draw ``n`` latents, decode each on the grid and post-process the masks.

    ``scale`` multiplies the in-plane resolution; returns ``(samples, latents)``
    with latents in the autoencoder's (de-standardized) units.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if scale < 1:
        raise InvalidArgumentError("scale must be >= 1")
    dx, dy, dz = dims
    grid = (dx * scale, dy * scale, dz)
    spacing = (spacing[0] / scale, spacing[1] / scale, spacing[2])
    try:
        zs = sample_latent(denoiser, schedule, seed, n=n, sampler_noise=sampler_noise, form=form)
    except Exception as exc:
        raise StageError("sample_latent", None, exc) from exc
    latents = embed_model.destandardize(zs).astype(np.float32)
    decode = partial(_decode_one, embed_model, grid, spacing)
    try:
        samples = pmap(decode, list(latents), jobs)
    except Exception as exc:
        # locate the failing sample serially for the error message
        for i, z in enumerate(latents):
            try:
                decode(z)
            except Exception as inner:
                raise StageError("decode", i, inner) from inner
        raise StageError("decode", None, exc) from exc
    return samples, latents


def write_synthetic(out_dir, samples, latents, prefix="syn"):
    """Write VOL1 triples, ``latents.csv`` and the manifest; return the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    ids = [f"{prefix}{i:04d}" for i in range(len(samples))]
    with open(os.path.join(out_dir, "latents.csv"), "w") as fh:
        for cid, z in zip(ids, latents):
            fh.write(cid + "," + ",".join(repr(float(v)) for v in z) + "\n")
    return write_cases(out_dir, samples, ids, extra=[("latents.csv",)] * len(ids))
