"""Procedural short-axis LGE phantoms with myocardium and fibrosis masks.

Each slice holds a bright blood pool inside a darker myocardial annulus.
Fibrosis is a handful of ellipsoidal blobs (spheres in millimetres) clipped to
the myocardium and rendered hyperenhanced.
"""
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .errors import InvalidArgumentError
from .volgrid import MaskSet, Volume

REFERENCE_WIDTH = 64


@dataclass(frozen=True)
class PhantomParams:
    dims: tuple = (64, 64, 10)
    spacing: tuple = (1.7, 1.7, 9.0)
    center_drift: float = 2.0
    inner_radius: tuple = (8.0, 12.0)
    wall_thickness: tuple = (4.0, 7.0)
    apical_taper: float = 0.25
    blob_count: tuple = (0, 4)
    blob_radius: tuple = (4.0, 8.0)
    background: float = 0.15
    remote_myo: float = 0.30
    blood_pool: float = 0.75
    fibrosis: float = 0.85
    noise_sigma: float = 0.02
    seed: int = 0

    @classmethod
    def for_dims(cls, dims, **overrides):
        """Defaults with in-plane geometry rescaled from the 64-voxel reference."""
        dx, dy, dz = (int(d) for d in dims)
        s = min(dx, dy) / REFERENCE_WIDTH
        base = cls()
        params = cls(
            dims=(dx, dy, dz),
            spacing=(base.spacing[0] / s, base.spacing[1] / s, base.spacing[2]),
            center_drift=base.center_drift * s,
            inner_radius=tuple(max(2.0, r * s) for r in base.inner_radius),
            wall_thickness=tuple(max(2.0, w * s) for w in base.wall_thickness),
            blob_radius=tuple(max(1.0, r * s) for r in base.blob_radius),
        )
        return replace(params, **overrides)

    def validate(self):
        dx, dy, dz = self.dims
        if min(self.dims) < 1:
            raise InvalidArgumentError(f"dims must be positive, got {self.dims}")
        for name in ("inner_radius", "wall_thickness", "blob_count", "blob_radius"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise InvalidArgumentError(f"{name} must be an ordered non-negative range, got {(lo, hi)}")
        if self.inner_radius[1] + self.wall_thickness[1] >= min(dx, dy) / 2:
            raise InvalidArgumentError("inner radius + max wall thickness must be < min(Dx, Dy)/2")
        levels = (self.background, self.remote_myo, self.blood_pool, self.fibrosis)
        if any(not 0.0 <= v <= 1.0 for v in levels):
            raise InvalidArgumentError("intensity levels must lie in [0, 1]")
        if not self.fibrosis > self.remote_myo:
            raise InvalidArgumentError("fibrosis must be brighter than remote myocardium")
        if self.noise_sigma < 0 or self.center_drift < 0:
            raise InvalidArgumentError("noise_sigma and center_drift must be non-negative")
        if not 0 <= self.apical_taper < 1:
            raise InvalidArgumentError("apical_taper must be in [0, 1)")


def _centers(params, rng, outer):
    dx, dy, dz = params.dims
    limit = max(0.0, min(dx, dy) / 2 - outer - 1.5)
    offset = rng.uniform(-0.5, 0.5, size=2) * min(limit, 1.0)
    out = np.empty((dz, 2))
    for k in range(dz):
        if k:
            offset = np.clip(offset + rng.uniform(-params.center_drift, params.center_drift, size=2), -limit, limit)
        out[k] = ((dx - 1) / 2 + offset[0], (dy - 1) / 2 + offset[1])
    return out


def render_levels(params, blood, myo, fib):
    img = np.full(myo.shape, params.background)
    img[blood] = params.blood_pool
    img[myo.astype(bool)] = params.remote_myo
    img[fib.astype(bool)] = params.fibrosis
    return img


def generate_phantom(params):
    """Return ``(Volume, MaskSet)`` for one phantom; deterministic in ``params``."""
    params.validate()
    rng = np.random.default_rng(params.seed)
    dx, dy, dz = params.dims
    inner = rng.uniform(*params.inner_radius)
    wall = rng.uniform(*params.wall_thickness)
    centers = _centers(params, rng, inner + wall)

    yy, xx = np.mgrid[0:dy, 0:dx]
    myo = np.zeros((dz, dy, dx), dtype=np.uint8)
    blood = np.zeros((dz, dy, dx), dtype=bool)
    for k in range(dz):
        frac = k / (dz - 1) if dz > 1 else 0.0
        r_in = max(2.0, inner * (1.0 - params.apical_taper * frac))
        r = np.hypot(xx - centers[k, 0], yy - centers[k, 1])
        blood[k] = r < r_in
        myo[k] = (r >= r_in) & (r < r_in + wall)

    fib = np.zeros_like(myo)
    n_blobs = int(rng.integers(params.blob_count[0], params.blob_count[1] + 1))
    sites = np.argwhere(myo)
    zz3, yy3, xx3 = np.mgrid[0:dz, 0:dy, 0:dx]
    z_scale = params.spacing[2] / params.spacing[0]
    for _ in range(n_blobs):
        bz, by, bx = sites[rng.integers(len(sites))]
        radius = rng.uniform(*params.blob_radius)
        d2 = (xx3 - bx) ** 2 + (yy3 - by) ** 2 + ((zz3 - bz) * z_scale) ** 2
        fib |= (d2 <= radius**2).astype(np.uint8)
    fib &= myo

    img = render_levels(params, blood, myo, fib)
    img = np.clip(img + rng.normal(0.0, params.noise_sigma, size=img.shape), 0.0, 1.0)
    volume = Volume(img.astype(np.float32), params.spacing)
    return volume, MaskSet(myo, fib, params.spacing)


def cohort_params(n, base_params, seed, split="train"):
    if n < 1:
        raise InvalidArgumentError(f"cohort size must be >= 1, got {n}")
    out = []
    for i in range(n):
        case_seed = int(rngmod.stream(seed, "phantom", split, i).integers(2**63))
        out.append(replace(base_params, seed=case_seed))
    return out


def generate_cohort(n, base_params, seed, split="train"):
    """``n`` phantoms whose seeds come from the ``(seed, split, i)`` stream."""
    return [generate_phantom(p) for p in cohort_params(n, base_params, seed, split)]
