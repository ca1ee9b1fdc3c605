"""Denoising diffusion over latent vectors.

Forward noising ``z_t = sqrt(1 - b_t) z_{t-1} + sqrt(b_t) eps`` and the reverse
update ``z_{t-1} = (z_t - sqrt(b_t) eps_hat) / sqrt(1 - b_t)``, optionally
followed by ancestral noise ``sqrt(b_t) n`` for t > 1. Timesteps are 1-based.
A ``posterior`` form swaps the ``sqrt(b_t)`` weight for the one that matches
a predictor trained on cumulative noise; see ``reverse_coefficient``.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import InvalidArgumentError, NumericError
from .nncore import Linear, ParamStore, ReLU, Sequential, adam_init, adam_step, mse

log = logging.getLogger(__name__)


@dataclass
class DiffusionSchedule:
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.beta.ndim != 1 or len(self.beta) < 1:
            raise InvalidArgumentError("beta must be a non-empty 1D array")
        if np.any(self.beta < 0) or np.any(self.beta >= 1):
            raise InvalidArgumentError("every beta must lie in [0, 1)")
        self.alpha = 1.0 - self.beta
        self.alpha_bar = np.cumprod(self.alpha)

    @property
    def T(self):
        return len(self.beta)

    def check_t(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise InvalidArgumentError(f"timestep must be in [1, {self.T}]")
        return t

    def beta_at(self, t):
        return self.beta[self.check_t(t) - 1]

    def alpha_bar_at(self, t):
        return self.alpha_bar[self.check_t(t) - 1]


def make_schedule(T=1000, beta_start=1e-4, beta_end=0.02):
    """Linear beta schedule from ``beta_start`` (t=1) to ``beta_end`` (t=T)."""
    if T < 1:
        raise InvalidArgumentError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidArgumentError("need 0 < beta_start <= beta_end < 1")
    if T == 1:
        return DiffusionSchedule(np.array([beta_start]))
    t = np.arange(1, T + 1)
    return DiffusionSchedule(beta_start + (t - 1) / (T - 1) * (beta_end - beta_start))


def _col(v, like):
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (np.ndim(like) - v.ndim)) if v.ndim else v


def q_sample_step(z_prev, t, eps, schedule):
    z_prev, eps = np.asarray(z_prev), np.asarray(eps)
    if z_prev.shape != eps.shape:
        raise InvalidArgumentError(f"noise shape {eps.shape} differs from latent shape {z_prev.shape}")
    b = _col(schedule.beta_at(t), z_prev)
    return np.sqrt(1.0 - b) * z_prev + np.sqrt(b) * eps


def q_sample(z0, t, eps, schedule):
    """Closed-form ``z_t`` given ``z0``; ``t`` may be a scalar or one per leading row."""
    z0, eps = np.asarray(z0), np.asarray(eps)
    if z0.shape != eps.shape:
        raise InvalidArgumentError(f"noise shape {eps.shape} differs from latent shape {z0.shape}")
    ab = _col(schedule.alpha_bar_at(t), z0)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def timestep_embedding(t, dim=128):
    """Sinusoidal embedding: ``[sin(t f_i), cos(t f_i)]`` with geometric ``f_i``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    arg = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


@dataclass(frozen=True)
class DenoiserArch:
    latent: int = 512
    temb: int = 128
    hidden: tuple = (1024, 1024, 1024, 1024)


class Denoiser:
    def __init__(self, arch):
        self.arch = arch
        layers, prev = [], arch.latent + arch.temb
        for i, w in enumerate(arch.hidden):
            layers += [Linear(f"den.l{i}", prev, w), ReLU()]
            prev = w
        layers.append(Linear("den.out", prev, arch.latent))
        self.net = Sequential(layers)

    def init(self, rng, dtype=np.float32):
        params = self.net.init(rng, dtype)
        # zero output layer: the untrained model predicts eps_hat = 0
        params["den.out.W"][:] = 0
        return ParamStore(params)

    def forward(self, store, z_t, t):
        emb = timestep_embedding(t, self.arch.temb).astype(z_t.dtype)
        return self.net.forward(store, np.concatenate([z_t, emb], axis=1))

    def backward(self, store, cache, d_eps):
        return self.net.backward(store, cache, d_eps)


@dataclass
class DenoiserModel:
    arch: DenoiserArch
    store: ParamStore

    @property
    def net(self):
        return Denoiser(self.arch)

    def predict(self, z_t, t):
        z_t = np.atleast_2d(np.asarray(z_t, dtype=np.float32))
        t = np.broadcast_to(np.asarray(t), (len(z_t),))
        eps, _ = self.net.forward(self.store, z_t, t)
        return eps


@dataclass
class DenoiserConfig:
    steps: int = 4000
    batch: int = 64
    lr: float = 1e-3
    seed: int = 0
    arch: DenoiserArch = field(default_factory=DenoiserArch)


def denoiser_loss(model, z0, t, eps, schedule):
    """Mean squared error between ``eps`` and the prediction at ``q_sample(z0, t, eps)``."""
    z_t = q_sample(z0, t, eps, schedule).astype(model.store.params["den.out.W"].dtype)
    pred, cache = model.net.forward(model.store, z_t, t)
    loss, dpred = mse(pred, eps.astype(pred.dtype))
    _, grads = model.net.backward(model.store, cache, dpred)
    return loss, grads


def train_denoiser(latents, schedule, config):
    """Fit the noise predictor on standardized latents; returns ``(DenoiserModel, loss history)``."""
    latents = np.asarray(latents, dtype=np.float32)
    if latents.ndim != 2 or len(latents) < 2:
        raise InvalidArgumentError("need at least 2 latent vectors")
    if latents.shape[1] != config.arch.latent:
        raise InvalidArgumentError(f"latent width {latents.shape[1]} != arch width {config.arch.latent}")
    model = DenoiserModel(config.arch, Denoiser(config.arch).init(rngmod.stream(config.seed, "denoiser_init")))
    rng = rngmod.stream(config.seed, "denoiser_batches")
    opt = adam_init(model.store.params, lr=config.lr)
    history = []
    for step in range(config.steps):
        idx = rng.integers(0, len(latents), size=config.batch)
        t = rng.integers(1, schedule.T + 1, size=config.batch)
        eps = rng.standard_normal((config.batch, latents.shape[1])).astype(np.float32)
        loss, grads = denoiser_loss(model, latents[idx], t, eps, schedule)
        if not np.isfinite(loss):
            raise NumericError("denoiser training diverged", step=step)
        history.append(loss)
        params, opt = adam_step(model.store.params, grads, opt)
        model = DenoiserModel(model.arch, ParamStore(params))
    log.info("denoiser: loss %.4f -> %.4f", history[0], history[-1])
    return model, history


REVERSE_FORMS = ("literal", "posterior")


def reverse_coefficient(schedule, t, form="literal"):
    """Weight on ``eps_hat`` in the reverse mean.

    ``literal`` is ``sqrt(b_t)``. ``posterior`` is ``b_t / sqrt(1 - alpha_bar_t)``, the
    weight that matches a predictor trained on the cumulative noise of ``q_sample``.
    Both agree at t = 1.
    """
    if form not in REVERSE_FORMS:
        raise InvalidArgumentError(f"reverse form must be one of {REVERSE_FORMS}")
    b = schedule.beta[t - 1]
    if form == "literal":
        return math.sqrt(b)
    rest = 1.0 - schedule.alpha_bar[t - 1]
    return b / math.sqrt(rest) if rest > 0 else 0.0


def reverse_step(z_t, t, model, schedule, noise=None, form="literal"):
    """One reverse update; ``model`` is a DenoiserModel or a callable ``(z_t, t) -> eps_hat``."""
    t = int(schedule.check_t(t))
    b = schedule.beta[t - 1]
    coef = reverse_coefficient(schedule, t, form)
    eps_hat = model.predict(z_t, t) if isinstance(model, DenoiserModel) else model(z_t, t)
    eps_hat = np.asarray(eps_hat, dtype=np.float64).reshape(np.shape(z_t))
    z = (np.asarray(z_t, dtype=np.float64) - coef * eps_hat) / math.sqrt(1.0 - b)
    if t > 1 and noise is not None:
        z = z + math.sqrt(b) * np.asarray(noise, dtype=np.float64)
    return z


def sample_latent(model, schedule, seed, n=1, sampler_noise=True, width=None, form="literal"):
    """Ancestral sampling from ``z_T ~ N(0, I)`` down to ``z_0``; returns (n, width).

    Sample ``i`` draws all of its noise from its own ``(seed, i)`` stream.
    """
    width = width or model.arch.latent
    rngs = [rngmod.stream(seed, "sample", i) for i in range(n)]
    z = np.stack([r.standard_normal(width) for r in rngs])
    for t in range(schedule.T, 0, -1):
        noise = np.stack([r.standard_normal(width) for r in rngs]) if (sampler_noise and t > 1) else None
        z = reverse_step(z, t, model, schedule, noise, form)
        if not np.all(np.isfinite(z)):
            raise NumericError("non-finite latent during sampling", step=t)
    return z


def denoiser_to_arrays(model, schedule=None):
    a = dict(model.store.params)
    a["meta.denoiser"] = np.array([model.arch.latent, model.arch.temb, *model.arch.hidden], np.float32)
    if schedule is not None:
        a["meta.beta"] = schedule.beta.astype(np.float32)
    return a


def denoiser_from_arrays(arrays):
    meta = [int(v) for v in arrays["meta.denoiser"].tolist()]
    arch = DenoiserArch(meta[0], meta[1], tuple(meta[2:]))
    params = {k: v for k, v in arrays.items() if not k.startswith("meta.")}
    schedule = DiffusionSchedule(arrays["meta.beta"].astype(np.float64)) if "meta.beta" in arrays else None
    return DenoiserModel(arch, ParamStore(params)), schedule
