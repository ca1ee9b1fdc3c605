"""Weight-space autoencoder: fitted INR -> latent vector -> conditioned implicit field.

Each neuron of a fitted INR becomes one token row (incoming weights, bias,
layer one-hot). A pointwise MLP with batch norm embeds every row and a max
over rows gives the latent, so the encoding ignores row order. The decoder
is a sine field whose input is the coordinate concatenated with a linear
projection of the latent.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import InvalidArgumentError, NumericError
from .inr import HEADS, INRArch, JointField, binarize, case_targets, composite_grad, composite_loss
from .nncore import (BatchNorm, Linear, MaxPoolSet, ParamStore, ReLU, Sequential, adam_init, adam_step,
                     add_grads)
from .volgrid import check_coords, normalize_coords

log = logging.getLogger(__name__)


@dataclass
class WeightTokens:
    rows: np.ndarray
    arch: INRArch


def token_width(arch):
    n_layers = 1 + arch.hidden + len(HEADS)
    return max(arch.in_dim, arch.width) + 1 + n_layers


def layer_names(arch):
    return [f"inr.l{i}" for i in range(arch.hidden + 1)] + [f"inr.{h}" for h in HEADS]


def tokenize(params, arch=None):
    """One row per neuron: weights zero-padded to the widest fan-in, bias, layer one-hot."""
    if arch is not None and params.arch != arch:
        raise InvalidArgumentError(f"INR arch {params.arch} does not match {arch}")
    arch = params.arch
    names = layer_names(arch)
    max_in = max(arch.in_dim, arch.width)
    blocks = []
    for li, name in enumerate(names):
        W = params.store.params[f"{name}.W"]
        b = params.store.params[f"{name}.b"]
        block = np.zeros((W.shape[0], token_width(arch)), dtype=np.float32)
        block[:, : W.shape[1]] = W
        block[:, max_in] = b
        block[:, max_in + 1 + li] = 1.0
        blocks.append(block)
    return WeightTokens(np.concatenate(blocks), arch)


@dataclass(frozen=True)
class EncoderArch:
    widths: tuple = (512, 512, 512, 512)

    @property
    def latent(self):
        return self.widths[-1]


@dataclass(frozen=True)
class DecoderArch:
    latent: int = 512
    proj: int = 256
    width: int = 256
    sine_layers: int = 4
    omega0: float = 30.0


class Encoder:
    def __init__(self, in_width, arch):
        layers, prev = [], in_width
        for i, w in enumerate(arch.widths):
            layers += [Linear(f"enc.l{i}", prev, w), BatchNorm(f"enc.bn{i}", w), ReLU()]
            prev = w
        layers.append(MaxPoolSet())
        self.net = Sequential(layers)

    def init(self, rng, dtype=np.float32):
        return ParamStore(self.net.init(rng, dtype), self.net.buffers(dtype))

    def forward(self, store, rows):
        """``rows``: (..., R, token_width) -> (..., latent)."""
        return self.net.forward(store, rows)

    def backward(self, store, cache, dz):
        return self.net.backward(store, cache, dz)


class Decoder:
    def __init__(self, arch):
        self.arch = arch
        self.proj = Linear("dec.proj", arch.latent, arch.proj)
        self.field = JointField("dec", arch.proj + 3, arch.width, arch.sine_layers - 1, arch.omega0)

    def init(self, rng, dtype=np.float32):
        params = self.proj.init(rng, dtype)
        params.update(self.field.init(rng, dtype))
        # first sine layer: coordinate columns keep the usual 1/3 bound; latent columns start
        # small (phase shift well below one radian), otherwise training stalls
        W = params["dec.l0.W"]
        bound = 1.0 / (self.arch.proj * self.arch.omega0)
        W[:, : self.arch.proj] = rng.uniform(-bound, bound, size=(W.shape[0], self.arch.proj))
        W[:, self.arch.proj:] = rng.uniform(-1.0, 1.0, size=(W.shape[0], 3)) / 3.0
        return ParamStore(params)

    def forward(self, store, z, coords):
        """``z``: (B, latent); ``coords``: (B, K, 3) -> three (B, K) outputs."""
        p, pcache = self.proj.forward(store, z)
        B, K, _ = coords.shape
        x = np.concatenate([np.broadcast_to(p[:, None, :], (B, K, p.shape[-1])), coords], axis=-1)
        outs, fcache = self.field.forward(store, x)
        return outs, (pcache, fcache)

    def backward(self, store, cache, upstream):
        pcache, fcache = cache
        dx, grads = self.field.backward(store, fcache, upstream)
        dp = dx[..., : self.arch.proj].sum(axis=1)
        dz, pg = self.proj.backward(store, pcache, dp)
        add_grads(grads, pg)
        return dz, grads


@dataclass
class EmbedModel:
    inr_arch: INRArch
    enc_arch: EncoderArch
    dec_arch: DecoderArch
    enc: ParamStore
    dec: ParamStore
    latent_mean: np.ndarray = None
    latent_std: np.ndarray = None

    @property
    def encoder(self):
        return Encoder(token_width(self.inr_arch), self.enc_arch)

    @property
    def decoder(self):
        return Decoder(self.dec_arch)

    def standardize(self, z):
        return (z - self.latent_mean) / self.latent_std

    def destandardize(self, zs):
        return zs * self.latent_std + self.latent_mean


def init_embed(inr_arch, enc_arch, dec_arch, seed):
    if enc_arch.latent != dec_arch.latent:
        raise InvalidArgumentError("encoder output width must equal decoder latent width")
    rng = rngmod.stream(seed, "embed_init")
    enc = Encoder(token_width(inr_arch), enc_arch).init(rng)
    dec = Decoder(dec_arch).init(rng)
    return EmbedModel(inr_arch, enc_arch, dec_arch, enc, dec)


def encode(tokens, model, mode="eval"):
    """Latent vector(s) for one WeightTokens or a stacked (B, R, width) array."""
    rows = tokens.rows if isinstance(tokens, WeightTokens) else np.asarray(tokens)
    store = ParamStore(model.enc.params, model.enc.buffers, mode)
    z, _ = model.encoder.forward(store, rows.astype(np.float32))
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite latent")
    return z


def decode_query(z, coords, model):
    """``(intensity, p_myo, p_fib)`` of the field decoded from latent ``z`` at ``coords``."""
    coords = check_coords(coords).astype(np.float32)
    z = np.asarray(z, dtype=np.float32).reshape(1, -1)
    outs = [[], [], []]
    for start in range(0, len(coords), 32768):
        ys, _ = model.decoder.forward(model.dec, z, coords[None, start:start + 32768])
        for acc, y in zip(outs, ys):
            acc.append(y[0])
    return tuple(np.concatenate(o) for o in outs)


def decode_volume(z, model, dims, spacing=(1.0, 1.0, 1.0), threshold=0.5):
    outs = decode_query(z, normalize_coords(dims), model)
    return binarize(*outs, dims, spacing, threshold)


@dataclass
class EmbedConfig:
    steps: int = 2000
    cases_per_step: int = 8
    coords_per_case: int = 1024
    lr: float = 3e-4
    seed: int = 0
    enc_arch: EncoderArch = field(default_factory=EncoderArch)
    dec_arch: DecoderArch = field(default_factory=DecoderArch)


def autoencoder_loss(model, rows, coords, targets, enc_mode="train"):
    """Composite loss of decode(encode(rows)) on per-case coordinate batches, with grads.

    ``rows``: (B, R, width); ``coords``: (B, K, 3); ``targets``: three (B, K) arrays.
    """
    enc_store = ParamStore(model.enc.params, model.enc.buffers, enc_mode)
    z, ecache = model.encoder.forward(enc_store, rows)
    outs, dcache = model.decoder.forward(model.dec, z, coords)
    flat_pred = tuple(o.reshape(-1) for o in outs)
    flat_tgt = tuple(t.reshape(-1) for t in targets)
    loss = composite_loss(flat_pred, flat_tgt)
    upstream = tuple(g.reshape(outs[0].shape) for g in composite_grad(flat_pred, flat_tgt))
    dz, dgrads = model.decoder.backward(model.dec, dcache, upstream)
    _, egrads = model.encoder.backward(enc_store, ecache, dz)
    return loss, egrads, dgrads, enc_store.buffers


def _dice(a, b):
    s = int(a.sum()) + int(b.sum())
    return 1.0 if s == 0 else 2.0 * int((a & b).sum()) / s


def recalibrate_batchnorm(model, all_rows):
    """Replace running statistics with exact population statistics over ``all_rows``."""
    enc = model.encoder
    store = ParamStore(model.enc.params, dict(model.enc.buffers), "eval")
    x = all_rows.astype(np.float32)
    for layer in enc.net.layers:
        if isinstance(layer, BatchNorm):
            flat = x.reshape(-1, x.shape[-1]).astype(np.float64)
            store.buffers[f"{layer.name}.running_mean"] = flat.mean(axis=0).astype(np.float32)
            store.buffers[f"{layer.name}.running_var"] = flat.var(axis=0).astype(np.float32)
        if isinstance(layer, MaxPoolSet):
            break
        x, _ = layer.forward(store, x)
    model.enc = ParamStore(model.enc.params, store.buffers, "eval")


def train_autoencoder(inrs, cases, config):
    """Train encoder and decoder end to end against the cases' volumes and masks.

    Returns ``(EmbedModel, report)`` where the report holds the loss history and
    per-case decoded myocardium/fibrosis Dice and image PSNR (eval mode).
    """
    if len(inrs) < 2 or len(inrs) != len(cases):
        raise InvalidArgumentError("need >= 2 INRs, one per case")
    inr_arch = inrs[0].arch
    rows = np.stack([tokenize(p, inr_arch).rows for p in inrs])
    dims = cases[0][0].dims
    if any(v.dims != dims for v, _ in cases):
        raise InvalidArgumentError("all training cases must share one grid")
    coords = normalize_coords(dims).astype(np.float32)
    targets = [case_targets(v, m) for v, m in cases]
    model = init_embed(inr_arch, config.enc_arch, config.dec_arch, config.seed)
    rng = rngmod.stream(config.seed, "embed_batches")
    n_cases, n_vox = len(cases), len(coords)
    B = min(config.cases_per_step, n_cases)
    K = min(config.coords_per_case, n_vox)
    opt_e = adam_init(model.enc.params, lr=config.lr)
    opt_d = adam_init(model.dec.params, lr=config.lr)
    history = []
    for step in range(config.steps):
        pick = np.sort(rng.choice(n_cases, B, replace=False))
        vidx = np.stack([np.sort(rng.choice(n_vox, K, replace=False)) for _ in pick])
        tb = tuple(np.stack([targets[c][t][vidx[j]] for j, c in enumerate(pick)]) for t in range(3))
        loss, eg, dg, buffers = autoencoder_loss(model, rows[pick], coords[vidx], tb)
        if not np.isfinite(loss):
            raise NumericError("autoencoder diverged", step=step)
        history.append(loss)
        enc_params, opt_e = adam_step(model.enc.params, eg, opt_e)
        dec_params, opt_d = adam_step(model.dec.params, dg, opt_d)
        model.enc = ParamStore(enc_params, buffers, "train")
        model.dec = ParamStore(dec_params)
    recalibrate_batchnorm(model, rows)
    z = encode(rows, model)
    model.latent_mean = z.mean(axis=0).astype(np.float32)
    model.latent_std = np.maximum(z.std(axis=0), 1e-6).astype(np.float32)
    report = {"loss": history, "myo_dice": [], "fib_dice": [], "psnr": []}
    for zi, (vol, masks) in zip(z, cases):
        rv, rm = decode_volume(zi, model, dims)
        mse = float(np.mean((rv.data.astype(np.float64) - vol.data) ** 2))
        report["psnr"].append(99.0 if mse == 0 else min(99.0, 10 * np.log10(1.0 / mse)))
        report["myo_dice"].append(_dice(rm.myo, masks.myo))
        report["fib_dice"].append(_dice(rm.fib, masks.fib))
    log.info("autoencoder: median myo dice %.3f, median psnr %.2f",
             np.median(report["myo_dice"]), np.median(report["psnr"]))
    return model, report


def embed_to_arrays(model):
    a = dict(("enc/" + k, v) for k, v in model.enc.arrays().items())
    a.update(("dec/" + k, v) for k, v in model.dec.params.items())
    ia, ea, da = model.inr_arch, model.enc_arch, model.dec_arch
    a["meta.inr_arch"] = np.array([ia.in_dim, ia.width, ia.hidden, ia.omega0], np.float32)
    a["meta.enc_widths"] = np.array(ea.widths, np.float32)
    a["meta.dec_arch"] = np.array([da.latent, da.proj, da.width, da.sine_layers, da.omega0], np.float32)
    if model.latent_mean is not None:
        a["meta.latent_mean"] = model.latent_mean
        a["meta.latent_std"] = model.latent_std
    return a


def embed_from_arrays(arrays):
    i = arrays["meta.inr_arch"].tolist()
    d = arrays["meta.dec_arch"].tolist()
    inr_arch = INRArch(int(i[0]), int(i[1]), int(i[2]), float(i[3]))
    enc_arch = EncoderArch(tuple(int(w) for w in arrays["meta.enc_widths"]))
    dec_arch = DecoderArch(int(d[0]), int(d[1]), int(d[2]), int(d[3]), float(d[4]))
    enc_params, enc_buffers, dec_params = {}, {}, {}
    for k, v in arrays.items():
        if k.startswith("enc/"):
            name = k[4:]
            (enc_buffers if name.endswith(("running_mean", "running_var")) else enc_params)[name] = v
        elif k.startswith("dec/"):
            dec_params[k[4:]] = v
    return EmbedModel(inr_arch, enc_arch, dec_arch, ParamStore(enc_params, enc_buffers, "eval"),
                      ParamStore(dec_params), arrays.get("meta.latent_mean"), arrays.get("meta.latent_std"))
