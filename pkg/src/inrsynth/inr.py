"""Joint image/mask implicit neural representation.

A sine-activated trunk maps ``(x, y, z)`` to a shared feature vector; three
single-layer heads read it: a linear intensity head and two sigmoid heads
for the myocardium and fibrosis probabilities.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import InvalidArgumentError, NumericError
from .nncore import Linear, ParamStore, Sequential, Sigmoid, Sine, adam_init, adam_step, add_grads, bce, bce_grad
from .volgrid import MaskSet, Volume, check_coords, normalize_coords

log = logging.getLogger(__name__)

HEADS = ("img", "myo", "fib")
QUERY_CHUNK = 65536


@dataclass(frozen=True)
class INRArch:
    in_dim: int = 3
    width: int = 256
    hidden: int = 4
    omega0: float = 30.0

    def n_params(self):
        w = self.width
        return (self.in_dim * w + w) + self.hidden * (w * w + w) + 3 * (w + 1)

    def layer_widths(self):
        """(fan_in, fan_out) of every trunk layer followed by the three heads."""
        dims = [(self.in_dim, self.width)] + [(self.width, self.width)] * self.hidden
        return dims + [(self.width, 1)] * 3


class JointField:
    """Shared sine trunk plus image/myo/fib heads."""

    def __init__(self, prefix, in_dim, width, hidden, omega0=30.0):
        layers = [Sine(f"{prefix}.l0", in_dim, width, omega0, first=True)]
        layers += [Sine(f"{prefix}.l{i + 1}", width, width, omega0) for i in range(hidden)]
        self.trunk = Sequential(layers)
        self.heads = {
            "img": Linear(f"{prefix}.img", width, 1, init="siren", omega0=omega0),
            "myo": Sequential([Linear(f"{prefix}.myo", width, 1, init="siren", omega0=omega0), Sigmoid()]),
            "fib": Sequential([Linear(f"{prefix}.fib", width, 1, init="siren", omega0=omega0), Sigmoid()]),
        }

    def init(self, rng, dtype=np.float32):
        params = self.trunk.init(rng, dtype)
        for h in HEADS:
            params.update(self.heads[h].init(rng, dtype))
        return params

    def forward(self, store, x):
        feat, tcache = self.trunk.forward(store, x)
        outs, hcaches = [], {}
        for h in HEADS:
            y, hcaches[h] = self.heads[h].forward(store, feat)
            outs.append(y[..., 0])
        return tuple(outs), (tcache, hcaches)

    def backward(self, store, cache, upstream):
        tcache, hcaches = cache
        grads, dfeat = {}, None
        for h, g in zip(HEADS, upstream):
            d, hg = self.heads[h].backward(store, hcaches[h], g[..., None])
            add_grads(grads, hg)
            dfeat = d if dfeat is None else dfeat + d
        dx, tg = self.trunk.backward(store, tcache, dfeat)
        add_grads(grads, tg)
        return dx, grads


@dataclass
class INRParams:
    arch: INRArch
    store: ParamStore

    @property
    def net(self):
        return JointField("inr", self.arch.in_dim, self.arch.width, self.arch.hidden, self.arch.omega0)


@dataclass
class FitConfig:
    steps: int = 2000
    batch: int = 16384
    lr: float = 1e-4
    seed: int = 0
    psnr_target: float = None


@dataclass
class FitHistory:
    loss: list = field(default_factory=list)
    psnr: list = field(default_factory=list)

    def rows(self):
        return [(i, l, p) for i, (l, p) in enumerate(zip(self.loss, self.psnr))]


def inr_init(arch, seed):
    net = JointField("inr", arch.in_dim, arch.width, arch.hidden, arch.omega0)
    return INRParams(arch, ParamStore(net.init(rngmod.stream(seed, "inr_init"))))


def inr_query(params, coords):
    """Evaluate ``(intensity, p_myo, p_fib)`` at each coordinate row."""
    coords = check_coords(coords).astype(np.float32)
    net = params.net
    outs = [[], [], []]
    for start in range(0, len(coords), QUERY_CHUNK):
        ys, _ = net.forward(params.store, coords[start:start + QUERY_CHUNK])
        for acc, y in zip(outs, ys):
            acc.append(y)
    return tuple(np.concatenate(o) if o else np.zeros(0, np.float32) for o in outs)


def _check_binary(name, y):
    if not np.isin(y, (0, 1)).all():
        raise InvalidArgumentError(f"{name} target must be binary")


def composite_terms(pred, target):
    """Per-term means of the joint loss: (|I - I_hat|, BCE myo, BCE fib)."""
    img, pmyo, pfib = pred
    timg, tmyo, tfib = target
    if not (len(img) == len(pmyo) == len(pfib) == len(timg) == len(tmyo) == len(tfib)):
        raise InvalidArgumentError("prediction and target counts differ")
    _check_binary("myo", tmyo)
    _check_binary("fib", tfib)
    l1 = float(np.mean(np.abs(np.asarray(timg, np.float64) - img)))
    return l1, float(np.mean(bce(pmyo, tmyo))), float(np.mean(bce(pfib, tfib)))


def composite_loss(pred, target):
    """Mean over coordinates of |I - I_hat| + BCE(myo) + BCE(fib)."""
    return sum(composite_terms(pred, target))


def composite_grad(pred, target):
    """Gradient of ``composite_loss`` with respect to the three predictions."""
    img, pmyo, pfib = pred
    timg, tmyo, tfib = target
    n = len(img)
    return (np.sign(img - timg) / n, bce_grad(pmyo, tmyo) / n, bce_grad(pfib, tfib) / n)


def joint_loss_and_grads(net, store, coords, target):
    pred, cache = net.forward(store, coords)
    loss = composite_loss(pred, target)
    _, grads = net.backward(store, cache, composite_grad(pred, target))
    return loss, grads, pred


def _psnr(a, b):
    mse = float(np.mean((np.asarray(a, np.float64) - b) ** 2))
    return 99.0 if mse == 0 else min(99.0, 10.0 * np.log10(1.0 / mse))


def case_targets(volume, masks):
    if volume.dims != masks.dims:
        raise InvalidArgumentError(f"volume {volume.dims} and masks {masks.dims} disagree")
    img = volume.data.reshape(-1).astype(np.float32)
    if img.size and (img.min() < 0 or img.max() > 1):
        raise InvalidArgumentError("intensities must lie in [0, 1]; normalize first")
    return img, masks.myo.reshape(-1).astype(np.float32), masks.fib.reshape(-1).astype(np.float32)


def fit_inr(volume, masks, config, arch=None, init=None):
    """Fit one joint INR to a volume and its masks with Adam.

    ``init`` (an INRParams) overrides the seeded initialization, which lets a
    cohort share one starting point. Returns ``(INRParams, FitHistory)``.
    """
    if config.steps < 1:
        raise InvalidArgumentError("steps must be >= 1")
    arch = init.arch if init is not None else (arch or INRArch())
    params = init if init is not None else inr_init(arch, config.seed)
    coords = normalize_coords(volume.dims).astype(np.float32)
    target = case_targets(volume, masks)
    n = len(coords)
    batch = min(config.batch, n)
    rng = rngmod.stream(config.seed, "inr_batches")
    net = params.net
    store = params.store.copy()
    opt = adam_init(store.params, lr=config.lr)
    hist = FitHistory()
    for step in range(config.steps):
        idx = np.arange(n) if batch == n else np.sort(rng.choice(n, batch, replace=False))
        tgt = tuple(t[idx] for t in target)
        loss, grads, pred = joint_loss_and_grads(net, store, coords[idx], tgt)
        if not np.isfinite(loss):
            raise NumericError("INR fit diverged", step=step)
        hist.loss.append(loss)
        hist.psnr.append(_psnr(pred[0], tgt[0]))
        new_params, opt = adam_step(store.params, grads, opt)
        store = store.with_params(new_params)
        if config.psnr_target is not None and hist.psnr[-1] >= config.psnr_target:
            break
    log.debug("fit_inr: %d steps, loss %.4f, psnr %.2f", len(hist.loss), hist.loss[-1], hist.psnr[-1])
    return INRParams(arch, store), hist


def binarize(img, pmyo, pfib, dims, spacing=(1.0, 1.0, 1.0), threshold=0.5):
    """Grid the flat outputs: clamp the image, threshold masks, keep fib inside myo."""
    dx, dy, dz = dims
    shape = (dz, dy, dx)
    image = np.clip(img, 0.0, 1.0).astype(np.float32).reshape(shape)
    myo = (pmyo > threshold).astype(np.uint8).reshape(shape)
    fib = (pfib > threshold).astype(np.uint8).reshape(shape) & myo
    return Volume(image, spacing), MaskSet(myo, fib, spacing)


def rasterize(params, dims, spacing=(1.0, 1.0, 1.0)):
    outs = inr_query(params, normalize_coords(dims))
    return binarize(*outs, dims, spacing)


def inr_to_arrays(params):
    a = params.arch
    arrays = dict(params.store.params)
    arrays["meta.arch"] = np.array([a.in_dim, a.width, a.hidden, a.omega0], dtype=np.float32)
    return arrays


def inr_from_arrays(arrays):
    in_dim, width, hidden, omega0 = arrays["meta.arch"].tolist()
    arch = INRArch(int(in_dim), int(width), int(hidden), float(omega0))
    params = {k: v for k, v in arrays.items() if not k.startswith("meta.")}
    return INRParams(arch, ParamStore(params))
