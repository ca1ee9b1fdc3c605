"""Patch-MLP segmenter and the synthetic-augmentation experiment.

The segmenter classifies each voxel as background, remote myocardium or
fibrosis from the flattened in-plane intensity patch around it. Training
draws class-balanced batches for a fixed number of steps, so every
augmentation level gets the same optimization budget.
"""
import csv
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import InvalidArgumentError, NumericError
from .metrics import BANDS, STRUCTURES, slice_band_dice
from .nncore import Linear, ParamStore, ReLU, Sequential, adam_init, adam_step, softmax_xent
from .parallel import pmap
from .volgrid import MaskSet

log = logging.getLogger(__name__)

N_CLASSES = 3


@dataclass
class SegConfig:
    patch: int = 9
    hidden: tuple = (128, 128)
    steps: int = 1500
    batch: int = 384
    lr: float = 1e-3
    real_cases: int = 8
    synth_counts: tuple = (0, 50, 100)
    seeds: int = 5

    def validate(self):
        if self.patch < 1 or self.patch % 2 == 0:
            raise InvalidArgumentError("patch size must be odd")
        if self.seeds < 1:
            raise InvalidArgumentError("need at least one repeat seed")
        if self.steps < 1 or self.batch < N_CLASSES:
            raise InvalidArgumentError("steps must be >= 1 and batch >= 3")


def labels_from_masks(masks):
    lab = masks.myo.astype(np.int64)
    lab[masks.fib.astype(bool)] = 2
    return lab


def _padded(volumes, r):
    return np.stack([np.pad(v.data.astype(np.float32), ((0, 0), (r, r), (r, r)), mode="edge") for v in volumes])


def _gather(padded, idx, patch):
    """Patches for voxel indices ``idx`` = (case, z, y, x) columns."""
    off = np.arange(patch)
    c, z, y, x = idx.T
    rows = padded[c[:, None, None], z[:, None, None], y[:, None, None] + off[None, :, None],
                  x[:, None, None] + off[None, None, :]]
    return rows.reshape(len(idx), patch * patch)


def _network(config):
    layers, prev = [], config.patch * config.patch
    for i, w in enumerate(config.hidden):
        layers += [Linear(f"seg.l{i}", prev, w), ReLU()]
        prev = w
    layers.append(Linear("seg.out", prev, N_CLASSES))
    return Sequential(layers)


def balanced_batch(pools, batch, rng):
    """Sample voxel indices with equal counts per available class; returns (idx, labels)."""
    present = [k for k in range(N_CLASSES) if len(pools[k])]
    per = np.full(len(present), batch // len(present))
    per[: batch - per.sum()] += 1
    idx, lab = [], []
    for k, m in zip(present, per):
        pick = rng.integers(0, len(pools[k]), size=m)
        idx.append(pools[k][pick])
        lab.append(np.full(m, k))
    return np.concatenate(idx), np.concatenate(lab)


@dataclass
class Segmenter:
    config: SegConfig
    store: ParamStore

    def predict(self, volume):
        r = self.config.patch // 2
        padded = _padded([volume], r)
        dz, dy, dx = volume.data.shape
        z, y, x = np.meshgrid(np.arange(dz), np.arange(dy), np.arange(dx), indexing="ij")
        idx = np.stack([np.zeros(z.size, np.int64), z.ravel(), y.ravel(), x.ravel()], axis=1)
        logits, _ = _network(self.config).forward(self.store, _gather(padded, idx, self.config.patch))
        lab = np.argmax(logits, axis=1).reshape(dz, dy, dx)
        return MaskSet((lab >= 1).astype(np.uint8), (lab == 2).astype(np.uint8), volume.spacing)


def train_segmenter(cases, config, seed):
    """Train the patch classifier on ``[(Volume, MaskSet), ...]``."""
    config.validate()
    if not cases:
        raise InvalidArgumentError("need at least one training case")
    shapes = {v.data.shape for v, _ in cases}
    if len(shapes) != 1:
        raise InvalidArgumentError("training cases must share one grid")
    r = config.patch // 2
    padded = _padded([v for v, _ in cases], r)
    labels = np.stack([labels_from_masks(m) for _, m in cases])
    pools = [np.argwhere(labels == k) for k in range(N_CLASSES)]
    net = _network(config)
    store = ParamStore(net.init(rngmod.stream(seed, "seg_init")))
    rng = rngmod.stream(seed, "seg_batches")
    opt = adam_init(store.params, lr=config.lr)
    for step in range(config.steps):
        idx, lab = balanced_batch(pools, config.batch, rng)
        logits, cache = net.forward(store, _gather(padded, idx, config.patch))
        loss, dlogits = softmax_xent(logits, lab)
        if not np.isfinite(loss):
            raise NumericError("segmenter diverged", step=step)
        _, grads = net.backward(store, cache, dlogits.astype(np.float32))
        params, opt = adam_step(store.params, grads, opt)
        store = ParamStore(params)
    return Segmenter(config, store)


def manifest_hash(ids, cases):
    h = hashlib.sha256()
    for cid, (vol, masks) in zip(ids, cases):
        h.update(cid.encode())
        h.update(vol.data.tobytes())
        h.update(masks.myo.tobytes())
        h.update(masks.fib.tobytes())
    return h.hexdigest()


@dataclass
class AugmentationReport:
    rows: list = field(default_factory=list)
    test_hash: str = ""

    def median(self, n, structure, band="volume"):
        vals = [r["dice"] for r in self.rows if r["n_synth"] == n and r["structure"] == structure and r["band"] == band]
        return float(np.median(vals))

    def levels(self):
        return sorted({r["n_synth"] for r in self.rows})

    def table(self):
        """Median Dice per band (rows) and structure x N (columns), as text."""
        levels = self.levels()
        head = ["band"] + [f"{s}@N={n}" for s in ("fib", "myo") for n in levels]
        lines = ["\t".join(head)]
        for band in BANDS:
            vals = [f"{self.median(n, s, band):.3f}" for s in ("fib", "myo") for n in levels]
            lines.append("\t".join([band] + vals))
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n_synth", "seed", "structure", "band", "dice"])
            for r in self.rows:
                w.writerow([r["n_synth"], r["seed"], r["structure"], r["band"], f"{r['dice']:.6f}"])
            for n in self.levels():
                for s in STRUCTURES:
                    for band in BANDS:
                        w.writerow([n, "median", s, band, f"{self.median(n, s, band):.6f}"])
            w.writerow(["test_manifest_sha256", self.test_hash, "", "", ""])


def _run_one(job):
    n, seed_index, train_cases, test_cases, config, base_seed = job
    seg = train_segmenter(train_cases, config, rngmod.stream(base_seed, "segbench", n, seed_index).integers(2**63))
    per_case = [slice_band_dice(seg.predict(v), m) for v, m in test_cases]
    rows = []
    for s in STRUCTURES:
        for band in BANDS:
            rows.append({"n_synth": n, "seed": seed_index, "structure": s, "band": band,
                         "dice": float(np.mean([pc[s][band] for pc in per_case]))})
    return rows


def augmentation_experiment(real, synthetic, test, config, seed=0, jobs=1):
    """Train one segmenter per (N, seed) on real + first N synthetic cases; score held-out reals.

    ``real``, ``synthetic`` and ``test`` are ``(ids, cases)`` pairs. Dice is averaged over
    test cases per (N, seed); medians over seeds are available from the report.
    """
    config.validate()
    real_ids, real_cases = real
    syn_ids, syn_cases = synthetic
    test_ids, test_cases = test
    overlap = set(test_ids) & (set(real_ids) | set(syn_ids))
    if overlap:
        raise InvalidArgumentError(f"train/test case ids overlap: {sorted(overlap)[:5]}")
    if max(config.synth_counts) > len(syn_cases):
        raise InvalidArgumentError(f"need {max(config.synth_counts)} synthetic cases, have {len(syn_cases)}")
    train_real = list(real_cases[: config.real_cases])
    jobs_list = [(n, k, train_real + list(syn_cases[:n]), test_cases, config, seed)
                 for n in config.synth_counts for k in range(config.seeds)]
    report = AugmentationReport(test_hash=manifest_hash(test_ids, test_cases))
    for rows in pmap(_run_one, jobs_list, jobs):
        report.rows.extend(rows)
    return report
