"""Command-line entry point: ``inrsynth <subcommand> [flags]``.

Every subcommand takes ``--seed``; parallel stages take ``--jobs`` (default
``INRSYNTH_JOBS`` or 1). Failures print one line
``error stage=<name> type=<exception> message=<text>`` on stderr and exit 1;
usage errors exit 2.
"""
import argparse
import csv
import glob
import logging
import os
import sys
from functools import partial

import numpy as np

from . import rng as rngmod
from .config import RunConfig, describe_keys, load_config
from .diffusion import denoiser_from_arrays, denoiser_to_arrays, make_schedule, sample_latent, train_denoiser
from .embed import embed_from_arrays, embed_to_arrays, encode, tokenize, train_autoencoder
from .errors import InvalidArgumentError, StageError
from .inr import fit_inr, inr_from_arrays, inr_init, inr_to_arrays
from .manifest import read_cases, write_cases
from .metrics import cohort_similarity, evaluation_rows
from .nncore import load_ckpt, save_ckpt
from .parallel import default_jobs, pmap
from .phantom import cohort_params, generate_phantom
from .segbench import augmentation_experiment
from .synth import synthesize, write_synthetic
from .volgrid import normalize_intensity

log = logging.getLogger("inrsynth")


class CliError(Exception):
    def __init__(self, stage, exc):
        self.stage, self.exc = stage, exc
        super().__init__(f"{stage}: {exc}")


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except CliError:
        raise
    except Exception as exc:
        raise CliError(name, exc) from exc


def _case_seed(seed, stage, cid):
    return int(rngmod.stream(seed, stage, cid).integers(2**63))


def _dims(text):
    dims = tuple(int(v) for v in text.split(","))
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError("dims must be Dx,Dy,Dz positive integers")
    return dims


def write_latents(path, ids, latents):
    with open(path, "w") as fh:
        for cid, z in zip(ids, latents):
            fh.write(cid + "," + ",".join(repr(float(v)) for v in z) + "\n")


def read_latents(path):
    ids, rows = [], []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                cols = line.rstrip("\n").split(",")
                ids.append(cols[0])
                rows.append([float(v) for v in cols[1:]])
    if not rows or len({len(r) for r in rows}) != 1:
        raise InvalidArgumentError(f"{path}: expected equal-length latent rows")
    return ids, np.array(rows, dtype=np.float32)


# stage implementations; each returns nothing and writes its artifacts


def phantom_gen(out_dir, n, cfg, seed, split="train"):
    params = cohort_params(n, cfg.phantom_params(), seed, split)
    cases = [generate_phantom(p) for p in params]
    ids = [f"{split}{i:04d}" for i in range(n)]
    write_cases(out_dir, cases, ids)


def _fit_one(cfg, seed, item):
    cid, (vol, masks) = item
    init = inr_init(cfg.inr_arch(), seed)
    params, hist = fit_inr(normalize_intensity(vol), masks, cfg.fit_config(_case_seed(seed, "inr_fit", cid)),
                           arch=cfg.inr_arch(), init=init)
    return inr_to_arrays(params), hist.rows()


def inr_fit(in_dir, out_dir, cfg, seed, jobs):
    """Fit one INR per case; all cases share one initialization drawn from ``seed``."""
    ids, cases = read_cases(in_dir)
    os.makedirs(out_dir, exist_ok=True)
    try:
        results = pmap(partial(_fit_one, cfg, seed), list(zip(ids, cases)), jobs)
    except Exception as exc:
        raise StageError("inr-fit", None, exc) from exc
    with open(os.path.join(out_dir, "history.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "step", "loss", "psnr"])
        for cid, (arrays, rows) in zip(ids, results):
            save_ckpt(os.path.join(out_dir, f"{cid}.ckpt"), arrays)
            for step, loss, p in rows:
                w.writerow([cid, step, repr(float(loss)), repr(float(p))])


def _load_inrs(inr_dir, ids):
    missing = [cid for cid in ids if not os.path.exists(os.path.join(inr_dir, f"{cid}.ckpt"))]
    if missing:
        raise InvalidArgumentError(f"no INR checkpoint for cases {missing[:5]}")
    return [inr_from_arrays(load_ckpt(os.path.join(inr_dir, f"{cid}.ckpt"))) for cid in ids]


def embed_train(inr_dir, data_dir, out, cfg, seed):
    ids, cases = read_cases(data_dir)
    cases = [(normalize_intensity(v), m) for v, m in cases]
    model, report = train_autoencoder(_load_inrs(inr_dir, ids), cases, cfg.embed_config(seed))
    save_ckpt(out, embed_to_arrays(model))
    with open(os.path.splitext(out)[0] + "_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "myo_dice", "fib_dice", "psnr"])
        for row in zip(ids, report["myo_dice"], report["fib_dice"], report["psnr"]):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    with open(os.path.splitext(out)[0] + "_history.csv", "w") as fh:
        fh.write("step,loss\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(report["loss"])))


def embed_encode(inr_dir, model_path, out, standardize=True):
    """Latents of every ``*.ckpt`` INR in ``inr_dir`` (standardized unless told otherwise)."""
    model = embed_from_arrays(load_ckpt(model_path))
    paths = sorted(glob.glob(os.path.join(inr_dir, "*.ckpt")))
    if not paths:
        raise InvalidArgumentError(f"no INR checkpoints in {inr_dir}")
    ids = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    rows = np.stack([tokenize(inr_from_arrays(load_ckpt(p)), model.inr_arch).rows for p in paths])
    z = encode(rows, model)
    write_latents(out, ids, model.standardize(z) if standardize else z)


def diff_train(latents_path, out, cfg, seed):
    _, z = read_latents(latents_path)
    schedule = cfg.schedule()
    model, history = train_denoiser(z, schedule, cfg.denoiser_config(z.shape[1], seed))
    save_ckpt(out, denoiser_to_arrays(model, schedule))
    with open(os.path.splitext(out)[0] + "_history.csv", "w") as fh:
        fh.write("step,loss\n" + "".join(f"{i},{float(v)!r}\n" for i, v in enumerate(history)))


def _schedule_arg(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("schedule must be T,beta_start,beta_end")
    return make_schedule(int(parts[0]), float(parts[1]), float(parts[2]))


def diff_sample(model_path, n, seed, out, schedule=None, sampler_noise=True, form="literal"):
    model, stored = denoiser_from_arrays(load_ckpt(model_path))
    schedule = schedule or stored
    if schedule is None:
        raise InvalidArgumentError("checkpoint holds no schedule; pass --schedule")
    z = sample_latent(model, schedule, seed, n=n, sampler_noise=sampler_noise, form=form)
    write_latents(out, [f"sample{i:04d}" for i in range(n)], z)


def synth_run(models_dir, n, dims, seed, out_dir, scale=1, sampler_noise=True, jobs=1, spacing=None,
              form="literal"):
    embed = embed_from_arrays(load_ckpt(os.path.join(models_dir, "embed.ckpt")))
    denoiser, schedule = denoiser_from_arrays(load_ckpt(os.path.join(models_dir, "denoiser.ckpt")))
    samples, latents = synthesize(n, embed, denoiser, schedule, dims, seed, spacing or (1.0, 1.0, 1.0),
                                  scale=scale, sampler_noise=sampler_noise, jobs=jobs, form=form)
    write_synthetic(out_dir, samples, latents)


def segbench_run(real_dir, synth_dir, test_dir, out, cfg, seed, jobs):
    real, test = read_cases(real_dir), read_cases(test_dir)
    synthetic = read_cases(synth_dir) if synth_dir else ([], [])
    norm = lambda pair: (pair[0], [(normalize_intensity(v), m) for v, m in pair[1]])  # noqa: E731
    report = augmentation_experiment(norm(real), norm(synthetic), norm(test), cfg.seg_config(), seed, jobs)
    report.write_csv(out)
    print(report.table())


def eval_run(pred_dir, ref_dir, out=None, mode="dice"):
    pred_ids, preds = read_cases(pred_dir)
    ref_ids, refs = read_cases(ref_dir)
    lines = []
    if mode == "similarity":
        sim = cohort_similarity([normalize_intensity(v) for v, _ in preds], [normalize_intensity(v) for v, _ in refs])
        lines = ["metric,value", f"psnr,{sim['psnr']!r}", f"ssim,{sim['ssim']!r}", f"pairs,{sim['pairs']}"]
    else:
        ref_by_id = dict(zip(ref_ids, refs))
        shared = [cid for cid in pred_ids if cid in ref_by_id]
        if not shared:
            raise InvalidArgumentError("no case ids shared between prediction and reference manifests")
        pred_by_id = dict(zip(pred_ids, preds))
        rows = evaluation_rows(shared, [pred_by_id[c][1] for c in shared], [ref_by_id[c][1] for c in shared])
        lines = ["case,structure,band,metric,value"] + [f"{c},{s},{b},{m},{v!r}" for c, s, b, m, v in rows]
    text = "\n".join(lines) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def pipeline(cfg, seed, out_dir, jobs):
    """Every stage in order under ``out_dir``; each stage gets its own named seed stream."""
    s = lambda name: _case_seed(seed, "pipeline", name)  # noqa: E731
    d = lambda *p: os.path.join(out_dir, *p)  # noqa: E731
    os.makedirs(out_dir, exist_ok=True)
    n_train = cfg["phantom.n_train"]
    _stage("phantom-gen", phantom_gen, d("real"), n_train, cfg, s("phantom"), "train")
    _stage("phantom-gen", phantom_gen, d("test"), cfg["phantom.n_test"], cfg, s("phantom"), "test")
    _stage("inr-fit", inr_fit, d("real"), d("inrs"), cfg, s("inr"), jobs)
    os.makedirs(d("models"), exist_ok=True)
    _stage("embed-train", embed_train, d("inrs"), d("real"), d("models", "embed.ckpt"), cfg, s("embed"))
    _stage("embed-encode", embed_encode, d("inrs"), d("models", "embed.ckpt"), d("latents.csv"))
    _stage("diff-train", diff_train, d("latents.csv"), d("models", "denoiser.ckpt"), cfg, s("diffusion"))
    spacing = cfg.phantom_params().spacing
    _stage("synth", synth_run, d("models"), cfg["synth.n"], cfg["phantom.dims"], s("synth"), d("synth"),
           cfg["synth.scale"], cfg["diff.sampler_noise"], jobs, spacing, cfg["diff.reverse"])
    _stage("eval", eval_run, d("synth"), d("real"), d("similarity.csv"), "similarity")
    _stage("segbench", segbench_run, d("real"), d("synth"), d("test"), d("segbench.csv"), cfg, s("segbench"), jobs)


def _noise_flag(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def build_parser():
    parser = argparse.ArgumentParser(prog="inrsynth", description="Joint image/mask INR synthesis pipeline.",
                                     epilog="Config keys (key = value):\n" + describe_keys(),
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, config=True, jobs=False):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=0)
        if config:
            p.add_argument("--config", default=None, help="key = value file")
        if jobs:
            p.add_argument("--jobs", type=int, default=default_jobs())
        return p

    p = add("phantom-gen", "generate a phantom cohort")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n", type=int, default=None, help="defaults to phantom.n_train")
    p.add_argument("--split", default="train")
    p.add_argument("--dims", type=_dims, default=None)

    p = add("inr-fit", "fit one INR per case", jobs=True)
    p.add_argument("--in-dir", required=True)
    p.add_argument("--out-dir", required=True)

    p = add("embed-train", "train the weight-space autoencoder")
    p.add_argument("--inr-dir", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)

    p = add("embed-encode", "encode fitted INRs to latents", config=False)
    p.add_argument("--inr-dir", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--raw", action="store_true", help="write unstandardized latents")

    p = add("diff-train", "train the latent denoiser")
    p.add_argument("--latents", required=True)
    p.add_argument("--out", required=True)

    p = add("diff-sample", "sample standardized latents", config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--schedule", type=_schedule_arg, default=None, help="T,beta_start,beta_end override")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--sampler-noise", type=_noise_flag, default=True)
    p.add_argument("--reverse-form", choices=("literal", "posterior"), default="literal")

    p = add("synth", "sample and decode synthetic volumes", config=False, jobs=True)
    p.add_argument("--models-dir", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dims", type=_dims, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--scale", type=int, default=1)
    p.add_argument("--sampler-noise", type=_noise_flag, default=True)
    p.add_argument("--reverse-form", choices=("literal", "posterior"), default="literal")

    p = add("segbench", "synthetic augmentation experiment", jobs=True)
    p.add_argument("--real-dir", required=True)
    p.add_argument("--synth-dir", default=None)
    p.add_argument("--test-dir", required=True)
    p.add_argument("--out", required=True)

    p = add("eval", "band Dice against references, or cohort PSNR/SSIM", config=False)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--mode", choices=("dice", "similarity"), default="dice")
    p.add_argument("--out", default=None)

    p = add("pipeline", "run every stage from one config", jobs=True)
    p.add_argument("--out-dir", required=True)
    return parser


def dispatch(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else None
    if cfg is None and args.command in ("phantom-gen", "inr-fit", "embed-train", "diff-train", "segbench",
                                        "pipeline"):
        cfg = load_config(None)
    c = args.command
    if c == "phantom-gen":
        if args.dims:
            cfg = RunConfig(dict(cfg.values, **{"phantom.dims": args.dims}))
        phantom_gen(args.out_dir, args.n if args.n is not None else cfg["phantom.n_train"], cfg, args.seed,
                    args.split)
    elif c == "inr-fit":
        inr_fit(args.in_dir, args.out_dir, cfg, args.seed, args.jobs)
    elif c == "embed-train":
        embed_train(args.inr_dir, args.data_dir, args.out, cfg, args.seed)
    elif c == "embed-encode":
        embed_encode(args.inr_dir, args.model, args.out, standardize=not args.raw)
    elif c == "diff-train":
        diff_train(args.latents, args.out, cfg, args.seed)
    elif c == "diff-sample":
        diff_sample(args.model, args.n, args.seed, args.out, args.schedule, args.sampler_noise, args.reverse_form)
    elif c == "synth":
        synth_run(args.models_dir, args.n, args.dims, args.seed, args.out_dir, args.scale, args.sampler_noise,
                  args.jobs, form=args.reverse_form)
    elif c == "segbench":
        segbench_run(args.real_dir, args.synth_dir, args.test_dir, args.out, cfg, args.seed, args.jobs)
    elif c == "eval":
        eval_run(args.pred_dir, args.ref_dir, args.out, args.mode)
    elif c == "pipeline":
        pipeline(cfg, args.seed, args.out_dir, args.jobs)


def _one_line(text):
    return " ".join(str(text).split())


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        dispatch(args)
    except CliError as err:
        cause = err.exc.cause if isinstance(err.exc, StageError) else err.exc
        print(f"error stage={err.stage} type={type(cause).__name__} message={_one_line(err.exc)}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error stage={args.command} type={type(exc).__name__} message={_one_line(exc)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
