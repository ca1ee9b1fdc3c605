"""Plain ``key = value`` run configuration with a fixed key list.

Blank lines and ``#`` comments are ignored. Unknown keys and malformed values
are errors, so a typo never silently falls back to a default.
"""
from dataclasses import dataclass, field

from .diffusion import DenoiserArch, DenoiserConfig, make_schedule
from .embed import DecoderArch, EmbedConfig, EncoderArch
from .errors import FormatError
from .inr import FitConfig, INRArch
from .phantom import PhantomParams
from .segbench import SegConfig


def _ints(text):
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _bool(text):
    low = text.strip().lower()
    if low in ("on", "true", "yes", "1"):
        return True
    if low in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def parse(text):
        if text.strip() not in options:
            raise ValueError(f"expected one of {options}")
        return text.strip()
    return parse


# key -> (parser, default, description)
KEYS = {
    "phantom.dims": (_ints, (32, 32, 4), "grid size Dx,Dy,Dz"),
    "phantom.n_train": (int, 32, "training phantoms"),
    "phantom.n_test": (int, 8, "held-out phantoms for the segmentation benchmark"),
    "phantom.noise_sigma": (float, 0.02, "Gaussian intensity noise"),
    "inr.width": (int, 256, "sine layer width"),
    "inr.hidden": (int, 4, "hidden width-to-width sine layers"),
    "inr.steps": (int, 2000, "fitting steps per case"),
    "inr.batch": (int, 16384, "coordinates per step (clamped to the grid size)"),
    "inr.lr": (float, 1e-4, "fitting learning rate"),
    "embed.enc_widths": (_ints, (512, 512, 512, 512), "encoder layer widths; the last is the latent width"),
    "embed.proj": (int, 256, "latent projection width in the decoder"),
    "embed.dec_width": (int, 256, "decoder sine layer width"),
    "embed.sine_layers": (int, 4, "decoder sine layers"),
    "embed.steps": (int, 2000, "autoencoder steps"),
    "embed.cases_per_step": (int, 8, "cases per autoencoder step"),
    "embed.coords_per_case": (int, 1024, "coordinates per case per step"),
    "embed.lr": (float, 3e-4, "autoencoder learning rate"),
    "diff.T": (int, 1000, "diffusion timesteps"),
    "diff.beta_start": (float, 1e-4, "beta at t=1"),
    "diff.beta_end": (float, 0.02, "beta at t=T"),
    "diff.temb": (int, 128, "timestep embedding width"),
    "diff.hidden": (_ints, (1024, 1024, 1024, 1024), "denoiser hidden widths"),
    "diff.steps": (int, 4000, "denoiser steps"),
    "diff.batch": (int, 64, "denoiser batch"),
    "diff.lr": (float, 1e-3, "denoiser learning rate"),
    "diff.sampler_noise": (_bool, True, "ancestral noise in the reverse step (on/off)"),
    "diff.reverse": (_choice("literal", "posterior"), "literal", "weight on the predicted noise in the reverse mean"),
    "synth.n": (int, 100, "synthetic volumes"),
    "synth.scale": (int, 1, "in-plane upsampling of the decoded grid"),
    "seg.patch": (int, 9, "in-plane patch size (odd)"),
    "seg.hidden": (_ints, (128, 128), "segmenter hidden widths"),
    "seg.steps": (int, 1500, "segmenter steps"),
    "seg.batch": (int, 384, "segmenter batch"),
    "seg.lr": (float, 1e-3, "segmenter learning rate"),
    "seg.real_cases": (int, 8, "real training phantoms"),
    "seg.synth_counts": (_ints, (0, 50, 100), "synthetic augmentation levels N"),
    "seg.seeds": (int, 5, "repeat seeds per level"),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v[1] for k, v in KEYS.items()})

    def __getitem__(self, key):
        return self.values[key]

    def phantom_params(self, seed=0):
        return PhantomParams.for_dims(self["phantom.dims"], noise_sigma=self["phantom.noise_sigma"], seed=seed)

    def inr_arch(self):
        return INRArch(width=self["inr.width"], hidden=self["inr.hidden"])

    def fit_config(self, seed):
        return FitConfig(steps=self["inr.steps"], batch=self["inr.batch"], lr=self["inr.lr"], seed=seed)

    def embed_config(self, seed):
        enc = EncoderArch(self["embed.enc_widths"])
        dec = DecoderArch(enc.latent, self["embed.proj"], self["embed.dec_width"], self["embed.sine_layers"])
        return EmbedConfig(steps=self["embed.steps"], cases_per_step=self["embed.cases_per_step"],
                           coords_per_case=self["embed.coords_per_case"], lr=self["embed.lr"], seed=seed,
                           enc_arch=enc, dec_arch=dec)

    def schedule(self):
        return make_schedule(self["diff.T"], self["diff.beta_start"], self["diff.beta_end"])

    def denoiser_config(self, latent, seed):
        arch = DenoiserArch(latent, self["diff.temb"], self["diff.hidden"])
        return DenoiserConfig(steps=self["diff.steps"], batch=self["diff.batch"], lr=self["diff.lr"], seed=seed,
                              arch=arch)

    def seg_config(self):
        return SegConfig(patch=self["seg.patch"], hidden=self["seg.hidden"], steps=self["seg.steps"],
                         batch=self["seg.batch"], lr=self["seg.lr"], real_cases=self["seg.real_cases"],
                         synth_counts=self["seg.synth_counts"], seeds=self["seg.seeds"])


def parse_config(text, source="<config>"):
    values = {k: v[1] for k, v in KEYS.items()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise FormatError(where, "expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise FormatError(where, f"unknown config key {key!r}")
        try:
            values[key] = KEYS[key][0](value)
        except ValueError as exc:
            raise FormatError(where, f"bad value for {key}: {exc}") from exc
    return RunConfig(values)


def load_config(path=None):
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return parse_config(fh.read(), path)


def describe_keys():
    return "\n".join(f"{k} = {v[1]!r}  # {v[2]}" for k, v in KEYS.items())
