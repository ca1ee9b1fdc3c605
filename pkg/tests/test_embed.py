import numpy as np
import pytest

from inrsynth.embed import (DecoderArch, EmbedConfig, EncoderArch, autoencoder_loss, decode_query, decode_volume,
                            embed_from_arrays, embed_to_arrays, encode, init_embed, recalibrate_batchnorm, token_width,
                            tokenize, train_autoencoder)
from inrsynth.errors import InvalidArgumentError
from inrsynth.inr import INRArch, INRParams, FitConfig, case_targets, fit_inr, inr_init
from inrsynth.nncore import ParamStore, grad_check
from inrsynth.phantom import PhantomParams, generate_cohort
from inrsynth.volgrid import normalize_coords, normalize_intensity

MINI_INR = INRArch(width=6, hidden=1)
MINI_ENC = EncoderArch((8, 8, 8, 16))
MINI_DEC = DecoderArch(latent=16, proj=8, width=8, sine_layers=2)


def test_default_token_layout():
    tok = tokenize(inr_init(INRArch(), 0))
    assert tok.rows.shape == (256 + 4 * 256 + 3, 257 + 8)
    assert tok.rows.shape[0] == 1283


def test_zero_params_leave_only_layer_tags():
    p = inr_init(MINI_INR, 0)
    zero = INRParams(MINI_INR, ParamStore({k: np.zeros_like(v) for k, v in p.store.params.items()}))
    rows = tokenize(zero).rows
    max_in = max(MINI_INR.in_dim, MINI_INR.width)
    assert np.all(rows[:, : max_in + 1] == 0)
    assert np.all(rows[:, max_in + 1:].sum(axis=1) == 1)


def test_tokenize_injective_on_single_entry():
    p = inr_init(MINI_INR, 0)
    base = tokenize(p).rows
    for name in p.store.params:
        q = p.store.copy()
        q.params[name] = q.params[name].copy()
        q.params[name].flat[0] += 0.25
        assert not np.array_equal(tokenize(INRParams(MINI_INR, q)).rows, base), name


def test_tokenize_arch_mismatch():
    with pytest.raises(InvalidArgumentError):
        tokenize(inr_init(MINI_INR, 0), INRArch(width=7, hidden=1))


def test_encoder_permutation_invariance(rng):
    model = init_embed(MINI_INR, MINI_ENC, MINI_DEC, 0)
    rows = np.stack([tokenize(inr_init(MINI_INR, s)).rows for s in range(4)])
    recalibrate_batchnorm(model, rows)
    z = encode(rows, model)
    perm = rng.permutation(rows.shape[1])
    assert np.array_equal(encode(rows[:, perm], model), z)
    assert z.shape == (4, 16)


def test_encoder_decoder_width_mismatch():
    with pytest.raises(InvalidArgumentError):
        init_embed(MINI_INR, MINI_ENC, DecoderArch(latent=32, proj=8, width=8, sine_layers=2), 0)


@pytest.mark.parametrize("seed", range(20))
def test_autoencoder_grad_check(seed):
    rng = np.random.default_rng(seed)
    model = init_embed(MINI_INR, MINI_ENC, MINI_DEC, seed)
    enc, dec = model.enc.astype(np.float64), model.dec.astype(np.float64)
    rows = rng.normal(size=(3, 10, token_width(MINI_INR)))
    coords = rng.uniform(-1, 1, size=(3, 5, 3))
    targets = (rng.random((3, 5)), rng.integers(0, 2, (3, 5)).astype(float), rng.integers(0, 2, (3, 5)).astype(float))
    # a bias feeding batch norm is cancelled by the mean subtraction: its gradient is exactly zero
    gauge = {k for k in enc.params if k.startswith("enc.l") and k.endswith(".b")}
    enc_fixed = {k: enc.params[k] for k in gauge}
    params = {**{"E/" + k: v for k, v in enc.params.items() if k not in gauge},
              **{"D/" + k: v for k, v in dec.params.items()}}

    def fn(p):
        model.enc = ParamStore({**enc_fixed, **{k[2:]: v for k, v in p.items() if k.startswith("E/")}}, enc.buffers)
        model.dec = ParamStore({k[2:]: v for k, v in p.items() if k.startswith("D/")})
        loss, eg, dg, _ = autoencoder_loss(model, rows, coords, targets)
        fn.gauge_grads = [eg[k] for k in gauge]
        return loss, {**{"E/" + k: v for k, v in eg.items()}, **{"D/" + k: v for k, v in dg.items()}}

    # two stacked omega0=30 sine layers: the three-point stencil's truncation error reaches 1e-4 on small entries
    report = grad_check(fn, params, tol=1e-4, order=4)
    assert report.passed, str(report)
    assert max(np.abs(g).max() for g in fn.gauge_grads) < 1e-12


def _cohort(n, dims=(16, 16, 4), steps=150):
    cases = [(normalize_intensity(v), m) for v, m in generate_cohort(n, PhantomParams.for_dims(dims), seed=2)]
    init = inr_init(MINI_INR, 0)
    inrs = [fit_inr(v, m, FitConfig(steps=steps, lr=1e-3, seed=i), init=init)[0] for i, (v, m) in enumerate(cases)]
    return cases, inrs


def test_training_rejects_single_case():
    cases, inrs = _cohort(1, steps=1)
    with pytest.raises(InvalidArgumentError):
        train_autoencoder(inrs, cases, EmbedConfig(steps=1, enc_arch=MINI_ENC, dec_arch=MINI_DEC))


def test_training_run_properties():
    cases, inrs = _cohort(6)
    cfg = EmbedConfig(steps=150, cases_per_step=3, coords_per_case=256, lr=3e-4, seed=1, enc_arch=MINI_ENC,
                      dec_arch=MINI_DEC)
    model, report = train_autoencoder(inrs, cases, cfg)
    loss = np.array(report["loss"])
    assert loss[-30:].mean() < loss[:30].mean()
    assert all(0 <= d <= 1 for d in report["myo_dice"])
    # standardized training latents have zero mean and unit variance per dimension
    zs = model.standardize(encode(np.stack([tokenize(p).rows for p in inrs]), model))
    live = model.latent_std > 1e-6
    assert np.all(np.abs(zs.mean(axis=0)) < 0.05)
    assert np.all(np.abs(zs[:, live].var(axis=0) - 1) < 0.1)
    # same seed, same model
    again, _ = train_autoencoder(inrs, cases, cfg)
    assert all(np.array_equal(model.dec.params[k], again.dec.params[k]) for k in model.dec.params)

    back = embed_from_arrays(embed_to_arrays(model))
    coords = normalize_coords((4, 4, 2))
    z = zs[0] * model.latent_std + model.latent_mean
    assert all(np.array_equal(a, b) for a, b in zip(decode_query(z, coords, model), decode_query(z, coords, back)))
    vol, masks = decode_volume(z, model, cases[0][0].dims)
    assert vol.dims == cases[0][0].dims and not (masks.fib & (1 - masks.myo)).any()


def test_token_width_default():
    assert token_width(INRArch()) == 265
