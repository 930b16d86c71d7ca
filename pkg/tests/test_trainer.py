"""Three-phase training loop, gradient isolation, and file enhancement."""

import numpy as np
import pytest

from segan import engine as eg
from segan.audio_io import Waveform, read_wav, write_wav
from segan.dataset import TrainingPair
from segan.engine import Tensor, backward, sample_z
from segan.errors import (ConfigError, NonFiniteLossError, WrongRateError)
from segan.model import (GeneratorConfig, build_discriminator,
                         build_generator, g_forward, load_checkpoint,
                         save_checkpoint, set_reference_batch)
from segan.optim import RMSprop
from segan.trainer import (TrainConfig, _z_seed_for, enhance_file, train,
                           train_step)

from helpers import params_digest

TINY = GeneratorConfig(window=64, filter_width=5, enc_channels=(2, 3), z_channels=4)


def _batch(rng, n=4, window=64):
    return (rng.uniform(-0.5, 0.5, (n, window)).astype(np.float32),
            rng.uniform(-0.5, 0.5, (n, window)).astype(np.float32))


def _tiny_pairs(count, rng):
    out = []
    for _ in range(count):
        noisy, clean = rng.uniform(-0.5, 0.5, (2, 64))
        out.append(TrainingPair(noisy=noisy, clean=clean))
    return out


class SpyRMSprop(RMSprop):
    """Records parameter digests and raw gradients around every step."""

    def __init__(self, params, **kw):
        super().__init__(params, **kw)
        self.pre = []
        self.post = []
        self.grads = []

    def step(self):
        self.pre.append(params_digest(self.params))
        self.grads.append([p.grad.copy() for p in self.params])
        super().step()
        self.post.append(params_digest(self.params))


# ---------------------------------------------------------------------------
# Loss wiring

def test_constant_discriminator_and_zero_lambda_leave_generator_fixed():
    # A discriminator whose every weight is zero scores any input with its
    # output bias alone, so no gradient can reach the generator through it;
    # with the regression weight at zero the generator must not move.
    gen = build_generator(TINY, seed=3)
    disc = build_discriminator(TINY, seed=4)
    for p in disc.parameters():
        p.data[...] = 0.0
    disc.out_b.data[...] = 1.0
    rng = np.random.default_rng(0)
    set_reference_batch(disc, *_batch(rng))

    before = [p.data.copy() for p in gen.parameters()]
    cfg = TrainConfig(epochs=1, lambda_l1=0.0, seed=0)
    noisy, clean = _batch(rng)
    z = sample_z(4, TINY.bottleneck_len, TINY.z_channels, seed=1)
    rep = train_step(gen, disc, RMSprop(gen.parameters()),
                     RMSprop(disc.parameters()), noisy, clean, z, cfg)
    for p, old in zip(gen.parameters(), before):
        assert np.all(p.grad == 0.0), p.name
        assert np.array_equal(p.data, old), p.name
    assert np.isfinite(rep.g_adv) and rep.g_l1 > 0.0


def test_lambda_only_step_matches_manual_graph_bitwise():
    rng = np.random.default_rng(5)
    gen_a = build_generator(TINY, seed=9)
    gen_b = build_generator(TINY, seed=9)
    opt_a = RMSprop(gen_a.parameters())
    opt_b = RMSprop(gen_b.parameters())
    cfg = TrainConfig(epochs=1, adversarial=False, lambda_l1=100.0)

    for step in range(3):
        noisy, clean = _batch(rng)
        z = sample_z(4, TINY.bottleneck_len, TINY.z_channels, seed=step)
        train_step(gen_a, None, opt_a, None, noisy, clean, z, cfg, step=step)

        opt_b.zero_grad()
        out = g_forward(gen_b, Tensor(noisy), Tensor(z.data))
        loss = eg.mul(eg.l1_loss(out, Tensor(clean[..., None])),
                      Tensor(np.asarray(100.0, np.float32)))
        backward(loss)
        opt_b.step()

    assert params_digest(gen_a.parameters()) == params_digest(gen_b.parameters())


def test_discriminator_is_untouched_by_the_generator_phase():
    gen = build_generator(TINY, seed=3)
    disc = build_discriminator(TINY, seed=4)
    rng = np.random.default_rng(0)
    set_reference_batch(disc, *_batch(rng))
    g_opt = SpyRMSprop(gen.parameters())
    d_opt = SpyRMSprop(disc.parameters())
    cfg = TrainConfig(epochs=1, seed=0)

    steps = 3
    for step in range(steps):
        noisy, clean = _batch(rng)
        z = sample_z(4, TINY.bottleneck_len, TINY.z_channels, seed=step)
        train_step(gen, disc, g_opt, d_opt, noisy, clean, z, cfg, step=step)

    # two discriminator updates per step, one generator update
    assert len(d_opt.pre) == 2 * steps
    assert len(g_opt.pre) == steps
    for k in range(steps):
        # generating the fakes between the two halves moves nothing
        assert d_opt.pre[2 * k + 1] == d_opt.post[2 * k]
        if k + 1 < steps:
            # the generator phase sits between post[2k+1] and pre[2k+2]
            assert d_opt.pre[2 * k + 2] == d_opt.post[2 * k + 1]
    assert params_digest(disc.parameters()) == d_opt.post[-1]
    # and the discriminator did actually train in its own phases
    assert any(pre != post for pre, post in zip(d_opt.pre, d_opt.post))


def test_adversarial_step_requires_discriminator():
    gen = build_generator(TINY, seed=3)
    noisy, clean = _batch(np.random.default_rng(0))
    z = sample_z(4, TINY.bottleneck_len, TINY.z_channels)
    with pytest.raises(ConfigError, match="needs a discriminator"):
        train_step(gen, None, RMSprop(gen.parameters()), None,
                   noisy, clean, z, TrainConfig(epochs=1))


def test_gradient_accumulation_sums_micro_batches():
    rng = np.random.default_rng(7)
    noisy, clean = _batch(rng, n=8)
    z = sample_z(8, TINY.bottleneck_len, TINY.z_channels, seed=2)

    grads = {}
    deltas = {}
    for accum in (1, 4):
        gen = build_generator(TINY, seed=11)
        before = [p.data.copy() for p in gen.parameters()]
        opt = SpyRMSprop(gen.parameters())
        cfg = TrainConfig(epochs=1, adversarial=False, accum_steps=accum)
        train_step(gen, None, opt, None, noisy, clean, z, cfg)
        assert len(opt.grads) == 1  # one optimizer step regardless of accum
        grads[accum] = opt.grads[0]
        deltas[accum] = [p.data - old for p, old in zip(gen.parameters(), before)]

    for g1, g4 in zip(grads[1], grads[4]):
        # four quarter-batch means sum to four times the full-batch mean
        assert np.allclose(g4, 4.0 * g1, rtol=1e-4, atol=1e-7)
    for d1, d4, g1 in zip(deltas[1], deltas[4], grads[1]):
        big = np.abs(g1) > 1e-3  # where the update is not epsilon-dominated
        if np.any(big):
            assert np.allclose(d1[big], d4[big], rtol=1e-2, atol=1e-9)


def test_accum_steps_beyond_batch_size_clamps():
    rng = np.random.default_rng(1)
    gen = build_generator(TINY, seed=2)
    noisy, clean = _batch(rng, n=2)
    z = sample_z(2, TINY.bottleneck_len, TINY.z_channels)
    cfg = TrainConfig(epochs=1, adversarial=False, accum_steps=8)
    rep = train_step(gen, None, RMSprop(gen.parameters()), None,
                     noisy, clean, z, cfg)
    assert np.isfinite(rep.g_l1)


def test_non_finite_loss_raises():
    gen = build_generator(TINY, seed=2)
    noisy = np.full((2, 64), np.nan, dtype=np.float32)
    clean = np.zeros((2, 64), dtype=np.float32)
    z = sample_z(2, TINY.bottleneck_len, TINY.z_channels)
    cfg = TrainConfig(epochs=1, adversarial=False)
    with pytest.raises(NonFiniteLossError, match="g_l1"):
        train_step(gen, None, RMSprop(gen.parameters()), None,
                   noisy, clean, z, cfg)


# ---------------------------------------------------------------------------
# Full loop

def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(lambda_l1=-1.0)
    with pytest.raises(ConfigError):
        TrainConfig(checkpoint_every=-1)
    with pytest.raises(ConfigError):
        TrainConfig(accum_steps=0)


def test_train_rejects_bad_pairs(tmp_path):
    cfg = TrainConfig(epochs=1, adversarial=False)
    with pytest.raises(ValueError, match="no training pairs"):
        train(TINY, cfg, [], tmp_path)
    rng = np.random.default_rng(0)
    short = [TrainingPair(noisy=rng.uniform(-1, 1, 32), clean=rng.uniform(-1, 1, 32))]
    with pytest.raises(ConfigError, match="does not match model window"):
        train(TINY, cfg, short, tmp_path)


def test_train_is_deterministic(tmp_path):
    rng = np.random.default_rng(3)
    pairs = _tiny_pairs(8, rng)
    cfg = TrainConfig(epochs=2, batch_size=4, adversarial=False, seed=11,
                      checkpoint_every=0)
    r1 = train(TINY, cfg, pairs, tmp_path / "run1")
    r2 = train(TINY, cfg, pairs, tmp_path / "run2")
    assert r1.loss_log.read_text() == r2.loss_log.read_text()
    assert r1.final_checkpoint.read_bytes() == r2.final_checkpoint.read_bytes()
    assert len(r1.reports) == 4  # 8 pairs, batch 4, 2 epochs


def test_train_seed_changes_the_run(tmp_path):
    rng = np.random.default_rng(3)
    pairs = _tiny_pairs(8, rng)
    base = dict(epochs=1, batch_size=4, adversarial=False, checkpoint_every=0)
    r1 = train(TINY, TrainConfig(seed=1, **base), pairs, tmp_path / "a")
    r2 = train(TINY, TrainConfig(seed=2, **base), pairs, tmp_path / "b")
    assert r1.final_checkpoint.read_bytes() != r2.final_checkpoint.read_bytes()


def test_loss_log_format(tmp_path):
    rng = np.random.default_rng(4)
    pairs = _tiny_pairs(4, rng)
    cfg = TrainConfig(epochs=2, batch_size=4, adversarial=False, seed=0,
                      checkpoint_every=0)
    result = train(TINY, cfg, pairs, tmp_path)
    lines = result.loss_log.read_text().splitlines()
    assert lines[0] == "step,d_real,d_fake,g_adv,g_l1"
    assert len(lines) == 3
    for i, line in enumerate(lines[1:]):
        fields = line.split(",")
        assert int(fields[0]) == i
        d_real, d_fake, g_adv, g_l1 = map(float, fields[1:])
        assert (d_real, d_fake, g_adv) == (0.0, 0.0, 0.0)
        assert g_l1 > 0.0
    assert result.reports[1].g_l1 == float(lines[2].split(",")[4])


def test_periodic_checkpoints(tmp_path):
    rng = np.random.default_rng(4)
    pairs = _tiny_pairs(8, rng)
    cfg = TrainConfig(epochs=2, batch_size=4, adversarial=False, seed=0,
                      checkpoint_every=2)
    train(TINY, cfg, pairs, tmp_path)
    assert (tmp_path / "ckpt_000002.sgn").exists()
    assert (tmp_path / "ckpt_000004.sgn").exists()
    assert (tmp_path / "ckpt_final.sgn").exists()


def test_adversarial_loop_smoke(tmp_path):
    rng = np.random.default_rng(5)
    pairs = _tiny_pairs(4, rng)
    cfg = TrainConfig(epochs=2, batch_size=4, adversarial=True, seed=0,
                      checkpoint_every=0)
    result = train(TINY, cfg, pairs, tmp_path)
    assert result.disc is not None
    for rep in result.reports:
        for v in (rep.d_real, rep.d_fake, rep.g_adv, rep.g_l1):
            assert np.isfinite(v)
    _, disc, _ = load_checkpoint(result.final_checkpoint, expect_cfg=TINY)
    assert disc is not None and disc.n_ref == 4


def test_z_seed_per_step_is_injective():
    seen = {}
    for seed in range(3):
        for step in range(200):
            key = _z_seed_for(seed, step)
            assert key not in seen, (seed, step, seen[key])
            seen[key] = (seed, step)


# ---------------------------------------------------------------------------
# File enhancement

WIDE = GeneratorConfig(window=16384, filter_width=5, enc_channels=(2, 2),
                       z_channels=2)


def _zero_checkpoint(path, cfg=WIDE):
    gen = build_generator(cfg, seed=0)
    for p in gen.parameters():
        p.data[...] = 0.0
    save_checkpoint(path, gen)


def test_enhance_file_windows_and_reassembles_exactly(tmp_path):
    # 40000 samples against a 16384 window: three windows with the last
    # zero-padded, trimmed back to exactly 40000 on the way out.
    ckpt = tmp_path / "zero.sgn"
    _zero_checkpoint(ckpt)
    rng = np.random.default_rng(6)
    src = tmp_path / "in.wav"
    write_wav(Waveform(rng.uniform(-0.5, 0.5, 40000), 16000), src)
    dst = tmp_path / "out.wav"
    enhance_file(ckpt, src, dst)
    out = read_wav(dst)
    assert len(out) == 40000
    assert out.sample_rate == 16000
    # an all-zero generator emits silence regardless of input
    assert np.array_equal(out.samples, np.zeros(40000))


def test_enhance_file_resamples_48k(tmp_path):
    ckpt = tmp_path / "zero.sgn"
    _zero_checkpoint(ckpt)
    src = tmp_path / "in48.wav"
    write_wav(Waveform(np.random.default_rng(0).uniform(-0.5, 0.5, 120000), 48000), src)
    dst = tmp_path / "out.wav"
    enhance_file(ckpt, src, dst)
    out = read_wav(dst)
    assert len(out) == 40000
    assert out.sample_rate == 16000


def test_enhance_file_rejects_other_rates(tmp_path):
    ckpt = tmp_path / "zero.sgn"
    _zero_checkpoint(ckpt)
    src = tmp_path / "in8.wav"
    write_wav(Waveform(np.zeros(100), 8000), src)
    with pytest.raises(WrongRateError):
        enhance_file(ckpt, src, tmp_path / "out.wav")


def test_enhance_file_z_modes(tmp_path):
    ckpt = tmp_path / "g.sgn"
    save_checkpoint(ckpt, build_generator(TINY, seed=8))
    rng = np.random.default_rng(9)
    src = tmp_path / "in.wav"
    write_wav(Waveform(rng.uniform(-0.5, 0.5, 200), 16000), src)

    a, b, c, d = (tmp_path / f"{k}.wav" for k in "abcd")
    enhance_file(ckpt, src, a, z_mode="seeded", z_seed=1)
    enhance_file(ckpt, src, b, z_mode="seeded", z_seed=1)
    enhance_file(ckpt, src, c, z_mode="seeded", z_seed=2)
    enhance_file(ckpt, src, d, z_mode="zero")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()
    assert len(read_wav(d)) == 200
    with pytest.raises(ConfigError, match="z_mode"):
        enhance_file(ckpt, src, tmp_path / "x.wav", z_mode="random")


def test_enhance_empty_input(tmp_path):
    ckpt = tmp_path / "g.sgn"
    save_checkpoint(ckpt, build_generator(TINY, seed=8))
    src = tmp_path / "in.wav"
    write_wav(Waveform(np.zeros(0), 16000), src)
    dst = tmp_path / "out.wav"
    enhance_file(ckpt, src, dst)
    assert len(read_wav(dst)) == 0
