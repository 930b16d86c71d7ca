"""Generator/discriminator wiring, shape ledger, and model checkpoints."""

import numpy as np
import pytest

from segan.checkpoint import load_tensors, save_tensors
from segan.engine import Tensor, backward, sample_z
from segan.errors import (ConfigError, CorruptCheckpointError,
                          MissingRefBatchError, ShapeMismatchError)
from segan.model import (GeneratorConfig, build_discriminator,
                         build_generator, d_forward, g_forward,
                         load_checkpoint, save_checkpoint,
                         set_reference_batch, shape_ledger)

TINY = GeneratorConfig(window=64, filter_width=5, enc_channels=(2, 3), z_channels=4)
REDUCED = GeneratorConfig(window=1024, enc_channels=(16, 32, 64, 128), z_channels=128)


def _tiny_z(batch, seed=0):
    return sample_z(batch, TINY.bottleneck_len, TINY.z_channels, seed=seed)


# ---------------------------------------------------------------------------
# Shape ledger

def test_full_scale_ledger():
    rows = shape_ledger(GeneratorConfig())
    assert rows == [
        ("input", 16384, 1),
        ("enc1", 8192, 16), ("enc2", 4096, 32), ("enc3", 2048, 32),
        ("enc4", 1024, 64), ("enc5", 512, 64), ("enc6", 256, 128),
        ("enc7", 128, 128), ("enc8", 64, 256), ("enc9", 32, 256),
        ("enc10", 16, 512), ("enc11", 8, 1024),
        ("bottleneck+z", 8, 2048),
        ("dec11", 16, 512), ("dec10", 32, 256), ("dec9", 64, 256),
        ("dec8", 128, 128), ("dec7", 256, 128), ("dec6", 512, 64),
        ("dec5", 1024, 64), ("dec4", 2048, 32), ("dec3", 4096, 32),
        ("dec2", 8192, 16), ("dec1", 16384, 1),
    ]


def test_reduced_ledger():
    rows = shape_ledger(REDUCED)
    assert rows[4] == ("enc4", 64, 128)
    assert rows[5] == ("bottleneck+z", 64, 256)
    assert rows[-1] == ("dec1", 1024, 1)
    lengths = [r[1] for r in rows[5:]]
    assert lengths == [64, 128, 256, 512, 1024]


def test_ledger_lengths_halve_then_double():
    rows = shape_ledger(TINY)
    assert [r[1] for r in rows] == [64, 32, 16, 16, 32, 64]


# ---------------------------------------------------------------------------
# Config validation

def test_config_validation():
    with pytest.raises(ConfigError, match="divisible"):
        GeneratorConfig(window=100)
    with pytest.raises(ConfigError, match="odd"):
        GeneratorConfig(filter_width=30)
    with pytest.raises(ConfigError, match="stride"):
        GeneratorConfig(stride=0)
    with pytest.raises(ConfigError, match="z_channels"):
        GeneratorConfig(z_channels=0)
    with pytest.raises(ConfigError, match="encoder layer"):
        GeneratorConfig(enc_channels=())
    with pytest.raises(ConfigError, match="positive"):
        GeneratorConfig(window=64, enc_channels=(4, 0))


def test_bottleneck_len():
    assert GeneratorConfig().bottleneck_len == 8
    assert REDUCED.bottleneck_len == 64
    assert TINY.bottleneck_len == 16


# ---------------------------------------------------------------------------
# Builders

def test_build_generator_deterministic():
    a = build_generator(TINY, seed=1)
    b = build_generator(TINY, seed=1)
    c = build_generator(TINY, seed=2)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert pa.name == pb.name
        assert np.array_equal(pa.data, pb.data)
    assert any(not np.array_equal(pa.data, pc.data)
               for pa, pc in zip(a.parameters(), c.parameters()))


def test_parameter_inventory():
    gen = build_generator(TINY)
    depth = TINY.depth
    assert len(gen.parameters()) == 6 * depth - 1
    disc = build_discriminator(TINY)
    assert len(disc.parameters()) == 4 * depth + 4
    for p in gen.parameters() + disc.parameters():
        assert p.data.dtype == np.float32


def test_weight_init_statistics():
    cfg = GeneratorConfig(window=512, enc_channels=(16, 32, 64), z_channels=32)
    gen = build_generator(cfg, seed=0)
    w = gen.enc_w[-1].data  # (31, 32, 64): enough draws to pin the std
    assert abs(w.std() - 0.02) < 0.002
    assert abs(w.mean()) < 0.001
    assert np.all(gen.enc_b[0].data == 0.0)
    assert np.all(gen.enc_a[0].data == np.float32(0.25))
    disc = build_discriminator(cfg, seed=0)
    assert np.all(disc.gamma[0].data == 1.0)
    assert np.all(disc.beta[0].data == 0.0)


def test_discriminator_head_shapes():
    disc = build_discriminator(REDUCED)
    assert disc.out_w.data.shape == (64, 1)
    assert disc.head_w.data.shape == (1, 128, 1)
    tiny = build_discriminator(TINY)
    assert tiny.conv_w[0].data.shape == (5, 2, 2)


# ---------------------------------------------------------------------------
# Generator forward

def test_g_forward_shape_range_and_purity():
    gen = build_generator(TINY, seed=3)
    rng = np.random.default_rng(0)
    noisy = rng.uniform(-0.9, 0.9, (2, 64)).astype(np.float32)
    z = _tiny_z(2)
    out1 = g_forward(gen, noisy, z)
    out2 = g_forward(gen, noisy, z)
    assert out1.data.shape == (2, 64, 1)
    assert out1.data.dtype == np.float32
    assert np.all(np.abs(out1.data) < 1.0)
    assert np.array_equal(out1.data, out2.data)


def test_g_forward_accepts_3d_input():
    gen = build_generator(TINY, seed=3)
    noisy = np.zeros((1, 64, 1), dtype=np.float32)
    assert g_forward(gen, noisy, _tiny_z(1)).data.shape == (1, 64, 1)


def test_g_forward_validation():
    gen = build_generator(TINY, seed=3)
    with pytest.raises(ShapeMismatchError):
        g_forward(gen, np.zeros((1, 63)), _tiny_z(1))
    with pytest.raises(ShapeMismatchError):
        g_forward(gen, np.zeros((1, 64)), _tiny_z(2))
    with pytest.raises(ShapeMismatchError):
        g_forward(gen, np.zeros((1, 64)), sample_z(1, 8, TINY.z_channels))


def test_skip_connections_carry_signal():
    gen = build_generator(TINY, seed=3)
    noisy = np.random.default_rng(1).uniform(-0.5, 0.5, (1, 64)).astype(np.float32)
    z = _tiny_z(1)
    base = g_forward(gen, noisy, z).data
    ablated = g_forward(gen, noisy, z, skip_gain=0.0).data
    assert not np.array_equal(base, ablated)
    scaled = g_forward(gen, noisy, z, skip_gain=1.0).data
    assert np.allclose(scaled, base, atol=1e-7)


def test_detach_bottleneck_leaves_skip_gradients_alive():
    gen = build_generator(TINY, seed=3)
    noisy = np.random.default_rng(1).uniform(-0.5, 0.5, (1, 64)).astype(np.float32)
    out = g_forward(gen, noisy, _tiny_z(1), detach_bottleneck=True)
    backward(out.sum())
    # the deepest encoder layer only feeds the (cut) bottleneck path
    assert np.all(gen.enc_w[-1].grad == 0.0)
    # shallower layers still reach the output through their skips
    assert np.any(gen.enc_w[0].grad != 0.0)


def test_full_graph_reaches_every_generator_parameter():
    gen = build_generator(TINY, seed=3)
    noisy = np.random.default_rng(1).uniform(-0.5, 0.5, (2, 64)).astype(np.float32)
    out = g_forward(gen, noisy, _tiny_z(2))
    backward(out.sum())
    for p in gen.parameters():
        assert p.grad is not None and np.any(p.grad != 0.0), p.name


# ---------------------------------------------------------------------------
# Discriminator forward

def _ref_batch(rng, batch=4):
    return (rng.uniform(-0.5, 0.5, (batch, 64)).astype(np.float32),
            rng.uniform(-0.5, 0.5, (batch, 64)).astype(np.float32))


def test_d_forward_shape():
    disc = build_discriminator(TINY, seed=4)
    rng = np.random.default_rng(2)
    set_reference_batch(disc, *_ref_batch(rng))
    score = d_forward(disc, *_ref_batch(rng, batch=3))
    assert score.data.shape == (3, 1)
    assert np.all(np.isfinite(score.data))


def test_d_forward_requires_reference():
    disc = build_discriminator(TINY, seed=4)
    with pytest.raises(MissingRefBatchError):
        d_forward(disc, np.zeros((1, 64)), np.zeros((1, 64)))


def test_d_forward_channel_order_matters():
    disc = build_discriminator(TINY, seed=4)
    rng = np.random.default_rng(2)
    set_reference_batch(disc, *_ref_batch(rng))
    a, b = _ref_batch(rng, batch=2)
    assert not np.array_equal(d_forward(disc, a, b).data,
                              d_forward(disc, b, a).data)


def test_d_zero_parameters_score_zero():
    disc = build_discriminator(TINY, seed=4)
    for p in disc.parameters():
        p.data[...] = 0.0
    rng = np.random.default_rng(2)
    set_reference_batch(disc, *_ref_batch(rng))
    score = d_forward(disc, *_ref_batch(rng, batch=2))
    assert np.array_equal(score.data, np.zeros((2, 1), dtype=np.float32))


def test_reference_stats_shape_and_effect():
    disc = build_discriminator(TINY, seed=4)
    rng = np.random.default_rng(2)
    set_reference_batch(disc, *_ref_batch(rng))
    assert disc.n_ref == 4
    assert len(disc.ref_mean) == TINY.depth
    assert disc.ref_mean[0].shape == (TINY.enc_channels[0],)
    probe = _ref_batch(np.random.default_rng(5), batch=2)
    s1 = d_forward(disc, *probe).data.copy()
    set_reference_batch(disc, *_ref_batch(np.random.default_rng(9)))
    s2 = d_forward(disc, *probe).data
    assert not np.array_equal(s1, s2)


def test_reference_batch_validation():
    disc = build_discriminator(TINY, seed=4)
    with pytest.raises(ShapeMismatchError):
        set_reference_batch(disc, np.zeros((2, 63)), np.zeros((2, 63)))


# ---------------------------------------------------------------------------
# Model checkpoints

def test_generator_checkpoint_round_trip(tmp_path):
    gen = build_generator(TINY, seed=6)
    path = tmp_path / "g.sgn"
    save_checkpoint(path, gen)
    loaded, disc, cfg = load_checkpoint(path)
    assert disc is None
    assert cfg == TINY
    noisy = np.random.default_rng(0).uniform(-0.5, 0.5, (2, 64)).astype(np.float32)
    z = _tiny_z(2)
    assert np.array_equal(g_forward(gen, noisy, z).data,
                          g_forward(loaded, noisy, z).data)


def test_full_checkpoint_round_trip(tmp_path):
    gen = build_generator(TINY, seed=6)
    disc = build_discriminator(TINY, seed=7)
    rng = np.random.default_rng(2)
    set_reference_batch(disc, *_ref_batch(rng))
    path = tmp_path / "gd.sgn"
    save_checkpoint(path, gen, disc)
    _, loaded, _ = load_checkpoint(path, expect_cfg=TINY)
    assert loaded is not None
    assert loaded.n_ref == disc.n_ref
    for a, b in zip(disc.ref_mean, loaded.ref_mean):
        assert np.array_equal(a, b)
    probe = _ref_batch(np.random.default_rng(5), batch=2)
    assert np.array_equal(d_forward(disc, *probe).data,
                          d_forward(loaded, *probe).data)


def test_save_refuses_disc_without_reference(tmp_path):
    gen = build_generator(TINY)
    disc = build_discriminator(TINY)
    with pytest.raises(MissingRefBatchError):
        save_checkpoint(tmp_path / "x.sgn", gen, disc)


def test_load_rejects_expected_config_mismatch(tmp_path):
    path = tmp_path / "g.sgn"
    save_checkpoint(path, build_generator(TINY))
    with pytest.raises(CorruptCheckpointError, match="cfg.window"):
        load_checkpoint(path, expect_cfg=REDUCED)


def _edit_archive(path, mutate):
    tensors = load_tensors(path)
    mutate(tensors)
    save_tensors(path, tensors)


def test_load_names_missing_tensor(tmp_path):
    path = tmp_path / "g.sgn"
    save_checkpoint(path, build_generator(TINY))
    _edit_archive(path, lambda t: t.pop("g.enc1.w"))
    with pytest.raises(CorruptCheckpointError, match="missing tensor g.enc1.w"):
        load_checkpoint(path)


def test_load_names_misshapen_tensor(tmp_path):
    path = tmp_path / "g.sgn"
    save_checkpoint(path, build_generator(TINY))
    _edit_archive(path, lambda t: t.update({"g.enc1.b": np.zeros(7, np.float32)}))
    with pytest.raises(CorruptCheckpointError, match="g.enc1.b"):
        load_checkpoint(path)


def test_load_rejects_unexpected_tensor(tmp_path):
    path = tmp_path / "g.sgn"
    save_checkpoint(path, build_generator(TINY))
    _edit_archive(path, lambda t: t.update({"bogus": np.zeros(1, np.float32)}))
    with pytest.raises(CorruptCheckpointError, match="unexpected tensor bogus"):
        load_checkpoint(path)


def test_load_names_missing_ref_stats(tmp_path):
    gen = build_generator(TINY, seed=6)
    disc = build_discriminator(TINY, seed=7)
    set_reference_batch(disc, *_ref_batch(np.random.default_rng(2)))
    path = tmp_path / "gd.sgn"
    save_checkpoint(path, gen, disc)
    _edit_archive(path, lambda t: t.pop("d.vbn1.ref_mean"))
    with pytest.raises(CorruptCheckpointError, match="d.vbn1.ref_mean"):
        load_checkpoint(path)


def test_load_truncated_file(tmp_path):
    path = tmp_path / "g.sgn"
    save_checkpoint(path, build_generator(TINY))
    path.write_bytes(path.read_bytes()[:50])
    with pytest.raises(CorruptCheckpointError, match="truncated"):
        load_checkpoint(path)
