"""Generator and discriminator topologies, their config, and checkpoints.

One code path covers both the full-scale network (window 16384, 11 encoder
layers) and reduced desk variants; only the config differs. The generator
is a strided conv encoder, a bottleneck where the latent block joins, and a
mirrored transposed-conv decoder fed by per-layer skip concatenations. The
discriminator runs the same conv stack over a (candidate, noisy) channel
pair with virtual batch norm and a LeakyReLU after every layer, then a 1x1
conv and a final linear neuron.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as eg
from .checkpoint import load_tensors, save_tensors
from .engine import Parameter, Tensor, no_grad
from .errors import (
    ConfigError,
    CorruptCheckpointError,
    MissingRefBatchError,
    ShapeMismatchError,
)

WEIGHT_STD = 0.02
PRELU_INIT = 0.25
LEAKY_ALPHA = 0.3
VBN_EPS = 1e-5

DEFAULT_ENC_CHANNELS = (16, 32, 32, 64, 64, 128, 128, 256, 256, 512, 1024)


@dataclass(frozen=True)
class GeneratorConfig:
    window: int = 16384
    filter_width: int = 31
    stride: int = 2
    enc_channels: tuple[int, ...] = DEFAULT_ENC_CHANNELS
    z_channels: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "enc_channels", tuple(int(c) for c in self.enc_channels))
        if len(self.enc_channels) < 1:
            raise ConfigError("need at least one encoder layer")
        if any(c < 1 for c in self.enc_channels):
            raise ConfigError(f"channel counts must be positive: {self.enc_channels}")
        if self.filter_width < 1 or self.filter_width % 2 == 0:
            raise ConfigError(f"filter_width must be odd and positive, got {self.filter_width}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.z_channels < 1:
            raise ConfigError(f"z_channels must be positive, got {self.z_channels}")
        total = self.stride ** len(self.enc_channels)
        if self.window % total != 0 or self.window // total < 1:
            raise ConfigError(
                f"window {self.window} not divisible by stride^{len(self.enc_channels)} = {total}")

    @property
    def depth(self) -> int:
        return len(self.enc_channels)

    @property
    def bottleneck_len(self) -> int:
        return self.window // self.stride ** self.depth


def _enc_in_channels(cfg: GeneratorConfig) -> list[int]:
    return [1] + list(cfg.enc_channels[:-1])


@dataclass
class Generator:
    cfg: GeneratorConfig
    enc_w: list[Parameter]
    enc_b: list[Parameter]
    enc_a: list[Parameter]
    dec_w: list[Parameter]   # ordered deepest-first (application order)
    dec_b: list[Parameter]
    dec_a: list[Parameter]   # one per decoder layer except the outermost

    def parameters(self) -> list[Parameter]:
        return [*self.enc_w, *self.enc_b, *self.enc_a,
                *self.dec_w, *self.dec_b, *self.dec_a]


@dataclass
class Discriminator:
    cfg: GeneratorConfig
    conv_w: list[Parameter]
    conv_b: list[Parameter]
    gamma: list[Parameter]
    beta: list[Parameter]
    head_w: Parameter        # 1x1 conv collapsing channels to 1
    head_b: Parameter
    out_w: Parameter         # final linear neuron
    out_b: Parameter
    ref_mean: list[np.ndarray] | None = None
    ref_var: list[np.ndarray] | None = None
    n_ref: int = 0

    def parameters(self) -> list[Parameter]:
        return [*self.conv_w, *self.conv_b, *self.gamma, *self.beta,
                self.head_w, self.head_b, self.out_w, self.out_b]


def build_generator(cfg: GeneratorConfig, seed: int = 0) -> Generator:
    rng = np.random.default_rng(seed)
    wdt = np.float32
    width = cfg.filter_width
    enc_in = _enc_in_channels(cfg)
    enc_w, enc_b, enc_a = [], [], []
    for k, (cin, cout) in enumerate(zip(enc_in, cfg.enc_channels), start=1):
        enc_w.append(Parameter(f"g.enc{k}.w", rng.normal(0, WEIGHT_STD, (width, cin, cout)), dtype=wdt))
        enc_b.append(Parameter(f"g.enc{k}.b", np.zeros(cout), dtype=wdt))
        enc_a.append(Parameter(f"g.enc{k}.a", np.full(cout, PRELU_INIT), dtype=wdt))
    # decoder layer k mirrors encoder layer k: outputs enc_in[k-1] channels;
    # the deepest input is bottleneck+z, every other input is doubled by a skip
    dec_w, dec_b, dec_a = [], [], []
    for k in range(cfg.depth, 0, -1):
        cout = enc_in[k - 1]
        cin = cfg.enc_channels[-1] + cfg.z_channels if k == cfg.depth else 2 * cfg.enc_channels[k - 1]
        dec_w.append(Parameter(f"g.dec{k}.w", rng.normal(0, WEIGHT_STD, (width, cout, cin)), dtype=wdt))
        dec_b.append(Parameter(f"g.dec{k}.b", np.zeros(cout), dtype=wdt))
        if k > 1:
            dec_a.append(Parameter(f"g.dec{k}.a", np.full(cout, PRELU_INIT), dtype=wdt))
    return Generator(cfg, enc_w, enc_b, enc_a, dec_w, dec_b, dec_a)


def build_discriminator(cfg: GeneratorConfig, seed: int = 0) -> Discriminator:
    rng = np.random.default_rng(seed)
    wdt = np.float32
    width = cfg.filter_width
    in_ch = [2] + list(cfg.enc_channels[:-1])
    conv_w, conv_b, gamma, beta = [], [], [], []
    for k, (cin, cout) in enumerate(zip(in_ch, cfg.enc_channels), start=1):
        conv_w.append(Parameter(f"d.conv{k}.w", rng.normal(0, WEIGHT_STD, (width, cin, cout)), dtype=wdt))
        conv_b.append(Parameter(f"d.conv{k}.b", np.zeros(cout), dtype=wdt))
        gamma.append(Parameter(f"d.vbn{k}.gamma", np.ones(cout), dtype=wdt))
        beta.append(Parameter(f"d.vbn{k}.beta", np.zeros(cout), dtype=wdt))
    top = cfg.enc_channels[-1]
    head_w = Parameter("d.head.w", rng.normal(0, WEIGHT_STD, (1, top, 1)), dtype=wdt)
    head_b = Parameter("d.head.b", np.zeros(1), dtype=wdt)
    out_w = Parameter("d.out.w", rng.normal(0, WEIGHT_STD, (cfg.bottleneck_len, 1)), dtype=wdt)
    out_b = Parameter("d.out.b", np.zeros(1), dtype=wdt)
    return Discriminator(cfg, conv_w, conv_b, gamma, beta, head_w, head_b, out_w, out_b)


def _as_bwc(x, window: int) -> Tensor:
    """Coerce (B, window) or (B, window, 1) array/Tensor to a (B, window, 1) Tensor."""
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
    if t.data.ndim == 2:
        t = t.reshape(t.data.shape[0], t.data.shape[1], 1)
    if t.data.ndim != 3 or t.data.shape[1] != window or t.data.shape[2] != 1:
        raise ShapeMismatchError(f"expected (B, {window}[, 1]) signal, got {t.data.shape}")
    return t


def g_forward(gen: Generator, noisy, z: Tensor, *, skip_gain: float | None = None,
              detach_bottleneck: bool = False) -> Tensor:
    """Enhance a batch of windows. noisy: (B, window, 1); z matches the
    bottleneck (B, bottleneck_len, z_channels); output (B, window, 1) in
    (-1, 1).

    skip_gain / detach_bottleneck are test-only ablation knobs: scale the
    skip tensors or cut the gradient path through the bottleneck.
    """
    cfg = gen.cfg
    x = _as_bwc(noisy, cfg.window)
    want_z = (x.data.shape[0], cfg.bottleneck_len, cfg.z_channels)
    if z.data.shape != want_z:
        raise ShapeMismatchError(f"z shape {z.data.shape} != {want_z}")
    enc_out = []
    h = x
    for w, b, a in zip(gen.enc_w, gen.enc_b, gen.enc_a):
        h = eg.prelu(eg.conv1d(h, w, b, stride=cfg.stride), a)
        enc_out.append(h)
    c = enc_out[-1].detach() if detach_bottleneck else enc_out[-1]
    h = eg.concat_channels(c, z)
    for i, k in enumerate(range(cfg.depth, 0, -1)):
        h = eg.conv1d_transpose(h, gen.dec_w[i], gen.dec_b[i], stride=cfg.stride)
        if k > 1:
            h = eg.prelu(h, gen.dec_a[i])
            skip = enc_out[k - 2]
            if skip_gain is not None:
                skip = eg.mul(skip, Tensor(np.asarray(skip_gain, skip.data.dtype)))
            h = eg.concat_channels(h, skip)
        else:
            h = eg.tanh(h)
    return h


def set_reference_batch(disc: Discriminator, candidate: np.ndarray, noisy: np.ndarray) -> None:
    """Compute and freeze per-layer normalization stats from a fixed
    reference batch of real (candidate, noisy) pairs. The reference pass
    normalizes each layer with the batch's own statistics.
    """
    cand = np.asarray(candidate, dtype=np.float32)
    noise = np.asarray(noisy, dtype=np.float32)
    if cand.ndim == 2:
        cand = cand[..., None]
    if noise.ndim == 2:
        noise = noise[..., None]
    h = np.concatenate([cand, noise], axis=2)
    if h.ndim != 3 or h.shape[1] != disc.cfg.window or h.shape[2] != 2:
        raise ShapeMismatchError(f"reference batch must be (B, {disc.cfg.window}, 2), got {h.shape}")
    means, variances = [], []
    with no_grad():
        t = Tensor(h)
        for w, b, gamma, beta in zip(disc.conv_w, disc.conv_b, disc.gamma, disc.beta):
            pre = eg.conv1d(t, w, b, stride=disc.cfg.stride).data
            mu = pre.mean(axis=(0, 1))
            var = pre.var(axis=(0, 1))
            means.append(mu.astype(np.float32))
            variances.append(var.astype(np.float32))
            normed = gamma.data * (pre - mu) / np.sqrt(var + VBN_EPS) + beta.data
            t = Tensor(np.where(normed > 0, normed, LEAKY_ALPHA * normed))
    disc.ref_mean = means
    disc.ref_var = variances
    disc.n_ref = h.shape[0]


def d_forward(disc: Discriminator, candidate, noisy) -> Tensor:
    """Score a (candidate, noisy) pair batch: channel 0 is the candidate
    (clean or enhanced), channel 1 the noisy condition. Returns an
    unbounded (B, 1) score.
    """
    if disc.ref_mean is None:
        raise MissingRefBatchError("discriminator needs set_reference_batch before scoring")
    cfg = disc.cfg
    a = _as_bwc(candidate, cfg.window)
    b = _as_bwc(noisy, cfg.window)
    h = eg.concat_channels(a, b)
    for i in range(cfg.depth):
        h = eg.conv1d(h, disc.conv_w[i], disc.conv_b[i], stride=cfg.stride)
        h = eg.virtual_batch_norm(h, disc.ref_mean[i], disc.ref_var[i], disc.n_ref,
                                  disc.gamma[i], disc.beta[i], eps=VBN_EPS)
        h = eg.leaky_relu(h, LEAKY_ALPHA)
    h = eg.conv1d(h, disc.head_w, disc.head_b, stride=1)
    h = h.reshape(h.data.shape[0], cfg.bottleneck_len)
    return eg.linear(h, disc.out_w, disc.out_b)


def shape_ledger(cfg: GeneratorConfig) -> list[tuple[str, int, int]]:
    """Pure arithmetic enumeration of (layer, length, channels) through the
    generator: input, each encoder output, bottleneck after the latent
    concat, each decoder output.
    """
    rows = [("input", cfg.window, 1)]
    length = cfg.window
    for k, ch in enumerate(cfg.enc_channels, start=1):
        length //= cfg.stride
        rows.append((f"enc{k}", length, ch))
    rows.append(("bottleneck+z", length, cfg.enc_channels[-1] + cfg.z_channels))
    enc_in = _enc_in_channels(cfg)
    for k in range(cfg.depth, 0, -1):
        length *= cfg.stride
        rows.append((f"dec{k}", length, enc_in[k - 1]))
    return rows


# ---------------------------------------------------------------------------
# checkpointing


def _cfg_tensors(cfg: GeneratorConfig) -> dict[str, np.ndarray]:
    return {
        "cfg.window": np.array([cfg.window], dtype=np.float32),
        "cfg.filter_width": np.array([cfg.filter_width], dtype=np.float32),
        "cfg.stride": np.array([cfg.stride], dtype=np.float32),
        "cfg.z_channels": np.array([cfg.z_channels], dtype=np.float32),
        "cfg.enc_channels": np.array(cfg.enc_channels, dtype=np.float32),
    }


def _cfg_from_tensors(t: dict[str, np.ndarray], path) -> GeneratorConfig:
    def scalar(name):
        if name not in t:
            raise CorruptCheckpointError(f"{path}: missing tensor {name}")
        return int(round(float(t[name][0])))
    if "cfg.enc_channels" not in t:
        raise CorruptCheckpointError(f"{path}: missing tensor cfg.enc_channels")
    return GeneratorConfig(
        window=scalar("cfg.window"),
        filter_width=scalar("cfg.filter_width"),
        stride=scalar("cfg.stride"),
        enc_channels=tuple(int(round(float(c))) for c in t["cfg.enc_channels"]),
        z_channels=scalar("cfg.z_channels"),
    )


def save_checkpoint(path, gen: Generator, disc: Discriminator | None = None) -> None:
    tensors = _cfg_tensors(gen.cfg)
    for p in gen.parameters():
        tensors[p.name] = p.data
    if disc is not None:
        if disc.ref_mean is None:
            raise MissingRefBatchError("refusing to save a discriminator without reference stats")
        for p in disc.parameters():
            tensors[p.name] = p.data
        for i, (mu, var) in enumerate(zip(disc.ref_mean, disc.ref_var), start=1):
            tensors[f"d.vbn{i}.ref_mean"] = mu
            tensors[f"d.vbn{i}.ref_var"] = var
        tensors["d.n_ref"] = np.array([disc.n_ref], dtype=np.float32)
    save_tensors(path, tensors)


def load_checkpoint(path, expect_cfg: GeneratorConfig | None = None
                    ) -> tuple[Generator, Discriminator | None, GeneratorConfig]:
    stored = load_tensors(path)
    cfg = _cfg_from_tensors(stored, path)
    if expect_cfg is not None:
        for name, have, want in [
            ("cfg.window", cfg.window, expect_cfg.window),
            ("cfg.filter_width", cfg.filter_width, expect_cfg.filter_width),
            ("cfg.stride", cfg.stride, expect_cfg.stride),
            ("cfg.enc_channels", cfg.enc_channels, expect_cfg.enc_channels),
            ("cfg.z_channels", cfg.z_channels, expect_cfg.z_channels),
        ]:
            if have != want:
                raise CorruptCheckpointError(f"{path}: {name} is {have}, expected {want}")
    consumed = set(_cfg_tensors(cfg))

    def fill(p: Parameter):
        if p.name not in stored:
            raise CorruptCheckpointError(f"{path}: missing tensor {p.name}")
        arr = stored[p.name]
        if arr.shape != p.data.shape:
            raise CorruptCheckpointError(
                f"{path}: tensor {p.name} has shape {arr.shape}, expected {p.data.shape}")
        p.data = arr.astype(np.float32)
        consumed.add(p.name)

    gen = build_generator(cfg, seed=0)
    for p in gen.parameters():
        fill(p)

    disc = None
    if any(name.startswith("d.") for name in stored):
        disc = build_discriminator(cfg, seed=0)
        for p in disc.parameters():
            fill(p)
        if "d.n_ref" not in stored:
            raise CorruptCheckpointError(f"{path}: missing tensor d.n_ref")
        disc.n_ref = int(round(float(stored["d.n_ref"][0])))
        consumed.add("d.n_ref")
        means, variances = [], []
        for i in range(1, cfg.depth + 1):
            for buf, tag in ((means, "ref_mean"), (variances, "ref_var")):
                name = f"d.vbn{i}.{tag}"
                if name not in stored:
                    raise CorruptCheckpointError(f"{path}: missing tensor {name}")
                want = (cfg.enc_channels[i - 1],)
                if stored[name].shape != want:
                    raise CorruptCheckpointError(
                        f"{path}: tensor {name} has shape {stored[name].shape}, expected {want}")
                buf.append(stored[name])
                consumed.add(name)
        disc.ref_mean = means
        disc.ref_var = variances

    extra = set(stored) - consumed
    if extra:
        raise CorruptCheckpointError(f"{path}: unexpected tensor {sorted(extra)[0]}")
    return gen, disc, cfg
