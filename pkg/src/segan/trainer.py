"""Three-phase adversarial training and batch file enhancement.

Each step: (1) the discriminator learns to score real (clean, noisy) pairs
toward 1, (2) then generated (enhanced, noisy) pairs toward 0, (3) then,
with the discriminator's parameters untouched, the generator descends the
adversarial score plus a weighted mean-absolute regression to the clean
target. One latent draw is shared by phases 2 and 3, and the generator
forward graph built in phase 2 is reused in phase 3 (the discriminator
update between them does not involve the generator's tensors).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import engine as eg
from .audio_io import (
    Waveform,
    chunk,
    deemphasis,
    preemphasis,
    read_wav,
    reassemble,
    resample_48k_to_16k,
    write_wav,
)
from .dataset import TrainingPair
from .engine import Tensor, backward, no_grad, sample_z
from .errors import ConfigError, NonFiniteLossError, WrongRateError
from .model import (
    Discriminator,
    Generator,
    GeneratorConfig,
    build_discriminator,
    build_generator,
    d_forward,
    g_forward,
    load_checkpoint,
    save_checkpoint,
    set_reference_batch,
)
from .optim import RMSprop


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 86
    lr: float = 0.0002
    batch_size: int = 16
    lambda_l1: float = 100.0
    seed: int = 0
    checkpoint_every: int = 1000
    adversarial: bool = True
    accum_steps: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.accum_steps < 1:
            raise ConfigError("epochs, batch_size and accum_steps must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.lambda_l1 < 0:
            raise ConfigError(f"lambda_l1 must be >= 0, got {self.lambda_l1}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0 (0 disables)")


@dataclass(frozen=True)
class StepReport:
    step: int
    d_real: float
    d_fake: float
    g_adv: float
    g_l1: float


def _micro_slices(batch_size: int, accum_steps: int) -> list[slice]:
    bounds = np.linspace(0, batch_size, min(accum_steps, batch_size) + 1).astype(int)
    return [slice(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def train_step(gen: Generator, disc: Discriminator | None,
               g_opt: RMSprop, d_opt: RMSprop | None,
               noisy: np.ndarray, clean: np.ndarray, z: Tensor,
               cfg: TrainConfig, step: int = 0) -> StepReport:
    """One optimization step over a batch. noisy/clean: (B, window) or
    (B, window, 1) float arrays; z: (B, bottleneck_len, z_channels).

    With accum_steps > 1 the batch is split into micro-batches whose
    gradients are summed before each optimizer step.
    """
    mcfg = gen.cfg
    if noisy.ndim == 2:
        noisy = noisy[..., None]
    if clean.ndim == 2:
        clean = clean[..., None]
    slices = _micro_slices(noisy.shape[0], cfg.accum_steps)
    noisy_t = [Tensor(np.asarray(noisy[s], dtype=np.float32)) for s in slices]
    clean_t = [Tensor(np.asarray(clean[s], dtype=np.float32)) for s in slices]
    z_t = [Tensor(z.data[s]) for s in slices]

    d_real = d_fake = g_adv = 0.0
    lam = Tensor(np.asarray(cfg.lambda_l1, np.float32))

    if cfg.adversarial:
        if disc is None or d_opt is None:
            raise ConfigError("adversarial training needs a discriminator and its optimizer")
        d_opt.zero_grad()
        vals = []
        for nt, ct in zip(noisy_t, clean_t):
            loss = eg.lsq_loss(d_forward(disc, ct, nt), 1.0)
            backward(loss)
            vals.append(loss.item())
        d_opt.step()
        d_real = float(np.mean(vals))

    fakes = [g_forward(gen, nt, zt) for nt, zt in zip(noisy_t, z_t)]

    if cfg.adversarial:
        d_opt.zero_grad()
        vals = []
        for fake, nt in zip(fakes, noisy_t):
            loss = eg.lsq_loss(d_forward(disc, fake.detach(), nt), 0.0)
            backward(loss)
            vals.append(loss.item())
        d_opt.step()
        d_fake = float(np.mean(vals))

    g_opt.zero_grad()
    adv_vals, l1_vals = [], []
    for fake, nt, ct in zip(fakes, noisy_t, clean_t):
        l1 = eg.l1_loss(fake, ct)
        if cfg.adversarial:
            adv = eg.lsq_loss(d_forward(disc, fake, nt), 1.0)
            total = eg.add(adv, eg.mul(l1, lam))
            adv_vals.append(adv.item())
        else:
            total = eg.mul(l1, lam)
        backward(total)
        l1_vals.append(l1.item())
    g_opt.step()
    if adv_vals:
        g_adv = float(np.mean(adv_vals))
    g_l1 = float(np.mean(l1_vals))

    report = StepReport(step, d_real, d_fake, g_adv, g_l1)
    for name, v in (("d_real", d_real), ("d_fake", d_fake), ("g_adv", g_adv), ("g_l1", g_l1)):
        if not np.isfinite(v):
            raise NonFiniteLossError(f"step {step}: {name} is {v}; aborting")
    return report


@dataclass
class TrainResult:
    reports: list[StepReport]
    final_checkpoint: Path
    loss_log: Path
    gen: Generator
    disc: Discriminator | None


def _z_seed_for(cfg_seed: int, step: int) -> int:
    return (cfg_seed + 1) * 1_000_003 + step


def train(model_cfg: GeneratorConfig, cfg: TrainConfig,
          pairs: list[TrainingPair], out_dir) -> TrainResult:
    """Run the full loop: deterministic shuffling, per-step latent draws,
    checkpoints every cfg.checkpoint_every steps plus a final one, and a
    loss log CSV (step,d_real,d_fake,g_adv,g_l1).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no training pairs supplied")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    noisy_all = np.stack([p.noisy for p in pairs]).astype(np.float32)[..., None]
    clean_all = np.stack([p.clean for p in pairs]).astype(np.float32)[..., None]
    if noisy_all.shape[1] != model_cfg.window:
        raise ConfigError(
            f"pair length {noisy_all.shape[1]} does not match model window {model_cfg.window}")

    gen = build_generator(model_cfg, seed=cfg.seed)
    disc = build_discriminator(model_cfg, seed=cfg.seed + 1) if cfg.adversarial else None
    g_opt = RMSprop(gen.parameters(), lr=cfg.lr)
    d_opt = RMSprop(disc.parameters(), lr=cfg.lr) if disc is not None else None

    order_rng = np.random.default_rng([cfg.seed, 0x5E6A])
    reports: list[StepReport] = []
    lines = ["step,d_real,d_fake,g_adv,g_l1"]
    step = 0
    for _epoch in range(cfg.epochs):
        perm = order_rng.permutation(len(pairs))
        for lo in range(0, len(pairs), cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            noisy_b, clean_b = noisy_all[idx], clean_all[idx]
            if step == 0 and disc is not None:
                set_reference_batch(disc, clean_b, noisy_b)
            z = sample_z(len(idx), model_cfg.bottleneck_len, model_cfg.z_channels,
                         seed=_z_seed_for(cfg.seed, step))
            rep = train_step(gen, disc, g_opt, d_opt, noisy_b, clean_b, z, cfg, step)
            reports.append(rep)
            lines.append(f"{rep.step},{rep.d_real!r},{rep.d_fake!r},{rep.g_adv!r},{rep.g_l1!r}")
            step += 1
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"ckpt_{step:06d}.sgn", gen, disc)

    final = out / "ckpt_final.sgn"
    save_checkpoint(final, gen, disc)
    log = out / "losses.csv"
    log.write_text("\n".join(lines) + "\n")
    return TrainResult(reports, final, log, gen, disc)


def enhance_file(checkpoint_path, in_path, out_path,
                 z_mode: str = "seeded", z_seed: int = 0) -> None:
    """Enhance one WAV end to end: preemphasis, non-overlapping windows
    through the generator, reassembly, deemphasis, write. 48 kHz input is
    resampled; output duration equals input duration.
    """
    if z_mode not in ("seeded", "zero"):
        raise ConfigError(f"z_mode must be 'seeded' or 'zero', got {z_mode!r}")
    gen, _disc, mcfg = load_checkpoint(checkpoint_path)
    w = read_wav(in_path)
    if w.sample_rate == 48000:
        w = resample_48k_to_16k(w)
    elif w.sample_rate != 16000:
        raise WrongRateError(f"{in_path}: expected 16 or 48 kHz, got {w.sample_rate}")
    pre = preemphasis(w)
    windows, pad = chunk(pre, mcfg.window, mcfg.window)
    if windows.shape[0] == 0:
        write_wav(Waveform(np.zeros(0), 16000), out_path)
        return
    n = windows.shape[0]
    if z_mode == "zero":
        z = Tensor(np.zeros((n, mcfg.bottleneck_len, mcfg.z_channels), dtype=np.float32))
    else:
        z = sample_z(n, mcfg.bottleneck_len, mcfg.z_channels, seed=z_seed)
    with no_grad():
        out = g_forward(gen, windows.astype(np.float32)[..., None], z)
    flat = reassemble(out.data[:, :, 0].astype(np.float64), mcfg.window, pad, 16000)
    write_wav(deemphasis(flat), out_path)
