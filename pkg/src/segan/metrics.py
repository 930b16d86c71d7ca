"""Objective quality metrics and listening-test score arithmetic.

Segmental SNR over fixed frames with the usual [-10, 35] dB clamp; an
LPC-based log-likelihood-ratio distance; and MOS/CMOS/preference
aggregation from a ratings table.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import Waveform
from .errors import (
    AllFramesSilentError,
    IncompleteTripletError,
    LengthMismatchError,
    NumericalError,
)

SYSTEMS = ("noisy", "wiener", "segan")


def ssnr(clean: Waveform, test: Waveform, frame: int = 512,
         clamp_lo: float = -10.0, clamp_hi: float = 35.0) -> float:
    """Mean over non-overlapping frames of clamped
    10*log10(clean energy / error energy). Frames whose clean energy is
    below 1e-8 are skipped; the error denominator is floored at 1e-12 so
    identical signals score the upper clamp.
    """
    x, y = clean.samples, test.samples
    if x.size != y.size:
        raise LengthMismatchError(f"length mismatch: {x.size} vs {y.size}")
    if clean.sample_rate != test.sample_rate:
        raise LengthMismatchError(
            f"rate mismatch: {clean.sample_rate} vs {test.sample_rate}")
    if x.size < frame:
        raise LengthMismatchError(f"signals shorter than one frame ({x.size} < {frame})")
    vals = []
    for j in range(x.size // frame):
        seg = slice(j * frame, (j + 1) * frame)
        ex = float(np.sum(x[seg] * x[seg]))
        if ex < 1e-8:
            continue
        err = x[seg] - y[seg]
        ee = max(float(np.sum(err * err)), 1e-12)
        vals.append(min(max(10.0 * np.log10(ex / ee), clamp_lo), clamp_hi))
    if not vals:
        raise AllFramesSilentError("every frame fell below the clean-energy gate")
    return float(np.mean(vals))


def levinson(r: np.ndarray, order: int) -> tuple[np.ndarray, float]:
    """Solve the Toeplitz normal equations by the Levinson-Durbin
    recursion. Returns (a, err) with a[0] == 1 and err the final
    prediction-error power.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.size < order + 1:
        raise ValueError(f"need {order + 1} autocorrelation lags, got {r.size}")
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = float(r[0])
    if err <= 0.0:
        raise NumericalError(f"nonpositive zero-lag autocorrelation: {err}")
    for i in range(1, order + 1):
        acc = r[i] + float(np.dot(a[1:i], r[i - 1:0:-1]))
        k = -acc / err
        prev = a.copy()
        for j in range(1, i):
            a[j] = prev[j] + k * prev[i - j]
        a[i] = k
        err *= 1.0 - k * k
        if err <= 0.0:
            raise NumericalError(f"prediction error became nonpositive at order {i}")
    return a, err


def _autocorr(x: np.ndarray, order: int) -> np.ndarray:
    return np.array([float(np.dot(x[:x.size - k], x[k:])) for k in range(order + 1)])


def llr(clean: Waveform, test: Waveform, order: int = 16,
        frame_s: float = 0.030, hop_s: float = 0.0075) -> float:
    """Log-likelihood-ratio spectral distance: per Hanning-windowed frame,
    log of the ratio of the test LPC polynomial's residual energy to the
    clean one's, both measured against the clean autocorrelation; the mean
    is taken over the smallest 95% of frame values. Near-silent frames are
    skipped.
    """
    x, y = clean.samples, test.samples
    if x.size != y.size:
        raise LengthMismatchError(f"length mismatch: {x.size} vs {y.size}")
    if clean.sample_rate != test.sample_rate:
        raise LengthMismatchError(
            f"rate mismatch: {clean.sample_rate} vs {test.sample_rate}")
    rate = clean.sample_rate
    flen = round(frame_s * rate)
    fhop = round(hop_s * rate)
    if x.size < flen:
        raise LengthMismatchError(f"signals shorter than one frame ({x.size} < {flen})")
    win = np.hanning(flen)
    vals = []
    lags = np.arange(order + 1)
    toeplitz_idx = np.abs(lags[:, None] - lags[None, :])
    for start in range(0, x.size - flen + 1, fhop):
        xf = x[start:start + flen] * win
        yf = y[start:start + flen] * win
        rc = _autocorr(xf, order)
        rt = _autocorr(yf, order)
        if rc[0] < 1e-10 or rt[0] < 1e-10:
            continue
        a_clean, _ = levinson(rc, order)
        a_test, _ = levinson(rt, order)
        R = rc[toeplitz_idx]
        num = float(a_test @ R @ a_test)
        den = float(a_clean @ R @ a_clean)
        if num <= 0.0 or den <= 0.0:
            raise NumericalError("nonpositive residual energy in LLR frame")
        vals.append(np.log(num / den))
    if not vals:
        raise AllFramesSilentError("no frames above the energy gate")
    vals.sort()
    keep = max(1, round(0.95 * len(vals)))
    return float(np.mean(vals[:keep]))


@dataclass(frozen=True)
class Rating:
    listener: str
    sentence: str
    system: str
    score: int


@dataclass(frozen=True)
class MosSummary:
    mos: dict
    cmos: dict            # (sys_a, sys_b) -> mean score_a - score_b
    preference: dict      # (sys_a, sys_b) -> {sys_a: frac, sys_b: frac, "none": frac}


def load_ratings(path) -> list[Rating]:
    """CSV with header listener,sentence,system,score."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"listener", "sentence", "system", "score"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise ValueError(f"{path}: expected header listener,sentence,system,score")
        for rec in reader:
            rows.append(Rating(rec["listener"].strip(), rec["sentence"].strip(),
                               rec["system"].strip(), int(rec["score"])))
    return rows


def aggregate_mos(rows: list[Rating]) -> MosSummary:
    """MOS per system, pairwise CMOS means, and preference fractions. Every
    (listener, sentence) item must carry a rating for all three systems.
    """
    for r in rows:
        if r.system not in SYSTEMS:
            raise ValueError(f"unknown system {r.system!r}; expected one of {SYSTEMS}")
        if not 1 <= r.score <= 5:
            raise ValueError(f"score {r.score} outside 1..5 for {r.listener}/{r.sentence}")
    by_item: dict[tuple[str, str], dict[str, int]] = {}
    for r in rows:
        item = by_item.setdefault((r.listener, r.sentence), {})
        if r.system in item:
            raise IncompleteTripletError(
                f"duplicate rating for {r.listener}/{r.sentence}/{r.system}")
        item[r.system] = r.score
    if not by_item:
        raise IncompleteTripletError("empty ratings table")
    for (listener, sentence), scores in by_item.items():
        missing = set(SYSTEMS) - set(scores)
        if missing:
            raise IncompleteTripletError(
                f"{listener}/{sentence} missing ratings for {sorted(missing)}")

    mos = {s: float(np.mean([item[s] for item in by_item.values()])) for s in SYSTEMS}
    cmos = {}
    preference = {}
    for a, b in (("segan", "noisy"), ("segan", "wiener"), ("wiener", "noisy")):
        diffs = np.array([item[a] - item[b] for item in by_item.values()], dtype=float)
        cmos[(a, b)] = float(np.mean(diffs))
        n = diffs.size
        preference[(a, b)] = {
            a: float(np.sum(diffs > 0)) / n,
            b: float(np.sum(diffs < 0)) / n,
            "none": float(np.sum(diffs == 0)) / n,
        }
    return MosSummary(mos, cmos, preference)


def write_report(path, rows: list[tuple[str, str, float]]) -> None:
    """CSV of (file, metric, value) rows plus per-metric aggregate rows."""
    lines = ["file,metric,value"]
    for name, metric, value in rows:
        lines.append(f"{name},{metric},{value!r}")
    metrics = sorted({m for _, m, _ in rows})
    for m in metrics:
        vals = [v for _, mm, v in rows if mm == m]
        lines.append(f"AGGREGATE,{m},{float(np.mean(vals))!r}")
    Path(path).write_text("\n".join(lines) + "\n")
