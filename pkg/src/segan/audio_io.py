"""WAV I/O, 48 kHz -> 16 kHz resampling, pre/deemphasis, and windowing.

Everything here is a pure function on `Waveform` values. Signals are mono
float arrays, nominal range [-1, 1].
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidWindowError,
    OverlapUnsupportedError,
    UnsupportedFormatError,
    WrongRateError,
)


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", arr)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if arr.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {arr.shape}")
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM WAV; samples scaled by 1/32768 into [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise UnsupportedFormatError(f"{path}: expected mono, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise UnsupportedFormatError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
            if fh.getcomptype() != "NONE":
                raise UnsupportedFormatError(f"{path}: compressed WAV ({fh.getcomptype()}) not supported")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise UnsupportedFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(w: Waveform, path) -> None:
    """Write mono 16-bit PCM. Out-of-range samples are clipped, then
    quantized as round(x * 32768) clamped to [-32767, 32767], so values a
    reader produced (k / 32768) come back bit-exact.
    """
    x = np.clip(w.samples, -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32767, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def _design_lowpass(num_taps: int, cutoff_hz: float, rate: int) -> np.ndarray:
    """Hamming-windowed sinc, normalized to unit DC gain."""
    n = np.arange(num_taps) - (num_taps - 1) / 2.0
    fc = cutoff_hz / rate
    h = 2.0 * fc * np.sinc(2.0 * fc * n) * np.hamming(num_taps)
    return h / h.sum()


def resample_48k_to_16k(w: Waveform) -> Waveform:
    """Anti-aliased decimation by 3: 127-tap FIR at cutoff 0.45 * 16 kHz,
    then take every third sample at the filter's group delay. Output length
    is ceil(len / 3).
    """
    if w.sample_rate != 48000:
        raise WrongRateError(f"resampler expects 48000 Hz input, got {w.sample_rate}")
    taps = _design_lowpass(127, 0.45 * 16000, 48000)
    delay = (len(taps) - 1) // 2
    full = np.convolve(w.samples, taps, mode="full")
    out = full[delay:delay + len(w):3]
    return Waveform(out, 16000)


def preemphasis(w: Waveform, coef: float = 0.95) -> Waveform:
    """First-order high-pass: y[0] = x[0], y[n] = x[n] - coef * x[n-1]."""
    x = w.samples
    y = x.copy()
    y[1:] -= coef * x[:-1]
    return Waveform(y, w.sample_rate)


def deemphasis(w: Waveform, coef: float = 0.95) -> Waveform:
    """Exact inverse of preemphasis: y[n] = x[n] + coef * y[n-1]."""
    x = w.samples
    y = np.empty_like(x)
    acc = 0.0
    for n in range(x.size):
        acc = x[n] + coef * acc
        y[n] = acc
    return Waveform(y, w.sample_rate)


def chunk(w: Waveform, window: int, hop: int) -> tuple[np.ndarray, int]:
    """Slice into fixed windows starting at every multiple of hop below the
    signal length; the tail is zero-padded so the last window is full.

    Returns (chunks of shape (n, window), pad_len for later trimming).
    """
    if window <= 0 or hop <= 0 or hop > window:
        raise InvalidWindowError(f"need 0 < hop <= window, got window={window} hop={hop}")
    x = w.samples
    if x.size == 0:
        return np.zeros((0, window), dtype=x.dtype), 0
    starts = np.arange(0, x.size, hop)
    pad_len = int(starts[-1]) + window - x.size
    padded = np.concatenate([x, np.zeros(max(pad_len, 0), dtype=x.dtype)])
    out = np.stack([padded[s:s + window] for s in starts])
    return out, max(pad_len, 0)


def reassemble(chunks: np.ndarray, hop: int, pad_len: int,
               sample_rate: int = 16000) -> Waveform:
    """Concatenate non-overlapping windows and trim the padding added by
    chunk(). Only hop == window is supported (test-time convention).
    """
    chunks = np.asarray(chunks)
    if chunks.ndim != 2:
        raise InvalidWindowError(f"expected (n, window) chunks, got shape {chunks.shape}")
    window = chunks.shape[1]
    if hop != window:
        raise OverlapUnsupportedError(f"reassembly needs hop == window, got hop={hop} window={window}")
    if not 0 <= pad_len <= window * max(chunks.shape[0], 1):
        raise InvalidWindowError(f"pad_len {pad_len} inconsistent with {chunks.shape[0]} windows of {window}")
    flat = chunks.reshape(-1)
    if pad_len:
        flat = flat[:-pad_len]
    return Waveform(flat.copy(), sample_rate)
