"""Classical Wiener baseline: STFT-domain gain with decision-directed
a-priori SNR estimation, noise spectrum taken from the leading frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import Waveform
from .errors import ShapeMismatchError, TooShortError, WrongRateError


@dataclass(frozen=True)
class Spectrogram:
    frames: np.ndarray      # complex, (n_frames, n_bins)
    frame_len: int
    hop: int
    window: str = "hamming"

    def __post_init__(self):
        if self.frames.ndim != 2:
            raise ShapeMismatchError(f"expected (frames, bins), got {self.frames.shape}")
        if self.frames.shape[1] != self.frame_len // 2 + 1:
            raise ShapeMismatchError(
                f"{self.frames.shape[1]} bins inconsistent with frame {self.frame_len}")


def _analysis_window(name: str, n: int) -> np.ndarray:
    if name != "hamming":
        raise ValueError(f"unsupported analysis window {name!r}")
    return np.hamming(n)


def stft(w: Waveform, frame: int = 512, hop: int = 256,
         window: str = "hamming") -> Spectrogram:
    """Windowed real FFT with a zero-padded tail so the frames cover the
    whole signal.
    """
    x = w.samples
    if x.size < frame:
        raise TooShortError(f"signal of {x.size} samples shorter than one frame ({frame})")
    win = _analysis_window(window, frame)
    n_frames = 1 + -(-(x.size - frame) // hop)
    padded = np.zeros((n_frames - 1) * hop + frame)
    padded[:x.size] = x
    rows = np.stack([np.fft.rfft(padded[t * hop:t * hop + frame] * win)
                     for t in range(n_frames)])
    return Spectrogram(rows, frame, hop, window)


def istft(s: Spectrogram, sample_rate: int = 16000) -> Waveform:
    """Weighted overlap-add inverse: sum of window-weighted frames divided
    by the summed squared window, which reconstructs exactly wherever the
    denominator is nonzero. Output length is (n_frames-1)*hop + frame_len.
    """
    win = _analysis_window(s.window, s.frame_len)
    n_frames = s.frames.shape[0]
    length = (n_frames - 1) * s.hop + s.frame_len
    num = np.zeros(length)
    den = np.zeros(length)
    for t in range(n_frames):
        seg = slice(t * s.hop, t * s.hop + s.frame_len)
        num[seg] += win * np.fft.irfft(s.frames[t], n=s.frame_len)
        den[seg] += win * win
    out = np.where(den > 1e-12, num / np.where(den > 1e-12, den, 1.0), 0.0)
    return Waveform(out, sample_rate)


def wiener_gains(power: np.ndarray, alpha: float = 0.98, noise_frames: int = 6,
                 gain_floor_db: float = -25.0) -> np.ndarray:
    """Per-bin gain H = xi / (1 + xi) for a (frames, bins) power spectrogram,
    with the a-priori SNR xi tracked by the decision-directed recursion
    xi_t = alpha * (H_{t-1}^2 * gamma_{t-1}) + (1 - alpha) * max(gamma_t - 1, 0)
    against a noise spectrum averaged over the leading frames. Gains lie in
    [10^(gain_floor_db/20), 1].
    """
    n_frames = power.shape[0]
    if n_frames <= noise_frames:
        raise TooShortError(
            f"need more than {noise_frames} frames to estimate noise, got {n_frames}")
    noise_psd = np.maximum(power[:noise_frames].mean(axis=0), 1e-20)
    floor = 10.0 ** (gain_floor_db / 20.0)
    prev = np.ones(power.shape[1])
    gains = np.empty_like(power)
    for t in range(n_frames):
        gamma = power[t] / noise_psd
        xi = alpha * prev + (1.0 - alpha) * np.maximum(gamma - 1.0, 0.0)
        h = np.clip(xi / (1.0 + xi), floor, 1.0)
        gains[t] = h
        prev = h * h * gamma
    return gains


def enhance_wiener(noisy: Waveform, alpha: float = 0.98, noise_frames: int = 6,
                   gain_floor_db: float = -25.0, frame: int = 512,
                   hop: int = 256) -> Waveform:
    """Apply wiener_gains in the STFT domain and resynthesize; output length
    equals the input length exactly.
    """
    if noisy.sample_rate != 16000:
        raise WrongRateError(f"expected 16 kHz input, got {noisy.sample_rate}")
    spec = stft(noisy, frame, hop)
    power = np.abs(spec.frames) ** 2
    gains = wiener_gains(power, alpha, noise_frames, gain_floor_db)
    cleaned = Spectrogram(gains * spec.frames, frame, hop, spec.window)
    out = istft(cleaned, noisy.sample_rate)
    return Waveform(out.samples[:len(noisy)], noisy.sample_rate)
