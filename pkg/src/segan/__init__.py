"""Adversarial speech enhancement on raw waveforms, desk scale.

Everything runs on numpy through a small in-repo autodiff engine; no deep
learning framework is involved. See README.md for the tour.
"""

__version__ = "0.1.0"
