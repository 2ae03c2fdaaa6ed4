"""Analytic signal, instantaneous amplitude/phase/frequency of IMFs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .emd import Decomposition
from .errors import InsufficientData, NoOscillatoryComponent

MIN_LENGTH = 8


@dataclass(frozen=True)
class AnalyticSignal:
    real_part: np.ndarray
    imag_part: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray  # unwrapped, radians
    inst_freq: np.ndarray  # cycles per timestep


def hilbert_multiplier(n: int) -> np.ndarray:
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1 : n // 2] = 2.0
    else:
        h[1 : (n + 1) // 2] = 2.0
    return h


def phase_frequency(phase: np.ndarray) -> np.ndarray:
    """d(phase)/dt / 2pi: central differences inside, one-sided at the ends."""
    return np.gradient(phase) / (2 * np.pi)


def analytic_signal(x) -> AnalyticSignal:
    """Analytic signal via the FFT: negative frequencies zeroed, positive doubled."""
    x = np.asarray(x, dtype=float)
    if len(x) < MIN_LENGTH:
        raise InsufficientData(f"need at least {MIN_LENGTH} samples, got {len(x)}")
    z = np.fft.ifft(np.fft.fft(x) * hilbert_multiplier(len(x)))
    phase = np.unwrap(np.angle(z))
    return AnalyticSignal(
        real_part=z.real,
        imag_part=z.imag,
        amplitude=np.abs(z),
        phase=phase,
        inst_freq=phase_frequency(phase),
    )


def lag_one(values: np.ndarray) -> np.ndarray:
    """Value at t becomes the value at t-1; the first slot repeats the second."""
    out = np.empty_like(values)
    out[1:] = values[:-1]
    out[0] = out[1] if len(out) > 1 else values[0]
    return out


def soh_inst_freq(d: Decomposition, component: str = "dominant") -> np.ndarray:
    """Lagged instantaneous frequency used as a predictor.

    ``component`` selects the source: ``"dominant"`` (the IMF with the largest
    mean amplitude), ``"first"`` (the fastest IMF) or ``"weighted"`` (the
    amplitude-weighted mean frequency over all IMFs).
    """
    if d.n_imfs == 0:
        raise NoOscillatoryComponent("decomposition has no IMFs")
    signals = [analytic_signal(imf) for imf in d.imfs]
    if component == "dominant":
        k = int(np.argmax([s.amplitude.mean() for s in signals]))
        f = signals[k].inst_freq
    elif component == "first":
        f = signals[0].inst_freq
    elif component == "weighted":
        amp = np.vstack([s.amplitude for s in signals])
        freq = np.vstack([s.inst_freq for s in signals])
        w = amp.sum(axis=0)
        f = np.where(w > 0, (amp * freq).sum(axis=0) / np.where(w > 0, w, 1), 0.0)
    else:
        raise ValueError(f"unknown component selector {component!r}")
    return lag_one(f)
