"""Empirical mode decomposition and its complete-ensemble (noise-assisted) variant.

Envelopes are natural cubic splines through the local extrema, with two
extrema mirrored across each boundary. The ensemble variant follows the
CEEMDAN recursion: the k-th mode is the ensemble mean of the first sifted mode
of ``residue + beta_k * E_k(noise)`` where ``E_k`` is the k-th mode of the noise
itself, with noise realizations drawn in +/- pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InsufficientData, NotDecomposable

MIN_DECOMPOSE_LENGTH = 16


@dataclass(frozen=True)
class EnsembleSpec:
    ensemble_size: int = 100
    noise_std: float = 0.2  # relative to signal std
    max_sifts: int = 50
    stop_threshold: float = 0.2
    max_imfs: int | None = None
    seed: int = 0

    @classmethod
    def plain(cls, **kw) -> "EnsembleSpec":
        return cls(ensemble_size=1, noise_std=0.0, **kw)


@dataclass(frozen=True)
class Decomposition:
    imfs: list[np.ndarray]
    residue: np.ndarray
    source_len: int
    spec: EnsembleSpec = field(default_factory=EnsembleSpec)

    @property
    def n_imfs(self) -> int:
        return len(self.imfs)

    def reconstruct(self) -> np.ndarray:
        out = np.array(self.residue, dtype=float, copy=True)
        for imf in self.imfs:
            out = out + imf
        return out

    def as_array(self) -> np.ndarray:
        """Rows are the IMFs followed by the residue."""
        return np.vstack(self.imfs + [self.residue]) if self.imfs else self.residue[None, :]


def find_extrema(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of interior local maxima and minima.

    A flat top counts once, at its middle sample.
    """
    d = np.diff(x)
    nz = np.flatnonzero(d != 0)
    if len(nz) < 2:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    s = np.sign(d[nz])
    change = np.flatnonzero(s[1:] != s[:-1])
    # extremum between the step nz[c] (leaving) and nz[c+1] (arriving) plateau
    left = nz[change] + 1
    right = nz[change + 1]
    idx = (left + right) // 2
    is_max = s[change] > 0
    return idx[is_max], idx[~is_max]


def count_zero_crossings(x: np.ndarray) -> int:
    s = np.sign(x)
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def is_imf(x: np.ndarray) -> bool:
    maxima, minima = find_extrema(x)
    return abs(len(maxima) + len(minima) - count_zero_crossings(x)) <= 1


def _mirror(ext: np.ndarray, n: int, k: int = 2) -> np.ndarray:
    """Reflect up to ``k`` extrema across each end of ``[0, n-1]``."""
    left = -ext[:k][::-1]
    right = 2 * (n - 1) - ext[-k:][::-1]
    left = left[left < 0]
    right = right[right > n - 1]
    return np.concatenate([left, ext, right])


def _envelope(x: np.ndarray, ext: np.ndarray) -> np.ndarray:
    n = len(x)
    t = _mirror(ext, n)
    # values follow the reflection: position -p carries x[p]
    src = np.where(t < 0, -t, np.where(t > n - 1, 2 * (n - 1) - t, t)).astype(int)
    spline = CubicSpline(t.astype(float), x[src], bc_type="natural")
    return spline(np.arange(n, dtype=float))


def envelope_mean(x: np.ndarray) -> np.ndarray:
    maxima, minima = find_extrema(x)
    if len(maxima) < 2 or len(minima) < 2:
        raise NotDecomposable("fewer than two maxima or minima")
    return 0.5 * (_envelope(x, maxima) + _envelope(x, minima))


def sift(signal, max_sifts: int = 50, stop_threshold: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Extract one IMF; returns ``(imf, signal - imf)``.

    Sifting stops once the Huang standard-deviation criterion drops below
    ``stop_threshold`` and the candidate satisfies the IMF extrema/zero-crossing
    condition, or after ``max_sifts`` iterations.
    """
    x = np.asarray(signal, dtype=float)
    if len(x) < 4:
        raise NotDecomposable("signal shorter than 4 samples")
    h = x
    m = envelope_mean(h)
    for _ in range(max_sifts):
        h_new = h - m
        denom = np.sum(h * h)
        sd = np.sum((h - h_new) ** 2) / denom if denom > 0 else 0.0
        h = h_new
        if sd < stop_threshold and is_imf(h):
            break
        try:
            m = envelope_mean(h)
        except NotDecomposable:
            break
    return h, x - h


def _is_finished(r: np.ndarray) -> bool:
    maxima, minima = find_extrema(r)
    return len(maxima) + len(minima) < 3


def imf_bound(n: int) -> int:
    return math.ceil(math.log2(n)) + 1


def emd(signal, max_sifts: int = 50, stop_threshold: float = 0.2, max_imfs: int | None = None) -> list[np.ndarray]:
    """Plain EMD; returns the IMFs followed by the residue."""
    r = np.asarray(signal, dtype=float)
    limit = imf_bound(len(r)) if max_imfs is None else max_imfs
    imfs = []
    while len(imfs) < limit and not _is_finished(r):
        try:
            imf, r = sift(r, max_sifts, stop_threshold)
        except NotDecomposable:
            break
        imfs.append(imf)
    return imfs + [r]


def _first_mode(y: np.ndarray, spec: EnsembleSpec) -> np.ndarray:
    try:
        return sift(y, spec.max_sifts, spec.stop_threshold)[0]
    except NotDecomposable:
        return np.zeros_like(y)


def _noise_modes(noise: np.ndarray, depth: int, spec: EnsembleSpec) -> list[list[np.ndarray]]:
    """EMD modes of each noise realization, zero-padded to ``depth`` modes."""
    out = []
    for w in noise:
        modes = emd(w, spec.max_sifts, spec.stop_threshold, max_imfs=depth)[:-1]
        modes += [np.zeros_like(w)] * (depth - len(modes))
        out.append(modes)
    return out


def decompose(signal, spec: EnsembleSpec | None = None) -> Decomposition:
    """Decompose ``signal`` into IMFs (fastest first) plus residue."""
    spec = spec or EnsembleSpec()
    x = np.asarray(signal, dtype=float)
    n = len(x)
    if n < MIN_DECOMPOSE_LENGTH:
        raise InsufficientData(f"need at least {MIN_DECOMPOSE_LENGTH} samples, got {n}")
    limit = imf_bound(n) if spec.max_imfs is None else min(spec.max_imfs, imf_bound(n))

    if spec.ensemble_size <= 1 and spec.noise_std == 0:
        parts = emd(x, spec.max_sifts, spec.stop_threshold, limit)
        return Decomposition(parts[:-1], parts[-1], n, spec)

    rng = np.random.default_rng(spec.seed)
    half = max(1, spec.ensemble_size // 2)
    base = rng.standard_normal((half, n))
    noise = np.empty((2 * half, n))
    noise[0::2] = base
    noise[1::2] = -base
    modes = _noise_modes(noise, limit, spec)
    sx = np.std(x)

    imfs: list[np.ndarray] = []
    r = x
    while len(imfs) < limit and not _is_finished(r):
        k = len(imfs)
        if k == 0:
            beta = spec.noise_std * sx
            members = [r + beta * w for w in noise]
        else:
            beta = spec.noise_std * np.std(r)
            members = []
            for m in modes:
                e = m[k - 1]
                se = np.std(m[0])
                members.append(r + (beta / se if se > 0 else 0.0) * e)
        acc = np.zeros(n)
        for y in members:  # fixed summation order keeps runs reproducible
            acc += _first_mode(y, spec)
        imf = acc / len(members)
        if not np.any(imf):
            break
        imfs.append(imf)
        r = r - imf
    return Decomposition(imfs, r, n, spec)


def monotone_fraction(x: np.ndarray) -> float:
    """Share of steps that move in the dominant direction."""
    d = np.diff(x)
    d = d[d != 0]
    if len(d) == 0:
        return 1.0
    return float(max(np.mean(d > 0), np.mean(d < 0)))
