"""STFT analysis/synthesis and fractional-delay resampling.

The transforms work on arrays whose last axis is time (``[..., L]``) and
produce spectra shaped ``[..., frames, bins]``. Each linear transform has an
explicit adjoint so gradients can flow through it during training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import ConfigError, StftConfig


@dataclass
class AudioBuffer:
    samples: np.ndarray  # [channels, L]
    sample_rate: int = 48000

    def __post_init__(self):
        self.samples = np.atleast_2d(self.samples)
        if self.samples.ndim != 2:
            raise ConfigError("samples must be [channels, L]")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    def __len__(self):
        return self.samples.shape[1]


@dataclass
class ComplexSpectrogram:
    data: np.ndarray  # [channels, frames, bins]
    config: StftConfig = field(default_factory=StftConfig)

    @property
    def frames(self) -> int:
        return self.data.shape[-2]

    @property
    def bins(self) -> int:
        return self.data.shape[-1]


def hamming_window(n: int, dtype=np.float64) -> np.ndarray:
    """Periodic Hamming window, w[i] = 0.54 - 0.46 cos(2 pi i / n)."""
    if n <= 1:
        raise ConfigError(f"window length must be > 1, got {n}")
    i = np.arange(n)
    return (0.54 - 0.46 * np.cos(2 * np.pi * i / n)).astype(dtype)


def num_frames(length: int, cfg: StftConfig) -> int:
    return length // cfg.hop + 1


def _pad(cfg: StftConfig) -> tuple[int, int]:
    # left/right padding; non-centered framing pads only on the right
    if cfg.centered:
        return cfg.window_len // 2, cfg.window_len // 2
    return 0, cfg.window_len


def _real_dtype(x):
    return np.float32 if x.dtype in (np.float32, np.complex64) else np.float64


def stft_array(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Centered, Hamming-windowed real STFT of ``x[..., L]``."""
    L = x.shape[-1]
    if L < 1:
        raise ConfigError("audio length must be >= 1")
    N, hop = cfg.window_len, cfg.hop
    w = hamming_window(N, _real_dtype(x))
    left, right = _pad(cfg)
    xp = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(left, right)])
    n = num_frames(L, cfg)
    frames = sliding_window_view(xp, N, axis=-1)[..., ::hop, :][..., :n, :]
    return np.fft.rfft(frames * w, axis=-1)


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    """Sum ``frames[..., F, N]`` placed every ``hop`` samples."""
    *lead, F, N = frames.shape
    r = N // hop
    out = np.zeros((*lead, F + r - 1, hop), dtype=frames.dtype)
    blocks = frames.reshape(*lead, F, r, hop)
    for j in range(r):
        out[..., j:j + F, :] += blocks[..., :, j, :]
    return out.reshape(*lead, (F + r - 1) * hop)


def _window_sumsq(F: int, cfg: StftConfig, dtype) -> np.ndarray:
    w = hamming_window(cfg.window_len, dtype)
    return _overlap_add(np.broadcast_to(w * w, (F, cfg.window_len)).copy(), cfg.hop)


def _frame_view(buf: np.ndarray, F: int, cfg: StftConfig) -> np.ndarray:
    return sliding_window_view(buf, cfg.window_len, axis=-1)[..., ::cfg.hop, :][..., :F, :]


def istft_array(spec: np.ndarray, out_len: int, cfg: StftConfig) -> np.ndarray:
    """Weighted overlap-add inverse, normalised by the summed squared window."""
    N = cfg.window_len
    if spec.shape[-1] != cfg.bins:
        raise ConfigError(f"expected {cfg.bins} bins, got {spec.shape[-1]}")
    dtype = _real_dtype(spec)
    F = spec.shape[-2]
    w = hamming_window(N, dtype)
    frames = np.fft.irfft(spec, n=N, axis=-1).astype(dtype) * w
    buf = _overlap_add(frames, cfg.hop)
    wss = _window_sumsq(F, cfg, dtype)
    if np.any(wss <= 0):
        raise RuntimeError("zero window energy in overlap-add")
    buf = buf / wss
    left, _ = _pad(cfg)
    return _fit(buf[..., left:], out_len)


def _fit(x: np.ndarray, n: int) -> np.ndarray:
    if x.shape[-1] >= n:
        return x[..., :n]
    return np.pad(x, [(0, 0)] * (x.ndim - 1) + [(0, n - x.shape[-1])])


def stft_adjoint(g: np.ndarray, length: int, cfg: StftConfig) -> np.ndarray:
    """Adjoint of ``stft_array`` for real-valued losses.

    ``g`` holds dL/dRe + 1j dL/dIm per bin; returns dL/dx of shape [..., length].
    """
    N, hop = cfg.window_len, cfg.hop
    dtype = _real_dtype(g)
    w = hamming_window(N, dtype)
    d = np.full(cfg.bins, 0.5, dtype=dtype)
    d[0] = 1.0
    if N % 2 == 0:
        d[-1] = 1.0
    dframes = (N * np.fft.irfft(g * d, n=N, axis=-1)).astype(dtype) * w
    buf = _overlap_add(dframes, hop)
    left, _ = _pad(cfg)
    return _fit(buf[..., left:], length)


def istft_adjoint(g: np.ndarray, n_frames: int, cfg: StftConfig) -> np.ndarray:
    """Adjoint of ``istft_array``: maps dL/dy to dL/dRe + 1j dL/dIm per bin."""
    N = cfg.window_len
    dtype = _real_dtype(g)
    w = hamming_window(N, dtype)
    total = (n_frames - 1) * cfg.hop + N
    left, _ = _pad(cfg)
    buf = np.zeros((*g.shape[:-1], total), dtype=dtype)
    n = min(g.shape[-1], total - left)
    buf[..., left:left + n] = g[..., :n]
    buf /= _window_sumsq(n_frames, cfg, dtype)
    gf = _frame_view(buf, n_frames, cfg) * w
    c = np.full(cfg.bins, 2.0 / N, dtype=dtype)
    c[0] = 1.0 / N
    if N % 2 == 0:
        c[-1] = 1.0 / N
    G = np.fft.rfft(gf, axis=-1) * c
    # irfft discards the imaginary part of the DC and Nyquist bins
    G[..., 0] = G[..., 0].real
    if N % 2 == 0:
        G[..., -1] = G[..., -1].real
    return G


def dft_reference(x: np.ndarray) -> np.ndarray:
    """Direct O(n^2) DFT of the non-negative bins of real ``x[n]``."""
    n = x.shape[-1]
    k = np.arange(n // 2 + 1)[:, None]
    t = np.arange(n)[None, :]
    basis = np.exp(-2j * np.pi * k * t / n)
    return np.asarray(x) @ basis.T


def stft(audio: AudioBuffer | np.ndarray, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    cfg = cfg or StftConfig()
    x = audio.samples if isinstance(audio, AudioBuffer) else np.atleast_2d(audio)
    return ComplexSpectrogram(stft_array(x, cfg), cfg)


def istft(spec: ComplexSpectrogram, out_len: int, sample_rate: int = 48000) -> AudioBuffer:
    return AudioBuffer(istft_array(spec.data, out_len, spec.config), sample_rate)


def _resample_parts(x: np.ndarray, indices: np.ndarray):
    L = x.shape[-1]
    lo = np.floor(indices)
    frac = (indices - lo).astype(x.dtype)
    lo = lo.astype(np.int64)
    hi = lo + 1
    xe = np.concatenate([x, np.zeros(x.shape[:-1] + (1,), x.dtype)], axis=-1)
    # out-of-range reads point at the appended zero
    lo_i = np.where((lo >= 0) & (lo < L), lo, L)
    hi_i = np.where((hi >= 0) & (hi < L), hi, L)
    x_lo = np.take_along_axis(xe, lo_i, axis=-1) if x.ndim > 1 else xe[lo_i]
    x_hi = np.take_along_axis(xe, hi_i, axis=-1) if x.ndim > 1 else xe[hi_i]
    return x_lo, x_hi, frac


def fractional_resample(x: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Linear interpolation of ``x`` at real-valued ``indices``; zeros outside."""
    x = np.asarray(x)
    indices = np.asarray(indices)
    if x.dtype.kind != "f":
        x = x.astype(np.float64)
    x_lo, x_hi, frac = _resample_parts(x, indices)
    return (1 - frac) * x_lo + frac * x_hi


def fractional_resample_grad(x: np.ndarray, indices: np.ndarray, g: np.ndarray) -> np.ndarray:
    """dL/dindices given dL/dy: the piecewise slope x[floor+1] - x[floor]."""
    x_lo, x_hi, _ = _resample_parts(np.asarray(x), np.asarray(indices))
    return g * (x_hi - x_lo)
