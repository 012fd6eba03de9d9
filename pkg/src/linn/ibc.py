"""Implicit spectral corrector: a coordinate MLP that predicts per-bin gains.

Each (ear, frame, bin) query is the vector
``[position(3), quaternion(4), ear one-hot(2), freq encoding(2*n_f), time encoding(2*n_t)]``.
The MLP outputs a raw log-amplitude and phase correction which are squashed
with tanh and turned into a complex gain.
"""

from __future__ import annotations

import numpy as np

from .config import ConfigError, EncodingConfig, IbcConfig
from .dsp import ComplexSpectrogram
from .nn import Linear, Module, SiLU, silu_
from .pose import Pose

EAR_ONEHOT = np.eye(2)
# Relative margin inside the tanh bounds. When tanh rounds to +-1 it keeps
# arg G strictly inside (-pi, pi) and |G| inside [e^-alpha, e^alpha] after
# float32 rounding of exp, cos and sin.
MARGIN = 1e-6


def _bounded(t, scale: float):
    lim = scale * (1 - MARGIN)
    return np.clip(scale * t, -lim, lim)


def sinusoidal_pe(u, n_bands: int) -> np.ndarray:
    """Interleaved (sin, cos) of 2^k * 2pi * u for k < n_bands; shape [..., 2 n_bands]."""
    if n_bands < 1:
        raise ConfigError("number of bands must be >= 1")
    u = np.asarray(u, dtype=np.float64)
    ang = u[..., None] * (2.0 ** np.arange(n_bands)) * 2 * np.pi
    out = np.empty(u.shape + (2 * n_bands,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def freq_pe(f_norm, n_f: int = 8) -> np.ndarray:
    return sinusoidal_pe(f_norm, n_f)


def time_pe(t_norm, n_t: int = 12) -> np.ndarray:
    return sinusoidal_pe(t_norm, n_t)


def bin_norm(bins: int) -> np.ndarray:
    return np.arange(bins) / (bins - 1)


def frame_norm(frames, frames_per_chunk: int) -> np.ndarray:
    if frames_per_chunk < 2:
        raise ConfigError("frames_per_chunk must be >= 2")
    return np.asarray(frames, dtype=np.float64) / (frames_per_chunk - 1)


def assemble_coords(pose: Pose, ear: int, frame: int, bin: int, frames_per_chunk: int,
                    enc: EncodingConfig | None = None, bins: int = 257) -> np.ndarray:
    enc = enc or EncodingConfig()
    if ear not in (0, 1):
        raise ConfigError(f"ear must be 0 or 1, got {ear}")
    if not 0 <= bin < bins:
        raise ConfigError(f"bin {bin} out of range [0, {bins})")
    if not 0 <= frame < frames_per_chunk:
        raise ConfigError(f"frame {frame} out of range [0, {frames_per_chunk})")
    fpe = freq_pe(bin_norm(bins)[bin], enc.n_f)
    tpe = time_pe(frame_norm(frame, frames_per_chunk), enc.n_t)
    if not enc.use_freq_pe:
        fpe = np.zeros_like(fpe)
    if not enc.use_time_pe:
        tpe = np.zeros_like(tpe)
    return np.concatenate([pose.as_vector(), EAR_ONEHOT[ear], fpe, tpe])


class IbcMlp(Module):
    """Coordinate MLP: ``layers`` SiLU hidden layers of width ``hidden`` and a 2-wide output."""

    def __init__(self, n_in: int, cfg: IbcConfig | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        cfg = cfg or IbcConfig()
        widths = [n_in] + [cfg.hidden] * cfg.layers
        self.hidden = [Linear(widths[i], widths[i + 1], rng, dtype) for i in range(cfg.layers)]
        self.acts = [SiLU() for _ in range(cfg.layers)]
        self.head = Linear(cfg.hidden, 2, rng, dtype)

    @property
    def n_in(self) -> int:
        return self.hidden[0].n_in

    @property
    def dtype(self):
        return self.head.W.value.dtype

    def forward(self, coords: np.ndarray) -> np.ndarray:
        if coords.shape[-1] != self.n_in:
            raise ConfigError(f"coordinate width {coords.shape[-1]} != MLP input {self.n_in}")
        h = coords.astype(self.dtype, copy=False)
        for lin, act in zip(self.hidden, self.acts):
            h = act.forward(lin.forward(h))
        return self.head.forward(h)

    def backward(self, g: np.ndarray) -> np.ndarray:
        g = self.head.backward(g)
        for lin, act in zip(reversed(self.hidden), reversed(self.acts)):
            g = lin.backward(act.backward(g))
        return g

    def _tail_forward(self, h1_pre: np.ndarray, cache: bool) -> np.ndarray:
        if not cache:
            h = silu_(h1_pre)
            for lin in self.hidden[1:]:
                h = h @ lin.W.value
                h += lin.b.value
                silu_(h)
            out = h @ self.head.W.value
            out += self.head.b.value
            return out
        h = self.acts[0].forward(h1_pre)
        for lin, act in zip(self.hidden[1:], self.acts[1:]):
            h = act.forward(lin.forward(h))
        return self.head.forward(h)

    def forward_grid(self, frame_feat: np.ndarray, bin_feat: np.ndarray,
                     ear_feat: np.ndarray = EAR_ONEHOT, cache: bool = True) -> np.ndarray:
        """Evaluate every (ear, frame, bin) combination; returns ``[2, F, B, 2]``.

        Identical to ``forward`` on the concatenated coordinates
        ``[frame pose(7), ear(2), bin feat, frame time feat]``; the first layer
        is split by input block so the broadcast sum replaces its matmul.
        Pass ``cache=False`` when no backward pass will follow.
        """
        first = self.hidden[0]
        W, b = first.W.value, first.b.value
        nb = bin_feat.shape[-1]
        if 9 + nb + frame_feat.shape[-1] - 7 != self.n_in:
            raise ConfigError("grid features do not match MLP input width")
        dt = self.dtype
        W_pose, W_ear, W_f, W_t = W[:7], W[7:9], W[9:9 + nb], W[9 + nb:]
        fp = frame_feat[:, :7].astype(dt) @ W_pose + frame_feat[:, 7:].astype(dt) @ W_t
        ep = ear_feat.astype(dt) @ W_ear
        bp = bin_feat.astype(dt) @ W_f + b
        E, F, B, H = len(ep), len(fp), len(bp), W.shape[1]
        h1 = ep[:, None, None, :] + fp[None, :, None, :] + bp[None, None, :, :]
        if cache:
            self._grid = (frame_feat.astype(dt), bin_feat.astype(dt), ear_feat.astype(dt),
                          (E, F, B))
        out = self._tail_forward(h1.reshape(-1, H), cache)
        return out.reshape(E, F, B, 2)

    def backward_grid(self, g: np.ndarray):
        frame_feat, bin_feat, ear_feat, (E, F, B) = self._grid
        g = self.head.backward(g.reshape(-1, 2))
        for lin, act in zip(reversed(self.hidden[1:]), reversed(self.acts[1:])):
            g = lin.backward(act.backward(g))
        g1 = self.acts[0].backward(g).reshape(E, F, B, -1)
        nb = bin_feat.shape[-1]
        first = self.hidden[0]
        g_frame = g1.sum(axis=(0, 2))
        g_bin = g1.sum(axis=(0, 1))
        g_ear = g1.sum(axis=(1, 2))
        dW = first.W.grad
        dW[:7] += frame_feat[:, :7].T @ g_frame
        dW[9 + nb:] += frame_feat[:, 7:].T @ g_frame
        dW[7:9] += ear_feat.T @ g_ear
        dW[9:9 + nb] += bin_feat.T @ g_bin
        first.b.grad += g_bin.sum(axis=0)


def scale_corrections(raw, alpha: float = 0.8):
    raw = np.asarray(raw)
    return _bounded(np.tanh(raw[..., 0]), alpha), _bounded(np.tanh(raw[..., 1]), np.pi)


def build_gain(delta_a, delta_phi):
    return np.exp(delta_a) * (np.cos(delta_phi) + 1j * np.sin(delta_phi))


def apply_gain(spec, mask):
    data = spec.data if isinstance(spec, ComplexSpectrogram) else spec
    if np.shape(data) != np.shape(mask):
        raise ConfigError(f"mask shape {np.shape(mask)} != spectrogram shape {np.shape(data)}")
    out = data * mask
    if isinstance(spec, ComplexSpectrogram):
        return ComplexSpectrogram(out, spec.config)
    return out


class ImplicitCorrector:
    """Builds the per-(ear, frame, bin) gain mask and backpropagates through it."""

    def __init__(self, enc: EncodingConfig, cfg: IbcConfig, bins: int = 257,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.enc = enc
        self.cfg = cfg
        self.bins = bins
        self.mlp = IbcMlp(enc.coord_dim, cfg, rng, dtype)
        self._cache = None

    def features(self, frame_poses: np.ndarray, frame_index: np.ndarray, frames_per_chunk: int):
        tpe = time_pe(frame_norm(frame_index, frames_per_chunk), self.enc.n_t)
        fpe = freq_pe(bin_norm(self.bins), self.enc.n_f)
        if not self.enc.use_time_pe:
            tpe[:] = 0
        if not self.enc.use_freq_pe:
            fpe[:] = 0
        return np.concatenate([frame_poses, tpe], axis=1), fpe

    def raw(self, frame_poses, frame_index, frames_per_chunk, cache: bool = False) -> np.ndarray:
        frame_feat, bin_feat = self.features(frame_poses, frame_index, frames_per_chunk)
        return self.mlp.forward_grid(frame_feat, bin_feat, cache=cache)

    def mask(self, frame_poses: np.ndarray, frame_index: np.ndarray,
             frames_per_chunk: int, cache: bool = True) -> np.ndarray:
        """Complex gains ``[2, F, bins]`` for frames with poses ``[F, 7]``."""
        raw = self.raw(frame_poses, frame_index, frames_per_chunk, cache)
        ta, tp = np.tanh(raw[..., 0]), np.tanh(raw[..., 1])
        da, dp = _bounded(ta, self.cfg.alpha), _bounded(tp, np.pi)
        G = build_gain(da, dp)
        if cache:
            self._cache = (ta, tp, G)
        return G

    def backward(self, g_G: np.ndarray):
        """``g_G`` is dL/dRe G + 1j dL/dIm G."""
        ta, tp, G = self._cache
        g_da = (g_G * np.conj(G)).real
        g_dp = (g_G * np.conj(1j * G)).real
        g_raw = np.stack([g_da * self.cfg.alpha * (1 - ta ** 2),
                          g_dp * np.pi * (1 - tp ** 2)], axis=-1).astype(self.mlp.dtype)
        self.mlp.backward_grid(g_raw)
