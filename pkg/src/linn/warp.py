"""Time-domain warping: per-ear fractional delays from source geometry.

The geometric part models two point ears on the listener's interaural axis
(left at +y, right at -y) and a point source radiating isotropically. A small
temporal conv net running at pose rate may add a bounded correction to the
read indices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, WarpConfig
from .dsp import AudioBuffer, fractional_resample, fractional_resample_grad
from .nn import Conv1d, Module, SiLU, Tanh
from .pose import PoseTrack


@dataclass
class WarpField:
    indices: np.ndarray  # [2, L] fractional read positions (left, right)

    def __len__(self):
        return self.indices.shape[-1]


def ear_positions(cfg: WarpConfig) -> np.ndarray:
    return np.array([[0.0, cfg.ear_offset, 0.0], [0.0, -cfg.ear_offset, 0.0]])


def geometric_delays(positions: np.ndarray, cfg: WarpConfig) -> np.ndarray:
    """Propagation delay in samples from each position ``[L, 3]`` to each ear; ``[2, L]``."""
    d = np.linalg.norm(positions[None, :, :] - ear_positions(cfg)[:, None, :], axis=-1)
    return d * cfg.fs / cfg.speed_of_sound


def geometric_warp(track: PoseTrack, L: int, cfg: WarpConfig) -> WarpField:
    if L <= 0:
        raise ConfigError("warp length must be positive")
    pos = track.sample(np.arange(L) / cfg.fs)[:, :3]
    return WarpField(np.arange(L, dtype=np.float64)[None, :] - geometric_delays(pos, cfg))


def apply_warp(x: AudioBuffer | np.ndarray, field: WarpField) -> AudioBuffer | np.ndarray:
    """Read the mono signal at each ear's indices."""
    samples = x.samples[0] if isinstance(x, AudioBuffer) else np.asarray(x)
    if samples.ndim != 1:
        raise ConfigError("apply_warp expects a mono signal")
    if samples.shape[-1] != len(field):
        raise ConfigError(f"warp field length {len(field)} != signal length {samples.shape[-1]}")
    y = fractional_resample(samples, field.indices)
    if isinstance(x, AudioBuffer):
        return AudioBuffer(y, x.sample_rate)
    return y


def _upsample_positions(n_out: int, n_knots: int, cfg: WarpConfig):
    u = np.clip(np.arange(n_out) * (cfg.pose_rate / cfg.fs), 0, n_knots - 1)
    lo = np.minimum(np.floor(u).astype(np.int64), max(n_knots - 2, 0))
    a = u - lo
    hi = np.minimum(lo + 1, n_knots - 1)
    return lo, hi, a


def upsample(c: np.ndarray, n_out: int, cfg: WarpConfig) -> np.ndarray:
    """Linear interpolation of pose-rate sequences ``[..., K]`` to audio rate."""
    lo, hi, a = _upsample_positions(n_out, c.shape[-1], cfg)
    a = a.astype(c.dtype)
    return (1 - a) * c[..., lo] + a * c[..., hi]


def upsample_adjoint(g: np.ndarray, n_knots: int, cfg: WarpConfig) -> np.ndarray:
    lo, hi, a = _upsample_positions(g.shape[-1], n_knots, cfg)
    out = np.empty(g.shape[:-1] + (n_knots,), dtype=g.dtype)
    for e in range(g.shape[0]):
        out[e] = (np.bincount(lo, (1 - a) * g[e], minlength=n_knots)
                  + np.bincount(hi, a * g[e], minlength=n_knots))
    return out


class WarpNet(Module):
    """Conv stack over the 7-channel pose sequence producing two bounded corrections.

    The final layer starts at zero so a fresh net leaves the geometric warp
    untouched.
    """

    def __init__(self, cfg: WarpConfig, rng: np.random.Generator | None = None, dtype=np.float32):
        widths = [7] + [cfg.neural_channels] * (cfg.neural_layers - 1) + [2]
        self.convs = [
            Conv1d(widths[i], widths[i + 1], cfg.kernel, rng, dtype,
                   zero=(i == cfg.neural_layers - 1))
            for i in range(cfg.neural_layers)
        ]
        self.acts = [SiLU() for _ in range(cfg.neural_layers - 1)]
        self.out = Tanh(cfg.w_max)

    def forward(self, pose_values: np.ndarray) -> np.ndarray:
        h = pose_values.T.astype(self.convs[0].K.value.dtype)
        for i, conv in enumerate(self.convs):
            h = conv.forward(h)
            if i < len(self.acts):
                h = self.acts[i].forward(h)
        return self.out.forward(h)

    def backward(self, g: np.ndarray) -> np.ndarray:
        g = self.out.backward(g)
        for i in reversed(range(len(self.convs))):
            if i < len(self.acts):
                g = self.acts[i].backward(g)
            g = self.convs[i].backward(g)
        return g.T


def neural_warp_correction(track: PoseTrack, cfg: WarpConfig, net: WarpNet) -> np.ndarray:
    """Per-ear index corrections at pose rate, ``[2, K]``, bounded by ``w_max``."""
    if not cfg.neural_enabled:
        raise ConfigError("neural warp is disabled in this configuration")
    return net.forward(track.values)


class TimeDomainWarp:
    """Stage-1 renderer: geometric warp plus optional learned correction."""

    def __init__(self, cfg: WarpConfig, rng: np.random.Generator | None = None, dtype=np.float32):
        self.cfg = cfg
        self.net = WarpNet(cfg, rng, dtype) if cfg.neural_enabled else None
        self._cache = None

    def field(self, track: PoseTrack, n_out: int) -> WarpField:
        field = geometric_warp(track, n_out, self.cfg)
        if self.net is not None:
            corr = self.net.forward(track.values)
            field.indices += upsample(corr, n_out, self.cfg)
        return field

    def forward(self, x: np.ndarray, track: PoseTrack, n_out: int, start: int = 0) -> np.ndarray:
        """Warp mono ``x``; output sample i reads ``x`` near ``start + i`` at time i/fs."""
        field = self.field(track, n_out)
        idx = field.indices + start
        self._cache = (x, idx, len(track))
        return fractional_resample(x, idx).astype(x.dtype)

    def backward(self, g: np.ndarray):
        if self.net is None:
            return
        x, idx, K = self._cache
        g_idx = fractional_resample_grad(x, idx, g)
        g_corr = upsample_adjoint(g_idx.astype(self.net.out._y.dtype), K, self.cfg)
        self.net.backward(g_corr)
