"""The two-stage renderer: time-domain warp, then per-bin complex gain in the STFT domain."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .config import ConfigError, ModelConfig
from .dsp import (_overlap_add, _window_sumsq, fractional_resample, hamming_window,
                  istft_adjoint, istft_array, num_frames, stft_adjoint, stft_array)
from .ibc import ImplicitCorrector
from .losses import training_loss
from .nn import Param
from .pose import PoseTrack
from .warp import TimeDomainWarp

# frames per IBC evaluation when rendering long signals
RENDER_FRAME_BATCH = 32


class BinauralRenderer:
    """Trainable mono-to-binaural renderer.

    Parameters are created from a seeded generator in a fixed order (warp net,
    then corrector), so equal seeds give equal models.
    """

    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0, dtype=np.float32):
        self.cfg = cfg = cfg or ModelConfig()
        if cfg.frames_per_chunk < 2:
            raise ConfigError("frames_per_chunk must be >= 2")
        rng = np.random.default_rng(seed)
        self.tdw = TimeDomainWarp(cfg.warp, rng, dtype)
        self.ibc = ImplicitCorrector(cfg.encoding, cfg.ibc, cfg.stft.bins, rng, dtype)
        self._cache = None

    # parameters

    def named_params(self, active_only: bool = False) -> list[tuple[str, Param]]:
        out = []
        if self.tdw.net is not None:
            out += [(f"warp.{n}", p) for n, p in self.tdw.net.named_params()]
        if self.cfg.ibc.enabled or not active_only:
            out += [(f"ibc.{n}", p) for n, p in self.ibc.mlp.named_params()]
        return out

    def params(self, active_only: bool = True) -> list[Param]:
        return [p for _, p in self.named_params(active_only)]

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params(active_only=True))

    def zero_grad(self):
        for p in self.params(active_only=False):
            p.zero_grad()

    def astype(self, dtype):
        for p in self.params(active_only=False):
            p.astype(dtype)
        return self

    @property
    def dtype(self):
        return self.ibc.mlp.dtype

    # geometry helpers

    def frame_times(self, frames: np.ndarray) -> np.ndarray:
        c = self.cfg.stft
        centre = 0 if c.centered else c.window_len // 2
        return (np.asarray(frames) * c.hop + centre) / self.cfg.warp.fs

    def frame_poses(self, track: PoseTrack, frames: np.ndarray) -> np.ndarray:
        return track.sample(self.frame_times(frames))

    def mask(self, track: PoseTrack, frames: np.ndarray, cache: bool = False) -> np.ndarray:
        """Gain mask ``[2, len(frames), bins]``; unity when the corrector is ablated."""
        frames = np.asarray(frames)
        if not self.cfg.ibc.enabled:
            return np.ones((2, len(frames), self.cfg.stft.bins), dtype=np.result_type(self.dtype, 1j))
        return self.ibc.mask(self.frame_poses(track, frames), frames, self.cfg.frames_per_chunk,
                             cache)

    # training path

    def forward(self, x: np.ndarray, track: PoseTrack, n_out: int, start: int = 0) -> np.ndarray:
        """Render ``n_out`` stereo samples, caching intermediates for ``backward``.

        ``x`` is the mono signal; output sample i reads it around ``start + i``.
        ``track`` starts at output sample 0 and frames are indexed from 0.
        """
        x = np.asarray(x, dtype=self.dtype)
        y0 = self.tdw.forward(x, track, n_out, start)
        Y0 = stft_array(y0, self.cfg.stft)
        F = Y0.shape[-2]
        G = self.mask(track, np.arange(F), cache=True)
        Y = Y0 * G
        self._cache = (Y0, G, n_out)
        return istft_array(Y, n_out, self.cfg.stft)

    def backward(self, g_y: np.ndarray):
        Y0, G, n_out = self._cache
        g_Y = istft_adjoint(g_y, Y0.shape[-2], self.cfg.stft)
        if self.cfg.ibc.enabled:
            self.ibc.backward(g_Y * np.conj(Y0))
        if self.tdw.net is not None:
            g_y0 = stft_adjoint(g_Y * np.conj(G), n_out, self.cfg.stft)
            self.tdw.backward(g_y0.astype(self.dtype))

    def loss_and_backward(self, x, track, y_ref, start: int = 0) -> float:
        y = self.forward(x, track, y_ref.shape[-1], start)
        loss, g = training_loss(y, y_ref, self.cfg.loss, self.cfg.stft)
        self.backward(g)
        return loss

    # rendering

    def warp(self, x: np.ndarray, track: PoseTrack) -> np.ndarray:
        """Stage-1 output only (no spectral correction)."""
        x = np.asarray(x, dtype=self.dtype)
        return self.tdw.forward(x, track, len(x))

    def render(self, x: np.ndarray, track: PoseTrack) -> np.ndarray:
        """Whole-signal rendering: one STFT, mask in frame batches, one iSTFT."""
        x = np.asarray(x, dtype=self.dtype)
        L = len(x)
        y0 = self.tdw.forward(x, track, L)
        Y = stft_array(y0, self.cfg.stft)
        F = Y.shape[-2]
        for a in range(0, F, RENDER_FRAME_BATCH):
            b = min(F, a + RENDER_FRAME_BATCH)
            Y[:, a:b] *= self.mask(track, np.arange(a, b))
        return istft_array(Y, L, self.cfg.stft)

    def render_stream(self, x: np.ndarray, track: PoseTrack, block: int = 48000) -> np.ndarray:
        """Block-wise rendering; each block recomputes the frames it overlaps.

        Matches ``render`` up to float rounding. ``block`` is rounded up to a
        multiple of the hop.
        """
        c = self.cfg.stft
        if not c.centered:
            raise ConfigError("streaming render requires centered framing")
        x = np.asarray(x, dtype=self.dtype)
        L = len(x)
        N, hop = c.window_len, c.hop
        r = N // hop
        block = max(hop, -(-block // hop) * hop)
        F_total = num_frames(L, c)
        field = self.tdw.field(track, L)
        w = hamming_window(N, self.dtype)
        out = np.zeros((2, L), dtype=self.dtype)
        for s in range(0, L, block):
            e = min(L, s + block)
            m_lo = max(0, s // hop - r)
            m_hi = min(F_total - 1, e // hop + r)
            # segment of warped signal covering frames m_lo..m_hi (one window of overlap each side)
            a, b = m_lo * hop - N // 2, m_hi * hop + N // 2
            seg = np.zeros((2, b - a), dtype=self.dtype)
            va, vb = max(a, 0), min(b, L)
            seg[:, va - a:vb - a] = fractional_resample(x, field.indices[:, va:vb])
            frames = sliding_window_view(seg, N, axis=-1)[:, ::hop, :]
            Y = np.fft.rfft(frames * w, axis=-1)
            for fa in range(0, Y.shape[1], RENDER_FRAME_BATCH):
                fb = min(Y.shape[1], fa + RENDER_FRAME_BATCH)
                Y[:, fa:fb] *= self.mask(track, np.arange(m_lo + fa, m_lo + fb))
            buf = _overlap_add(np.fft.irfft(Y, n=N, axis=-1).astype(self.dtype) * w, hop)
            buf /= _window_sumsq(Y.shape[1], c, self.dtype)
            out[:, s:e] = buf[:, s - a:e - a]
        return out
