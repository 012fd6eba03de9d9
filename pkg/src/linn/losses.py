"""Training objective, objective metrics, and efficiency accounting."""

from __future__ import annotations

import json
import math
import os
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import ConfigError, LossWeights, ModelConfig, StftConfig
from .dsp import stft_adjoint, stft_array
from .nn import threads


def wrap(phase):
    """Map angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(phase), 2 * np.pi)


def _check_pair(y, y_ref):
    y, y_ref = np.asarray(y), np.asarray(y_ref)
    if y.shape != y_ref.shape:
        raise ConfigError(f"shape mismatch: {y.shape} vs {y_ref.shape}")
    return y, y_ref


def training_loss(y, y_ref, w: LossWeights | None = None, cfg: StftConfig | None = None):
    """Waveform 2-norm plus mean absolute wrapped phase error.

    Returns ``(loss, dloss/dy)``. The phase gradient is taken away from the
    wrap discontinuity and is zero at exactly silent bins.
    """
    w = w or LossWeights()
    cfg = cfg or StftConfig()
    y, y_ref = _check_pair(y, y_ref)
    diff = y - y_ref
    norm = float(np.sqrt(np.sum(diff.astype(np.float64) ** 2)))
    grad = np.zeros_like(y)
    if norm > 0:
        grad += (w.lambda1 / norm) * diff
    loss = w.lambda1 * norm
    if w.lambda2:
        Y = stft_array(y, cfg)
        Y_ref = stft_array(y_ref, cfg)
        d = wrap(np.angle(Y) - np.angle(Y_ref))
        loss += w.lambda2 * float(np.mean(np.abs(d)))
        mag2 = Y.real ** 2 + Y.imag ** 2
        safe = np.where(mag2 > 0, mag2, 1)
        s = np.where(mag2 > 0, np.sign(d) / safe, 0) * (w.lambda2 / d.size)
        g_Y = s * (-Y.imag + 1j * Y.real)
        grad += stft_adjoint(g_Y.astype(Y.dtype), y.shape[-1], cfg).astype(y.dtype)
    return loss, grad


def wave_l2(y, y_ref) -> float:
    """Waveform MSE over all samples and channels, reported x1e3."""
    y, y_ref = _check_pair(y, y_ref)
    return 1e3 * float(np.mean((y.astype(np.float64) - y_ref) ** 2))


def amplitude_l2(y, y_ref, cfg: StftConfig | None = None) -> float:
    y, y_ref = _check_pair(y, y_ref)
    cfg = cfg or StftConfig()
    A = np.abs(stft_array(y.astype(np.float64), cfg))
    B = np.abs(stft_array(y_ref.astype(np.float64), cfg))
    return float(np.mean((A - B) ** 2))


def energy_mask(mag_ref: np.ndarray, floor: float) -> np.ndarray:
    if floor <= 0:
        return np.ones(mag_ref.shape, dtype=bool)
    return mag_ref > floor * mag_ref.max()


def wrapped_mse(phase, phase_ref, mask=None) -> float:
    d = wrap(np.asarray(phase) - np.asarray(phase_ref))
    if mask is not None:
        d = d[mask]
    return float(np.mean(d ** 2)) if d.size else 0.0


def phase_l2(y, y_ref, cfg: StftConfig | None = None, floor: float = 1e-4) -> float:
    """MSE of wrapped phase error over bins whose reference magnitude clears the floor."""
    y, y_ref = _check_pair(y, y_ref)
    cfg = cfg or StftConfig()
    Y = stft_array(y.astype(np.float64), cfg)
    R = stft_array(y_ref.astype(np.float64), cfg)
    return wrapped_mse(np.angle(Y), np.angle(R), energy_mask(np.abs(R), floor))


def ipd(Y_left, Y_right) -> np.ndarray:
    """Wrapped interaural phase difference; exactly zero for identical channels."""
    return wrap(np.angle(Y_left) - np.angle(Y_right))


def ipd_l2(y, y_ref, cfg: StftConfig | None = None, floor: float = 1e-4) -> float:
    """MSE of the wrapped interaural phase difference error over active bins."""
    y, y_ref = _check_pair(y, y_ref)
    if y.ndim != 2 or y.shape[0] != 2:
        raise ConfigError("IPD needs stereo [2, L] signals")
    cfg = cfg or StftConfig()
    Y = stft_array(y.astype(np.float64), cfg)
    R = stft_array(y_ref.astype(np.float64), cfg)
    mag = np.abs(R)
    mask = energy_mask(mag, floor)
    mask = mask[0] & mask[1]
    return wrapped_mse(ipd(Y[0], Y[1]), ipd(R[0], R[1]), mask)


@dataclass
class MetricReport:
    wave_l2: float
    amplitude_l2: float
    phase_l2: float
    ipd_l2: float
    stft: dict = field(default_factory=dict)
    energy_floor: float = 1e-4

    def to_text(self) -> str:
        lines = [f"wave_l2={self.wave_l2:.6g}", f"amplitude_l2={self.amplitude_l2:.6g}",
                 f"phase_l2={self.phase_l2:.6g}", f"ipd_l2={self.ipd_l2:.6g}",
                 f"energy_floor={self.energy_floor:g}"]
        lines += [f"stft.{k}={v}" for k, v in self.stft.items()]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def evaluate(y, y_ref, cfg: StftConfig | None = None, floor: float = 1e-4) -> MetricReport:
    cfg = cfg or StftConfig()
    return MetricReport(
        wave_l2=wave_l2(y, y_ref),
        amplitude_l2=amplitude_l2(y, y_ref, cfg),
        phase_l2=phase_l2(y, y_ref, cfg, floor),
        ipd_l2=ipd_l2(y, y_ref, cfg, floor),
        stft=asdict(cfg),
        energy_floor=floor,
    )


MAC_BASIS = (
    "network MACs per second of 48 kHz audio: IBC coordinate MLP for every "
    "(ear, frame, bin) query at fs/hop frames per second, plus the warp conv "
    "net at pose rate; first-layer MACs counted as a dense matmul; STFT/iSTFT, "
    "gain application and resampling are reported separately as dsp_macs"
)


@dataclass
class EfficiencyReport:
    param_count: int
    macs_per_second_audio: float
    ibc_macs_per_query: int
    queries_per_frame: int
    frames_per_second: float
    ibc_macs_per_second: float
    warp_macs_per_second: float
    dsp_macs_per_second: float
    total_macs: float
    segment_basis: float
    basis: str = MAC_BASIS
    rtf: float | None = None
    rtf_parallel: float | None = None
    threads_single: int = 1
    threads_parallel: int | None = None

    def to_text(self) -> str:
        d = asdict(self)
        return "".join(f"{k}={v}\n" for k, v in d.items())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def ibc_query_macs(cfg: ModelConfig) -> int:
    h, n = cfg.ibc.hidden, cfg.ibc.layers
    return cfg.encoding.coord_dim * h + (n - 1) * h * h + h * 2


def warp_macs_per_knot(cfg: ModelConfig) -> int:
    w = cfg.warp
    if not w.neural_enabled:
        return 0
    widths = [7] + [w.neural_channels] * (w.neural_layers - 1) + [2]
    return sum(widths[i] * widths[i + 1] * w.kernel for i in range(w.neural_layers))


def count_macs(cfg: ModelConfig, seconds: float, param_count: int = 0) -> EfficiencyReport:
    """Analytic multiply-accumulate count; scales linearly with ``seconds``."""
    fs = cfg.warp.fs
    N = cfg.stft.window_len
    fps = fs / cfg.stft.hop
    queries = 2 * cfg.stft.bins
    per_query = ibc_query_macs(cfg)
    ibc = fps * queries * per_query if cfg.ibc.enabled else 0.0
    warp = cfg.warp.pose_rate * warp_macs_per_knot(cfg)
    # one real FFT counted as N*log2(N) real MACs plus N window MACs, per ear and direction
    fft = N * math.log2(N) + N
    dsp = fps * (2 * 2 * fft + 4 * queries) + 2 * 2 * fs
    return EfficiencyReport(
        param_count=int(param_count),
        macs_per_second_audio=ibc + warp,
        ibc_macs_per_query=per_query,
        queries_per_frame=queries,
        frames_per_second=fps,
        ibc_macs_per_second=ibc,
        warp_macs_per_second=warp,
        dsp_macs_per_second=dsp,
        total_macs=(ibc + warp) * seconds,
        segment_basis=float(seconds),
    )


def measure_rtf(render, seconds: float, repetitions: int = 3, n_threads: int | None = 1,
                warmup: int = 1) -> float:
    """Median wall-clock time of ``render()`` divided by ``seconds`` of audio."""
    if seconds <= 0:
        raise ConfigError("audio duration must be positive")
    times = []
    with threads(n_threads):
        for _ in range(warmup):
            render()
        for _ in range(repetitions):
            t0 = time.perf_counter()
            render()
            times.append(time.perf_counter() - t0)
    return statistics.median(times) / seconds


def parallel_threads() -> int:
    return os.cpu_count() or 1
