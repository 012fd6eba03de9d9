"""Audio and pose file I/O, dataset layout, training chunks and a synthetic oracle dataset.

Dataset layout: one subdirectory per item holding ``mono.wav``, ``binaural.wav``
and ``pose.txt``. An optional ``index.txt`` lists item ids under ``[train]``,
``[valid]`` and ``[test]`` section headers.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .config import ConfigError, StftConfig, WarpConfig
from .dsp import AudioBuffer, istft_array, stft_array
from .pose import PoseTrack
from .warp import apply_warp, geometric_warp

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


class DataError(ValueError):
    """Malformed or inconsistent input files."""


# audio


def load_wav(path, expected_rate: int | None = 48000) -> AudioBuffer:
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError, OSError) as exc:
        raise DataError(f"{path}: malformed WAV ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    else:
        raise DataError(f"{path}: unsupported encoding {data.dtype}; need PCM16 or float32")
    if expected_rate is not None and rate != expected_rate:
        raise DataError(f"{path}: unsupported sample rate {rate} Hz (expected {expected_rate})")
    samples = samples.T if samples.ndim == 2 else samples[None, :]
    return AudioBuffer(np.ascontiguousarray(samples), rate)


def save_wav(path, audio: AudioBuffer | np.ndarray, sample_rate: int = 48000):
    if isinstance(audio, AudioBuffer):
        samples, sample_rate = audio.samples, audio.sample_rate
    else:
        samples = np.atleast_2d(audio)
    data = samples.astype(np.float32).T
    wavfile.write(path, sample_rate, data[:, 0] if data.shape[1] == 1 else data)


# pose files

_QUAT_ORDERS = {"xyzw": [3, 4, 5, 6], "wxyz": [4, 5, 6, 3]}


def _quat_perm(order: str) -> list[int]:
    if order not in _QUAT_ORDERS:
        raise ConfigError(f"quaternion order must be one of {sorted(_QUAT_ORDERS)}, got {order!r}")
    return _QUAT_ORDERS[order]


def parse_pose_file(path, order: str = "xyzw", rate: float = 120.0) -> PoseTrack:
    """Read one 7-value pose per line (position, then quaternion in ``order``)."""
    perm = _quat_perm(order)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = [t for t in re.split(r"[,\s]+", line) if t]
            if len(tokens) != 7:
                raise DataError(f"{path}:{lineno}: expected 7 fields, got {len(tokens)}")
            try:
                vals = [float(t) for t in tokens]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric field ({exc})") from exc
            row = np.empty(7)
            row[:3] = vals[:3]
            # file column perm[i] holds canonical component i of (qx, qy, qz, qw)
            for i, col in enumerate(perm):
                row[3 + i] = vals[col]
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: empty pose file")
    values = np.array(rows)
    if np.any(np.linalg.norm(values[:, 3:], axis=1) == 0):
        raise DataError(f"{path}: zero-norm quaternion")
    return PoseTrack(values, rate)


def write_pose_file(path, track: PoseTrack, order: str = "xyzw"):
    perm = _quat_perm(order)
    with open(path, "w") as fh:
        for v in track.values:
            cols = np.empty(7)
            cols[:3] = v[:3]
            for i, col in enumerate(perm):
                cols[col] = v[3 + i]
            fh.write(" ".join(repr(float(c)) for c in cols) + "\n")


# dataset items


@dataclass
class DatasetItem:
    mono: np.ndarray  # [L]
    binaural: np.ndarray  # [2, L]
    track: PoseTrack
    name: str = ""
    sample_rate: int = 48000

    def __post_init__(self):
        if self.mono.ndim != 1 or self.binaural.shape != (2, len(self.mono)):
            raise DataError(f"item {self.name}: mono/binaural length mismatch")
        needed = (len(self.mono) - 1) / self.sample_rate
        if self.track.duration + 1 / self.track.rate < needed:
            raise DataError(f"item {self.name}: pose track shorter than audio "
                            f"({self.track.duration:.3f}s < {needed:.3f}s)")

    def __len__(self):
        return len(self.mono)


def load_item(path, order: str = "xyzw") -> DatasetItem:
    path = Path(path)
    mono = load_wav(path / "mono.wav")
    binaural = load_wav(path / "binaural.wav")
    if mono.channels != 1 or binaural.channels != 2:
        raise DataError(f"{path}: expected mono.wav with 1 and binaural.wav with 2 channels")
    track = parse_pose_file(path / "pose.txt", order)
    return DatasetItem(mono.samples[0], binaural.samples, track, path.name, mono.sample_rate)


def read_index(path) -> dict[str, list[str]]:
    splits: dict[str, list[str]] = {s: [] for s in SPLITS}
    current = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            m = re.fullmatch(r"\[(\w+)\]", line)
            if m:
                current = m.group(1)
                if current not in splits:
                    raise DataError(f"{path}:{lineno}: unknown split {current!r}")
            elif current is None:
                raise DataError(f"{path}:{lineno}: item listed before any split header")
            else:
                splits[current].append(line)
    return splits


def write_index(path, splits: dict[str, list[str]]):
    with open(path, "w") as fh:
        for s in SPLITS:
            fh.write(f"[{s}]\n")
            for name in splits.get(s, []):
                fh.write(name + "\n")


def dataset_splits(root) -> dict[str, list[str]]:
    """Item ids per split, from ``index.txt`` or a deterministic 8/1/1 split by name."""
    root = Path(root)
    if (root / "index.txt").exists():
        return read_index(root / "index.txt")
    names = sorted(p.name for p in root.iterdir() if (p / "mono.wav").exists())
    if not names:
        raise DataError(f"{root}: no dataset items found")
    n = len(names)
    n_valid = max(1, n // 10) if n >= 3 else 0
    n_test = n_valid
    n_train = n - n_valid - n_test
    logger.info("no index.txt in %s; using %d/%d/%d split by item order", root, n_train, n_valid, n_test)
    return {"train": names[:n_train], "valid": names[n_train:n_train + n_valid],
            "test": names[n_train + n_valid:]}


def load_dataset(root, order: str = "xyzw") -> dict[str, list[DatasetItem]]:
    root = Path(root)
    return {s: [load_item(root / name, order) for name in names]
            for s, names in dataset_splits(root).items()}


# training chunks


@dataclass
class TrainingChunk:
    """A training segment. ``mono`` carries ``preroll`` samples of left context."""

    mono: np.ndarray
    binaural: np.ndarray
    track: PoseTrack
    start: int
    preroll: int

    @property
    def chunk_len(self) -> int:
        return self.binaural.shape[-1]


def make_chunks(item: DatasetItem, chunk_len: int = 38400, hop: int | None = None,
                preroll: int = 1024) -> list[TrainingChunk]:
    """Cut an item into fixed-length chunks; the trailing remainder is dropped."""
    hop = hop or chunk_len
    L = len(item)
    if chunk_len > L:
        return []
    padded = np.concatenate([np.zeros(preroll, item.mono.dtype), item.mono])
    rate = item.track.rate
    n_knots = int(math.ceil(chunk_len / item.sample_rate * rate)) + 1
    chunks = []
    for start in range(0, L - chunk_len + 1, hop):
        chunks.append(TrainingChunk(
            mono=padded[start:start + preroll + chunk_len],
            binaural=item.binaural[:, start:start + chunk_len],
            track=item.track.resampled(start / item.sample_rate, n_knots),
            start=start,
            preroll=preroll,
        ))
    return chunks


# synthetic oracle dataset


def oracle_gains(positions: np.ndarray, depth: float = 0.3) -> np.ndarray:
    """Frequency-independent ear gains ``[2, n]``: left 1 + d sin(az), right 1 - d sin(az)."""
    s = np.sin(np.arctan2(positions[:, 1], positions[:, 0]))
    return np.stack([1 + depth * s, 1 - depth * s])


def oracle_binaural(mono: np.ndarray, track: PoseTrack, warp: WarpConfig | None = None,
                    stft: StftConfig | None = None, depth: float = 0.3) -> np.ndarray:
    """Ground truth for the synthetic set: geometric delay, then per-frame ear gains."""
    warp = warp or WarpConfig()
    stft = stft or StftConfig()
    mono = np.asarray(mono, dtype=np.float64)
    L = len(mono)
    y0 = apply_warp(mono, geometric_warp(track, L, warp))
    Y = stft_array(y0, stft)
    frames = np.arange(Y.shape[-2])
    centre = 0 if stft.centered else stft.window_len // 2
    pos = track.sample((frames * stft.hop + centre) / warp.fs)[:, :3]
    Y *= oracle_gains(pos, depth)[:, :, None]
    return istft_array(Y, L, stft)


def _mono_signal(rng: np.random.Generator, n: int, fs: int) -> np.ndarray:
    from scipy.signal import butter, sosfilt

    lo = rng.uniform(100, 800)
    hi = rng.uniform(3000, 12000)
    sos = butter(4, [lo, hi], btype="bandpass", fs=fs, output="sos")
    x = sosfilt(sos, rng.standard_normal(n))
    x *= 0.1 / (np.std(x) + 1e-12)
    t = np.arange(n) / fs
    for _ in range(rng.integers(2, 5)):
        f0 = rng.uniform(150, 2000)
        x += rng.uniform(0.02, 0.08) * np.sin(2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi))
    return x


def _yaw_quat(yaw: np.ndarray) -> np.ndarray:
    return np.stack([np.zeros_like(yaw), np.zeros_like(yaw), np.sin(yaw / 2), np.cos(yaw / 2)], axis=1)


def _trajectory(rng: np.random.Generator, kind: str, n_knots: int, rate: float) -> np.ndarray:
    t = np.arange(n_knots) / rate
    if kind == "circular":
        r = rng.uniform(1.0, 2.0)
        w = rng.uniform(0.8, 2.0) * rng.choice([-1, 1])
        az = rng.uniform(0, 2 * np.pi) + w * t
        pos = np.stack([r * np.cos(az), r * np.sin(az), np.zeros_like(t)], axis=1)
    elif kind == "lateral":
        x = rng.uniform(0.5, 1.5)
        y0, y1 = rng.choice([-1, 1]) * np.array([-2.0, 2.0])
        y = y0 + (y1 - y0) * t / max(t[-1], 1e-9)
        pos = np.stack([np.full_like(t, x), y, np.zeros_like(t)], axis=1)
    else:
        raise ConfigError(f"unknown motion kind {kind!r}")
    # orientation wanders independently of position; the oracle ignores it
    yaw = rng.uniform(-np.pi, np.pi) + rng.uniform(0.2, 1.0) * np.sin(
        2 * np.pi * rng.uniform(0.1, 0.5) * t + rng.uniform(0, 2 * np.pi))
    return np.concatenate([pos, _yaw_quat(yaw)], axis=1)


def synth_dataset(out_dir, seed: int = 0, n_items: int = 20, duration: float = 2.0,
                  motion: str = "mixed", fs: int = 48000, depth: float = 0.3,
                  warp: WarpConfig | None = None, stft: StftConfig | None = None) -> list[DatasetItem]:
    """Write a seeded synthetic dataset whose binaural targets come from ``oracle_binaural``."""
    warp = warp or WarpConfig(fs=fs)
    stft = stft or StftConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    n_knots = int(math.ceil((n - 1) / fs * warp.pose_rate)) + 2
    kinds = {"mixed": ("circular", "lateral"), "circular": ("circular",), "lateral": ("lateral",)}
    if motion not in kinds:
        raise ConfigError(f"unknown motion {motion!r}")
    items = []
    for i in range(n_items):
        kind = kinds[motion][i % len(kinds[motion])]
        mono = _mono_signal(rng, n, fs).astype(np.float32)
        track = PoseTrack(_trajectory(rng, kind, n_knots, warp.pose_rate), warp.pose_rate)
        binaural = oracle_binaural(mono, track, warp, stft, depth).astype(np.float32)
        name = f"item_{i:03d}"
        d = out / name
        d.mkdir(exist_ok=True)
        save_wav(d / "mono.wav", mono[None, :], fs)
        save_wav(d / "binaural.wav", binaural, fs)
        write_pose_file(d / "pose.txt", track)
        items.append(DatasetItem(mono, binaural, parse_pose_file(d / "pose.txt"), name, fs))
    meta = {"seed": seed, "n_items": n_items, "duration": duration, "motion": motion,
            "gain_depth": depth, "gain_rule": "left 1+d*sin(az), right 1-d*sin(az), az=atan2(y,x)",
            "warp": vars(warp), "stft": vars(stft)}
    (out / "oracle.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return items
