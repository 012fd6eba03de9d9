"""Source pose tracks: 3-D position plus unit quaternion, sampled at a fixed rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError


def _normalize_quat(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ConfigError("zero-norm quaternion")
    return q / n


@dataclass
class Pose:
    position: np.ndarray
    orientation: np.ndarray  # (x, y, z, w)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.orientation = _normalize_quat(np.asarray(self.orientation, dtype=np.float64).reshape(4))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])


class PoseTrack:
    """Uniformly sampled poses stored as a ``[K, 7]`` array (x y z qx qy qz qw)."""

    def __init__(self, values: np.ndarray, rate: float = 120.0):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != 7:
            raise ConfigError(f"pose values must be [K, 7], got {list(values.shape)}")
        if len(values) == 0:
            raise ConfigError("empty pose track")
        if rate <= 0:
            raise ConfigError("pose rate must be positive")
        values = values.copy()
        values[:, 3:] = _normalize_quat(values[:, 3:])
        self.values = values
        self.rate = float(rate)

    @classmethod
    def from_poses(cls, poses: list[Pose], rate: float = 120.0) -> "PoseTrack":
        return cls(np.stack([p.as_vector() for p in poses]) if poses else np.zeros((0, 7)), rate)

    @classmethod
    def static(cls, position, orientation=(0, 0, 0, 1), n: int = 2, rate: float = 120.0):
        row = np.concatenate([np.asarray(position, float), np.asarray(orientation, float)])
        return cls(np.tile(row, (n, 1)), rate)

    def __len__(self):
        return len(self.values)

    @property
    def poses(self) -> list[Pose]:
        return [Pose(v[:3], v[3:]) for v in self.values]

    @property
    def duration(self) -> float:
        return (len(self) - 1) / self.rate

    def sample(self, times) -> np.ndarray:
        """Vectorised interpolation at ``times`` (seconds); returns ``[n, 7]``.

        Positions interpolate linearly; quaternions use nlerp along the shorter
        arc. Times outside the track clamp to the end poses.
        """
        times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        K = len(self.values)
        if K == 1:
            return np.repeat(self.values, len(times), axis=0)
        u = np.clip(times * self.rate, 0.0, K - 1)
        r = np.round(u)
        u = np.where(np.abs(u - r) < 1e-9, r, u)
        i0 = np.minimum(np.floor(u).astype(np.int64), K - 2)
        a = (u - i0)[:, None]
        v0, v1 = self.values[i0], self.values[i0 + 1]
        pos = (1 - a) * v0[:, :3] + a * v1[:, :3]
        q0, q1 = v0[:, 3:], v1[:, 3:]
        sign = np.where(np.sum(q0 * q1, axis=1, keepdims=True) < 0, -1.0, 1.0)
        q = (1 - a) * q0 + a * sign * q1
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        out = np.concatenate([pos, q], axis=1)
        # knots and clamped ends are returned exactly
        exact = (a[:, 0] == 0) | np.all(v0 == v1, axis=1)
        out[exact] = self.values[i0[exact]]
        last = u == K - 1
        out[last] = self.values[-1]
        return out

    def resampled(self, t0: float, n_knots: int) -> "PoseTrack":
        """Sub-track starting at ``t0`` with ``n_knots`` knots at the same rate."""
        return PoseTrack(self.sample(t0 + np.arange(n_knots) / self.rate), self.rate)


def track_sample(track: PoseTrack, time: float) -> Pose:
    v = track.sample([time])[0]
    return Pose(v[:3], v[3:])


def nlerp(q0, q1, a: float) -> np.ndarray:
    q0, q1 = np.asarray(q0, float), np.asarray(q1, float)
    if np.dot(q0, q1) < 0:
        q1 = -q1
    q = (1 - a) * q0 + a * q1
    return q / np.linalg.norm(q)


def sample_to_audio_rate(track: PoseTrack, n_samples: int, fs: float = 48000) -> np.ndarray:
    if fs <= 0:
        raise ConfigError("fs must be positive")
    return track.sample(np.arange(n_samples) / fs)
