"""Query the corrector over a grid of source positions and average over frequency."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .config import ConfigError
from .ibc import scale_corrections
from .model import BinauralRenderer

EARS = ("left", "right")


@dataclass
class ProbeGrid:
    """Source positions to probe.

    ``axis`` is ``azimuth`` (circle of ``radius`` in the horizontal plane,
    degrees from ``start`` to ``stop``), ``lateral`` (y from start to stop at
    x = ``radius``) or ``longitudinal`` (x from start to stop on the median plane).
    """

    axis: str = "azimuth"
    start: float = -90.0
    stop: float = 90.0
    points: int = 13
    radius: float = 1.5

    def positions(self) -> np.ndarray:
        if self.points < 1:
            raise ConfigError("empty probe grid")
        u = np.linspace(self.start, self.stop, self.points)
        zero = np.zeros_like(u)
        if self.axis == "azimuth":
            az = np.deg2rad(u)
            return np.stack([self.radius * np.cos(az), self.radius * np.sin(az), zero], axis=1)
        if self.axis == "lateral":
            return np.stack([np.full_like(u, self.radius), u, zero], axis=1)
        if self.axis == "longitudinal":
            return np.stack([u, zero, zero], axis=1)
        raise ConfigError(f"unknown probe axis {self.axis!r}")


def probe(model: BinauralRenderer, grid: ProbeGrid) -> list[dict]:
    """Mean scaled log-amplitude and phase correction per (position, ear).

    Every bin is queried at the middle frame of a chunk with identity source
    orientation.
    """
    pos = grid.positions()
    poses = np.concatenate([pos, np.tile([0.0, 0.0, 0.0, 1.0], (len(pos), 1))], axis=1)
    fpc = model.cfg.frames_per_chunk
    mid = np.full(len(pos), (fpc - 1) / 2)
    raw = model.ibc.raw(poses, mid, fpc)  # [2, P, B, 2]
    da, dp = scale_corrections(raw.astype(np.float64), model.cfg.ibc.alpha)
    if not model.cfg.ibc.enabled:
        da, dp = np.zeros_like(da), np.zeros_like(dp)
    mean_a, mean_p = da.mean(axis=-1), dp.mean(axis=-1)
    rows = []
    for i, p in enumerate(pos):
        for e, ear in enumerate(EARS):
            rows.append({
                "x": float(p[0]), "y": float(p[1]), "z": float(p[2]),
                "azimuth_deg": float(np.degrees(np.arctan2(p[1], p[0]))),
                "ear": ear,
                "mean_delta_logA": float(mean_a[e, i]),
                "mean_delta_phi": float(mean_p[e, i]),
            })
    return rows


def write_csv(path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("x", "y", "z", "azimuth_deg", "mean_delta_logA", "mean_delta_phi"):
            r[k] = float(r[k])
    return rows
