"""Sampled three-component velocity time histories."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Waveform:
    """Uniformly sampled 3-component record.

    ``samples`` has shape ``(n, 3)``; columns are the x1, x2, x3 components
    (x3 is depth, positive downward). Units are m/s unless a caller says
    otherwise (the ingest pipeline carries accelerations through the same type).
    """

    dt: float
    samples: np.ndarray
    start: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[1] != 3:
            raise ValueError(f"samples must have shape (n, 3), got {s.shape}")
        if s.shape[0] < 1:
            raise ValueError("waveform needs at least one sample")
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform samples must be finite")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.start + self.dt * np.arange(self.n)

    @classmethod
    def zeros(cls, dt: float, n: int) -> "Waveform":
        return cls(dt, np.zeros((n, 3)))

    def scaled(self, alpha: float) -> "Waveform":
        return Waveform(self.dt, alpha * self.samples, self.start)


def write_waveform_csv(path, w: Waveform) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t", "v1", "v2", "v3"])
        for t, row in zip(w.times, w.samples):
            out.writerow([repr(float(t)), *(repr(float(v)) for v in row)])
    os.replace(tmp, path)


def read_waveform_csv(path) -> Waveform:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["t", "v1", "v2", "v3"]:
        raise ValueError(f"{path}: expected header t,v1,v2,v3")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    if data.shape[0] < 1:
        raise ValueError(f"{path}: no samples")
    t = data[:, 0]
    if data.shape[0] > 1:
        steps = np.diff(t)
        dt = float((t[-1] - t[0]) / (len(t) - 1))
        if not np.allclose(steps, dt, rtol=1e-6, atol=0.0):
            raise ValueError(f"{path}: non-uniform sampling")
    else:
        dt = 1.0
    return Waveform(dt, data[:, 1:], float(t[0]))
