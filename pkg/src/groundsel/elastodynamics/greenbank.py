"""Impulse-response (Green's function) banks and their GBK1 file format."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..waveform import Waveform
from .mesh import HexMesh
from .solver import TimeIntegratorConfig, run_forward

MAGIC = b"GBK1"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIdd")


def impulse_p(t, width: float):
    """Hann pulse ``0.5 * (1 - cos(2 pi t / width))`` on ``[0, width]``, else 0."""
    if not width > 0:
        raise ValueError("pulse width must be positive")
    t = np.asarray(t, dtype=float)
    inside = (t >= 0.0) & (t <= width)
    p = np.where(inside, 0.5 * (1.0 - np.cos(2.0 * np.pi * t / width)), 0.0)
    return p if p.ndim else float(p)


@dataclass(frozen=True)
class GreenBank:
    """Velocity responses ``samples[k, j, i, n]`` at station ``k``, component
    ``i``, time ``n * dt`` to a unit Hann pulse injected along ``j``."""

    dt: float
    pulse_width: float
    samples: np.ndarray
    stations: tuple = ()
    model_id: str = ""
    pulse: str = field(default="hann")

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 4 or s.shape[1:3] != (3, 3) or s.shape[0] < 1:
            raise ValueError(f"bank samples must be (n_station, 3, 3, n_step), got {s.shape}")
        object.__setattr__(self, "samples", s)
        if self.stations and len(self.stations) != s.shape[0]:
            raise ValueError("station list does not match bank")

    @property
    def n_station(self) -> int:
        return self.samples.shape[0]

    @property
    def n_step(self) -> int:
        return self.samples.shape[3]

    @property
    def duration(self) -> float:
        return self.n_step * self.dt

    def subset(self, indices) -> "GreenBank":
        idx = list(indices)
        st = tuple(self.stations[i] for i in idx) if self.stations else ()
        return GreenBank(self.dt, self.pulse_width, self.samples[idx], st, self.model_id, self.pulse)


def _steps_for(duration: float, dt: float) -> int:
    n = duration / dt
    if abs(n - round(n)) > 1e-6 * max(n, 1.0):
        raise ValueError(f"duration {duration} is not a multiple of dt {dt}")
    return int(round(n))


def pulse_waveform(direction: int, pulse_width: float, dt: float, n_step: int) -> Waveform:
    s = np.zeros((n_step, 3))
    s[:, direction] = impulse_p(dt * np.arange(n_step), pulse_width)
    return Waveform(dt, s)


def green_direction(mesh: HexMesh, config: TimeIntegratorConfig, stations, direction: int,
                    pulse_width: float, n_step: int) -> np.ndarray:
    """One injection direction of a bank: array ``(n_station, 3, n_step)``."""
    cfg = replace(config, steps=n_step)
    out = run_forward(mesh, cfg, pulse_waveform(direction, pulse_width, config.dt, n_step), stations)
    return np.stack([w.samples.T for w in out])


def compute_green_bank(mesh: HexMesh, config: TimeIntegratorConfig, stations, basis_dt: float,
                       pulse_width: float, duration: float) -> GreenBank:
    """Three forward runs, one unit pulse along each axis."""
    n_step = _steps_for(duration, config.dt)
    _steps_for(basis_dt, config.dt)
    if pulse_width < 2 * config.dt:
        raise ValueError("pulse width must span at least two time steps")
    parts = [green_direction(mesh, config, stations, j, pulse_width, n_step) for j in range(3)]
    samples = np.stack(parts, axis=1)
    return GreenBank(config.dt, pulse_width, samples, tuple(map(tuple, stations)), mesh.model_id)


def write_green_bank(path, bank: GreenBank) -> None:
    """Write GBK1 atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, bank.n_station, 3, 3, bank.n_step, bank.dt, bank.pulse_width)
    data = np.ascontiguousarray(bank.samples, dtype="<f8").tobytes()
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def read_green_bank(path, stations=(), model_id: str | None = None) -> GreenBank:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, ns, nin, nout, nstep, dt, width = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION or nin != 3 or nout != 3:
        raise ValueError(f"{path}: unsupported bank layout (version {version}, {nin}x{nout})")
    count = ns * 9 * nstep
    if len(raw) != _HEADER.size + 8 * count:
        raise ValueError(f"{path}: expected {count} samples")
    samples = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=count).astype(float)
    if model_id is None:
        model_id = Path(path).stem
    return GreenBank(dt, width, samples.reshape(ns, 3, 3, nstep), tuple(stations), model_id)
