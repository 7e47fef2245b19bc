"""Directory layouts shared by the subcommands.

Observations live in ``obs/stations.csv`` plus ``obs/<event>/kNNN.csv`` (one
waveform per station); events are taken in sorted directory-name order.
"""

from __future__ import annotations

import csv
from pathlib import Path

from ..ground_model import read_model
from ..waveform import read_waveform_csv, write_waveform_csv


def write_stations_csv(path, stations) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2"])
        for x1, x2 in stations:
            w.writerow([repr(float(x1)), repr(float(x2))])


def read_stations_csv(path) -> list[tuple[float, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["x1", "x2"]:
        raise ValueError(f"{path}: expected header x1,x2")
    return [(float(r[0]), float(r[1])) for r in rows[1:] if r]


def write_obs_dir(root, stations, events: dict) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_stations_csv(root / "stations.csv", stations)
    for ev, records in events.items():
        d = root / ev
        d.mkdir(exist_ok=True)
        for k, w in enumerate(records):
            write_waveform_csv(d / f"k{k:03d}.csv", w)


def read_obs_dir(root):
    """Returns ``(stations, {event: [Waveform per station]})``."""
    root = Path(root)
    stations = read_stations_csv(root / "stations.csv")
    events = {}
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        records = [read_waveform_csv(d / f"k{k:03d}.csv") for k in range(len(stations))]
        events[d.name] = records
    if not events:
        raise ValueError(f"{root}: no event directories")
    return stations, events


def model_files(root) -> dict:
    """Model id -> path for every ``*.json`` model in a directory."""
    out = {}
    for p in sorted(Path(root).glob("*.json")):
        mid = read_model(p).id
        if mid in out:
            raise ValueError(f"duplicate model id {mid!r} in {root}")
        out[mid] = p
    if not out:
        raise ValueError(f"{root}: no model files")
    return out
