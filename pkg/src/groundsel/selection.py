"""Per-event misfit tables, historical maxima and model ranking."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PER_EVENT = "per-event"
CUMULATIVE_MAX = "cumulative-max"


@dataclass(frozen=True)
class ErrTable:
    model_ids: tuple
    event_ids: tuple = ()
    err: np.ndarray | None = None  # (n_model, n_event)

    def __post_init__(self):
        ids = tuple(str(m) for m in self.model_ids)
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate model id")
        object.__setattr__(self, "model_ids", ids)
        object.__setattr__(self, "event_ids", tuple(str(e) for e in self.event_ids))
        err = np.zeros((len(ids), 0)) if self.err is None else np.asarray(self.err, dtype=float)
        if err.shape != (len(ids), len(self.event_ids)):
            raise ValueError(f"err shape {err.shape} does not match {len(ids)} models x {len(self.event_ids)} events")
        err = err.copy()
        err.setflags(write=False)
        object.__setattr__(self, "err", err)

    @property
    def cumulative_max(self) -> np.ndarray:
        if self.err.shape[1] == 0:
            return self.err.copy()
        return np.maximum.accumulate(self.err, axis=1)

    def column(self, event_id: str) -> int:
        try:
            return self.event_ids.index(str(event_id))
        except ValueError:
            raise KeyError(f"unknown event {event_id!r}") from None


@dataclass(frozen=True)
class Ranking:
    model_ids: tuple
    scores: tuple
    criterion: str  # e.g. "cumulative-max@ev003"


def accumulate(table: ErrTable, event_id: str, errs: dict) -> ErrTable:
    """Append one event column; ``errs`` maps model id to ERR."""
    event_id = str(event_id)
    if event_id in table.event_ids:
        raise ValueError(f"event {event_id!r} already recorded")
    missing = [m for m in table.model_ids if m not in errs]
    if missing:
        raise ValueError(f"no ERR for model(s) {missing[:5]}")
    extra = set(errs) - set(table.model_ids)
    if extra:
        raise ValueError(f"unknown model(s) {sorted(extra)[:5]}")
    col = np.array([float(errs[m]) for m in table.model_ids])[:, None]
    return ErrTable(table.model_ids, table.event_ids + (event_id,), np.hstack([table.err, col]))


def scores(table: ErrTable, criterion: str = CUMULATIVE_MAX, event: str | None = None):
    """Score vector in table order and the resolved criterion tag."""
    if not table.model_ids:
        raise ValueError("empty table")
    if not table.event_ids:
        raise ValueError("table has no events")
    e = len(table.event_ids) - 1 if event is None else table.column(event)
    if criterion == PER_EVENT:
        s = table.err[:, e]
    elif criterion == CUMULATIVE_MAX:
        s = table.cumulative_max[:, e]
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    return s, f"{criterion}@{table.event_ids[e]}"


def rank(table: ErrTable, criterion: str = CUMULATIVE_MAX, event: str | None = None) -> Ranking:
    """Ascending by score, ties by model id."""
    s, tag = scores(table, criterion, event)
    order = sorted(range(len(s)), key=lambda k: (s[k], table.model_ids[k]))
    return Ranking(tuple(table.model_ids[k] for k in order), tuple(float(s[k]) for k in order), tag)


def select_credible(table: ErrTable, criterion: str = CUMULATIVE_MAX, top_n: int | None = None,
                    threshold: float | None = None, event: str | None = None) -> list[str]:
    if (top_n is None) == (threshold is None):
        raise ValueError("give exactly one of top_n or threshold")
    r = rank(table, criterion, event)
    if top_n is not None:
        if top_n < 0:
            raise ValueError("top_n must be non-negative")
        return list(r.model_ids[:top_n])
    return [m for m, s in zip(r.model_ids, r.scores) if s <= threshold]


def _atomic_rows(path, header, rows) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        out.writerows(rows)
    os.replace(tmp, path)


def write_err_table(path, table: ErrTable) -> None:
    cm = table.cumulative_max
    rows = []
    for e, ev in enumerate(table.event_ids):
        for m, mid in enumerate(table.model_ids):
            rows.append([mid, ev, repr(float(table.err[m, e])), repr(float(cm[m, e]))])
    _atomic_rows(path, ["model_id", "event_id", "err", "cum_max_err"], rows)


def read_err_table(path) -> ErrTable:
    """Rebuild a table from its CSV; events keep first-appearance order."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["model_id", "event_id", "err", "cum_max_err"]:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [r for r in rd if r]
    models, events, vals = [], [], {}
    for lineno, r in enumerate(rows, start=2):
        if len(r) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 fields")
        mid, ev, err = r[0], r[1], float(r[2])
        if mid not in models:
            models.append(mid)
        if ev not in events:
            events.append(ev)
        if (mid, ev) in vals:
            raise ValueError(f"{path}:{lineno}: duplicate row for {mid}/{ev}")
        vals[(mid, ev)] = err
    table = ErrTable(tuple(models))
    for ev in events:
        table = accumulate(table, ev, {m: vals[(m, ev)] for m in models if (m, ev) in vals})
    return table


def write_ranking(path, ranking: Ranking) -> None:
    rows = [[k + 1, m, repr(s)] for k, (m, s) in enumerate(zip(ranking.model_ids, ranking.scores))]
    _atomic_rows(path, ["rank", "model_id", "score"], rows)


def read_ranking(path) -> list[tuple[int, str, float]]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        if next(rd, None) != ["rank", "model_id", "score"]:
            raise ValueError(f"{path}: unexpected header")
        return [(int(r[0]), r[1], float(r[2])) for r in rd if r]
