"""Green-bank batches over a model pool: one task per model and direction."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ..elastodynamics.greenbank import GreenBank, _steps_for, green_direction, write_green_bank
from ..elastodynamics.mesh import build_mesh
from ..elastodynamics.solver import TimeIntegratorConfig
from ..ground_model import read_model
from .manifest import DONE, FAILED, RunManifest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BankJob:
    model_id: str
    model_path: str
    direction: int
    part_path: str
    stations: tuple
    config: TimeIntegratorConfig
    h: float
    pulse_width: float
    n_step: int


@dataclass
class BatchResult:
    banks: dict = field(default_factory=dict)  # model id -> bank path
    failed: dict = field(default_factory=dict)  # task key -> message
    computed: int = 0
    skipped: int = 0

    @property
    def ok(self) -> bool:
        return not self.failed


def _save_npy(path: Path, arr: np.ndarray) -> None:
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        np.save(fh, arr)
    os.replace(tmp, path)


def run_bank_job(job: BankJob) -> str:
    """Worker entry point; BLAS is pinned to one thread so results do not
    depend on how many workers share the machine."""
    with threadpool_limits(limits=1):
        mesh = build_mesh(read_model(job.model_path), job.h)
        arr = green_direction(mesh, job.config, job.stations, job.direction, job.pulse_width, job.n_step)
    _save_npy(Path(job.part_path), arr)
    return job.part_path


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def batch_digest(stations, config: TimeIntegratorConfig, h: float, pulse_width: float, n_step: int) -> str:
    doc = {"stations": [list(map(float, s)) for s in stations], "solver": asdict(config),
           "h": h, "pulse_width": pulse_width, "n_step": n_step}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def run_greenbank(models: dict, out_dir, stations, config: TimeIntegratorConfig, h: float,
                  pulse_width: float, duration: float, jobs: int = 1,
                  max_tasks: int | None = None) -> BatchResult:
    """Compute a GBK1 bank per model into ``out_dir``.

    ``models`` maps model id to model file. Completed work recorded in
    ``out_dir/manifest.json`` is reused; ``max_tasks`` stops after that many
    new forward runs (chunked or interrupted batches).
    """
    out = Path(out_dir)
    parts = out / "parts"
    parts.mkdir(parents=True, exist_ok=True)
    stations = tuple((float(a), float(b)) for a, b in stations)
    n_step = _steps_for(duration, config.dt)
    man = RunManifest.open(out / "manifest.json", batch_digest(stations, config, h, pulse_width, n_step))
    res = BatchResult()

    digests = {mid: file_digest(p) for mid, p in models.items()}
    todo = []
    for mid in sorted(models):
        bank_key = f"{mid}.bank"
        if man.is_done(bank_key) and man.tasks[bank_key].get("model") == digests[mid]:
            res.banks[mid] = out / f"{mid}.gbk"
            res.skipped += 3
            continue
        for j in range(3):
            key = f"{mid}.d{j}"
            part = parts / f"{mid}.d{j}.npy"
            if man.is_done(key) and man.tasks[key].get("model") == digests[mid]:
                res.skipped += 1
                continue
            todo.append(BankJob(mid, str(models[mid]), j, str(part), stations, config, h, pulse_width, n_step))
    if max_tasks is not None:
        todo = todo[: max(0, max_tasks)]
    log.info("greenbank: %d forward runs scheduled, %d reused", len(todo), res.skipped)

    def finish(job: BankJob, error: str | None):
        key = f"{job.model_id}.d{job.direction}"
        if error is None:
            man.mark(key, DONE, [os.path.relpath(job.part_path, out)], model=digests[job.model_id])
            res.computed += 1
            _maybe_assemble(job.model_id)
        else:
            man.mark(key, FAILED, error=error, model=digests[job.model_id])
            res.failed[key] = error
            log.error("%s failed: %s", key, error)

    def _maybe_assemble(mid: str):
        keys = [f"{mid}.d{j}" for j in range(3)]
        if not all(man.is_done(k) for k in keys):
            return
        arrs = [np.load(parts / f"{mid}.d{j}.npy") for j in range(3)]
        bank = GreenBank(config.dt, pulse_width, np.stack(arrs, axis=1), stations, mid)
        path = out / f"{mid}.gbk"
        write_green_bank(path, bank)
        man.mark(f"{mid}.bank", DONE, [path.name], model=digests[mid])
        for k in keys:
            man.mark(k, DONE, [], model=digests[mid])
        for j in range(3):
            (parts / f"{mid}.d{j}.npy").unlink(missing_ok=True)
        res.banks[mid] = path

    # parts left from an earlier run may already complete a model
    for mid in sorted(models):
        if mid not in res.banks:
            _maybe_assemble(mid)

    if jobs <= 1 or len(todo) <= 1:
        for job in todo:
            try:
                run_bank_job(job)
                finish(job, None)
            except Exception as exc:  # isolate per-task failures
                finish(job, f"{type(exc).__name__}: {exc}")
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {pool.submit(run_bank_job, job): job for job in todo}
            for fut in as_completed(futs):
                job = futs[fut]
                exc = fut.exception()
                finish(job, None if exc is None else f"{type(exc).__name__}: {exc}")
    return res
