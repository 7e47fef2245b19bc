"""End-to-end synthetic experiment: reference ground, candidates, pseudo
observations, Green banks, inversion and ranking per station layout."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..elastodynamics.greenbank import read_green_bank
from ..elastodynamics.mesh import build_mesh
from ..elastodynamics.solver import run_forward_batch
from ..ground_model import (
    GridSpec,
    GroundModel,
    generate_candidate_set,
    sample_survey,
    select_diverse_subset,
    synth_reference_field,
    write_model,
    write_survey_csv,
)
from ..inversion import (
    Coefficients,
    LaggedDesign,
    estimate_for_model,
    input_error,
    reconstruct_input,
    write_estimate,
)
from ..selection import ErrTable, accumulate, rank, write_err_table, write_ranking
from ..waveform import Waveform, write_waveform_csv
from . import plotting
from .batch import run_greenbank
from .config import ExperimentConfig, layout_stations, save_config
from .files import write_obs_dir, write_stations_csv
from .manifest import DONE, RunManifest

log = logging.getLogger(__name__)

REFERENCE_ID = "reference"


@dataclass
class LayoutResult:
    name: str
    stations: list
    table: ErrTable
    input_errors: dict  # model id -> [relative L2 error per event]
    summary: dict = field(default_factory=dict)


@dataclass
class ExperimentReport:
    out: Path
    layouts: dict
    failed: dict
    timings: dict

    @property
    def ok(self) -> bool:
        return not self.failed


def union_stations(cfg: ExperimentConfig):
    """All layout stations in first-seen order and each layout's indices."""
    union, index = [], {}
    layouts = {}
    for name in cfg.layout_names():
        idx = []
        for s in layout_stations(name, cfg.stations):
            if s not in index:
                index[s] = len(union)
                union.append(s)
            idx.append(index[s])
        layouts[name] = idx
    return union, layouts


def synthetic_events(cfg: ExperimentConfig) -> dict:
    """Seeded sparse pulse trains on the lag grid, ``{event id: Coefficients}``.

    Every input is a combination of basis pulses, so the reference model can
    reproduce the observations exactly.
    """
    rng = np.random.default_rng([cfg.seed, 1])
    n_lags = cfg.basis.n_lags
    k = min(cfg.event_pulses, n_lags)
    out = {}
    for e in range(cfg.events):
        c = np.zeros((3, n_lags))
        for j in range(3):
            lags = rng.choice(n_lags, size=k, replace=False)
            c[j, lags] = cfg.event_amplitude * rng.standard_normal(k)
        out[f"ev{e + 1:03d}"] = Coefficients(c)
    return out


def build_pool(cfg: ExperimentConfig):
    """Reference model, survey and the diverse candidate subset."""
    grid = GridSpec(cfg.field_nx, cfg.field_ny, cfg.domain_x / cfg.field_nx, cfg.domain_y / cfg.field_ny)
    ref_field = synth_reference_field(grid, cfg.ref_depth, cfg.ref_width, cfg.ref_period, cfg.ref_base,
                                      cfg.ref_meander)
    reference = GroundModel(REFERENCE_ID, ref_field, cfg.layer1, cfg.layer2, cfg.domain,
                            {"kind": "reference"})
    survey = sample_survey(ref_field, cfg.survey_count, cfg.seed)
    cands = generate_candidate_set(survey, cfg.m_list, cfg.q_list, cfg.smooth_iters, grid,
                                   cfg.layer1, cfg.layer2, cfg.domain)
    subset = select_diverse_subset(cands, (cfg.baseline_m, cfg.baseline_q), cfg.subset_count)
    return reference, survey, list(subset)


def run_experiment(cfg: ExperimentConfig, out=None, jobs: int | None = None) -> ExperimentReport:
    cfg.validate()
    out = Path(out or cfg.out)
    jobs = cfg.jobs if jobs is None else jobs
    out.mkdir(parents=True, exist_ok=True)
    save_config(out / "config.toml", cfg)
    man = RunManifest.open(out / "manifest.json", cfg.digest())
    timings = {}
    t0 = time.perf_counter()
    basis, solver = cfg.basis, cfg.solver

    reference, survey, candidates = build_pool(cfg)
    pool = candidates + ([reference] if cfg.include_reference else [])
    write_survey_csv(out / "survey.csv", survey)
    (out / "models").mkdir(exist_ok=True)
    models = {}
    for m in pool:
        p = out / "models" / f"{m.id}.json"
        write_model(p, m)
        models[m.id] = p
    timings["candidates"] = time.perf_counter() - t0

    # pseudo observations from the reference ground
    t = time.perf_counter()
    stations, layouts = union_stations(cfg)
    events = synthetic_events(cfg)
    inputs = {ev: reconstruct_input(c, basis, cfg.dt, cfg.steps) for ev, c in events.items()}
    for ev, c in events.items():
        d = out / "events" / ev
        d.mkdir(parents=True, exist_ok=True)
        write_waveform_csv(d / "input.csv", inputs[ev])
        (d / "coefficients.json").write_text(json.dumps({"c": c.c.tolist()}) + "\n")
    obs = _observations(cfg, man, out, reference, stations, inputs)
    timings["observations"] = time.perf_counter() - t

    t = time.perf_counter()
    bank_dir = out / "banks"
    bank_dir.mkdir(exist_ok=True)
    write_stations_csv(bank_dir / "stations.csv", stations)
    batch = run_greenbank(models, bank_dir, stations, solver, cfg.h, cfg.pulse_width, cfg.duration, jobs)
    timings["greenbanks"] = time.perf_counter() - t

    t = time.perf_counter()
    results = _invert_all(cfg, out, batch.banks, layouts, stations, obs, inputs)
    timings["inversion"] = time.perf_counter() - t

    t = time.perf_counter()
    for res in results.values():
        d = out / "layouts" / res.name
        plotting.plot_err_table(res.table, d / "err.svg", f"{len(res.stations)} station(s)")
    _summarise(cfg, out, results, reference, candidates, inputs)
    timings["report"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0
    summary = {"config_digest": cfg.digest(), "timings_s": timings, "failed": batch.failed,
               "layouts": {k: r.summary for k, r in results.items()}}
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    return ExperimentReport(out, results, dict(batch.failed), timings)


def _observations(cfg, man, out, reference, stations, inputs):
    from .files import read_obs_dir

    obs_dir = out / "obs"
    if man.is_done("observations"):
        st, obs = read_obs_dir(obs_dir)
        if [tuple(s) for s in st] == list(stations) and list(obs) == list(inputs):
            return obs
    mesh = build_mesh(reference, cfg.h)
    arr = run_forward_batch(mesh, cfg.solver, list(inputs.values()), stations)
    obs = {ev: [Waveform(cfg.dt, arr[b, k]) for k in range(len(stations))]
           for b, ev in enumerate(inputs)}
    write_obs_dir(obs_dir, stations, obs)
    man.mark("observations", DONE, ["obs/stations.csv"])
    return obs


def _invert_all(cfg, out, banks, layouts, stations, obs, inputs):
    basis = cfg.basis
    tables = {name: ErrTable(tuple(sorted(banks))) for name in layouts}
    errs = {name: {ev: {} for ev in obs} for name in layouts}
    in_err = {name: {} for name in layouts}
    for mid in sorted(banks):
        bank = read_green_bank(banks[mid], stations, mid)
        design = LaggedDesign(bank, basis, n_samples=cfg.steps)
        design.gram()
        for name, idx in layouts.items():
            sub = design.subset(idx)
            edir = out / "layouts" / name / "estimates"
            edir.mkdir(parents=True, exist_ok=True)
            row = []
            for ev, records in obs.items():
                est = estimate_for_model(sub.bank, [records[k] for k in idx], basis, cfg.svd_cutoff, design=sub)
                est = replace(est, event_id=ev)
                f = reconstruct_input(est.coefficients, basis, cfg.dt, cfg.steps)
                row.append(input_error(f, inputs[ev]))
                errs[name][ev][mid] = est.err
                write_estimate(edir / f"{mid}.{ev}.json", est, basis)
            in_err[name][mid] = row
    results = {}
    for name, idx in layouts.items():
        table = tables[name]
        for ev in obs:
            table = accumulate(table, ev, errs[name][ev])
        d = out / "layouts" / name
        write_err_table(d / "err_table.csv", table)
        write_ranking(d / "ranking.csv", rank(table))
        results[name] = LayoutResult(name, [stations[k] for k in idx], table, in_err[name])
    return results


def layout_statistics(res: LayoutResult, candidate_ids) -> dict:
    """Ranking statistics over the generated candidates plus the reference's standing."""
    table = res.table
    score = dict(zip(table.model_ids, table.cumulative_max[:, -1]))
    order = rank(table).model_ids
    cids = [m for m in order if m in set(candidate_ids)]
    cs = np.array([score[m] for m in cids])
    best, worst = cids[0], cids[-1]
    stats = {
        "layout": res.name,
        "n_station": len(res.stations),
        "best_model": best,
        "best_err": float(score[best]),
        "worst_model": worst,
        "worst_err": float(score[worst]),
        "median_err": float(np.median(cs)),
        "frac_within_2x_best": float(np.mean(cs <= 2.0 * score[best])),
        "input_err_best": [float(v) for v in res.input_errors[best]],
        "input_err_worst": [float(v) for v in res.input_errors[worst]],
    }
    if REFERENCE_ID in score:
        stats["reference_rank"] = order.index(REFERENCE_ID) + 1
        stats["reference_err"] = float(score[REFERENCE_ID])
        stats["input_err_reference"] = [float(v) for v in res.input_errors[REFERENCE_ID]]
    return stats


SUMMARY_COLUMNS = ["layout", "n_station", "reference_rank", "reference_err", "best_model", "best_err",
                   "worst_model", "worst_err", "median_err", "frac_within_2x_best"]


def _summarise(cfg, out, results, reference, candidates, inputs):
    cand_ids = [m.id for m in candidates]
    for res in results.values():
        res.summary = layout_statistics(res, cand_ids)
    lines = [",".join(SUMMARY_COLUMNS)]
    for res in results.values():
        s = res.summary
        lines.append(",".join(_fmt(s.get(c, "")) for c in SUMMARY_COLUMNS))
    (out / "summary.csv").write_text("\n".join(lines) + "\n")

    # figures for the densest layout
    dense = max(results.values(), key=lambda r: len(r.stations))
    s = dense.summary
    by_id = {m.id: m for m in candidates}
    plotting.plot_thickness({"reference": reference, f"best {s['best_model']}": by_id[s["best_model"]],
                             f"worst {s['worst_model']}": by_id[s["worst_model"]]},
                            out / "thickness.svg", dense.stations)
    ev = next(iter(inputs))
    est = {}
    for label, mid in (("best", s["best_model"]), ("worst", s["worst_model"])):
        p = out / "layouts" / dense.name / "estimates" / f"{mid}.{ev}.json"
        doc = json.loads(p.read_text())
        est[f"{label} {mid}"] = reconstruct_input(Coefficients(np.array(doc["c"])), cfg.basis, cfg.dt, cfg.steps)
    plotting.plot_inputs(inputs[ev], est, out / f"inputs_{dense.name}_{ev}.svg",
                         title=f"{ev}, {len(dense.stations)} stations")
    plotting.plot_layout_summary([r.summary for r in results.values()], out / "layouts.svg")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
