"""``groundsel`` command line.

Exit codes: 0 success, 1 some tasks failed, 2 invalid configuration or usage.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..elastodynamics.greenbank import read_green_bank
from ..ground_model import read_survey_csv, write_model, write_survey_csv
from ..ingest import ParseError, parse_strong_motion_ascii, process_records
from ..inversion import (
    LaggedDesign,
    estimate_for_model,
    reconstruct_input,
    truncated_svd_solve,
    write_estimate,
)
from ..selection import (
    CUMULATIVE_MAX,
    PER_EVENT,
    ErrTable,
    accumulate,
    rank,
    read_err_table,
    select_credible,
    write_err_table,
    write_ranking,
)
from ..waveform import write_waveform_csv
from . import plotting
from .batch import run_greenbank
from .config import ConfigError, ExperimentConfig, layout_stations, load_config
from .experiment import SUMMARY_COLUMNS, _fmt, build_pool, run_experiment
from .files import model_files, read_obs_dir, read_stations_csv, write_stations_csv

log = logging.getLogger("groundsel")

OK, PARTIAL, INVALID = 0, 1, 2


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", type=Path, default=d, help="flat TOML configuration file")
    p.add_argument("--jobs", type=int, default=d, help="worker processes")
    p.add_argument("--out", type=Path, default=d, help="output directory")
    p.add_argument("--seed", type=int, default=d, help="random seed (u64)")
    p.add_argument("--svd-cutoff", type=float, default=d, help="relative singular value cutoff")
    p.add_argument("-v", "--verbose", action="store_true", default=d)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="groundsel", description=__doc__.splitlines()[0])
    _common(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("experiment", help="run the synthetic end-to-end experiment")
    _common(p, True)

    p = sub.add_parser("gen-candidates", help="write the diverse candidate pool as model files")
    _common(p, True)
    p.add_argument("--survey", type=Path, help="survey CSV (default: sample the reference ground)")

    p = sub.add_parser("greenbank", help="compute Green banks for every model in a directory")
    _common(p, True)
    p.add_argument("--models", type=Path, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--layout", choices=["1", "9", "25"], default="25")
    g.add_argument("--stations", type=Path, help="stations CSV (x1,x2)")
    p.add_argument("--max-tasks", type=int, help="stop after this many forward runs")

    p = sub.add_parser("invert", help="estimate inputs and ERR for every bank and event")
    _common(p, True)
    p.add_argument("--banks", type=Path, required=True)
    p.add_argument("--obs", type=Path, required=True)
    p.add_argument("--sweep", type=str, help="comma-separated cutoffs for a norm/rank report")

    p = sub.add_parser("rank", help="rank models from an ERR table")
    _common(p, True)
    p.add_argument("--table", type=Path, required=True)
    p.add_argument("--criterion", choices=[CUMULATIVE_MAX, PER_EVENT], default=CUMULATIVE_MAX)
    p.add_argument("--event")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--top-n", type=int)
    g.add_argument("--threshold", type=float)

    p = sub.add_parser("parse", help="strong-motion ASCII files to velocity waveform CSVs")
    _common(p, True)
    p.add_argument("files", nargs="+", type=Path)
    p.add_argument("--fc", type=float, default=2.5, help="low-pass corner (Hz)")
    p.add_argument("--dt", type=float, default=None, help="output step (default: config dt)")
    return ap


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    if args.jobs is not None:
        over["jobs"] = args.jobs
    if args.out is not None:
        over["out"] = str(args.out)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        over["seed"] = args.seed
    if args.svd_cutoff is not None:
        over["svd_cutoff"] = args.svd_cutoff
    return replace(cfg, **over).validate()


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"groundsel: invalid config: {exc}", file=sys.stderr)
        return INVALID
    handler = {
        "experiment": cmd_experiment,
        "gen-candidates": cmd_gen_candidates,
        "greenbank": cmd_greenbank,
        "invert": cmd_invert,
        "rank": cmd_rank,
        "parse": cmd_parse,
    }[args.command]
    try:
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"groundsel: invalid config: {exc}", file=sys.stderr)
        return INVALID
    except (ValueError, OSError) as exc:
        print(f"groundsel: {exc}", file=sys.stderr)
        return PARTIAL


def cmd_experiment(cfg: ExperimentConfig, args) -> int:
    rep = run_experiment(cfg, Path(cfg.out), cfg.jobs)
    w = csv.writer(sys.stdout)
    w.writerow(SUMMARY_COLUMNS)
    for res in rep.layouts.values():
        w.writerow([_fmt(res.summary.get(c, "")) for c in SUMMARY_COLUMNS])
    print(f"# total {rep.timings['total']:.1f} s; report in {rep.out}", file=sys.stderr)
    for key, msg in rep.failed.items():
        print(f"groundsel: {key} failed: {msg}", file=sys.stderr)
    return OK if rep.ok else PARTIAL


def cmd_gen_candidates(cfg: ExperimentConfig, args) -> int:
    out = Path(cfg.out)
    mdir = out / "models"
    mdir.mkdir(parents=True, exist_ok=True)
    reference, survey, cands = build_pool(cfg)
    if args.survey:
        from ..ground_model import generate_candidate_set, select_diverse_subset

        survey = read_survey_csv(args.survey)
        grid = reference.field.grid
        pool = generate_candidate_set(survey, cfg.m_list, cfg.q_list, cfg.smooth_iters, grid,
                                      cfg.layer1, cfg.layer2, cfg.domain)
        cands = list(select_diverse_subset(pool, (cfg.baseline_m, cfg.baseline_q), cfg.subset_count))
    elif cfg.include_reference:
        write_model(mdir / f"{reference.id}.json", reference)
    write_survey_csv(out / "survey.csv", survey)
    w = csv.writer(sys.stdout)
    w.writerow(["model_id", "M", "q", "source_id"])
    for m in cands:
        write_model(mdir / f"{m.id}.json", m)
        p = m.provenance
        w.writerow([m.id, p.get("M"), p.get("q"), p.get("source_id")])
    return OK


def cmd_greenbank(cfg: ExperimentConfig, args) -> int:
    models = model_files(args.models)
    stations = read_stations_csv(args.stations) if args.stations else layout_stations(args.layout)
    out = Path(cfg.out) / "banks" if args.out is None else Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_stations_csv(out / "stations.csv", stations)
    res = run_greenbank(models, out, stations, cfg.solver, cfg.h, cfg.pulse_width, cfg.duration,
                        cfg.jobs, max_tasks=args.max_tasks)
    w = csv.writer(sys.stdout)
    w.writerow(["model_id", "bank"])
    for mid in sorted(res.banks):
        w.writerow([mid, res.banks[mid]])
    for key, msg in sorted(res.failed.items()):
        print(f"groundsel: {key} failed: {msg}", file=sys.stderr)
    pending = len(models) - len(res.banks)
    if pending and not res.failed:
        print(f"groundsel: {pending} model(s) still pending", file=sys.stderr)
    return OK if res.ok else PARTIAL


def cmd_invert(cfg: ExperimentConfig, args) -> int:
    basis = cfg.basis
    st_obs, events = read_obs_dir(args.obs)
    st_bank = read_stations_csv(args.banks / "stations.csv")
    if [tuple(s) for s in st_obs] != [tuple(s) for s in st_bank]:
        raise ValueError("station layout of observations does not match the banks")
    banks = sorted(args.banks.glob("*.gbk"))
    if not banks:
        raise ValueError(f"{args.banks}: no bank files")
    out = Path(cfg.out)
    edir = out / "estimates"
    edir.mkdir(parents=True, exist_ok=True)
    cutoffs = [float(x) for x in args.sweep.split(",")] if args.sweep else []
    failures = 0
    errs = {ev: {} for ev in events}
    sweep_rows = []
    for path in banks:
        bank = read_green_bank(path, st_bank)
        if bank.n_station != len(st_bank):
            raise ValueError(f"{path}: bank has {bank.n_station} stations, expected {len(st_bank)}")
        n = next(iter(events.values()))[0].n
        design = LaggedDesign(bank, basis, n_samples=n)
        for ev, obs in events.items():
            try:
                est = estimate_for_model(bank, obs, basis, cfg.svd_cutoff, design=design)
            except ValueError as exc:
                print(f"groundsel: {bank.model_id}/{ev}: {exc}", file=sys.stderr)
                failures += 1
                continue
            est = replace(est, event_id=ev)
            errs[ev][bank.model_id] = est.err
            write_estimate(edir / f"{bank.model_id}.{ev}.json", est, basis)
            write_waveform_csv(edir / f"{bank.model_id}.{ev}.input.csv",
                               reconstruct_input(est.coefficients, basis, bank.dt))
            if cutoffs:
                system = design.normal_system(obs)
                for cut in cutoffs:
                    c, r = truncated_svd_solve(system, cut)
                    sweep_rows.append([bank.model_id, ev, repr(cut), r, repr(float(np.linalg.norm(c.c))),
                                       repr(system.objective(c))])
    table_path = out / "err_table.csv"
    ids = sorted({m for col in errs.values() for m in col})
    table = read_err_table(table_path) if table_path.exists() else ErrTable(tuple(ids))
    for ev, col in errs.items():
        if not col:
            continue
        if ev in table.event_ids:
            print(f"groundsel: event {ev} already in {table_path}; skipped", file=sys.stderr)
            continue
        if set(col) != set(table.model_ids):
            print(f"groundsel: event {ev} incomplete; not added to the table", file=sys.stderr)
            failures += 1
            continue
        table = accumulate(table, ev, col)
    if table.event_ids:
        write_err_table(table_path, table)
    if cutoffs:
        with open(out / "cutoff_sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model_id", "event_id", "cutoff", "rank", "norm_c", "objective"])
            w.writerows(sweep_rows)
    w = csv.writer(sys.stdout)
    w.writerow(["model_id", "event_id", "err"])
    for ev, col in errs.items():
        for mid in sorted(col):
            w.writerow([mid, ev, repr(col[mid])])
    return OK if failures == 0 else PARTIAL


def cmd_rank(cfg: ExperimentConfig, args) -> int:
    table = read_err_table(args.table)
    if not table.model_ids:
        raise ValueError(f"{args.table}: empty table")
    r = rank(table, args.criterion, args.event)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ranking(out / "ranking.csv", r)
    plotting.plot_err_table(table, out / "ranking.svg", r.criterion)
    chosen = None
    if args.top_n is not None or args.threshold is not None:
        chosen = set(select_credible(table, args.criterion, args.top_n, args.threshold, args.event))
    w = csv.writer(sys.stdout)
    w.writerow(["rank", "model_id", "score"] + (["selected"] if chosen is not None else []))
    for k, (m, s) in enumerate(zip(r.model_ids, r.scores)):
        w.writerow([k + 1, m, repr(s)] + ([int(m in chosen)] if chosen is not None else []))
    return OK


def cmd_parse(cfg: ExperimentConfig, args) -> int:
    dt = cfg.dt if args.dt is None else args.dt
    groups, failures = {}, 0
    for path in args.files:
        try:
            rec = parse_strong_motion_ascii(path.read_text())
        except (ParseError, UnicodeDecodeError) as exc:
            print(f"groundsel: {path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        groups.setdefault((rec.station, rec.origin_time), []).append(rec)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    w = csv.writer(sys.stdout)
    w.writerow(["station", "origin_time", "file", "n"])
    for (station, origin), recs in sorted(groups.items()):
        try:
            v = process_records(recs, args.fc, dt)
        except ValueError as exc:
            print(f"groundsel: {station} {origin}: {exc}", file=sys.stderr)
            failures += 1
            continue
        stamp = "".join(ch for ch in origin if ch.isdigit())
        path = out / f"{station}_{stamp}.csv"
        write_waveform_csv(path, v)
        w.writerow([station, origin, path, v.n])
    return OK if failures == 0 else PARTIAL


if __name__ == "__main__":
    sys.exit(main())
