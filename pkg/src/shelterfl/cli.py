"""Command-line runner: ``generate``, ``label``, ``sweep`` and ``compare``.

Exit codes: 0 success, 2 configuration error, 3 a checked property failed.
Everything written under ``--out`` is a function of the configuration and
master seed; timings go to ``timings.jsonl`` so the other files stay
byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import features as feat
from . import fedsim, labeling, metrics, reports
from . import io as sio
from .config import ConfigError, ExperimentConfig, load_config
from .domain import FedConfig, Label, TrainConfig, WindowConfig, to_record
from .seeding import derive_seed
from .synthgen import gen_cohort, merge_linked, primary_agency

logger = logging.getLogger("shelterfl")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROPERTY = 3

SCENARIO_FLAG = {"central": "centralized", "federated": "federated", "isolated": "isolated"}


# -- shared plumbing ------------------------------------------------------------


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_table(out: Path, stem: str, rows, columns) -> None:
    sio.write_text(out / f"{stem}.txt", metrics.format_table(rows, columns))
    sio.write_text(out / f"{stem}.csv", metrics.to_csv(rows, columns))


def _load_data(cfg: ExperimentConfig, window: WindowConfig):
    """Linked view plus truth labels (empty for external data)."""
    if cfg.data_path:
        linked = sio.read_stay_records(cfg.data_path)
        linked, dropped = sio.drop_short_followup(linked, window.prediction_days)
        if dropped:
            print(f"excluded {dropped} clients with less than {window.prediction_days} days of follow-up")
        truth_path = Path(cfg.data_path).with_name("truth.csv")
        truth = sio.read_truth(truth_path) if truth_path.is_file() else {}
        return linked, truth
    cohort = gen_cohort(replace(cfg.cohort, seed=derive_seed(cfg.seed, "cohort")))
    return cohort, cohort.truth


def _manifest_base(command: str, cfg: ExperimentConfig) -> dict:
    return {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "fast": cfg.fast,
        # the output directory does not influence results, so it is left out
        # and reruns into different directories produce identical manifests
        "config": replace(cfg, out_dir="").to_ini(),
        "seeds": {
            "cohort": derive_seed(cfg.seed, "cohort"),
            "experiment": derive_seed(cfg.seed, "experiment"),
        },
    }


# -- commands -------------------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig, out: Path) -> int:
    cohort = gen_cohort(replace(cfg.cohort, seed=derive_seed(cfg.seed, "cohort")))
    n_records = sio.write_stay_records(out / "stays.csv", cohort)
    sio.write_truth(out / "truth.csv", cohort.truth)
    mix = np.bincount([int(v) for v in cohort.truth.values()], minlength=3)
    counts = {a: ds.m for a, ds in cohort.items()}
    manifest = _manifest_base("generate", cfg)
    manifest.update(
        {
            "clients": len(cohort.truth),
            "records": n_records,
            "agency_clients": counts,
            "class_counts": {str(Label(i)): int(c) for i, c in enumerate(mix)},
        }
    )
    _dump_json(out / "manifest.json", manifest)
    print(f"clients: {len(cohort.truth)}  stay records: {n_records}")
    for label in Label:
        share = mix[label] / max(1, mix.sum())
        print(f"  {label!s:<13} {mix[label]:>7}  ({share:.3f})")
    print("clients per agency (unlinked):")
    for a in sorted(counts, key=metrics.agency_sort_key):
        print(f"  {a:>5} {counts[a]:>7}")
    return EXIT_OK


def cmd_label(cfg: ExperimentConfig, out: Path, mode: str) -> int:
    window = cfg.window
    linked, _ = _load_data(cfg, window)
    seed = derive_seed(cfg.seed, "labeling")
    people = merge_linked(linked)
    tuples = feat.tuple_matrix(people, window)
    central, central_labels = labeling.centralized_labeling(tuples, seed=seed)

    rows = []
    report: dict = {"mode": mode, "central": central.to_dict()}
    if mode == "central":
        # one row per person, filed under the agency holding most of their stays
        home = primary_agency(linked)
        rows = [(h.client_id, home[h.client_id], t, l) for h, t, l in zip(people, tuples, central_labels)]
    else:
        per_agency = {a: feat.tuple_matrix(list(linked[a]), window) for a in sorted(linked)}
        if mode == "decentral":
            glob = labeling.decentralized_labeling(per_agency, seed=seed)
            report["global"] = glob.to_dict()
            report["distance_to_central"] = labeling.centroid_distance(glob, central)
            assign = {a: glob for a in per_agency}
        else:
            assign, dist, excluded = {}, {}, []
            for a, t in per_agency.items():
                try:
                    assign[a] = labeling.local_centroids(t, seed=seed)
                    dist[a] = labeling.centroid_distance(assign[a], central)
                except labeling.DegenerateClustering:
                    excluded.append(a)
            report["agencies"] = {a: c.to_dict() for a, c in assign.items()}
            report["distance_to_central"] = dist
            report["excluded"] = excluded
        for a in sorted(assign):
            labels = labeling.label_tuples(per_agency[a], assign[a])
            rows.extend((h.client_id, a, t, l) for h, t, l in zip(linked[a], per_agency[a], labels))

    rows.sort(key=lambda r: (metrics.agency_sort_key(r[1]), r[0]))
    lines = ["client_id,agency_id,n_stays,n_episodes,label"]
    lines.extend(f"{c},{a},{int(t[0])},{int(t[1])},{Label(int(l))}" for c, a, t, l in rows)
    sio.write_text(out / "labels.csv", "\n".join(lines) + "\n")
    _dump_json(out / "centroids.json", report)
    counts = np.bincount([int(r[3]) for r in rows], minlength=3)
    print(f"labeled {len(rows)} clients ({mode}): " + ", ".join(f"{Label(i)} {c}" for i, c in enumerate(counts)))
    if "distance_to_central" in report:
        d = report["distance_to_central"]
        if mode == "decentral":
            print("centroid distance to central: " + ", ".join(f"{k} {v:.3f}" for k, v in d.items()))
        else:
            for a in sorted(d, key=metrics.agency_sort_key):
                print(f"  agency {a}: " + ", ".join(f"{k} {v:.3f}" for k, v in d[a].items()))
    return EXIT_OK


def _train_cfg(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return replace(cfg.train, seed=seed)


def cmd_sweep(cfg: ExperimentConfig, out: Path) -> int:
    linked, _ = _load_data(cfg, max(cfg.grid(), key=lambda w: w.prediction_days))
    rows = []
    for window in cfg.grid():
        exp = fedsim.prepare_experiment(linked, window, seed=derive_seed(cfg.seed, "experiment"))
        avg = fedsim.repeat_and_average(
            lambda s: fedsim.run_centralized(
                exp.linked, exp.linked_train_ids, exp.test, window, _train_cfg(cfg, s), exp.label_seed
            ),
            cfg.repeats,
            seed_base=cfg.seed,
        )
        m = avg.mean["macro"]
        row = {
            "T_b": window.n_bins,
            "T_o": window.observation_days,
            "T_p": window.prediction_days,
            "precision": m["precision"],
            "recall": m["recall"],
            "f1": m["f1"],
            "recall_std": avg.std["macro"]["recall"],
        }
        rows.append(row)
        print(f"T_b={row['T_b']:>3} T_o={row['T_o']:>4} T_p={row['T_p']:>4}  P={row['precision']:.4f} R={row['recall']:.4f}")
    rows = reports.sweep_sort(rows)
    checks = reports.trend_checks(rows)
    _write_table(out, "sweep", rows, reports.SWEEP_COLUMNS)
    manifest = _manifest_base("sweep", cfg)
    manifest["rows"] = rows
    manifest["checks"] = {c.name: c.to_dict() for c in checks}
    _dump_json(out / "manifest.json", manifest)
    print(metrics.format_table(rows, reports.SWEEP_COLUMNS))
    failed = [c.name for c in checks if not c.passed]
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail['held']}/{c.detail['comparisons']}")
    return EXIT_PROPERTY if failed else EXIT_OK


def cmd_compare(cfg: ExperimentConfig, out: Path) -> int:
    window = cfg.window
    linked, _ = _load_data(cfg, window)
    exp = fedsim.prepare_experiment(linked, window, seed=derive_seed(cfg.seed, "experiment"))
    print(f"test records: {len(exp.test)}  agencies: {len(exp.agencies)}")

    rounds_fh = open(out / "metrics_rounds.jsonl", "w", encoding="utf-8")
    timings_fh = open(out / "timings.jsonl", "w", encoding="utf-8")
    averaged = {}
    try:
        for sc in cfg.scenarios:

            def run(seed, sc=sc):
                started = time.perf_counter()

                def on_round(log: fedsim.RoundLog):
                    rounds_fh.write(json.dumps({"scenario": sc, "seed": seed, **log.record()}) + "\n")
                    timings_fh.write(
                        json.dumps({"scenario": sc, "seed": seed, "round": log.round, "wall_time": log.wall_time}) + "\n"
                    )

                result = fedsim.run_scenario(sc, exp, _train_cfg(cfg, seed), cfg.fed, on_round=on_round)
                elapsed = time.perf_counter() - started
                timings_fh.write(json.dumps({"scenario": sc, "seed": seed, "total": elapsed}) + "\n")
                print(f"  {sc} seed {seed}: macro recall {result.macro['recall']:.4f} ({elapsed:.0f}s)")
                return result

            averaged[sc] = fedsim.repeat_and_average(run, cfg.repeats, seed_base=cfg.seed, keep_results=True)
    finally:
        rounds_fh.close()
        timings_fh.close()

    means = {sc: a.mean for sc, a in averaged.items()}
    stds = {sc: a.std for sc, a in averaged.items()}
    _write_table(out, "aggregate", reports.aggregate_rows(means, stds), reports.AGGREGATE_COLUMNS)
    _write_table(out, "per_class", reports.per_class_rows(means), reports.PER_CLASS_COLUMNS)
    _write_table(
        out, "per_agency", reports.per_agency_rows(means, exp.client_counts), reports.PER_AGENCY_COLUMNS
    )
    sio.write_text(out / "f1_chart.csv", metrics.to_csv(reports.f1_chart_rows(means), ("agency", "scenario", "f1")))

    checks = []
    if set(fedsim.SCENARIOS) <= set(averaged):
        checks.append(reports.ordering_check({sc: means[sc]["macro"]["recall"] for sc in fedsim.SCENARIOS}))
        checks.append(reports.equity_check(means, exp.client_counts))

    centroids = {"central": exp.central_centroids.to_dict()}
    for sc, a in averaged.items():
        first = a.results[0]
        if sc == fedsim.FEDERATED:
            centroids["decentralized"] = first.centroids["global"].to_dict()
        elif sc == fedsim.ISOLATED:
            centroids["isolated"] = {k: v.to_dict() for k, v in first.centroids.items()}
    manifest = _manifest_base("compare", cfg)
    manifest.update(
        {
            "scenarios": list(averaged),
            "repeat_seeds": averaged[next(iter(averaged))].seeds,
            "train": to_record(cfg.train),
            "federated": to_record(cfg.fed),
            "window": to_record(window),
            "test": {"n": len(exp.test), "digest": exp.test.digest()},
            "client_counts": exp.client_counts,
            "centroids": centroids,
            "excluded": {sc: a.results[0].excluded for sc, a in averaged.items()},
            "metrics": {sc: {"mean": means[sc], "std": stds[sc], "runs": averaged[sc].runs} for sc in averaged},
            "checks": {c.name: c.to_dict() for c in checks},
        }
    )
    _dump_json(out / "manifest.json", manifest)
    print(metrics.format_table(reports.aggregate_rows(means, stds), reports.AGGREGATE_COLUMNS))
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}")
    ordering = next((c for c in checks if c.name == "scenario_ordering"), None)
    return EXIT_PROPERTY if ordering is not None and not ordering.passed else EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file (defaults apply when omitted)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides [experiment] out)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--repeats", type=int, help="training repeats per scenario or grid cell")
    common.add_argument("--scenario", choices=("central", "federated", "isolated", "all"), help="scenarios to run")
    common.add_argument("--fast", action="store_true", help="5k clients, 25 rounds, 3 repeats")
    common.add_argument("--data", metavar="PATH", help="stay-record CSV to use instead of a synthetic cohort")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="shelterfl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic cohort and its truth sidecar")
    p = sub.add_parser("label", parents=[common], help="label clients by k-means on (stays, episodes)")
    p.add_argument("--mode", choices=("central", "decentral", "isolated"), default="central")
    sub.add_parser("sweep", parents=[common], help="centralized model over the window grid")
    sub.add_parser("compare", parents=[common], help="centralized vs federated vs isolated")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.fast:
        cfg = cfg.with_fast_profile()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.repeats is not None:
        changes["repeats"] = args.repeats
    if args.scenario:
        changes["scenarios"] = fedsim.SCENARIOS if args.scenario == "all" else (SCENARIO_FLAG[args.scenario],)
    if args.out:
        changes["out_dir"] = args.out
    if args.data:
        changes["data_path"] = args.data
    return replace(cfg, **changes) if changes else cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "generate":
            return cmd_generate(cfg, out)
        if args.command == "label":
            return cmd_label(cfg, out, args.mode)
        if args.command == "sweep":
            return cmd_sweep(cfg, out)
        return cmd_compare(cfg, out)
    except (ConfigError, sio.FormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
