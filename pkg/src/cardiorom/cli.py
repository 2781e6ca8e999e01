"""Command-line entry point.

One subcommand per pipeline stage, so the offline chain

    cardiorom population basis hull oracle calibrate gp-train --config c.json

can also run stepwise or be resumed. Exit codes: 0 on success, 2 for
validation/configuration problems, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import NumericalError, ValidationError
from .geometry import load_geometry, surface_grid
from .gp import TrainingRecord
from .pipeline import (ArtifactStore, PipelineConfig, config_from_dict,
                       emit_plot_data, load_config, load_report, run_offline,
                       run_online, run_update, save_report, stage_basis,
                       stage_calibrate, stage_gp_train, stage_hull,
                       stage_oracle, stage_population)

STAGES = {
    "population": stage_population,
    "basis": stage_basis,
    "hull": stage_hull,
    "oracle": stage_oracle,
    "calibrate": stage_calibrate,
    "gp-train": stage_gp_train,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cardiorom",
        description="Reduced-order cardiac model with a calibrated "
                    "correction-factor surrogate")
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override the artifact directory")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in STAGES:
        sub.add_parser(name, help=f"run the {name} stage")
    sub.add_parser("offline", help="run every offline stage in order")

    predict = sub.add_parser("predict", help="online prediction at a "
                                             "target geometry")
    target = predict.add_mutually_exclusive_group(required=True)
    target.add_argument("--geometry", help="ellipsoid geometry JSON")
    target.add_argument("--coeffs", help="geometry coefficients JSON "
                                         "{\"c\": [...]}")
    predict.add_argument("--report", default=None,
                         help="report path (default <out>/prediction.json)")

    update = sub.add_parser("update", help="insert a calibrated record "
                                           "into the surrogate")
    update.add_argument("--record", required=True,
                        help="JSON {c, mu, sigma_mat}")

    plot = sub.add_parser("plot", help="emit plot CSVs from a report")
    plot.add_argument("--report", default=None,
                      help="report path (default <out>/prediction.json)")
    plot.add_argument("--plot-dir", default=None,
                      help="output directory (default <out>/plots)")
    return parser


def _load_pipeline_config(args) -> PipelineConfig:
    if args.config:
        return load_config(args.config, out_dir=args.out, seed=args.seed)
    if not args.out:
        raise ValidationError("need --config or --out")
    raw = {"schema": 1, "out_dir": args.out}
    return config_from_dict(raw, out_dir=args.out, seed=args.seed)


def _report_path(config: PipelineConfig, override) -> str:
    if override:
        return override
    return ArtifactStore(config.out_dir).path("prediction.json")


def _cmd_predict(config: PipelineConfig, args) -> None:
    if args.coeffs:
        with open(args.coeffs) as fh:
            c = np.asarray(json.load(fh)["c"], dtype=float)
        report = run_online(config, coeffs=c)
    else:
        geom = load_geometry(args.geometry)
        grid = surface_grid(geom, config.n_theta, config.n_phi)
        report = run_online(config, target=grid)
    path = _report_path(config, args.report)
    save_report(report, path)
    flag = "flagged" if report.trust.flag else "ok"
    print(f"wrote {path} (trust ratio {report.trust.ratio:.3f}, {flag})")


def _cmd_update(config: PipelineConfig, args) -> None:
    with open(args.record) as fh:
        raw = json.load(fh)
    record = TrainingRecord(c=np.asarray(raw["c"], dtype=float),
                            mu=np.asarray(raw["mu"], dtype=float),
                            sigma_mat=np.asarray(raw["sigma_mat"],
                                                 dtype=float))
    report = run_update(config, record)
    verdict = "accepted" if report.accepted else "rejected (too close)"
    print(f"update {verdict}")


def _cmd_plot(config: PipelineConfig, args) -> None:
    report = load_report(_report_path(config, args.report))
    plot_dir = args.plot_dir or ArtifactStore(config.out_dir).path("plots")
    for path in emit_plot_data(report, plot_dir):
        print(f"wrote {path}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_pipeline_config(args)
        if args.command in STAGES:
            STAGES[args.command](config)
            print(f"{args.command} stage complete ({config.out_dir})")
        elif args.command == "offline":
            manifest = run_offline(config)
            counts = manifest["counts"]
            print(f"offline complete: {counts['n_pop']} samples, "
                  f"{counts['n_vertices']} hull vertices, "
                  f"{counts['gp_training_size']} GP records")
        elif args.command == "predict":
            _cmd_predict(config, args)
        elif args.command == "update":
            _cmd_update(config, args)
        elif args.command == "plot":
            _cmd_plot(config, args)
    except (ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"error: missing key {exc} in input JSON", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
