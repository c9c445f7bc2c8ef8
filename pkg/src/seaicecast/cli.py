"""Config-driven command line: synth, train, predict, evaluate, defaults.

One JSON config document drives everything; `seaicecast defaults` prints the
built-in defaults. Commands are deterministic given config + seed, and
partial outputs are removed when a command fails.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as dt
import json
import sys
from pathlib import Path

import numpy as np

from . import ensemble as ens
from . import forecaster, pipeline, reports
from .edge import edge_distance_series, edge_results_csv
from .metrics import MetricReport, SsimParams, evaluate
from .series import (
    WEEKS_PER_YEAR,
    ForecastBundle,
    FieldSeries,
    SplitScheme,
    SynthConfig,
    climatology_forecast,
    load_series,
    save_series,
    sparsify_weekly,
    synth_generate,
)

DEFAULT_CONFIG = {
    "seed": 0,
    "out_dir": "out",
    "data": {
        "sif": None,
        "synth": {
            "height": 32,
            "width": 32,
            "years": 10,
            "start_year": 2000,
            "cell_size_km": 14.0,
            "edge_mean": 0.5,
            "edge_amplitude": 0.3,
            "edge_softness": 3.0,
            "noise": 0.02,
            "trend": 0.0,
            "land_rows": 0,
        },
    },
    "window": {"k": 104, "stride": 52},
    "split": {
        "single_model_train": [2000, 2005],
        "ensemble_train": [2006, 2008],
        "retrain": [2000, 2008],
        "test": [2009, 2009],
    },
    "model": {"widths": [12, 12, 12, 12, 52], "kernels": [3, 3, 3, 3, 3]},
    "train": {
        "mae": {"epochs": 40, "learning_rate": 0.003, "batch_size": 4, "patience": 0},
        "ssim": {"epochs": 40, "learning_rate": 0.003, "batch_size": 4, "patience": 0},
    },
    "ensemble": {
        "kinds": ["linear", "cnn_mae", "cnn_ssim"],
        "ridge": 1e-3,
        "widths": [16, 16, 16, 16, 52],
        "kernels": [3, 3, 3, 3, 3],
        "train": {"epochs": 40, "learning_rate": 0.003, "batch_size": 4, "patience": 0},
    },
    "ssim": {"window_size": 11, "window": "gaussian", "sigma": 1.5},
    "evaluation": {"grouping": "yearly", "edge_threshold": 0.8, "edge_points": 100},
}


def _deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides=None):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        with open(path) as f:
            cfg = _deep_merge(cfg, json.load(f))
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg = _deep_merge(cfg, value if isinstance(value, dict) else {key: value})
    return cfg


def _ssim_params(cfg):
    return SsimParams(
        window_size=cfg["ssim"]["window_size"],
        window=cfg["ssim"]["window"],
        sigma=cfg["ssim"]["sigma"],
    )


def _train_config(section, loss_kind, seed, ssim_params):
    return forecaster.TrainConfig(
        loss_kind=loss_kind,
        epochs=section["epochs"],
        learning_rate=section["learning_rate"],
        batch_size=section["batch_size"],
        seed=seed,
        patience=section.get("patience", 0),
        ssim=ssim_params,
    )


def _load_weekly(cfg):
    if cfg["data"]["sif"]:
        series = load_series(cfg["data"]["sif"])
        if series.cadence == "daily":
            series = sparsify_weekly(series)
        return series
    synth = SynthConfig(**cfg["data"]["synth"])
    return synth_generate(synth, cfg["seed"])


class OutputTracker:
    """Collects files written by a command so failures can clean them up."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.paths = []

    def path(self, name):
        p = self.out_dir / name
        self.paths.append(p)
        return p

    def track_sif(self, header_path):
        # save_series writes two payload files next to the header
        header_path = Path(header_path)
        self.paths.append(header_path)
        self.paths.append(header_path.parent / (header_path.stem + ".mask.bin"))
        self.paths.append(header_path.parent / (header_path.stem + ".data.bin"))

    def track_checkpoint(self, header_path):
        header_path = Path(header_path)
        self.paths.append(header_path)
        for suffix in (".params.bin", ".weights.bin", ".model.json",
                       ".model.params.bin"):
            self.paths.append(header_path.parent / (header_path.stem + suffix))

    def cleanup(self):
        for p in self.paths:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_defaults(args):
    print(json.dumps(DEFAULT_CONFIG, indent=2))
    return 0


def cmd_synth(args, cfg, out):
    series = _load_weekly({**cfg, "data": {"sif": None, "synth": cfg["data"]["synth"]}})
    path = save_series(series, out.out_dir / "synthetic.json")
    out.track_sif(path)
    print(f"wrote {path} ({len(series)} weekly frames)")
    return 0


def cmd_train(args, cfg, out):
    series = _load_weekly(cfg)
    scheme = SplitScheme(**{key: tuple(v) for key, v in cfg["split"].items()})
    ssim_params = _ssim_params(cfg)
    k, stride = cfg["window"]["k"], cfg["window"]["stride"]
    spec = forecaster.ModelSpec(
        k, tuple(cfg["model"]["widths"]), tuple(cfg["model"]["kernels"])
    )
    ens_spec = forecaster.ModelSpec(
        3 * WEEKS_PER_YEAR,
        tuple(cfg["ensemble"]["widths"]),
        tuple(cfg["ensemble"]["kernels"]),
    )
    result = pipeline.run_training_protocol(
        series,
        scheme,
        k,
        stride,
        spec,
        _train_config(cfg["train"]["mae"], "mae", cfg["seed"], ssim_params),
        _train_config(cfg["train"]["ssim"], "ssim", cfg["seed"], ssim_params),
        ensemble_kinds=tuple(cfg["ensemble"]["kinds"]),
        ensemble_cfg=_train_config(
            cfg["ensemble"]["train"], "mae", cfg["seed"], ssim_params
        ),
        ensemble_spec=ens_spec,
        ridge=cfg["ensemble"]["ridge"],
        ssim_params=ssim_params,
    )

    for name, model in (("cnn_mae", result.model_mae), ("cnn_ssim", result.model_ssim)):
        path = forecaster.save_checkpoint(model, out.out_dir / f"{name}.json")
        out.track_checkpoint(path)
        print(f"wrote {path}")
    # the phase-1 models the ensembles were fitted on; point --singles-dir here
    # when predicting with an ensemble checkpoint
    members_dir = out.out_dir / "members"
    for name, model in (("cnn_mae", result.member_mae), ("cnn_ssim", result.member_ssim)):
        path = forecaster.save_checkpoint(model, members_dir / f"{name}.json")
        out.track_checkpoint(path)
    for kind, emodel in result.ensembles.items():
        path = ens.save_ensemble(emodel, out.out_dir / f"ensemble_{kind}.json")
        out.track_checkpoint(path)
        print(f"wrote {path}")

    selected_path = out.path("selected.json")
    with open(selected_path, "w") as f:
        json.dump({"selected": result.selected.kind}, f, indent=1)
        f.write("\n")

    history_path = out.path("loss_history.csv")
    with open(history_path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["model", "epoch", "loss"])
        for name, history in result.histories.items():
            for epoch, loss in enumerate(history):
                writer.writerow([name, epoch, f"{loss:.8f}"])

    result.selection_report.to_csv(out.path("selection_report.csv"))
    print(f"selected ensemble: {result.selected.kind}")
    return 0


def _bundle_from_checkpoint(args, series, issue_date):
    if args.checkpoint == "climatology":
        return climatology_forecast(series, issue_date)
    with open(args.checkpoint) as f:
        magic = json.load(f).get("magic")
    idx = series.index_of(issue_date)
    if magic == forecaster.CHECKPOINT_MAGIC:
        model, _ = forecaster.load_checkpoint(args.checkpoint)
        k = model.spec.input_channels
        if idx < k:
            raise ValueError(f"need {k} weeks of pre-history before {issue_date}")
        return forecaster.predict(
            model, series.values[idx - k : idx], issue_date, Path(args.checkpoint).stem
        )
    if magic == ens.ENSEMBLE_MAGIC:
        if not args.singles_dir:
            raise ValueError("ensemble checkpoints need --singles-dir")
        emodel = ens.load_ensemble(args.checkpoint)
        singles_dir = Path(args.singles_dir)
        model_mae, _ = forecaster.load_checkpoint(singles_dir / "cnn_mae.json")
        model_ssim, _ = forecaster.load_checkpoint(singles_dir / "cnn_ssim.json")
        member_sets, _ = pipeline.build_member_sets(
            series, [idx], model_mae, model_ssim, model_mae.spec.input_channels
        )
        return ens.ensemble_predict(emodel, member_sets[0])
    raise ValueError(f"unrecognized checkpoint file: {args.checkpoint}")


def cmd_predict(args, cfg, out):
    series = load_series(args.data)
    if series.cadence == "daily":
        series = sparsify_weekly(series)
    issue_date = dt.date.fromisoformat(args.issue_date)
    bundle = _bundle_from_checkpoint(args, series, issue_date)

    forecast = FieldSeries(
        bundle.values, series.mask, bundle.dates(), "weekly", series.cell_size_km
    )
    path = save_series(forecast, out.out_dir / "forecast.json")
    out.track_sif(path)
    print(f"wrote {path}")

    weeks = [int(w) for w in args.weeks.split(",")] if args.weeks else [0, 13, 26, 39]
    for week in weeks:
        if not 0 <= week < WEEKS_PER_YEAR:
            raise ValueError(f"week {week} outside 0..{WEEKS_PER_YEAR - 1}")
        reports.write_pgm(bundle.values[week], out.path(f"week_{week:02d}.pgm"))
        reports.plot_concentration(
            bundle.values[week],
            out.path(f"week_{week:02d}.png"),
            title=f"{bundle.provenance} {forecast.timestamps[week]}",
        )
    return 0


def _bundles_from_sif(path):
    """Chop a forecast SIF into consecutive 52-week bundles."""
    series = load_series(path)
    if len(series) % WEEKS_PER_YEAR:
        raise ValueError(
            f"forecast SIF {path} has {len(series)} frames, "
            f"not a multiple of {WEEKS_PER_YEAR}"
        )
    name = Path(path).stem
    return [
        ForecastBundle(
            series.timestamps[i],
            series.values[i : i + WEEKS_PER_YEAR],
            name,
        )
        for i in range(0, len(series), WEEKS_PER_YEAR)
    ], name


def cmd_evaluate(args, cfg, out):
    actual = load_series(args.actual)
    if actual.cadence == "daily":
        actual = sparsify_weekly(actual)
    grouping = args.grouping or cfg["evaluation"]["grouping"]
    threshold = (
        args.threshold
        if args.threshold is not None
        else cfg["evaluation"]["edge_threshold"]
    )
    ssim_params = _ssim_params(cfg)

    sources = {}
    for fpath in args.forecast:
        bundles, name = _bundles_from_sif(fpath)
        if name in sources:
            raise ValueError(f"duplicate forecast source name {name!r}")
        sources[name] = bundles

    metric_reports = {}
    for name, bundles in sources.items():
        metric_reports[name] = evaluate(bundles, actual, grouping, ssim_params)
        weekly = []
        for bundle in bundles:
            weekly.extend(
                edge_distance_series(
                    bundle, actual, threshold, cfg["evaluation"]["edge_points"]
                )
            )
        edge_results_csv(weekly, out.path(f"edge_{name}.csv"))
        reports.plot_edge_boxplots(
            weekly,
            out.path(f"edge_{name}.png"),
            title=f"Signed ice-edge distance: {name}",
        )

    # combined table: one period column, one (mae, ssim) column group per source
    periods = sorted({r["period"] for rep in metric_reports.values() for r in rep.rows})
    with open(out.path("metrics.csv"), "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        header = ["period"]
        for name in sources:
            header += [f"{name}_mae", f"{name}_ssim"]
        writer.writerow(header)
        for period in periods:
            row = [period]
            for name in sources:
                match = [r for r in metric_reports[name].rows if r["period"] == period]
                if match:
                    row += [f"{match[0]['mae']:.6f}", f"{match[0]['ssim']:.6f}"]
                else:
                    row += ["", ""]
            writer.writerow(row)

    reports.plot_metric_reports(
        metric_reports, out.path("metrics.png"), title=f"Forecast quality ({grouping})"
    )
    print(f"wrote {out.out_dir / 'metrics.csv'}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="seaicecast",
        description="Train, run and score weekly sea-ice concentration forecasts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override config seed")

    p = sub.add_parser("defaults", help="print the default config")
    p.set_defaults(fn=cmd_defaults, needs_out=False)

    p = sub.add_parser("synth", help="generate a synthetic SIF dataset")
    common(p)
    p.set_defaults(fn=cmd_synth, needs_out=True)

    p = sub.add_parser("train", help="run the three-phase training protocol")
    common(p)
    p.set_defaults(fn=cmd_train, needs_out=True)

    p = sub.add_parser("predict", help="issue a 52-week forecast")
    common(p)
    p.add_argument("--checkpoint", required=True,
                   help="model/ensemble checkpoint, or 'climatology'")
    p.add_argument("--data", required=True, help="SIF dataset with pre-history")
    p.add_argument("--issue-date", required=True, help="forecast start (ISO date)")
    p.add_argument("--weeks", help="comma-separated week indices to snapshot")
    p.add_argument("--singles-dir",
                   help="directory with cnn_mae/cnn_ssim checkpoints "
                        "(for ensemble checkpoints)")
    p.set_defaults(fn=cmd_predict, needs_out=True)

    p = sub.add_parser("evaluate", help="score forecast SIFs against actuals")
    common(p)
    p.add_argument("--forecast", action="append", required=True,
                   help="forecast SIF (repeatable for side-by-side comparison)")
    p.add_argument("--actual", required=True, help="actual SIF series")
    p.add_argument("--threshold", type=float, help="ice-edge threshold")
    p.add_argument("--grouping", choices=["yearly", "quarterly"])
    p.set_defaults(fn=cmd_evaluate, needs_out=True)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not getattr(args, "needs_out", False):
        return args.fn(args)

    try:
        cfg = load_config(args.config, {"seed": args.seed})
    except (OSError, json.JSONDecodeError, ValueError) as e:
        print(f"error: bad config: {e}", file=sys.stderr)
        return 1
    out = OutputTracker(args.out or cfg["out_dir"])
    try:
        return args.fn(args, cfg, out)
    except Exception as e:
        out.cleanup()
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
