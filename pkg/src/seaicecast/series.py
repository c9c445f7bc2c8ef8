"""Time-ordered field stacks: SIF file I/O, weekly sparsification, lagged
training pairs, climatology forecasts, calendar splits, and synthetic data.

The calendar convention is 52 weeks per year: week w of year Y starts on
day-of-year 1 + 7*w (w = 0..51); days 365/366 are dropped.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .grids import GridField

WEEKS_PER_YEAR = 52


def week_of_year(date):
    """0-based week index within the 52-week year; days past day 364 fold
    into week 51."""
    doy = date.timetuple().tm_yday
    return min((doy - 1) // 7, WEEKS_PER_YEAR - 1)


def week_start(year, week):
    """Calendar date of week `week` (0-based) of `year`."""
    return dt.date(year, 1, 1) + dt.timedelta(days=7 * week)


def forecast_dates(issue_date, n=WEEKS_PER_YEAR):
    """The n weekly dates covered by a forecast issued at issue_date."""
    y, w = issue_date.year, week_of_year(issue_date)
    out = []
    for j in range(n):
        ww = w + j
        out.append(week_start(y + ww // WEEKS_PER_YEAR, ww % WEEKS_PER_YEAR))
    return out


@dataclass
class FieldSeries:
    """Stack of rasters sharing one grid and mask.

    values: (T, H, W); mask: (H, W), True = water/valid.
    """

    values: np.ndarray
    mask: np.ndarray
    timestamps: list
    cadence: str  # "daily" | "weekly"
    cell_size_km: float = 14.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 3:
            raise ValueError("values must be (T, H, W)")
        if self.mask.shape != self.values.shape[1:]:
            raise ValueError("mask shape must match frame shape")
        if len(self.timestamps) != self.values.shape[0]:
            raise ValueError(
                f"{len(self.timestamps)} timestamps for {self.values.shape[0]} frames"
            )
        if self.cadence not in ("daily", "weekly"):
            raise ValueError(f"unknown cadence {self.cadence!r}")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            gap = (b - a).days
            if gap <= 0:
                raise ValueError(f"timestamps not strictly increasing at {b}")
            if self.cadence == "daily" and gap != 1:
                raise ValueError(f"non-daily gap of {gap} days before {b}")
            # weekly gaps are 7 days, or 8-9 across the dropped year tail
            if self.cadence == "weekly" and not 7 <= gap <= 9:
                raise ValueError(f"non-weekly gap of {gap} days before {b}")
        bad = np.argwhere(
            self.mask[None, :, :] & ((self.values < 0.0) | (self.values > 1.0))
        )
        if bad.size:
            t, y, x = bad[0]
            raise ValueError(
                f"value {self.values[t, y, x]} outside [0,1] at valid cell "
                f"(frame {t}, row {y}, col {x})"
            )

    def __len__(self):
        return self.values.shape[0]

    def field(self, i):
        return GridField(self.values[i], self.mask, self.cell_size_km)

    def subset(self, indices):
        indices = list(indices)
        return FieldSeries(
            self.values[indices],
            self.mask,
            [self.timestamps[i] for i in indices],
            self.cadence,
            self.cell_size_km,
        )

    def index_of(self, date):
        try:
            return self.timestamps.index(date)
        except ValueError:
            raise KeyError(f"no frame at {date}") from None

    def years(self):
        return sorted({t.year for t in self.timestamps})


@dataclass
class ForecastBundle:
    """One 52-week forecast issued from a single start date."""

    issue_date: dt.date
    values: np.ndarray  # (52, H, W), in [0, 1]
    provenance: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[0] != WEEKS_PER_YEAR:
            raise ValueError(
                f"forecast must have {WEEKS_PER_YEAR} channels, got {self.values.shape}"
            )
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ValueError("forecast values must lie in [0, 1]")

    def dates(self):
        return forecast_dates(self.issue_date)


@dataclass
class TrainingPair:
    """Lagged supervised pair: k weeks of pre-history -> n weeks ahead."""

    input: np.ndarray  # (k, H, W), oldest channel first
    target: np.ndarray  # (n, H, W)
    issue_date: dt.date


@dataclass
class SplitScheme:
    """Inclusive year ranges for the training protocol phases."""

    single_model_train: tuple
    ensemble_train: tuple
    retrain: tuple
    test: tuple


# ---------------------------------------------------------------------------
# SIF file format: JSON header + raw little-endian binary payloads
# ---------------------------------------------------------------------------

def save_series(series, path):
    """Write a series as SIF: <path>.json header + mask/data payload files."""
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    mask_file = path.stem + ".mask.bin"
    data_file = path.stem + ".data.bin"
    header = {
        "height": int(series.values.shape[1]),
        "width": int(series.values.shape[2]),
        "cell_size_km": float(series.cell_size_km),
        "cadence": series.cadence,
        "timestamps": [t.isoformat() for t in series.timestamps],
        "mask_file": mask_file,
        "data_file": data_file,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(header, f, indent=1)
        f.write("\n")
    series.mask.astype(np.uint8).tofile(path.parent / mask_file)
    series.values.astype("<f4").tofile(path.parent / data_file)
    return path


def load_series(path):
    """Load a SIF dataset written by save_series."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"SIF header not found: {path}")
    with open(path) as f:
        header = json.load(f)
    for key in ("height", "width", "cadence", "timestamps", "mask_file", "data_file"):
        if key not in header:
            raise ValueError(f"SIF header missing field {key!r}")
    h, w = int(header["height"]), int(header["width"])
    timestamps = [dt.date.fromisoformat(t) for t in header["timestamps"]]
    nt = len(timestamps)

    mask = np.fromfile(path.parent / header["mask_file"], dtype=np.uint8)
    if mask.size != h * w:
        raise ValueError(
            f"mask payload has {mask.size} bytes, expected {h * w}"
        )
    data = np.fromfile(path.parent / header["data_file"], dtype="<f4")
    if data.size != nt * h * w:
        raise ValueError(
            f"data payload has {data.size} floats, expected {nt * h * w} "
            f"({nt} timestamps)"
        )
    return FieldSeries(
        data.astype(np.float64).reshape(nt, h, w),
        mask.reshape(h, w).astype(bool),
        timestamps,
        header["cadence"],
        float(header.get("cell_size_km", 14.0)),
    )


# ---------------------------------------------------------------------------
# Temporal operations
# ---------------------------------------------------------------------------

def sparsify_weekly(series):
    """Thin a daily series to weekly: per calendar year keep days-of-year
    1, 8, ..., 358 (52 frames); days 365/366 are dropped."""
    if series.cadence != "daily":
        raise ValueError("sparsify_weekly expects a daily series")
    if len(series) < 7:
        raise ValueError("series shorter than 7 days")
    keep = [
        i
        for i, t in enumerate(series.timestamps)
        if (t.timetuple().tm_yday - 1) % 7 == 0 and t.timetuple().tm_yday <= 358
    ]
    return FieldSeries(
        series.values[keep],
        series.mask,
        [series.timestamps[i] for i in keep],
        "weekly",
        series.cell_size_km,
    )


def make_training_pairs(series, k, n=WEEKS_PER_YEAR, stride=WEEKS_PER_YEAR):
    """Sliding lagged windows: input = weeks t-k..t-1, target = weeks t..t+n-1."""
    if series.cadence != "weekly":
        raise ValueError("training pairs are built from weekly series")
    if len(series) < k + n:
        raise ValueError(f"series length {len(series)} < k + n = {k + n}")
    pairs = []
    for t in range(k, len(series) - n + 1, stride):
        pairs.append(
            TrainingPair(
                series.values[t - k : t].copy(),
                series.values[t : t + n].copy(),
                series.timestamps[t],
            )
        )
    return pairs


def climatology_forecast(series, issue_date, n_years=5):
    """Naive forecast: per week-of-year mean over the n_years preceding the
    issue date."""
    if series.cadence != "weekly":
        raise ValueError("climatology expects a weekly series")
    issue_year = issue_date.year
    history_years = range(issue_year - n_years, issue_year)
    by_year_week = {
        (t.year, week_of_year(t)): i for i, t in enumerate(series.timestamps)
    }
    out = np.zeros((WEEKS_PER_YEAR,) + series.values.shape[1:])
    w0 = week_of_year(issue_date)
    for j in range(WEEKS_PER_YEAR):
        ww = (w0 + j) % WEEKS_PER_YEAR
        frames = []
        for y in history_years:
            idx = by_year_week.get((y, ww))
            if idx is None:
                raise ValueError(
                    f"insufficient history: week {ww} of {y} missing before "
                    f"issue date {issue_date}"
                )
            frames.append(series.values[idx])
        out[j] = np.mean(frames, axis=0)
    out[:, ~series.mask] = 0.0
    return ForecastBundle(issue_date, np.clip(out, 0.0, 1.0), "climatology")


def split_series(series, scheme):
    """Partition frames by calendar year into the four protocol phases."""
    years = set(series.years())

    def take(year_range):
        start, end = year_range
        if start > end:
            return series.subset([])
        missing = [y for y in range(start, end + 1) if y not in years]
        if missing:
            raise ValueError(f"split range {year_range} outside series: {missing}")
        return series.subset(
            i for i, t in enumerate(series.timestamps) if start <= t.year <= end
        )

    return (
        take(scheme.single_model_train),
        take(scheme.ensemble_train),
        take(scheme.retrain),
        take(scheme.test),
    )


# ---------------------------------------------------------------------------
# Synthetic seasonal data
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Desk-scale synthetic dataset: a sinusoidally advancing/retreating ice
    edge with a smooth concentration gradient across it."""

    height: int = 32
    width: int = 32
    years: int = 10
    start_year: int = 2000
    cell_size_km: float = 14.0
    edge_mean: float = 0.5  # mean edge row, fraction of height
    edge_amplitude: float = 0.3  # seasonal swing, fraction of height
    edge_softness: float = 3.0  # gradient width across the edge, cells
    noise: float = 0.0  # iid gaussian noise std
    trend: float = 0.0  # edge drift, rows per year
    land_rows: int = 0  # masked land rows at the bottom edge

    def validate(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("grid size must be positive")
        if self.years < 1:
            raise ValueError("need at least one year")
        if self.edge_softness <= 0:
            raise ValueError("edge_softness must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if not 0 <= self.land_rows < self.height:
            raise ValueError("land_rows out of range")


def synth_generate(cfg, seed):
    """Weekly synthetic series, deterministic per seed."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    h, w = cfg.height, cfg.width
    rows = np.arange(h)[:, None] * np.ones((1, w))

    mask = np.ones((h, w), dtype=bool)
    if cfg.land_rows:
        mask[h - cfg.land_rows :, :] = False

    frames = []
    timestamps = []
    for y in range(cfg.years):
        for wk in range(WEEKS_PER_YEAR):
            edge = (
                cfg.edge_mean * h
                + cfg.edge_amplitude * h * np.sin(2 * np.pi * wk / WEEKS_PER_YEAR)
                + cfg.trend * y
            )
            conc = 1.0 / (1.0 + np.exp((rows - edge) / cfg.edge_softness))
            if cfg.noise > 0:
                conc = conc + rng.normal(0.0, cfg.noise, size=(h, w))
            conc = np.clip(conc, 0.0, 1.0)
            conc[~mask] = 0.0
            frames.append(conc)
            timestamps.append(week_start(cfg.start_year + y, wk))
    return FieldSeries(
        np.stack(frames), mask, timestamps, "weekly", cfg.cell_size_km
    )
