"""The three-phase experiment protocol:

1. train the two single CNNs (MAE loss, SSIM loss) on the early years,
2. fit the ensembling models on single-model predictions over the held-back
   middle years and pick the best by validation metrics,
3. retrain the single CNNs on the union of both ranges for final forecasts.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import ensemble as ens
from . import forecaster
from .metrics import SsimParams
from .series import (
    WEEKS_PER_YEAR,
    climatology_forecast,
    make_training_pairs,
    split_series,
    week_of_year,
)


def issue_indices(series, year_range):
    """Frame indices of the first week of each year in the inclusive range."""
    start, end = year_range
    return [
        i
        for i, t in enumerate(series.timestamps)
        if start <= t.year <= end and week_of_year(t) == 0
    ]


def build_member_sets(series, indices, model_mae, model_ssim, k):
    """Member forecasts (cnn_mae, cnn_ssim, climatology) and actual targets
    for the given issue-frame indices."""
    member_sets, targets = [], []
    for idx in indices:
        if idx < k:
            raise ValueError(
                f"issue {series.timestamps[idx]} lacks {k} weeks of pre-history"
            )
        if idx + WEEKS_PER_YEAR > len(series):
            raise ValueError(
                f"issue {series.timestamps[idx]} lacks a full target year"
            )
        date = series.timestamps[idx]
        x = series.values[idx - k : idx]
        member_sets.append(
            ens.MemberSet(
                (
                    forecaster.predict(model_mae, x, date, "cnn_mae"),
                    forecaster.predict(model_ssim, x, date, "cnn_ssim"),
                    climatology_forecast(series, date),
                )
            )
        )
        targets.append(series.values[idx : idx + WEEKS_PER_YEAR].copy())
    return member_sets, targets


@dataclass
class ProtocolResult:
    """model_mae/model_ssim are the final (retrained) standalone forecasters;
    member_mae/member_ssim are the phase-1 models whose predictions the
    ensembles were fitted on and must be fed at prediction time."""

    model_mae: forecaster.ModelState
    model_ssim: forecaster.ModelState
    member_mae: forecaster.ModelState
    member_ssim: forecaster.ModelState
    ensembles: dict  # kind -> EnsembleModel
    selected: ens.EnsembleModel
    selection_report: object
    histories: dict = dc_field(default_factory=dict)  # name -> loss history


def run_training_protocol(
    series,
    scheme,
    k,
    stride,
    spec,
    cfg_mae,
    cfg_ssim,
    ensemble_kinds=("linear", "cnn_mae", "cnn_ssim"),
    ensemble_cfg=None,
    ensemble_spec=None,
    ridge=1e-3,
    ssim_params=None,
):
    def phase(name, fn):
        try:
            return fn()
        except Exception as e:
            raise RuntimeError(f"training phase {name!r} failed: {e}") from e

    train_a, _, retrain_s, _ = split_series(series, scheme)
    ssim_params = ssim_params or SsimParams()
    histories = {}

    def train_singles(sub, tag):
        pairs = make_training_pairs(sub, k, stride=stride)
        m1 = forecaster.build_model(spec, cfg_mae.seed)
        m1, h1 = forecaster.train(m1, pairs, cfg_mae, series.mask)
        m2 = forecaster.build_model(spec, cfg_ssim.seed)
        m2, h2 = forecaster.train(m2, pairs, cfg_ssim, series.mask)
        histories[f"cnn_mae_{tag}"] = h1
        histories[f"cnn_ssim_{tag}"] = h2
        return m1, m2

    model_mae, model_ssim = phase(
        "single-model training", lambda: train_singles(train_a, "initial")
    )

    def fit_ensembles():
        indices = issue_indices(series, scheme.ensemble_train)
        member_sets, targets = build_member_sets(
            series, indices, model_mae, model_ssim, k
        )
        fitted = {}
        for kind in ensemble_kinds:
            if kind == "linear":
                fitted[kind] = ens.EnsembleModel(
                    "linear",
                    linear=ens.fit_linear_ensemble(member_sets, targets, ridge),
                )
            else:
                model = ens.fit_cnn_ensemble(
                    member_sets,
                    targets,
                    kind.removeprefix("cnn_"),
                    ensemble_cfg or forecaster.TrainConfig(),
                    series.mask,
                    ensemble_spec,
                )
                fitted[kind] = ens.EnsembleModel(kind, model=model)
        selected, report = ens.select_ensemble(
            list(fitted.values()), member_sets, targets, series.mask, ssim_params
        )
        return fitted, selected, report

    ensembles, selected, report = phase("ensemble fitting", fit_ensembles)

    final_mae, final_ssim = phase(
        "single-model retraining", lambda: train_singles(retrain_s, "retrain")
    )

    return ProtocolResult(
        final_mae,
        final_ssim,
        model_mae,
        model_ssim,
        ensembles,
        selected,
        report,
        histories,
    )


def forecast_test_years(series, scheme, result, k):
    """Selected-ensemble and single-model forecasts for every test-year issue
    date. The ensemble is fed members from the phase-1 models it was fitted
    on; the standalone single-model bundles come from the retrained models.

    Returns (issue dates, single-model member sets, ensemble bundles,
    targets)."""
    indices = issue_indices(series, scheme.test)
    fit_members, targets = build_member_sets(
        series, indices, result.member_mae, result.member_ssim, k
    )
    bundles = [ens.ensemble_predict(result.selected, ms) for ms in fit_members]
    single_members, _ = build_member_sets(
        series, indices, result.model_mae, result.model_ssim, k
    )
    dates = [series.timestamps[i] for i in indices]
    return dates, single_members, bundles, targets
