"""Second-layer combiners for the three first-layer forecasts (CNN trained on
MAE, CNN trained on SSIM, climatology): a per-pixel ridge-regression blend
and two CNN stackers, plus metric-based selection among them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import forecaster
from .metrics import SsimParams, mae, ssim
from .series import WEEKS_PER_YEAR, ForecastBundle, TrainingPair

MEMBER_ORDER = ("cnn_mae", "cnn_ssim", "climatology")
ENSEMBLE_MAGIC = "SEAICECAST-ENS-1"


@dataclass
class MemberSet:
    """The three member forecasts for one issue date, in fixed order
    (cnn_mae, cnn_ssim, climatology)."""

    members: tuple

    def __post_init__(self):
        if len(self.members) != 3:
            raise ValueError("exactly 3 members required")
        d0 = self.members[0].issue_date
        s0 = self.members[0].values.shape
        for m in self.members[1:]:
            if m.issue_date != d0:
                raise ValueError("members must share an issue date")
            if m.values.shape != s0:
                raise ValueError("members must share shape")

    @property
    def issue_date(self):
        return self.members[0].issue_date

    def stacked(self):
        """(156, H, W): member channels concatenated in fixed order."""
        return np.concatenate([m.values for m in self.members], axis=0)


@dataclass
class LinearEnsemble:
    """Independent affine blend per (channel, pixel):
    out = w1*m1 + w2*m2 + w3*m3 + b."""

    coef: np.ndarray  # (52, H, W, 3)
    intercept: np.ndarray  # (52, H, W)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.coef)) and np.all(np.isfinite(self.intercept))):
            raise ValueError("ensemble weights must be finite")

    def predict(self, members):
        stack = np.stack([m.values for m in members.members], axis=-1)  # (52,H,W,3)
        if stack.shape[:-1] != self.coef.shape[:-1]:
            raise ValueError("member shape does not match fitted shape")
        return np.clip((self.coef * stack).sum(axis=-1) + self.intercept, 0.0, 1.0)


def fit_linear_ensemble(member_sets, targets, ridge=1e-3):
    """Per-pixel ridge regression of targets on the three members.

    With fewer than 2 issue dates the plain normal equations are
    underdetermined; the ridge term keeps the solve well-posed regardless.
    """
    if len(member_sets) != len(targets) or not member_sets:
        raise ValueError("need matching, non-empty member sets and targets")
    # design: (D, 52, H, W, 4) with a trailing intercept column of ones
    stacks = np.stack(
        [np.stack([m.values for m in ms.members], axis=-1) for ms in member_sets]
    )
    ones = np.ones(stacks.shape[:-1] + (1,))
    design = np.concatenate([stacks, ones], axis=-1)
    t = np.stack([np.asarray(v, dtype=np.float64) for v in targets])
    if t.shape != stacks.shape[:-1]:
        raise ValueError(f"target shape {t.shape} does not match members")

    ata = np.einsum("d...i,d...j->...ij", design, design)
    ata += ridge * np.eye(4)
    atb = np.einsum("d...i,d...->...i", design, t)
    w = np.linalg.solve(ata, atb[..., None])[..., 0]
    return LinearEnsemble(w[..., :3], w[..., 3])


@dataclass
class EnsembleModel:
    kind: str  # "linear" | "cnn_mae" | "cnn_ssim"
    linear: LinearEnsemble = None
    model: forecaster.ModelState = None

    def __post_init__(self):
        if self.kind == "linear":
            if self.linear is None:
                raise ValueError("linear ensemble requires weights")
        elif self.kind in ("cnn_mae", "cnn_ssim"):
            if self.model is None:
                raise ValueError("cnn ensemble requires a model state")
        else:
            raise ValueError(f"unknown ensemble kind {self.kind!r}")


def default_cnn_ensemble_spec(widths=(32, 32, 32, 32, WEEKS_PER_YEAR), kernels=(5,) * 5):
    return forecaster.ModelSpec(3 * WEEKS_PER_YEAR, widths, kernels)


def fit_cnn_ensemble(member_sets, targets, loss_kind, cfg, mask=None, spec=None):
    """Train a 156-in/52-out CNN stacker of the three members."""
    if loss_kind not in ("mae", "ssim"):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    spec = spec or default_cnn_ensemble_spec()
    pairs = [
        TrainingPair(ms.stacked(), np.asarray(t, dtype=np.float64), ms.issue_date)
        for ms, t in zip(member_sets, targets)
    ]
    cfg = forecaster.TrainConfig(
        loss_kind=loss_kind,
        epochs=cfg.epochs,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        patience=cfg.patience,
        ssim=cfg.ssim,
    )
    model = forecaster.build_model(spec, cfg.seed)
    model, _ = forecaster.train(model, pairs, cfg, mask)
    return model


def ensemble_predict(ensemble, members):
    """Combined 52-channel forecast, clipped to [0, 1]."""
    if ensemble.kind == "linear":
        values = ensemble.linear.predict(members)
    else:
        values = forecaster.predict_raw(ensemble.model, members.stacked())
    return ForecastBundle(
        members.issue_date, values, f"ensemble_{ensemble.kind}"
    )


def select_ensemble(candidates, member_sets, targets, mask=None, params=None):
    """Score each candidate on the validation dates; pick by SSIM descending,
    MAE ascending as tie-break. Returns (winner, per-candidate report)."""
    from .metrics import MetricReport

    if not candidates or not member_sets:
        raise ValueError("need candidates and a validation set")
    params = params or SsimParams()
    scored = []
    report = MetricReport()
    for cand in candidates:
        maes, ssims = [], []
        for ms, t in zip(member_sets, targets):
            pred = ensemble_predict(cand, ms).values
            maes.append(mae(pred, t, mask))
            ssims.append(ssim(pred, t, mask, params))
        m, s = float(np.mean(maes)), float(np.mean(ssims))
        report.add(cand.kind, m, s)
        scored.append((-s, m, cand.kind, cand))
    scored.sort(key=lambda row: row[:3])
    return scored[0][3], report


# ---------------------------------------------------------------------------
# Ensemble checkpoints
# ---------------------------------------------------------------------------

def save_ensemble(ensemble, path):
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    path.parent.mkdir(parents=True, exist_ok=True)
    if ensemble.kind == "linear":
        payload = path.stem + ".weights.bin"
        header = {
            "magic": ENSEMBLE_MAGIC,
            "kind": "linear",
            "shape": list(ensemble.linear.coef.shape[:-1]),
            "weights_file": payload,
        }
        flat = np.concatenate(
            [ensemble.linear.coef.ravel(), ensemble.linear.intercept.ravel()]
        )
        flat.astype("<f4").tofile(path.parent / payload)
    else:
        payload = path.stem + ".model.json"
        forecaster.save_checkpoint(ensemble.model, path.parent / payload, kind="cnn")
        header = {"magic": ENSEMBLE_MAGIC, "kind": ensemble.kind, "model_file": payload}
    with open(path, "w") as f:
        json.dump(header, f, indent=1)
        f.write("\n")
    return path


def load_ensemble(path):
    path = Path(path)
    with open(path) as f:
        header = json.load(f)
    if header.get("magic") != ENSEMBLE_MAGIC:
        raise ValueError(f"not an ensemble checkpoint: {path}")
    if header["kind"] == "linear":
        shape = tuple(header["shape"])
        flat = np.fromfile(path.parent / header["weights_file"], dtype="<f4").astype(
            np.float64
        )
        n = int(np.prod(shape))
        if flat.size != 4 * n:
            raise ValueError("ensemble payload size mismatch")
        coef = flat[: 3 * n].reshape(shape + (3,))
        intercept = flat[3 * n :].reshape(shape)
        return EnsembleModel("linear", linear=LinearEnsemble(coef, intercept))
    model, _ = forecaster.load_checkpoint(path.parent / header["model_file"])
    return EnsembleModel(header["kind"], model=model)
