"""Masked MAE and windowed SSIM, the SSIM training loss with its analytic
gradient, and per-period evaluation tables.

SSIM follows the standard windowed form: per window position,

    [(2*ux*uy + c1) * (2*vxy + c2)] / [(ux^2 + uy^2 + c1) * (vxx + vyy + c2)]

averaged over all valid window positions and channels. Windows touching an
invalid (land) cell are skipped entirely.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field as dc_field

import numpy as np

from .series import WEEKS_PER_YEAR, week_of_year


@dataclass
class SsimParams:
    window_size: int = 11
    window: str = "gaussian"  # "gaussian" | "uniform"
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    value_range: float = 1.0

    def __post_init__(self):
        if self.window_size % 2 == 0 or self.window_size < 3:
            raise ValueError("window_size must be odd and >= 3")
        if self.window not in ("gaussian", "uniform"):
            raise ValueError(f"unknown window kind {self.window!r}")

    @property
    def c1(self):
        return (self.k1 * self.value_range) ** 2

    @property
    def c2(self):
        return (self.k2 * self.value_range) ** 2

    def kernel(self):
        k = self.window_size
        if self.window == "uniform":
            w = np.ones((k, k))
        else:
            ax = np.arange(k) - (k - 1) / 2.0
            g = np.exp(-(ax**2) / (2 * self.sigma**2))
            w = np.outer(g, g)
        return w / w.sum()


def _as_stack(t):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 2:
        t = t[None]
    if t.ndim != 3:
        raise ValueError(f"expected 2-d or 3-d array, got shape {t.shape}")
    return t


def mae(pred, target, mask=None):
    """Mean absolute difference over valid cells across all channels."""
    pred, target = _as_stack(pred), _as_stack(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if mask is None:
        mask = np.ones(pred.shape[1:], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask has no valid cells")
    return float(np.abs(pred[:, mask] - target[:, mask]).mean())


def mae_grad(pred, target, mask=None):
    """(value, d value / d pred) for the masked MAE."""
    pred, target = _as_stack(pred), _as_stack(target)
    if mask is None:
        mask = np.ones(pred.shape[1:], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    n = pred.shape[0] * int(mask.sum())
    if n == 0:
        raise ValueError("mask has no valid cells")
    diff = pred - target
    grad = np.where(mask[None], np.sign(diff), 0.0) / n
    value = float(np.abs(diff[:, mask]).mean())
    return value, grad


def _windowed(x, kernel):
    """Weighted windowed sums of x (H, W): returns (Hv, Wv) of sum(w * patch)."""
    k = kernel.shape[0]
    patches = np.lib.stride_tricks.sliding_window_view(x, (k, k))
    return np.tensordot(patches, kernel, axes=([2, 3], [0, 1]))


def _scatter(g, kernel):
    """Adjoint of _windowed: spread window-centre values back to pixels."""
    k = kernel.shape[0]
    gp = np.pad(g, k - 1)
    patches = np.lib.stride_tricks.sliding_window_view(gp, (k, k))
    return np.tensordot(patches, kernel[::-1, ::-1], axes=([2, 3], [0, 1]))


def _valid_windows(mask, k):
    win = np.lib.stride_tricks.sliding_window_view(mask, (k, k))
    return win.all(axis=(2, 3))


def _ssim_channel(x, y, kernel, valid, c1, c2, want_grad):
    ux = _windowed(x, kernel)
    uy = _windowed(y, kernel)
    uxx = _windowed(x * x, kernel)
    uyy = _windowed(y * y, kernel)
    uxy = _windowed(x * y, kernel)
    vxx = uxx - ux * ux
    vyy = uyy - uy * uy
    vxy = uxy - ux * uy

    a1 = 2 * ux * uy + c1
    a2 = 2 * vxy + c2
    b1 = ux * ux + uy * uy + c1
    b2 = vxx + vyy + c2
    s = (a1 * a2) / (b1 * b2)

    total = float(s[valid].sum())
    if not want_grad:
        return total, None

    # Per-window partials of S, zeroed on skipped windows.
    sel = valid.astype(np.float64)
    d_ux = sel * (2 * uy * a2 / (b1 * b2) - 2 * ux * a1 * a2 / (b1 * b1 * b2))
    d_vxy = sel * (2 * a1 / (b1 * b2))
    d_vxx = sel * (-a1 * a2 / (b1 * b2 * b2))
    # vxx = W(x^2) - ux^2 and vxy = W(xy) - ux*uy fold extra terms into d_ux
    d_ux_total = d_ux - 2 * ux * d_vxx - uy * d_vxy

    grad = (
        _scatter(d_ux_total, kernel)
        + 2 * x * _scatter(d_vxx, kernel)
        + y * _scatter(d_vxy, kernel)
    )
    return total, grad


def ssim(pred, target, mask=None, params=None):
    value, _ = _ssim_impl(pred, target, mask, params, want_grad=False)
    return value


def ssim_grad(pred, target, mask=None, params=None):
    """(ssim value, d ssim / d pred)."""
    return _ssim_impl(pred, target, mask, params, want_grad=True)


def _ssim_impl(pred, target, mask, params, want_grad):
    pred, target = _as_stack(pred), _as_stack(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    params = params or SsimParams()
    k = params.window_size
    _, h, w = pred.shape
    if h < k or w < k:
        raise ValueError(f"image {h}x{w} smaller than window {k}")
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    mask = np.asarray(mask, dtype=bool)

    kernel = params.kernel()
    valid = _valid_windows(mask, k)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("no window avoids invalid cells")

    total = 0.0
    grad = np.zeros_like(pred) if want_grad else None
    for c in range(pred.shape[0]):
        t, g = _ssim_channel(
            pred[c], target[c], kernel, valid, params.c1, params.c2, want_grad
        )
        total += t
        if want_grad:
            grad[c] = g
    scale = 1.0 / (pred.shape[0] * n_valid)
    value = total * scale
    if want_grad:
        return value, grad * scale
    return value, None


def ssim_loss(pred, target, mask=None, params=None):
    """1 - ssim; zero for identical images."""
    return 1.0 - ssim(pred, target, mask, params)


def ssim_loss_grad(pred, target, mask=None, params=None):
    value, grad = ssim_grad(pred, target, mask, params)
    return 1.0 - value, -grad


# ---------------------------------------------------------------------------
# Per-period evaluation
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    """Rows of {period, mae, ssim}, aggregated over forecast steps."""

    rows: list = dc_field(default_factory=list)

    def add(self, period, mae_value, ssim_value):
        self.rows.append(
            {"period": period, "mae": float(mae_value), "ssim": float(ssim_value)}
        )

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["period", "mae", "ssim"])
        for row in self.rows:
            writer.writerow([row["period"], f"{row['mae']:.6f}", f"{row['ssim']:.6f}"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text


def evaluate(forecasts, actuals, grouping="yearly", params=None, quarters=3):
    """Score forecast bundles against actual frames, grouped per issue year
    (yearly) or per 13-week quarter of the horizon (quarterly, first
    `quarters` quarters only)."""
    if grouping not in ("yearly", "quarterly"):
        raise ValueError(f"unknown grouping {grouping!r}")
    groups = {}
    for bundle in forecasts:
        dates = bundle.dates()
        for j, date in enumerate(dates):
            idx = actuals.index_of(date)  # raises on misalignment
            m = mae(bundle.values[j], actuals.values[idx], actuals.mask)
            s = ssim(bundle.values[j], actuals.values[idx], actuals.mask, params)
            if grouping == "yearly":
                key = str(bundle.issue_date.year)
            else:
                q = j // 13
                if q >= quarters:
                    continue
                key = f"{bundle.issue_date.year}Q{q + 1}"
            groups.setdefault(key, []).append((m, s))
    report = MetricReport()
    for key in sorted(groups):
        ms = np.array(groups[key])
        report.add(key, ms[:, 0].mean(), ms[:, 1].mean())
    return report
