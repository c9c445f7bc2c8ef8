"""The weekly forecasting CNN: five same-padded convolution layers with ReLU
after the first four, outputs clipped to [0, 1].

Input is a (k, H, W) stack of weekly pre-history; output is a (52, H, W)
stack covering the next year at the same resolution.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import nn
from .metrics import SsimParams, mae_grad, ssim_loss_grad
from .series import WEEKS_PER_YEAR, ForecastBundle

CHECKPOINT_MAGIC = "SEAICECAST-CKPT-1"

N_LAYERS = 5


@dataclass
class ModelSpec:
    """Topology of the 5-layer forecasting CNN."""

    input_channels: int = 104
    widths: tuple = (64, 64, 64, 64, WEEKS_PER_YEAR)
    kernels: tuple = (5, 5, 5, 5, 5)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.kernels = tuple(int(k) for k in self.kernels)
        if len(self.widths) != N_LAYERS:
            raise ValueError(f"exactly {N_LAYERS} conv layers required")
        if len(self.kernels) != N_LAYERS:
            raise ValueError(f"need {N_LAYERS} kernel sizes")
        if self.widths[-1] != WEEKS_PER_YEAR:
            raise ValueError(f"final layer width must be {WEEKS_PER_YEAR}")
        if self.input_channels < 1:
            raise ValueError("input_channels must be positive")
        if any(k % 2 == 0 or k < 1 for k in self.kernels):
            raise ValueError("kernel sizes must be odd")

    def to_dict(self):
        return {
            "input_channels": self.input_channels,
            "widths": list(self.widths),
            "kernels": list(self.kernels),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["input_channels"], tuple(d["widths"]), tuple(d["kernels"]))


@dataclass
class TrainConfig:
    loss_kind: str = "mae"  # "mae" | "ssim"
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 4
    seed: int = 0
    patience: int = 0  # 0 = no early stopping
    ssim: SsimParams = dc_field(default_factory=SsimParams)

    def __post_init__(self):
        if self.loss_kind not in ("mae", "ssim"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.epochs < 0 or self.learning_rate <= 0 or self.batch_size < 1:
            raise ValueError("epochs/learning_rate/batch_size out of range")


@dataclass
class ModelState:
    spec: ModelSpec
    layers: list  # 5 ConvLayers

    def parameters(self):
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out

    def set_parameters(self, params):
        layers = []
        for i in range(N_LAYERS):
            layers.append(nn.ConvLayer(params[2 * i], params[2 * i + 1]))
        self.layers = layers

    def param_count(self):
        return sum(p.size for p in self.parameters())


def build_model(spec, seed):
    """Seeded Glorot-uniform initialization of all 5 layers."""
    rng = np.random.default_rng(seed)
    layers = []
    c_in = spec.input_channels
    for width, k in zip(spec.widths, spec.kernels):
        layers.append(nn.init_conv_layer(c_in, width, k, k, rng))
        c_in = width
    return ModelState(spec, layers)


def _forward(model, x):
    """Forward pass; returns (raw output, per-layer input cache)."""
    cache = []
    h = x
    for i, layer in enumerate(model.layers):
        cache.append(h)
        z = nn.conv2d_forward(h, layer)
        h = nn.relu(z) if i < N_LAYERS - 1 else z
    return h, cache


def _backward(model, cache, grad_out):
    """Gradients w.r.t. all layer parameters for a given output gradient."""
    grads = [None] * (2 * N_LAYERS)
    g = grad_out
    for i in range(N_LAYERS - 1, -1, -1):
        if i < N_LAYERS - 1:
            # cache[i+1] holds relu(z_i); its positivity pattern matches z_i > 0
            g = nn.relu_backward(cache[i + 1], g)
        gx, gw, gb = nn.conv2d_backward(cache[i], model.layers[i], g)
        grads[2 * i] = gw
        grads[2 * i + 1] = gb
        g = gx
    return grads


def _loss_and_grad(pred, target, mask, cfg):
    if cfg.loss_kind == "mae":
        return mae_grad(pred, target, mask)
    return ssim_loss_grad(pred, target, mask, cfg.ssim)


def train(model, pairs, cfg, mask=None):
    """Mini-batch Adam training; returns (best model, per-epoch loss history).

    The returned model carries the parameters from the epoch with the lowest
    mean training loss.
    """
    if not pairs:
        raise ValueError("no training pairs")
    for p in pairs:
        if p.input.shape[0] != model.spec.input_channels:
            raise ValueError(
                f"pair has {p.input.shape[0]} input channels, model expects "
                f"{model.spec.input_channels}"
            )
    if cfg.epochs == 0:
        return model, []

    rng = np.random.default_rng(cfg.seed)
    state = nn.AdamState(learning_rate=cfg.learning_rate)
    params = [p.copy() for p in model.parameters()]
    model = ModelState(model.spec, model.layers)
    model.set_parameters(params)

    history = []
    best_loss = np.inf
    best_params = params
    stall = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [pairs[i] for i in order[start : start + cfg.batch_size]]
            grads = None
            batch_loss = 0.0
            for pair in batch:
                pred, cache = _forward(model, pair.input)
                loss, gout = _loss_and_grad(pred, pair.target, mask, cfg)
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                    )
                g = _backward(model, cache, gout)
                grads = g if grads is None else [a + b for a, b in zip(grads, g)]
                batch_loss += loss
            grads = [g / len(batch) for g in grads]
            params, state = nn.optimizer_step(params, grads, state)
            model.set_parameters(params)
            epoch_losses.append(batch_loss / len(batch))
        epoch_loss = float(np.mean(epoch_losses))
        history.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_params = [p.copy() for p in params]
            stall = 0
        else:
            stall += 1
            if cfg.patience and stall >= cfg.patience:
                break
    best = ModelState(model.spec, model.layers)
    best.set_parameters(best_params)
    return best, history


def predict_raw(model, x):
    """Forward pass + clip to [0, 1]; returns the (52, H, W) array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != model.spec.input_channels:
        raise ValueError(
            f"input shape {x.shape} incompatible with {model.spec.input_channels} "
            "input channels"
        )
    out, _ = _forward(model, x)
    return nn.clip01(out)


def predict(model, x, issue_date, provenance="cnn"):
    return ForecastBundle(issue_date, predict_raw(model, x), provenance)


# ---------------------------------------------------------------------------
# Checkpoints: JSON spec + little-endian float32 parameter payload
# ---------------------------------------------------------------------------

def save_checkpoint(model, path, kind="cnn"):
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    params_file = path.stem + ".params.bin"
    header = {
        "magic": CHECKPOINT_MAGIC,
        "kind": kind,
        "spec": model.spec.to_dict(),
        "params_file": params_file,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(header, f, indent=1)
        f.write("\n")
    flat = np.concatenate([p.ravel() for p in model.parameters()])
    flat.astype("<f4").tofile(path.parent / params_file)
    return path


def load_checkpoint(path):
    path = Path(path)
    with open(path) as f:
        header = json.load(f)
    if header.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"not a model checkpoint: {path}")
    spec = ModelSpec.from_dict(header["spec"])
    model = build_model(spec, seed=0)
    flat = np.fromfile(path.parent / header["params_file"], dtype="<f4").astype(
        np.float64
    )
    params = []
    offset = 0
    for p in model.parameters():
        params.append(flat[offset : offset + p.size].reshape(p.shape))
        offset += p.size
    if offset != flat.size:
        raise ValueError("checkpoint payload size does not match spec")
    model.set_parameters(params)
    return model, header.get("kind", "cnn")
