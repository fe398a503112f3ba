"""Versioned JSON checkpoints: parameters, config echo and data statistics.

Parameter arrays are stored as base64 little-endian float64 so a save /
load round trip is bit exact.  A checkpoint carries everything needed
to rebuild its model without touching the training data (the exact GP
keeps its standardized training set inline, since its predictions are
data-dependent).
"""

from __future__ import annotations

import base64
import json

import numpy as np

from .config import ConfigError, ExperimentConfig, coerce
from .data import Dataset
from .kernels import build_kernel
from .likelihoods import build_likelihood
from .models import ExactGPModel, IDSGPModel, VSGPModel
from .nets import AmortizationNet
from .tape import Tensor

FORMAT = "amorgp-checkpoint"
VERSION = 1


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode_array(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return flat.reshape(tuple(entry["shape"])).copy()


def data_stats(data: Dataset) -> dict:
    """The standardization summary a model needs at prediction time."""
    if not data.has_stats():
        raise ValueError("dataset has no standardization stats to checkpoint")
    return {
        "task": data.task,
        "dim": data.dim,
        "feature_names": list(data.feature_names),
        "x_mean": [float(v) for v in data.x_mean],
        "x_std": [float(v) for v in data.x_std],
        "y_mean": float(data.y_mean),
        "y_std": float(data.y_std),
    }


def save_checkpoint(path: str, model, cfg: ExperimentConfig, stats: dict) -> None:
    params = {name: _encode_array(p.value) for name, p in model.parameters().items()}
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "config": {k: v for k, v in sorted(cfg.values.items())},
        "stats": stats,
        "params": params,
    }
    if isinstance(model, ExactGPModel):
        payload["exact_train"] = {
            "x": _encode_array(model.x),
            "y": _encode_array(model.y),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def _rebuild_model(cfg: ExperimentConfig, stats: dict, payload: dict):
    """Construct a model skeleton of the right shapes, parameters unset."""
    kind = str(cfg["model.kind"])
    dim = int(stats["dim"])
    m = int(cfg["model.num_inducing"])
    kernel = build_kernel(str(cfg["kernel.kind"]), dim, bool(cfg["kernel.ard"]))
    likelihood = build_likelihood(
        str(cfg["likelihood.kind"]), quad_nodes=int(cfg["likelihood.quad_nodes"])
    )
    if kind == "exact":
        extra = payload.get("exact_train")
        if extra is None:
            raise ConfigError("exact-GP checkpoint is missing its training data block")
        return ExactGPModel(
            kernel, likelihood, _decode_array(extra["x"]), _decode_array(extra["y"])
        )
    if kind == "vsgp":
        return VSGPModel(
            kernel,
            likelihood,
            z=Tensor(np.zeros((m, dim)), requires_grad=True, name="vsgp.z"),
            qmean=Tensor(np.zeros(m), requires_grad=True, name="vsgp.qmean"),
            qscale_flat=Tensor(np.zeros(m * (m + 1) // 2), requires_grad=True, name="vsgp.qscale"),
        )
    if kind == "idsgp":
        hidden = [int(cfg["model.net_width"])] * int(cfg["model.net_layers"])
        amort = AmortizationNet.build(dim, m, hidden, np.random.default_rng(0))
        return IDSGPModel(kernel, likelihood, amort)
    raise ConfigError(f"key 'model.kind' has unsupported value {kind!r}")


def load_checkpoint(path: str):
    """Returns (model, resolved config, stats dict) with bit-exact parameters."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read checkpoint {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not a checkpoint file: {e}") from None
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise ConfigError(f"{path} is not a checkpoint file (missing format marker)")
    if payload.get("version") != VERSION:
        raise ConfigError(
            f"{path} has unsupported checkpoint version {payload.get('version')!r}, "
            f"expected {VERSION}"
        )
    cfg = ExperimentConfig({k: coerce(k, v) for k, v in payload["config"].items()})
    stats = payload["stats"]
    model = _rebuild_model(cfg, stats, payload)
    params = model.parameters()
    saved = payload["params"]
    missing = sorted(set(params) - set(saved))
    surplus = sorted(set(saved) - set(params))
    if missing or surplus:
        raise ConfigError(
            f"{path} parameter names do not match the configured model "
            f"(missing: {missing}, surplus: {surplus})"
        )
    for name, tensor in params.items():
        value = _decode_array(saved[name])
        if value.shape != tensor.value.shape:
            raise ConfigError(
                f"{path} parameter '{name}' has shape {value.shape}, "
                f"expected {tensor.value.shape}"
            )
        tensor.value = value
    return model, cfg, stats
