"""Experiment orchestration: datasets, model construction and the
train / eval / predict / benchmark entry points used by the CLI.

Every run derives its random streams from train.seed, writes artifacts
under out.dir and echoes the fully resolved configuration so the run
can be reproduced from the echo alone.
"""

from __future__ import annotations

import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import ConfigError, ExperimentConfig, parse_config_file, parse_overrides, validate
from .data import Dataset, load_csv, make_toy, save_csv, split
from .kernels import build_kernel
from .likelihoods import ProbitLikelihood, build_likelihood
from .models import ExactGPModel, IDSGPModel, VSGPModel, build_idsgp, build_vsgp
from .optim import Adam
from .tape import Tape, Tensor
from .training import EvalResult, evaluate, train

log = logging.getLogger(__name__)

TOY_PREFIX = "toy:"


# ---------------------------------------------------------------------------
# dataset and model construction

def build_dataset(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Load or generate the configured data and produce the seeded split."""
    source = str(cfg["data.source"]).strip()
    seed = int(cfg["train.seed"])
    if source.startswith(TOY_PREFIX):
        kind = source[len(TOY_PREFIX):]
        try:
            data = make_toy(kind, int(cfg["data.n"]), seed)
        except ValueError as e:
            raise ConfigError(f"key 'data.source': {e}") from None
    else:
        if not Path(source).exists():
            raise ConfigError(f"key 'data.source' names a missing file: {source}")
        data = load_csv(source, task=str(cfg["data.task"]), target_column=str(cfg["data.target"]) or None)
    return split(data, float(cfg["data.split"]), seed)


def build_model(cfg: ExperimentConfig, train_data: Dataset):
    """Construct the configured model against standardized training inputs."""
    xs = train_data.standardized_x()
    ys = train_data.standardized_y()
    kernel = build_kernel(str(cfg["kernel.kind"]), train_data.dim, bool(cfg["kernel.ard"]), xs)
    likelihood = build_likelihood(
        str(cfg["likelihood.kind"]), quad_nodes=int(cfg["likelihood.quad_nodes"])
    )
    kind = str(cfg["model.kind"])
    if kind == "exact":
        if train_data.task != "regression":
            raise ConfigError("key 'model.kind': exact GP supports regression only")
        return ExactGPModel(kernel, likelihood, xs, ys)
    rng = np.random.default_rng([int(cfg["train.seed"]), 0])
    m = int(cfg["model.num_inducing"])
    if kind == "vsgp":
        return build_vsgp(kernel, likelihood, xs, m, rng)
    hidden = [int(cfg["model.net_width"])] * int(cfg["model.net_layers"])
    return build_idsgp(kernel, likelihood, xs, m, hidden, rng)


# ---------------------------------------------------------------------------
# plot-data emission

def _float_row(values) -> str:
    return ",".join(repr(float(v)) for v in values)

def _grid_axes(train_data: Dataset, per_axis: int) -> list[np.ndarray]:
    axes = []
    for j in range(train_data.dim):
        lo = float(train_data.x[:, j].min())
        hi = float(train_data.x[:, j].max())
        pad = 0.1 * (hi - lo if hi > lo else 1.0)
        axes.append(np.linspace(lo - pad, hi + pad, per_axis))
    return axes


def write_plot_grid(path: str, model, train_data: Dataset, per_axis: int) -> None:
    """Raw-scale grid of predictive mean and std for 1-D or 2-D inputs."""
    axes = _grid_axes(train_data, per_axis)
    if train_data.dim == 1:
        grid = axes[0][:, None]
    else:
        xx, yy = np.meshgrid(axes[0], axes[1])
        grid = np.column_stack([xx.ravel(), yy.ravel()])
    pred = model.predict_latent(train_data.standardize_inputs(grid))
    mean = train_data.destandardize_mean(pred.mean)
    std = train_data.y_std * np.sqrt(pred.var)
    names = train_data.feature_names[: train_data.dim]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join([*names, "mean", "std"]) + "\n")
        for row, mu, sd in zip(grid, mean, std):
            fh.write(_float_row([*row, mu, sd]) + "\n")


def write_plot_inducing(path: str, model, train_data: Dataset, probe_raw: list[float] | None) -> None:
    """Inducing-point locations on the raw input scale.

    IDSGP emits the state for one probe input (default: the center of the
    training range); VSGP emits its one global set.
    """
    names = train_data.feature_names[: train_data.dim]
    rows: list[tuple[str, np.ndarray]] = []
    if isinstance(model, IDSGPModel):
        if probe_raw is None:
            probe = 0.5 * (train_data.x.min(axis=0) + train_data.x.max(axis=0))
        else:
            probe = np.asarray(probe_raw, dtype=np.float64)
            if probe.shape != (train_data.dim,):
                raise ConfigError(
                    f"key 'plot.probe' needs {train_data.dim} coordinates, got {probe.size}"
                )
        z, _, _ = model.amort.states(Tensor(train_data.standardize_inputs(probe[None, :])))
        z_raw = train_data.x_mean + train_data.x_std * z.value[0]
        rows.append(("probe", probe))
        rows.extend(("inducing", zi) for zi in z_raw)
    elif isinstance(model, VSGPModel):
        z_raw = train_data.x_mean + train_data.x_std * model.z.value
        rows.extend(("inducing", zi) for zi in z_raw)
    else:
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["role", *names]) + "\n")
        for role, point in rows:
            fh.write(role + "," + _float_row(point) + "\n")


# ---------------------------------------------------------------------------
# subcommand bodies

def run_train(cfg: ExperimentConfig) -> dict[str, str]:
    """Train per config; returns the paths of everything written."""
    out_dir = Path(str(cfg["out.dir"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    train_data, test_data = build_dataset(cfg)
    model = build_model(cfg, train_data)
    artifacts = {
        "metrics": str(out_dir / "metrics.csv"),
        "config": str(out_dir / "config.resolved"),
        "checkpoint": str(out_dir / "checkpoint.json"),
    }
    records = train(model, train_data, test_data, cfg.train_config(), artifacts["metrics"])
    with open(artifacts["config"], "w", encoding="utf-8") as fh:
        fh.write(cfg.echo())
    ckpt.save_checkpoint(artifacts["checkpoint"], model, cfg, ckpt.data_stats(train_data))
    if train_data.dim <= 2:
        artifacts["plot_grid"] = str(out_dir / "plot_grid.csv")
        write_plot_grid(artifacts["plot_grid"], model, train_data, int(cfg["plot.grid_points"]))
        if not isinstance(model, ExactGPModel):
            artifacts["plot_inducing"] = str(out_dir / "plot_inducing.csv")
            write_plot_inducing(
                artifacts["plot_inducing"], model, train_data, cfg.probe_point()
            )
    if records:
        last = records[-1]
        log.info(
            "finished: epoch=%d elbo=%.6f nll=%.6f rmse_or_error=%.6f",
            last.epoch, last.elbo, last.nll, last.rmse_or_error,
        )
    return artifacts


def run_eval(
    checkpoint_path: str,
    config_path: str | None = None,
    overrides=(),
    seed: int | None = None,
) -> EvalResult:
    """Score a checkpoint on the configured test split.

    The data settings default to the ones echoed into the checkpoint;
    a config file or overrides can point at different data.  The
    standardization statistics always come from the checkpoint.
    """
    model, cfg, stats = ckpt.load_checkpoint(checkpoint_path)
    values = dict(cfg.values)
    if config_path is not None:
        values.update(parse_config_file(config_path))
    if seed is not None:
        values["train.seed"] = int(seed)
    values.update(parse_overrides(overrides))
    validate(values)
    merged = ExperimentConfig(values)
    _, test_data = build_dataset(merged)
    if test_data.dim != int(stats["dim"]):
        raise ConfigError(
            f"checkpoint expects {int(stats['dim'])} input dimensions, "
            f"dataset has {test_data.dim}"
        )
    test_data = replace(
        test_data,
        x_mean=np.asarray(stats["x_mean"], dtype=np.float64),
        x_std=np.asarray(stats["x_std"], dtype=np.float64),
        y_mean=float(stats["y_mean"]),
        y_std=float(stats["y_std"]),
    )
    return evaluate(model, test_data)


def _read_feature_csv(path: str, expected_dim: int) -> np.ndarray:
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read input csv {path}: {e}") from None
    with fh:
        header = fh.readline().strip()
        if not header:
            raise ConfigError(f"{path}: empty file")
        width = len(header.split(","))
        if width != expected_dim:
            raise ConfigError(
                f"{path}: checkpoint expects {expected_dim} feature columns, found {width}"
            )
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != width:
                raise ConfigError(f"{path}:{lineno}: expected {width} fields, found {len(cells)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def run_predict(checkpoint_path: str, input_path: str, out_path: str) -> str:
    """Write per-row latent mean, latent std and a likelihood-level field.

    All values are on the standardized scale the model was trained on;
    regression rows end with the observation std (latent plus noise),
    binary rows with the class-1 probability.
    """
    model, _, stats = ckpt.load_checkpoint(checkpoint_path)
    x = _read_feature_csv(input_path, int(stats["dim"]))
    x_mean = np.asarray(stats["x_mean"], dtype=np.float64)
    x_std = np.asarray(stats["x_std"], dtype=np.float64)
    pred = model.predict_latent((x - x_mean) / x_std)
    if stats["task"] == "binary":
        third_name = "prob1"
        third = ProbitLikelihood.class_probability(pred.mean, pred.var)
    else:
        third_name = "observed_std"
        noise = float(np.exp(model.likelihood.log_noise.value))
        third = np.sqrt(pred.var + noise)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(f"latent_mean,latent_std,{third_name}\n")
        for mu, var, extra in zip(pred.mean, pred.var, third):
            fh.write(_float_row([mu, np.sqrt(var), extra]) + "\n")
    return out_path


def _one_epoch(model, opt: Adam, xs: np.ndarray, ys: np.ndarray, batch: int, rng) -> None:
    n = len(ys)
    perm = rng.permutation(n)
    for lo in range(0, n, batch):
        idx = perm[lo : lo + batch]
        with Tape() as tp:
            obj = model.objective(Tensor(xs[idx]), ys[idx], n)
            grads = tp.backward(obj)
        opt.step(grads)


def _mean_stderr(times: list[float]) -> tuple[float, float]:
    arr = np.asarray(times, dtype=np.float64)
    if arr.size <= 1:
        return float(arr.mean()), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))


def benchmark_one(cfg: ExperimentConfig, label: str) -> dict[str, object]:
    """Time training epochs and full prediction passes for one config."""
    train_data, _ = build_dataset(cfg)
    model = build_model(cfg, train_data)
    xs = train_data.standardized_x()
    ys = train_data.standardized_y()
    batch = min(int(cfg["train.batch_size"]), len(ys))
    tc = cfg.train_config()
    opt = Adam(
        model.parameters(),
        learning_rate=tc.learning_rate,
        beta1=tc.beta1,
        beta2=tc.beta2,
        eps=tc.eps,
        clip_norm=tc.clip_norm,
    )
    rng = np.random.default_rng([tc.seed, 1])
    n_pred = int(cfg["bench.predict_points"])
    pick = np.random.default_rng([tc.seed, 4]).choice(len(xs), size=n_pred, replace=True)
    x_pred = xs[pick]

    warmup = max(1, int(cfg["bench.warmup"]))
    for _ in range(warmup):
        _one_epoch(model, opt, xs, ys, batch, rng)
    model.predict_latent(x_pred)

    repeats = int(cfg["bench.repeats"])
    train_times, pred_times = [], []
    for _ in range(repeats):
        start = time.perf_counter()
        _one_epoch(model, opt, xs, ys, batch, rng)
        train_times.append(time.perf_counter() - start)
    for _ in range(repeats):
        start = time.perf_counter()
        model.predict_latent(x_pred)
        pred_times.append(time.perf_counter() - start)

    train_mean, train_se = _mean_stderr(train_times)
    pred_mean, pred_se = _mean_stderr(pred_times)
    return {
        "label": label,
        "model": str(cfg["model.kind"]),
        "num_inducing": int(cfg["model.num_inducing"]),
        "train_mean_s": train_mean,
        "train_stderr_s": train_se,
        "predict_mean_s": pred_mean,
        "predict_stderr_s": pred_se,
    }


BENCH_FIELDS = (
    "label",
    "model",
    "num_inducing",
    "train_mean_s",
    "train_stderr_s",
    "predict_mean_s",
    "predict_stderr_s",
)


def run_benchmark(configs: list[tuple[str, ExperimentConfig]], out_path: str | None = None):
    """Benchmark each labelled config sequentially; optionally write a csv table."""
    rows = [benchmark_one(cfg, label) for label, cfg in configs]
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(",".join(BENCH_FIELDS) + "\n")
            for row in rows:
                cells = [str(row["label"]), str(row["model"]), str(row["num_inducing"])]
                cells += [repr(float(row[f])) for f in BENCH_FIELDS[3:]]
                fh.write(",".join(cells) + "\n")
    return rows


def make_data(kind: str, n: int, seed: int, out_path: str) -> str:
    data = make_toy(kind, n, seed)
    save_csv(data, out_path)
    return out_path
