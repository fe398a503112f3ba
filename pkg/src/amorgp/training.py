"""Mini-batch training loop and metric evaluation.

One step builds the model objective on a fresh tape for a shuffled
batch, walks it backward and applies an Adam ascent update.  Metric
records accumulate cumulative training wall time (evaluation excluded)
and are appended to a line-delimited log, flushed per record so long
runs can be tailed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tape
from .data import Dataset
from .optim import Adam
from .tape import Tape, Tensor

METRIC_FIELDS = ("epoch", "wall_seconds", "elbo", "nll", "rmse_or_error")


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 100
    learning_rate: float = 0.01
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 100.0
    eval_every: int = 10
    freeze: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class MetricRecord:
    epoch: int
    wall_seconds: float
    elbo: float
    nll: float
    rmse_or_error: float

    def csv_line(self) -> str:
        return ",".join(
            [str(self.epoch)]
            + [repr(float(v)) for v in (self.wall_seconds, self.elbo, self.nll, self.rmse_or_error)]
        )


@dataclass
class EvalResult:
    nll: float
    rmse_or_error: float


def _trainable(model, freeze: tuple[str, ...]):
    params = model.parameters()
    if not freeze:
        return params
    kept = {
        name: p
        for name, p in params.items()
        if not any(name == f or name.startswith(f + ".") for f in freeze)
    }
    if not kept:
        raise ValueError(f"freeze={freeze} leaves no trainable parameters")
    return kept


def evaluate(model, test_data: Dataset) -> EvalResult:
    """Test NLL and RMSE (regression) or error rate (binary), original scale.

    Regression densities are evaluated on the standardized scale and
    corrected by the log target std; RMSE is computed directly on
    de-standardized means.
    """
    x = test_data.standardized_x()
    y = test_data.standardized_y()
    pred = model.predict_latent(x)
    ll = model.likelihood.predictive_loglik(Tensor(pred.mean), Tensor(pred.var), y).value
    if test_data.task == "regression":
        nll = float(-np.mean(ll) + np.log(test_data.y_std))
        resid = test_data.y - test_data.destandardize_mean(pred.mean)
        score = float(np.sqrt(np.mean(resid * resid)))
    else:
        nll = float(-np.mean(ll))
        score = float(np.mean(np.where(pred.mean > 0.0, 1.0, -1.0) != y))
    return EvalResult(nll=nll, rmse_or_error=score)


def train(
    model,
    train_data: Dataset,
    test_data: Dataset | None,
    cfg: TrainConfig,
    log_path: str | None = None,
) -> list[MetricRecord]:
    """Run the epoch loop; returns the metric records written to ``log_path``.

    The shuffle stream is derived from ``cfg.seed`` alone, so a repeated
    run reproduces every batch, update and metric value.  The last batch
    of an epoch keeps its true (smaller) size in the objective's scaling.
    """
    x = train_data.standardized_x()
    y = train_data.standardized_y()
    n = len(y)
    batch = min(cfg.batch_size, n)
    params = _trainable(model, cfg.freeze)
    opt = Adam(
        params,
        learning_rate=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        clip_norm=cfg.clip_norm,
    )
    rng = np.random.default_rng([cfg.seed, 1])
    records: list[MetricRecord] = []
    writer = None
    if log_path is not None:
        writer = open(log_path, "w", encoding="utf-8")
        writer.write(",".join(METRIC_FIELDS) + "\n")
        writer.flush()
    wall = 0.0
    try:
        for epoch in range(1, cfg.epochs + 1):
            start = time.perf_counter()
            perm = rng.permutation(n)
            batch_values = []
            for step, lo in enumerate(range(0, n, batch)):
                idx = perm[lo : lo + batch]
                try:
                    with Tape() as tp:
                        obj = model.objective(Tensor(x[idx]), y[idx], n)
                        grads = tp.backward(obj)
                    opt.step(grads)
                except tape.NumericError as e:
                    raise tape.NumericError(f"epoch {epoch}, step {step}: {e}") from e
                batch_values.append(obj.item())
            wall += time.perf_counter() - start
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                if test_data is not None:
                    ev = evaluate(model, test_data)
                else:
                    ev = EvalResult(nll=float("nan"), rmse_or_error=float("nan"))
                rec = MetricRecord(
                    epoch=epoch,
                    wall_seconds=wall,
                    elbo=float(np.mean(batch_values)),
                    nll=ev.nll,
                    rmse_or_error=ev.rmse_or_error,
                )
                records.append(rec)
                if writer is not None:
                    writer.write(rec.csv_line() + "\n")
                    writer.flush()
    finally:
        if writer is not None:
            writer.close()
    return records
