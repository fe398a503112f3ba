"""Dataset ingestion, standardization, splitting and toy generators.

Datasets carry raw values plus standardization statistics that are
always computed from a training portion and shared with the matching
test portion.  Models only ever see standardized inputs (and, for
regression, standardized targets); metric reporting undoes the target
scaling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

TASKS = ("regression", "binary")


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    task: str
    feature_names: list[str] = field(default_factory=list)
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    y_mean: float = 0.0
    y_std: float = 1.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.task not in TASKS:
            raise ValueError(f"unknown task '{self.task}' (have: {TASKS})")
        if self.x.ndim != 2 or len(self.x) != len(self.y):
            raise ValueError(f"inconsistent dataset shapes {self.x.shape} / {self.y.shape}")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.x.shape[1])]

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def has_stats(self) -> bool:
        return self.x_mean is not None

    def compute_stats(self) -> "Dataset":
        """Standardization statistics from this dataset's own rows."""
        x_mean = self.x.mean(axis=0)
        x_std = self.x.std(axis=0)
        x_std = np.where(x_std > 1e-12, x_std, 1.0)
        if self.task == "regression":
            y_mean = float(self.y.mean())
            y_std = float(self.y.std())
            y_std = y_std if y_std > 1e-12 else 1.0
        else:
            y_mean, y_std = 0.0, 1.0
        return replace(self, x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std)

    def with_stats_from(self, other: "Dataset") -> "Dataset":
        return replace(
            self, x_mean=other.x_mean, x_std=other.x_std, y_mean=other.y_mean, y_std=other.y_std
        )

    def _require_stats(self):
        if not self.has_stats():
            raise ValueError("dataset has no standardization stats attached")

    def standardized_x(self) -> np.ndarray:
        self._require_stats()
        return (self.x - self.x_mean) / self.x_std

    def standardized_y(self) -> np.ndarray:
        """Targets on the model scale: z-scored for regression, ±1 for binary."""
        self._require_stats()
        if self.task == "regression":
            return (self.y - self.y_mean) / self.y_std
        return self.y

    def standardize_inputs(self, x: np.ndarray) -> np.ndarray:
        self._require_stats()
        return (np.asarray(x, dtype=np.float64) - self.x_mean) / self.x_std

    def destandardize_mean(self, mean_std_scale: np.ndarray) -> np.ndarray:
        self._require_stats()
        return self.y_mean + self.y_std * np.asarray(mean_std_scale)


def load_csv(path: str, task: str = "regression", target_column: str | None = None) -> Dataset:
    """Read a comma-delimited file with a header row into a raw Dataset.

    The target defaults to the last column and can be chosen by header
    name or zero-based index.  Constant feature columns are dropped with
    a warning.  Binary targets must be 0/1 on disk and are mapped to
    -1/+1 internally.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline().strip()
        if not header_line:
            raise ValueError(f"{path}: empty file")
        names = [c.strip() for c in header_line.split(",")]
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != len(names):
                raise ValueError(f"{path}:{lineno}: expected {len(names)} fields, found {len(cells)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as e:
                bad = next(i for i, c in enumerate(cells) if not _is_float(c))
                raise ValueError(
                    f"{path}:{lineno}: column '{names[bad]}' value {cells[bad]!r} is not numeric"
                ) from e
    if not rows:
        raise ValueError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=np.float64)

    if target_column in (None, ""):
        t_idx = len(names) - 1
    else:
        try:
            t_idx = int(target_column)
        except (TypeError, ValueError):
            if target_column not in names:
                raise ValueError(f"target column '{target_column}' not in header {names}")
            t_idx = names.index(target_column)
        if not 0 <= t_idx < len(names):
            raise ValueError(f"target column index {t_idx} out of range for {len(names)} columns")

    y = table[:, t_idx]
    x = np.delete(table, t_idx, axis=1)
    x_names = [n for i, n in enumerate(names) if i != t_idx]

    keep = x.std(axis=0) > 0.0
    if not keep.all():
        dropped = [n for n, k in zip(x_names, keep) if not k]
        log.warning("dropping constant column(s): %s", ", ".join(dropped))
        x = x[:, keep]
        x_names = [n for n, k in zip(x_names, keep) if k]
    if x.shape[1] == 0:
        raise ValueError(f"{path}: no usable feature columns")

    if task == "binary":
        vals = np.unique(y)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            bad = vals[~np.isin(vals, (0.0, 1.0))][0]
            raise ValueError(f"{path}: binary target contains {bad!r}, expected 0/1")
        y = np.where(y > 0.5, 1.0, -1.0)
    return Dataset(x=x, y=y, task=task, feature_names=x_names)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def save_csv(data: Dataset, path: str) -> None:
    """Write raw values back out; binary labels return to 0/1 on disk."""
    y = data.y
    if data.task == "binary":
        y = np.where(y > 0.0, 1.0, 0.0)
    header = ",".join([*data.feature_names, "y"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for xi, yi in zip(data.x, y):
            fh.write(",".join(repr(float(v)) for v in (*xi, yi)) + "\n")


def split(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint permutation split; both halves carry train-only statistics."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng([seed, 2])
    perm = rng.permutation(data.n)
    n_train = int(round(fraction * data.n))
    n_train = min(max(n_train, 1), data.n - 1)
    tr_idx, te_idx = perm[:n_train], perm[n_train:]
    train = replace(data, x=data.x[tr_idx], y=data.y[tr_idx]).compute_stats()
    test = replace(data, x=data.x[te_idx], y=data.y[te_idx]).with_stats_from(train)
    return train, test


def make_toy(kind: str, n: int, seed: int) -> Dataset:
    """Synthetic datasets: a 1-D regression curve with a gap in its inputs
    ('snelson1d'), two interleaved crescents ('banana'), and an 8-D
    regression surface ('synth-reg') used by the speed benchmarks."""
    rng = np.random.default_rng([seed, 3])
    if kind == "snelson1d":
        n_left = int(round(0.6 * n))
        x = np.concatenate(
            [rng.uniform(0.0, 2.3, n_left), rng.uniform(3.3, 6.0, n - n_left)]
        )
        x = np.sort(x)
        f = np.sin(1.5 * x) + 0.35 * np.sin(4.2 * x)
        y = f + 0.25 * rng.standard_normal(n)
        return Dataset(x=x[:, None], y=y, task="regression")
    if kind == "banana":
        n_pos = n // 2
        n_neg = n - n_pos
        t_pos = rng.uniform(0.0, np.pi, n_pos)
        t_neg = rng.uniform(0.0, np.pi, n_neg)
        pos = np.stack([np.cos(t_pos), np.sin(t_pos)], axis=1)
        neg = np.stack([1.0 - np.cos(t_neg), 0.5 - np.sin(t_neg)], axis=1)
        x = np.concatenate([pos, neg]) + 0.18 * rng.standard_normal((n, 2))
        y = np.concatenate([np.ones(n_pos), -np.ones(n_neg)])
        perm = rng.permutation(n)
        return Dataset(x=x[perm], y=y[perm], task="binary")
    if kind == "synth-reg":
        d = 8
        x = rng.standard_normal((n, d))
        w1 = rng.standard_normal(d) / np.sqrt(d)
        w2 = rng.standard_normal(d) / np.sqrt(d)
        y = np.sin(2.0 * (x @ w1)) + 0.6 * np.cos(3.0 * (x @ w2)) + 0.1 * rng.standard_normal(n)
        return Dataset(x=x, y=y, task="regression")
    raise ValueError(f"unknown toy dataset '{kind}' (have: snelson1d, banana, synth-reg)")
