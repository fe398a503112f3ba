"""Flat `key = value` experiment configuration.

Keys use section dots (model.kind, train.lr).  Resolution order is
defaults, then a named preset, then a config file, then command-line
overrides; the resolved result echoes back out as a config file that
reproduces the identical run when re-ingested.
"""

from __future__ import annotations

from dataclasses import dataclass

from .training import TrainConfig


class ConfigError(ValueError):
    """Raised for unknown keys, bad value types or invalid settings."""


DEFAULTS: dict[str, object] = {
    "model.kind": "idsgp",
    "model.num_inducing": 8,
    "model.net_layers": 1,
    "model.net_width": 50,
    "kernel.kind": "matern32",
    "kernel.ard": False,
    "likelihood.kind": "gaussian",
    "likelihood.quad_nodes": 64,
    "data.source": "toy:snelson1d",
    "data.task": "regression",
    "data.n": 200,
    "data.split": 0.8,
    "data.target": "",
    "train.epochs": 300,
    "train.batch_size": 100,
    "train.lr": 0.01,
    "train.seed": 0,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "train.clip_norm": 100.0,
    "train.eval_every": 10,
    "train.freeze": "",
    "out.dir": "runs/latest",
    "plot.grid_points": 200,
    "plot.probe": "",
    "bench.repeats": 5,
    "bench.warmup": 1,
    "bench.predict_points": 10000,
}

# Derived from the toy-figure captions: the 1-D regression figure uses
# IDSGP M=2 with a 2x50 network against VSGP M=4 (probe point x=3.9);
# the crescent classification figure uses the same pair on N=5300.
# The bench pair mirrors the speed comparison on 8-D synthetic data.
PRESETS: dict[str, dict[str, object]] = {
    "snelson-idsgp": {
        "model.kind": "idsgp",
        "model.num_inducing": 2,
        "model.net_layers": 2,
        "model.net_width": 50,
        "data.source": "toy:snelson1d",
        "data.task": "regression",
        "data.n": 200,
        "train.epochs": 500,
        "train.batch_size": 100,
        "train.lr": 0.01,
        "plot.probe": "3.9",
        "out.dir": "runs/snelson-idsgp",
    },
    "snelson-vsgp": {
        "model.kind": "vsgp",
        "model.num_inducing": 4,
        "data.source": "toy:snelson1d",
        "data.task": "regression",
        "data.n": 200,
        "train.epochs": 500,
        "train.batch_size": 100,
        "train.lr": 0.01,
        "out.dir": "runs/snelson-vsgp",
    },
    "snelson-exact": {
        "model.kind": "exact",
        "data.source": "toy:snelson1d",
        "data.task": "regression",
        "data.n": 200,
        "train.epochs": 200,
        "train.batch_size": 1000,
        "train.lr": 0.05,
        "out.dir": "runs/snelson-exact",
    },
    "banana-idsgp": {
        "model.kind": "idsgp",
        "model.num_inducing": 2,
        "model.net_layers": 2,
        "model.net_width": 50,
        "likelihood.kind": "probit",
        "data.source": "toy:banana",
        "data.task": "binary",
        "data.n": 5300,
        "train.epochs": 60,
        "train.batch_size": 100,
        "train.lr": 0.01,
        "plot.grid_points": 50,
        "out.dir": "runs/banana-idsgp",
    },
    "banana-vsgp": {
        "model.kind": "vsgp",
        "model.num_inducing": 4,
        "likelihood.kind": "probit",
        "data.source": "toy:banana",
        "data.task": "binary",
        "data.n": 5300,
        "train.epochs": 60,
        "train.batch_size": 100,
        "train.lr": 0.01,
        "plot.grid_points": 50,
        "out.dir": "runs/banana-vsgp",
    },
    "bench-idsgp": {
        "model.kind": "idsgp",
        "model.num_inducing": 8,
        "model.net_layers": 1,
        "model.net_width": 50,
        "data.source": "toy:synth-reg",
        "data.task": "regression",
        "data.n": 5000,
        "train.batch_size": 100,
        "out.dir": "runs/bench-idsgp",
    },
    "bench-vsgp": {
        "model.kind": "vsgp",
        "model.num_inducing": 128,
        "data.source": "toy:synth-reg",
        "data.task": "regression",
        "data.n": 5000,
        "train.batch_size": 100,
        "out.dir": "runs/bench-vsgp",
    },
}

MODEL_KINDS = ("exact", "vsgp", "idsgp")
KERNEL_KINDS = ("matern32", "rbf")
LIKELIHOOD_KINDS = ("gaussian", "probit")


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"key '{key}' expects a boolean, got {raw!r}")


def coerce(key: str, raw: object) -> object:
    """Cast a raw (often string) value to the type of the key's default."""
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key '{key}'")
    default = DEFAULTS[key]
    if isinstance(raw, str):
        raw = raw.strip()
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        return _parse_bool(key, str(raw))
    if isinstance(default, int):
        try:
            return int(str(raw), 10)
        except ValueError:
            raise ConfigError(f"key '{key}' expects an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"key '{key}' expects a number, got {raw!r}") from None
    return str(raw)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse `key = value` lines; `#` starts a full-line comment."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        try:
            values[key] = coerce(key, raw)
        except ConfigError as e:
            raise ConfigError(f"{source}:{lineno}: {e}") from None
    return values


def parse_config_file(path: str) -> dict[str, object]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from None
    return parse_config_text(text, source=path)


def parse_overrides(pairs) -> dict[str, object]:
    """Command-line `key=value` tokens to typed values."""
    values: dict[str, object] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, _, raw = pair.partition("=")
        values[key.strip()] = coerce(key.strip(), raw)
    return values


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class ExperimentConfig:
    """A fully resolved value for every known key."""

    values: dict[str, object]

    def __getitem__(self, key: str) -> object:
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def freeze_tuple(self) -> tuple[str, ...]:
        raw = str(self.values["train.freeze"])
        return tuple(part.strip() for part in raw.split(",") if part.strip())

    def probe_point(self) -> list[float] | None:
        raw = str(self.values["plot.probe"]).strip()
        if not raw:
            return None
        try:
            return [float(part) for part in raw.split(",")]
        except ValueError:
            raise ConfigError(f"key 'plot.probe' expects comma-separated numbers, got {raw!r}") from None

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            epochs=int(v["train.epochs"]),
            batch_size=int(v["train.batch_size"]),
            learning_rate=float(v["train.lr"]),
            seed=int(v["train.seed"]),
            beta1=float(v["train.beta1"]),
            beta2=float(v["train.beta2"]),
            eps=float(v["train.eps"]),
            clip_norm=float(v["train.clip_norm"]),
            eval_every=int(v["train.eval_every"]),
            freeze=self.freeze_tuple(),
        )

    def echo(self) -> str:
        """Render as a config file that resolves back to these exact values."""
        lines = [f"{key} = {_format_value(self.values[key])}" for key in sorted(self.values)]
        return "\n".join(lines) + "\n"


def validate(values: dict[str, object]) -> None:
    def choice(key, allowed):
        if values[key] not in allowed:
            raise ConfigError(f"key '{key}' must be one of {sorted(allowed)}, got {values[key]!r}")

    def positive(key):
        if not float(values[key]) > 0.0:
            raise ConfigError(f"key '{key}' must be positive, got {values[key]!r}")

    choice("model.kind", MODEL_KINDS)
    choice("kernel.kind", KERNEL_KINDS)
    choice("likelihood.kind", LIKELIHOOD_KINDS)
    choice("data.task", ("regression", "binary"))
    for key in (
        "model.num_inducing",
        "model.net_layers",
        "model.net_width",
        "likelihood.quad_nodes",
        "data.n",
        "train.batch_size",
        "train.lr",
        "train.eval_every",
        "plot.grid_points",
        "bench.repeats",
        "bench.predict_points",
    ):
        positive(key)
    for key in ("train.epochs", "train.seed", "bench.warmup"):
        if int(values[key]) < 0:
            raise ConfigError(f"key '{key}' must be non-negative, got {values[key]!r}")
    if not 0.0 < float(values["data.split"]) < 1.0:
        raise ConfigError(f"key 'data.split' must be in (0, 1), got {values['data.split']!r}")
    if not str(values["data.source"]).strip():
        raise ConfigError("key 'data.source' must not be empty")


def resolve(
    config_path: str | None = None,
    preset: str | None = None,
    overrides=(),
    seed: int | None = None,
    out: str | None = None,
) -> ExperimentConfig:
    """Layer defaults, preset, file and command-line values, then validate."""
    values = dict(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (have: {sorted(PRESETS)})")
        values.update(PRESETS[preset])
    if config_path is not None:
        values.update(parse_config_file(config_path))
    if seed is not None:
        values["train.seed"] = int(seed)
    if out is not None:
        values["out.dir"] = str(out)
    values.update(parse_overrides(overrides))
    validate(values)
    return ExperimentConfig(values)
