"""Config parsing, layering, validation and the echo round trip."""

import pytest

from amorgp.config import (
    DEFAULTS,
    PRESETS,
    ConfigError,
    ExperimentConfig,
    parse_config_text,
    parse_overrides,
    resolve,
)


def test_every_preset_key_is_known_and_well_typed():
    for name, preset in PRESETS.items():
        for key, value in preset.items():
            assert key in DEFAULTS, f"{name}: {key}"
            default = DEFAULTS[key]
            if isinstance(default, bool):
                assert isinstance(value, bool)
            elif isinstance(default, int):
                assert isinstance(value, int) and not isinstance(value, bool)
            elif isinstance(default, float):
                assert isinstance(value, (int, float))
            else:
                assert isinstance(value, str)


def test_parse_text_handles_comments_and_spacing():
    text = "# a comment\n\n  model.kind =  vsgp \ntrain.lr=0.5\nkernel.ard = true\n"
    values = parse_config_text(text)
    assert values == {"model.kind": "vsgp", "train.lr": 0.5, "kernel.ard": True}


def test_parse_errors_name_key_and_line():
    with pytest.raises(ConfigError, match=r"<config>:2: unknown config key 'model\.kindd'"):
        parse_config_text("# ok\nmodel.kindd = vsgp\n")
    with pytest.raises(ConfigError, match=r"expected 'key = value'"):
        parse_config_text("just words\n")
    with pytest.raises(ConfigError, match=r"'train\.epochs' expects an integer"):
        parse_config_text("train.epochs = 3.5\n")
    with pytest.raises(ConfigError, match=r"'kernel\.ard' expects a boolean"):
        parse_config_text("kernel.ard = maybe\n")
    with pytest.raises(ConfigError, match=r"'train\.lr' expects a number"):
        parse_config_text("train.lr = fast\n")


def test_boolean_spellings():
    for raw, want in [("true", True), ("YES", True), ("1", True), ("off", False), ("no", False)]:
        assert parse_config_text(f"kernel.ard = {raw}\n")["kernel.ard"] is want


def test_override_parsing():
    values = parse_overrides(["train.seed=4", "model.kind=exact"])
    assert values == {"train.seed": 4, "model.kind": "exact"}
    with pytest.raises(ConfigError, match="key=value"):
        parse_overrides(["train.seed"])


def test_layering_defaults_preset_file_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("train.epochs = 7\nmodel.num_inducing = 11\n", encoding="utf-8")
    cfg = resolve(
        config_path=str(path),
        preset="snelson-idsgp",
        overrides=["train.epochs=9"],
        seed=42,
    )
    assert cfg["train.epochs"] == 9  # override beats file
    assert cfg["model.num_inducing"] == 11  # file beats preset
    assert cfg["model.net_layers"] == 2  # preset beats default
    assert cfg["likelihood.kind"] == "gaussian"  # untouched default
    assert cfg["train.seed"] == 42


def test_unknown_preset_is_an_error():
    with pytest.raises(ConfigError, match="unknown preset 'nope'"):
        resolve(preset="nope")


def test_validation_names_the_offending_key():
    with pytest.raises(ConfigError, match="'model.kind'"):
        resolve(overrides=["model.kind=deep"])
    with pytest.raises(ConfigError, match="'data.split'"):
        resolve(overrides=["data.split=1.5"])
    with pytest.raises(ConfigError, match="'train.epochs'"):
        resolve(overrides=["train.epochs=-3"])
    with pytest.raises(ConfigError, match="'model.num_inducing'"):
        resolve(overrides=["model.num_inducing=0"])


def test_echo_round_trips_every_value():
    cfg = resolve(
        preset="banana-idsgp",
        overrides=["train.lr=0.007", "train.eps=1e-9", "kernel.ard=true", "plot.probe=0.3,-1.2"],
    )
    reparsed = parse_config_text(cfg.echo())
    assert reparsed == cfg.values
    assert ExperimentConfig(reparsed).echo() == cfg.echo()


def test_freeze_and_probe_helpers():
    cfg = resolve(overrides=["train.freeze=kernel, likelihood", "plot.probe=3.9"])
    assert cfg.freeze_tuple() == ("kernel", "likelihood")
    assert cfg.probe_point() == [3.9]
    assert resolve().freeze_tuple() == ()
    assert resolve().probe_point() is None
    with pytest.raises(ConfigError, match="plot.probe"):
        resolve(overrides=["plot.probe=here"]).probe_point()


def test_train_config_mapping():
    cfg = resolve(overrides=["train.epochs=12", "train.lr=0.25", "train.freeze=vsgp.z"])
    tc = cfg.train_config()
    assert tc.epochs == 12
    assert tc.learning_rate == 0.25
    assert tc.freeze == ("vsgp.z",)
    assert tc.batch_size == cfg["train.batch_size"]
