from typing import Optional, Tuple

import allure
import pytest
import yaml

from deep_rtc.config import build_config, coerce, config_to_dict, dump_config, load_config_file
from deep_rtc.exceptions import ConfigError
from deep_rtc.training import TrainConfig, apply_preset


@allure.epic("Deep-RTC")
@allure.feature("Configuration")
class TestConfigFiles:
    @allure.story("Key=value files")
    @allure.severity(allure.severity_level.CRITICAL)
    def test_env_file(self, tmp_path):
        path = tmp_path / "train.env"
        path.write_text("# training\nLAMBDA=0.5\nbatch-size=32\nEPOCHS=4\nsample_cuts=false\n")
        cfg = build_config(TrainConfig, load_config_file(str(path)))
        assert cfg.lam == 0.5
        assert cfg.batch_size == 32
        assert cfg.epochs == 4
        assert cfg.sample_cuts is False
        assert cfg.p == TrainConfig().p

    @allure.story("YAML files")
    @allure.severity(allure.severity_level.CRITICAL)
    def test_yaml_file(self, tmp_path):
        path = tmp_path / "train.yaml"
        path.write_text("lambda: 2\nfmap: linear\nfeature_dim: 16\nsplit_rule: thresholds\n")
        values = load_config_file(str(path))
        cfg = build_config(TrainConfig, values)
        assert cfg.lam == 2.0
        assert cfg.fmap == "linear"
        assert cfg.feature_dim == 16
        # keys of other sections are left alone
        assert values["split_rule"] == "thresholds"

    @allure.story("YAML files")
    @allure.severity(allure.severity_level.NORMAL)
    def test_yaml_must_be_a_mapping(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config_file(str(path))

    @allure.story("YAML files")
    @allure.severity(allure.severity_level.NORMAL)
    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("epochs: [1, 2\n")
        with pytest.raises(ConfigError) as error:
            load_config_file(str(path))
        assert isinstance(error.value.__cause__, yaml.YAMLError)

    @allure.story("Key=value files")
    @allure.severity(allure.severity_level.NORMAL)
    @pytest.mark.parametrize("name", ["train.env", "train.yaml"])
    def test_non_utf8_file(self, tmp_path, name):
        path = tmp_path / name
        path.write_bytes(b"epochs=\xff\xfe\n")
        with pytest.raises(ConfigError):
            load_config_file(str(path))

    @allure.story("No file")
    @allure.severity(allure.severity_level.MINOR)
    def test_no_file_gives_defaults(self):
        assert load_config_file(None) == {}
        assert build_config(TrainConfig, {}) == TrainConfig()

    @allure.story("Overrides")
    @allure.severity(allure.severity_level.NORMAL)
    def test_overrides_win(self):
        cfg = build_config(TrainConfig, {"seed": "3", "lr": "0.5"}, {"seed": 9, "lr": None})
        assert cfg.seed == 9
        assert cfg.lr == 0.5

    @allure.story("Validation")
    @allure.severity(allure.severity_level.NORMAL)
    @pytest.mark.parametrize("values", [
        {"p": "1.5"},
        {"lambda": "-1"},
        {"fmap": "mlp"},
        {"fmap": "linear"},
        {"epochs": "0"},
        {"use_ncl": "maybe"},
        {"lr": "fast"},
    ])
    def test_invalid_values(self, values):
        with pytest.raises(ConfigError):
            build_config(TrainConfig, values)

    @allure.story("Echo")
    @allure.severity(allure.severity_level.NORMAL)
    def test_dump_round_trip(self, tmp_path):
        cfg = TrainConfig(lam=0.25, seed=4)
        path = tmp_path / "config_used.yaml"
        dump_config({"train": config_to_dict(cfg)}, str(path))
        echoed = yaml.safe_load(path.read_text())["train"]
        assert echoed["lambda"] == 0.25
        assert build_config(TrainConfig, echoed) == cfg


@allure.epic("Deep-RTC")
@allure.feature("Configuration")
class TestCoercion:
    @allure.story("Scalars")
    @allure.severity(allure.severity_level.NORMAL)
    @pytest.mark.parametrize("value, tp, expected", [
        ("3", int, 3),
        ("1e3", int, 1000),
        (" 0.5 ", float, 0.5),
        ("yes", bool, True),
        ("Off", bool, False),
        ("none", Optional[int], None),
        ("7", Optional[int], 7),
    ])
    def test_scalars(self, value, tp, expected):
        assert coerce(value, tp) == expected

    @allure.story("Sequences")
    @allure.severity(allure.severity_level.NORMAL)
    @pytest.mark.parametrize("value", ["0.05,0.1, 0.2", "0.05;0.1;0.2", [0.05, 0.1, 0.2]])
    def test_tuples(self, value):
        assert coerce(value, Tuple[float, ...]) == (0.05, 0.1, 0.2)

    @allure.story("Missing values")
    @allure.severity(allure.severity_level.MINOR)
    def test_required_value(self):
        with pytest.raises(ConfigError):
            coerce("", int)


@allure.epic("Deep-RTC")
@allure.feature("Ablation presets")
class TestPresets:
    @allure.story("Presets")
    @allure.severity(allure.severity_level.NORMAL)
    def test_presets(self):
        base = TrainConfig(lam=0.0)
        assert apply_preset(base, "pi").lam == 1.0
        assert apply_preset(base, "pi").sample_cuts is False
        assert apply_preset(TrainConfig(), "pi+ncl").lam == 0.0
        assert apply_preset(TrainConfig(), "pi+sts").use_ncl is False
        assert apply_preset(TrainConfig(), "deep-rtc") == TrainConfig()

    @allure.story("Presets")
    @allure.severity(allure.severity_level.MINOR)
    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            apply_preset(TrainConfig(), "resnet")
