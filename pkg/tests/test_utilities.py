import configparser

import pytest

from hyperhash.errors import InvalidArgumentError
from hyperhash.utilities import CONFIG_ENV, ConfigManager, PipelineConfig, default_config_path


class TestPipelineConfig:

    def test_defaults_are_valid(self):
        config = PipelineConfig().validate()
        assert config.hash_weights().as_dict() == {
            "lambda_mse": 1.0, "lambda_w": 0.1, "lambda_q": 0.1, "lambda_u": 1e-4, "lambda_o": 0.1,
        }

    @pytest.mark.parametrize("overrides", [
        {"z": 32, "z_prime": 32},
        {"dimension": 16},
        {"classes": 1},
        {"bits": 0},
        {"length_scale": 0.0},
        {"radii": (0.1, -0.2)},
        {"lambda_o": -1.0},
        {"hash_batch_size": 1},
        {"synth_queries": 600},
        {"min_objects": 3, "max_objects": 2},
    ])
    def test_invalid(self, overrides):
        with pytest.raises(InvalidArgumentError):
            PipelineConfig(**overrides).validate()

    def test_stage_seeds_are_derived(self):
        config = PipelineConfig(seed=5)
        assert config.encoder_train_config().seed == config.derived_seed("encoder-train")
        assert config.hash_train_config().seed != config.encoder_train_config().seed
        assert PipelineConfig(seed=6).derived_seed("basis") != config.derived_seed("basis")


class TestConfigManager:

    def test_creates_default_file(self, tmp_path):
        path = tmp_path / "nested" / "config.ini"
        manager = ConfigManager(str(path))
        assert path.exists()
        assert manager.get_settings() == PipelineConfig()
        parser = configparser.ConfigParser()
        parser.read(path)
        assert parser["Hash"]["bits"] == "32"
        assert parser["Spatial"]["normalize_features"] == "false"

    def test_reads_existing_values(self, tmp_path):
        path = tmp_path / "config.ini"
        path.write_text("[HDC]\ndimension = 4096\n[Eval]\nradii = 0.25, 0.5\n[Hash]\nnormalize_step = no\n")
        settings = ConfigManager(str(path)).get_settings()
        assert settings.dimension == 4096
        assert settings.radii == (0.25, 0.5)
        assert settings.normalize_step is False
        assert settings.bits == 32

    @pytest.mark.parametrize("text", ["[HDC]\ndimension = many\n", "[Hash]\nnormalize_step = maybe\n"])
    def test_unparsable_value(self, tmp_path, text):
        path = tmp_path / "config.ini"
        path.write_text(text)
        with pytest.raises(InvalidArgumentError):
            ConfigManager(str(path)).get_settings()

    def test_update_settings_round_trip(self, tmp_path):
        path = str(tmp_path / "config.ini")
        ConfigManager(path).update_settings({"bits": 64, "length_scale": 0.5, "radii": [0.1, 0.3]})
        settings = ConfigManager(path).get_settings()
        assert (settings.bits, settings.length_scale, settings.radii) == (64, 0.5, (0.1, 0.3))

    def test_update_rejects_unknown_and_invalid(self, tmp_path):
        manager = ConfigManager(str(tmp_path / "config.ini"))
        with pytest.raises(InvalidArgumentError):
            manager.update_settings({"colour": "blue"})
        with pytest.raises(InvalidArgumentError):
            manager.update_settings({"bits": 0})
        assert ConfigManager(str(tmp_path / "config.ini")).get_settings().bits == 32

    def test_get_value_default(self, tmp_path):
        manager = ConfigManager(str(tmp_path / "config.ini"))
        assert manager.get_value("Missing", "key", "fallback") == "fallback"


class TestDefaultPath:

    def test_environment_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv(CONFIG_ENV, str(tmp_path / "custom.ini"))
        assert default_config_path() == str(tmp_path / "custom.ini")

    def test_user_config_directory(self, tmp_path, monkeypatch):
        monkeypatch.delenv(CONFIG_ENV, raising=False)
        monkeypatch.chdir(tmp_path)
        assert default_config_path().endswith("config.ini")
        assert "hyperhash" in default_config_path()
