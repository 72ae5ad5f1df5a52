import pytest
import yaml

from src.fda_ggann.config import (
    ConfigManager,
    ModelConfig,
    RunConfig,
    TrainConfig,
    full_scale_defaults,
    override,
)
from src.fda_ggann.exceptions import ConfigError


class TestConfigManager:

    @pytest.fixture
    def config_path(self, tmp_path):
        return tmp_path / "run.yaml"

    def test_no_path_gives_defaults(self):
        config = ConfigManager().load()
        assert config.model.d == 32
        assert config.train.lr == 0.0001
        assert config.train.dropout_rho == 0.6

    def test_missing_file_gives_defaults(self, config_path):
        assert ConfigManager(config_path).load() == RunConfig()

    def test_load_existing(self, config_path):
        config_path.write_text(yaml.dump({"model": {"d": 16, "mode": "ggnn"}, "train": {"epochs": 7}}))
        config = ConfigManager(config_path).load()
        assert config.model.d == 16 and config.model.mode == "ggnn"
        assert config.train.epochs == 7
        assert config.train.batch_graphs == 32

    def test_invalid_yaml(self, config_path):
        config_path.write_text("model: d: [")
        assert ConfigManager(config_path).load() == RunConfig()

    def test_non_mapping(self, config_path):
        config_path.write_text("- 1\n- 2\n")
        assert ConfigManager(config_path).load() == RunConfig()

    def test_unknown_keys_ignored(self, config_path):
        config_path.write_text(yaml.dump({"model": {"d": 8, "width": 3}, "extra": {}}))
        assert ConfigManager(config_path).load().model.d == 8

    def test_bad_value_raises(self, config_path):
        config_path.write_text(yaml.dump({"train": {"dropout_rho": 1.5}}))
        with pytest.raises(ConfigError):
            ConfigManager(config_path).load()

    def test_bad_section_raises(self, config_path):
        config_path.write_text(yaml.dump({"model": [1, 2]}))
        with pytest.raises(ConfigError):
            ConfigManager(config_path).load()

    def test_save_and_load(self, config_path):
        manager = ConfigManager(config_path)
        config = RunConfig(model=ModelConfig(d=12, T=3))
        manager.save(config)
        assert manager.load() == config
        with open(config_path) as f:
            assert yaml.safe_load(f)["model"]["T"] == 3

    def test_save_without_path(self):
        with pytest.raises(ConfigError):
            ConfigManager().save(RunConfig())


class TestSections:

    @pytest.mark.parametrize("section", [
        ModelConfig(d=1), ModelConfig(T=0), ModelConfig(num_classes=1), ModelConfig(mode="rnn"),
        TrainConfig(lr=0.0), TrainConfig(decay_F=1.5), TrainConfig(patience=0), TrainConfig(batch_nodes=0),
    ])
    def test_constraints(self, section):
        with pytest.raises(ConfigError):
            section.validate()

    def test_hidden_sizes_default_to_d(self):
        config = ModelConfig(d=10)
        assert config.att_hidden == 10 and config.edge_hidden == 10
        assert ModelConfig(d=10, attention_hidden=4).att_hidden == 4

    def test_override_skips_none(self):
        train = override(TrainConfig(), epochs=3, lr=None)
        assert train.epochs == 3 and train.lr == TrainConfig().lr

    def test_full_scale_defaults(self):
        config = full_scale_defaults().validate()
        assert config.model.d == 270
        assert config.train.epochs == 3000
        assert config.train.batch_nodes == 10000
