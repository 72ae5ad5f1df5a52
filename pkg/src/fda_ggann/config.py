"""
Configuration management for fda-ggann.
"""
try:
    import yaml
except ImportError:
    raise ImportError("PyYAML is required for configuration management. Please install it with `pip install PyYAML`.")

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Union

from .ast_nodes import NodeKind
from .exceptions import ConfigError
from .logger import get_logger

logger = get_logger("config")

MODES = ("ggann", "ggnn")


@dataclass
class ModelConfig:
    d: int = 32
    T: int = 5
    num_classes: int = 8
    num_kinds: int = len(NodeKind)
    num_edge_types: int = 7
    bidirectional: bool = True
    mode: str = "ggann"
    attention_hidden: Optional[int] = None
    edge_state_hidden: Optional[int] = None

    @property
    def att_hidden(self) -> int:
        return self.attention_hidden or self.d

    @property
    def edge_hidden(self) -> int:
        return self.edge_state_hidden or self.d

    def validate(self) -> 'ModelConfig':
        if self.d < 2:
            raise ConfigError(f"model.d must be >= 2, got {self.d}")
        if self.T < 1:
            raise ConfigError(f"model.T must be >= 1, got {self.T}")
        if self.num_classes < 2:
            raise ConfigError(f"model.num_classes must be >= 2, got {self.num_classes}")
        if self.num_kinds < 1:
            raise ConfigError(f"model.num_kinds must be >= 1, got {self.num_kinds}")
        if self.num_edge_types != 7:
            raise ConfigError(f"model.num_edge_types must be 7, got {self.num_edge_types}")
        if self.mode not in MODES:
            raise ConfigError(f"model.mode must be one of {MODES}, got {self.mode!r}")
        for name in ("attention_hidden", "edge_state_hidden"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"model.{name} must be >= 1, got {value}")
        return self


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_graphs: int = 32
    batch_nodes: Optional[int] = None
    micro_batch: int = 8
    workers: int = 1
    lr: float = 0.0001
    decay_F: float = 0.1
    l2_lambda: float = 0.0005
    l2_all: bool = False
    dropout_rho: float = 0.6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    seed: int = 42
    record_wall_time: bool = False

    def validate(self) -> 'TrainConfig':
        if self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.batch_graphs < 1:
            raise ConfigError(f"train.batch_graphs must be >= 1, got {self.batch_graphs}")
        if self.batch_nodes is not None and self.batch_nodes < 1:
            raise ConfigError(f"train.batch_nodes must be >= 1, got {self.batch_nodes}")
        if self.micro_batch < 1 or self.workers < 1:
            raise ConfigError("train.micro_batch and train.workers must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"train.lr must be > 0, got {self.lr}")
        if not 0.0 <= self.decay_F <= 1.0:
            raise ConfigError(f"train.decay_F must be in [0, 1], got {self.decay_F}")
        if not 0.0 <= self.dropout_rho < 1.0:
            raise ConfigError(f"train.dropout_rho must be in [0, 1), got {self.dropout_rho}")
        if self.l2_lambda < 0:
            raise ConfigError(f"train.l2_lambda must be >= 0, got {self.l2_lambda}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.eps > 0):
            raise ConfigError("train.beta1/beta2 must be in [0, 1) and eps > 0")
        if self.patience < 1:
            raise ConfigError(f"train.patience must be >= 1, got {self.patience}")
        return self


@dataclass
class SynthConfig:
    num_tasks: int = 8
    per_task: int = 120
    rename: float = 1.0
    permute: float = 0.5
    jitter: float = 0.5
    dead_code: float = 0.3
    seed: int = 42
    similar: bool = False

    def validate(self) -> 'SynthConfig':
        for name in ("rename", "permute", "jitter", "dead_code"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"synth.{name} must be in [0, 1], got {value}")
        if self.per_task < 5:
            raise ConfigError(f"synth.per_task must be >= 5, got {self.per_task}")
        if self.num_tasks < 1:
            raise ConfigError(f"synth.num_tasks must be >= 1, got {self.num_tasks}")
        return self


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> 'RunConfig':
        self.model.validate()
        self.train.validate()
        self.synth.validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {"model": asdict(self.model), "train": asdict(self.train), "synth": asdict(self.synth)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        return cls(
            model=_section(ModelConfig, data.get("model") or {}, "model"),
            train=_section(TrainConfig, data.get("train") or {}, "train"),
            synth=_section(SynthConfig, data.get("synth") or {}, "synth"),
        )


def _section(cls: Any, values: Dict[str, Any], name: str) -> Any:
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        logger.warning(f"Ignoring unknown {name} keys: {', '.join(unknown)}")
    return cls(**{k: v for k, v in values.items() if k in known})


def full_scale_defaults() -> RunConfig:
    """Full-scale hyperparameters: d=270, 3000 epochs, 10000-node batches."""
    return RunConfig(
        model=ModelConfig(d=270),
        train=TrainConfig(epochs=3000, batch_nodes=10000),
    )


class ConfigManager:
    """Loads a RunConfig from an optional YAML file with model/train/synth sections."""

    def __init__(self, config_path: Optional[Union[str, Path]] = None):
        self.config_path = Path(config_path) if config_path else None

    def load(self) -> RunConfig:
        """
        Load the run configuration.
        Falls back to defaults if the file is missing or is not valid YAML;
        values that violate a constraint raise ConfigError.
        """
        if self.config_path is None:
            return RunConfig().validate()
        if not self.config_path.exists():
            logger.warning(f"Config file {self.config_path} not found. Using defaults.")
            return RunConfig().validate()

        try:
            with open(self.config_path, 'r') as f:
                data = yaml.safe_load(f)
        except (yaml.YAMLError, OSError) as e:
            logger.error(f"Error loading config: {e}")
            return RunConfig().validate()

        if data is None:
            return RunConfig().validate()
        if not isinstance(data, dict):
            logger.warning("Invalid config format. Using defaults.")
            return RunConfig().validate()

        unknown = sorted(set(data) - {"model", "train", "synth"})
        if unknown:
            logger.warning(f"Ignoring unknown config sections: {', '.join(unknown)}")
        try:
            config = RunConfig.from_dict(data)
        except TypeError as e:
            raise ConfigError(f"Invalid config values: {e}")
        return config.validate()

    def save(self, config: RunConfig) -> None:
        """Write a RunConfig as YAML."""
        if self.config_path is None:
            raise ConfigError("no config path set")
        try:
            self.config_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.config_path, 'w') as f:
                yaml.dump(config.to_dict(), f, default_flow_style=False, sort_keys=False)
        except OSError as e:
            logger.error(f"Error saving config: {e}")


def override(section: Any, **values: Any) -> Any:
    """Copy of a config section with the non-None ``values`` applied."""
    return replace(section, **{k: v for k, v in values.items() if v is not None})
