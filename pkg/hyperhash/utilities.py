import configparser
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Optional, Tuple

import appdirs
from dotenv import load_dotenv

from .context_encoder import EncoderTrainConfig
from .errors import InvalidArgumentError, require
from .hdc_core import DEFAULT_DIMENSION, derive_seed
from .hyperplane_hasher import HashLossWeights, HashTrainConfig

logger = logging.getLogger(__name__)

APP_NAME = "hyperhash"
CONFIG_ENV = "HYPERHASH_CONFIG"


@dataclass
class PipelineConfig:
    """Every tunable of the pipeline, one field per config key."""

    # General
    seed: int = 0
    workers: int = 1
    # HDC
    dimension: int = DEFAULT_DIMENSION
    # Encoder
    z: int = 64
    z_prime: int = 32
    classes: int = 8
    lambda_rec: float = 1.0
    encoder_learning_rate: float = 1e-3
    encoder_epochs: int = 10
    encoder_batch_size: int = 64
    # Spatial
    length_scale: float = 0.1
    eta_glob: float = 1.0
    normalize_features: bool = False
    # Hash
    bits: int = 32
    lambda_mse: float = 1.0
    lambda_w: float = 0.1
    lambda_q: float = 0.1
    lambda_u: float = 1e-4
    lambda_o: float = 0.1
    hash_learning_rate: float = 0.2
    hash_epochs: int = 30
    hash_batch_size: int = 64
    normalize_step: bool = True
    # Eval
    k: int = 50
    radii: Tuple[float, ...] = field(default=(0.1, 0.2, 0.3, 0.4))
    # Synth
    synth_images: int = 512
    synth_queries: int = 64
    synth_classes: int = 8
    synth_z: int = 64
    min_objects: int = 1
    max_objects: int = 4
    noise: float = 0.3
    global_noise: float = 0.1

    def validate(self) -> "PipelineConfig":
        """
        Check cross-module constraints.

        Raises:
            InvalidArgumentError: naming the first offending key
        """
        require(self.workers >= 1, f"workers must be positive, got {self.workers}")
        require(self.z > self.z_prime >= 1, f"need z > z_prime >= 1, got z={self.z}, z_prime={self.z_prime}")
        require(self.dimension >= self.z, f"dimension must be at least z, got D={self.dimension}, z={self.z}")
        require(self.classes >= 2, f"classes must be at least 2, got {self.classes}")
        require(self.bits >= 1, f"bits must be positive, got {self.bits}")
        require(self.length_scale > 0, f"length_scale must be positive, got {self.length_scale}")
        require(self.eta_glob > 0, f"eta_glob must be positive, got {self.eta_glob}")
        require(self.k >= 1, f"k must be positive, got {self.k}")
        require(all(r > 0 for r in self.radii), f"radii must be positive, got {self.radii}")
        require(self.synth_classes >= 2, f"synth classes must be at least 2, got {self.synth_classes}")
        require(self.synth_z >= 8, f"synth z must be at least 8, got {self.synth_z}")
        require(0 <= self.min_objects <= self.max_objects,
                f"invalid object range [{self.min_objects}, {self.max_objects}]")
        require(0 <= self.synth_queries <= self.synth_images,
                f"synth queries must lie in [0, {self.synth_images}], got {self.synth_queries}")
        self.hash_weights()
        self.encoder_train_config().validate()
        self.hash_train_config().validate()
        return self

    def hash_weights(self) -> HashLossWeights:
        return HashLossWeights(self.lambda_mse, self.lambda_w, self.lambda_q, self.lambda_u, self.lambda_o)

    def encoder_train_config(self) -> EncoderTrainConfig:
        return EncoderTrainConfig(
            lambda_rec=self.lambda_rec,
            learning_rate=self.encoder_learning_rate,
            epochs=self.encoder_epochs,
            batch_size=self.encoder_batch_size,
            seed=derive_seed(self.seed, "encoder-train"),
        )

    def hash_train_config(self, weights: Optional[HashLossWeights] = None) -> HashTrainConfig:
        return HashTrainConfig(
            weights=weights if weights is not None else self.hash_weights(),
            learning_rate=self.hash_learning_rate,
            epochs=self.hash_epochs,
            batch_size=self.hash_batch_size,
            seed=derive_seed(self.seed, "hash-train"),
            normalize_step=self.normalize_step,
        )

    def derived_seed(self, label: str) -> int:
        return derive_seed(self.seed, label)

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values["radii"] = list(self.radii)
        return values


# (section, key, attribute) for every persisted setting
_LAYOUT = (
    ("General", "seed", "seed"),
    ("General", "workers", "workers"),
    ("HDC", "dimension", "dimension"),
    ("Encoder", "z", "z"),
    ("Encoder", "z_prime", "z_prime"),
    ("Encoder", "classes", "classes"),
    ("Encoder", "lambda_rec", "lambda_rec"),
    ("Encoder", "learning_rate", "encoder_learning_rate"),
    ("Encoder", "epochs", "encoder_epochs"),
    ("Encoder", "batch_size", "encoder_batch_size"),
    ("Spatial", "length_scale", "length_scale"),
    ("Spatial", "eta_glob", "eta_glob"),
    ("Spatial", "normalize_features", "normalize_features"),
    ("Hash", "bits", "bits"),
    ("Hash", "lambda_mse", "lambda_mse"),
    ("Hash", "lambda_w", "lambda_w"),
    ("Hash", "lambda_q", "lambda_q"),
    ("Hash", "lambda_u", "lambda_u"),
    ("Hash", "lambda_o", "lambda_o"),
    ("Hash", "learning_rate", "hash_learning_rate"),
    ("Hash", "epochs", "hash_epochs"),
    ("Hash", "batch_size", "hash_batch_size"),
    ("Hash", "normalize_step", "normalize_step"),
    ("Eval", "k", "k"),
    ("Eval", "radii", "radii"),
    ("Synth", "images", "synth_images"),
    ("Synth", "queries", "synth_queries"),
    ("Synth", "classes", "synth_classes"),
    ("Synth", "z", "synth_z"),
    ("Synth", "min_objects", "min_objects"),
    ("Synth", "max_objects", "max_objects"),
    ("Synth", "noise", "noise"),
    ("Synth", "global_noise", "global_noise"),
)
_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def _parse(attribute: str, raw: str) -> Any:
    kind = _TYPES[attribute]
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return tuple(float(part) for part in raw.split(",") if part.strip())
    except ValueError as e:
        raise InvalidArgumentError(f"config key {attribute!r} has invalid value {raw!r}") from e


def default_config_path() -> str:
    """$HYPERHASH_CONFIG (a .env file may set it) or the per-user config directory."""
    load_dotenv()
    override = os.environ.get(CONFIG_ENV)
    if override:
        return override
    return os.path.join(appdirs.user_config_dir(APP_NAME), "config.ini")


class ConfigManager:
    """Manages the pipeline configuration file."""

    def __init__(self, config_file: Optional[str] = None):
        """
        Initialize the configuration manager.

        Args:
            config_file: Path to configuration file, or None to use default
        """
        self.config_file = config_file if config_file is not None else default_config_path()
        self.config = configparser.ConfigParser()

        # Create default config if it doesn't exist
        if not os.path.exists(self.config_file):
            self._create_default_config()
        else:
            self.config.read(self.config_file)

    def _create_default_config(self):
        """Create a default configuration file."""
        defaults = PipelineConfig()
        for section, key, attribute in _LAYOUT:
            self.set_value(section, key, getattr(defaults, attribute))
        self.save()
        logger.info("created default configuration at %s", self.config_file)

    def get_value(self, section: str, key: str, default: Any = None) -> Any:
        """
        Get a value from the configuration.

        Args:
            section: Configuration section
            key: Configuration key
            default: Default value if not found

        Returns:
            The configuration value or default
        """
        try:
            return self.config[section][key]
        except KeyError:
            return default

    def set_value(self, section: str, key: str, value: Any) -> None:
        """
        Set a configuration value.

        Args:
            section: Configuration section
            key: Configuration key
            value: Value to set
        """
        if section not in self.config:
            self.config[section] = {}
        self.config[section][key] = _format(value)

    def save(self) -> None:
        """Save the configuration to file."""
        directory = os.path.dirname(os.path.abspath(self.config_file))
        os.makedirs(directory, exist_ok=True)
        with open(self.config_file, "w") as f:
            self.config.write(f)

    def get_settings(self) -> PipelineConfig:
        """
        Read every setting, falling back to the built-in defaults.

        Returns:
            Validated PipelineConfig

        Raises:
            InvalidArgumentError: on unparsable or inconsistent values
        """
        values = {}
        for section, key, attribute in _LAYOUT:
            raw = self.get_value(section, key)
            if raw is not None:
                values[attribute] = _parse(attribute, raw)
        return PipelineConfig(**values).validate()

    def update_settings(self, settings: Dict[str, Any]) -> None:
        """
        Update settings from a dictionary keyed by PipelineConfig field names, then save.

        Args:
            settings: Dictionary of settings to update
        """
        merged = self.get_settings().to_dict()
        unknown = set(settings) - set(merged)
        require(not unknown, f"unknown settings {sorted(unknown)}")
        merged.update(settings)
        merged["radii"] = tuple(merged["radii"])
        config = PipelineConfig(**merged).validate()
        for section, key, attribute in _LAYOUT:
            self.set_value(section, key, getattr(config, attribute))
        self.save()
