"""
Configuration files and the objects built from them.

A run configuration is the packaged ``reasonable_default_config.yml`` with the user's
file merged on top and command line flags applied last. Every key of a user file must
exist in the defaults, except inside the ``defense`` and ``prior`` sections, which are
replaced as a whole and validated by their own ``from_dict``.
"""

import copy
import logging
import os
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import yaml

from .attacks.config import CONDITIONALS, AttackConfig
from .data import (
    ImageDataset,
    SyntheticTask,
    first_examples,
    load_digits,
    load_idx,
    resize_images,
)
from .defenses import DefenseMechanism
from .evaluation.grid import PRESETS, ExperimentGrid
from .models import Network, NetworkSpec
from .priors import IMAGE_KINDS, PriorSpec
from .store import CheckpointError, load_checkpoint

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_CONFIG = Path(__file__).parent / "reasonable_default_config.yml"

# sections a user file replaces instead of merging into
REPLACED_SECTIONS = ("defense", "prior")
# attack keys that steer the command rather than the attack itself
ATTACK_COMMAND_KEYS = ("example_index", "init_file", "layer_drop", "defended_layer")


class ConfigError(ValueError):
    """The configuration is malformed or describes an impossible run."""


def multi_level_merge(dict1, dict2, replaced=()):
    for key, value in dict2.items():
        if (
            key in dict1
            and key not in replaced
            and isinstance(dict1[key], dict)
            and isinstance(value, dict)
        ):
            multi_level_merge(dict1[key], value)
        else:
            dict1[key] = value
    return dict1


def multi_set(dict_obj, value, *attrs):
    d = dict_obj
    for attr in attrs[:-1]:
        d = d[attr]
    if attrs[-1] not in d:
        raise ConfigError(f"Key {'.'.join(attrs)} does not exist in config file.")

    if isinstance(value, np.generic):
        value = value.item()

    d[attrs[-1]] = value


class DetectDuplicateKeysYamlLoader(yaml.SafeLoader):
    def construct_mapping(self, node, deep=False):
        mapping = {}
        for key_node, value_node in node.value:
            key = self.construct_object(key_node, deep=deep)
            if key in mapping:
                raise ConfigError(f"Duplicate key found: {key}")
            mapping[key] = self.construct_object(value_node, deep=deep)
        return mapping


def _read_yaml(path) -> dict:
    try:
        with open(path, "r") as stream:
            config = yaml.load(stream, Loader=DetectDuplicateKeysYamlLoader)
    except OSError as error:
        raise ConfigError(f"cannot read configuration {path}: {error}") from None
    except yaml.YAMLError as error:
        raise ConfigError(f"{path} is not valid YAML/JSON: {error}") from None
    if config is None:
        return {}
    if not isinstance(config, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return config


def parse_config(config_path, current_directory=None) -> dict:
    """Parse a configuration file, resolving ``inherits`` relative to the file."""
    if current_directory is None:
        current_directory = Path.cwd()

    if isinstance(config_path, dict):
        config = config_path
    else:
        config = _read_yaml(Path(current_directory) / config_path)
        current_directory = Path(current_directory) / Path(config_path).parent

    if "inherits" in config:
        # replace {VAR} and $VAR with environment variables
        inherit_config_path = os.path.expandvars(config["inherits"].format(**os.environ))
        if not Path(inherit_config_path).is_absolute():
            inherit_config_path = Path(current_directory) / inherit_config_path
        inherited_config = _read_yaml(inherit_config_path)
        current_directory = Path(inherit_config_path).parent
        del config["inherits"]  # avoid infinite recursion
        config = multi_level_merge(inherited_config, config, REPLACED_SECTIONS)
        config = parse_config(config, current_directory=current_directory)
    return config


def default_config() -> dict:
    return _read_yaml(DEFAULT_CONFIG)


def check_keys(config: dict, schema: dict, path: str = "") -> None:
    """Reject keys that do not appear in ``schema``."""
    for key, value in config.items():
        name = f"{path}{key}"
        if key not in schema:
            raise ConfigError(f"unknown configuration key '{name}'")
        if path == "" and key in REPLACED_SECTIONS:
            continue
        if isinstance(schema[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{name}' must be a mapping")
            check_keys(value, schema[key], f"{name}.")


def apply_overrides(config: dict, overrides: Optional[Dict[str, object]]) -> dict:
    """Set dotted keys (``attack.lr``); None values are skipped so that unset flags
    leave the file alone.

    A ``defense`` or ``prior`` override that names a ``kind`` starts that section over.
    """
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        attrs = key.split(".")
        if attrs[0] in REPLACED_SECTIONS and len(attrs) == 2:
            section = config.setdefault(attrs[0], {})
            if attrs[1] == "kind" and section.get("kind") != value:
                config[attrs[0]] = section = {}
            section[attrs[1]] = value
            continue
        try:
            multi_set(config, value, *attrs)
        except (KeyError, TypeError):
            raise ConfigError(f"Key {key} does not exist in config file.") from None
    return config


def load_config(
    config_path: Union[str, Path, dict, None] = None,
    overrides: Optional[Dict[str, object]] = None,
) -> dict:
    """Defaults, then the user file, then ``overrides``; validated."""
    config = default_config()
    if config_path is not None:
        user = parse_config(copy.deepcopy(config_path) if isinstance(config_path, dict) else config_path)
        check_keys(user, config)
        config = multi_level_merge(config, user, REPLACED_SECTIONS)
    apply_overrides(config, overrides)
    if config.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {config.get('schema_version')}, expected {SCHEMA_VERSION}"
        )
    validate(config)
    return config


def validate(config: dict) -> None:
    """Build every object once so that errors surface before any output is written."""
    build_defense(config)
    for defense in config["matrix"]["defenses"]:
        _defense_from(defense)
    build_attack(config, image_shape=_image_shape(config))
    build_grid(config)
    if config["data"]["source"] not in ("digits", "idx", "synthetic"):
        raise ConfigError(f"unknown data source '{config['data']['source']}'")
    if config["data"]["source"] == "idx" and not (
        config["data"]["images"] and config["data"]["labels"]
    ):
        raise ConfigError("data.source 'idx' needs data.images and data.labels")
    if config["attack"]["init"] == "provided":
        if config["attack"]["init_file"] is None:
            raise ConfigError("attack.init 'provided' needs attack.init_file")
        if config["attack"]["layer_drop"]:
            raise ConfigError("the layer-drop attack starts from noise or zeros, not a provided input")
    if config["risk"]["attacker"] not in ("analytic", "optimization", "constant"):
        raise ConfigError(f"unknown risk attacker '{config['risk']['attacker']}'")
    for name in config["matrix"]["attacks"]:
        if name not in CONDITIONALS and name != "analytic":
            raise ConfigError(f"unknown matrix attack '{name}'")
    conditional = config["layer_drop_ablation"]["conditional"]
    if conditional not in CONDITIONALS:
        raise ConfigError(f"unknown layer_drop_ablation.conditional '{conditional}'")
    if config["general"]["jobs"] is not None and config["general"]["jobs"] < 0:
        raise ConfigError("general.jobs must be >= 0")


def output_folder(config: dict) -> Path:
    folder = config["general"]["output_folder"]
    if folder is None:
        folder = os.environ.get("BAYESLEAK_OUTPUT_DIR", "output")
    return Path(folder)


def _defense_from(d) -> DefenseMechanism:
    if not isinstance(d, dict):
        raise ConfigError(f"a defense must be a mapping, got {d!r}")
    try:
        return DefenseMechanism.from_dict(d)
    except (TypeError, ValueError) as error:
        raise ConfigError(f"invalid defense {d}: {error}") from None


def build_defense(config: dict) -> DefenseMechanism:
    return _defense_from(config["defense"])


def _image_shape(config: dict) -> Optional[tuple]:
    if config["data"]["source"] == "synthetic":
        return None
    return tuple(config["data"]["image_shape"])


def build_prior(config: dict, image_shape=None) -> PriorSpec:
    """The prior, with ``image_shape`` taken from the data when not given."""
    d = dict(config["prior"] or {})
    if d.get("image_shape") is None and image_shape is not None:
        if d.get("kind") in IMAGE_KINDS + ("pixel_range",):
            d["image_shape"] = list(image_shape)
    try:
        return PriorSpec.from_dict(d)
    except (TypeError, ValueError) as error:
        raise ConfigError(f"invalid prior {config['prior']}: {error}") from None


def attack_seed(config: dict) -> int:
    seed = config["attack"]["seed"]
    return int(config["general"]["seed"] if seed is None else seed)


def build_attack(config: dict, image_shape=None) -> AttackConfig:
    d = {k: v for k, v in config["attack"].items() if k not in ATTACK_COMMAND_KEYS}
    d["seed"] = attack_seed(config)
    d["layer_mask"] = frozenset(d["layer_mask"] or ())
    try:
        return AttackConfig(
            **d,
            defense=build_defense(config),
            prior=build_prior(config, image_shape),
        )
    except (TypeError, ValueError) as error:
        if isinstance(error, ConfigError):
            raise
        raise ConfigError(f"invalid attack configuration: {error}") from None


def build_dataset(config: dict):
    """An ImageDataset (resampled to ``data.image_shape``) or a SyntheticTask."""
    data = config["data"]
    if data["source"] == "synthetic":
        try:
            return SyntheticTask.from_dict(data["synthetic"])
        except (TypeError, ValueError) as error:
            raise ConfigError(f"invalid synthetic task: {error}") from None
    if data["source"] == "digits":
        dataset = load_digits(data["limit"])
    else:
        dataset = load_idx(data["images"], data["labels"], data["limit"])
    return resize_images(dataset, data["image_shape"])


def _input_dim(dataset) -> int:
    if isinstance(dataset, SyntheticTask):
        return dataset.dim
    return dataset.input_dim


def _n_classes(dataset) -> int:
    if isinstance(dataset, SyntheticTask):
        return dataset.classes
    return dataset.n_classes


def training_examples(config: dict, dataset) -> list:
    if isinstance(dataset, ImageDataset):
        return dataset.examples()
    return first_examples(dataset, config["data"]["limit"])


def check_compatible(net: Network, dataset) -> None:
    if net.spec.input_dim != _input_dim(dataset):
        raise ConfigError(
            f"the network takes {net.spec.input_dim} inputs, the data has {_input_dim(dataset)}"
        )
    if net.spec.n_classes < _n_classes(dataset):
        raise ConfigError(
            f"the network has {net.spec.n_classes} classes, the data has {_n_classes(dataset)}"
        )


def build_network(config: dict, dataset, show_progress: bool = False) -> Network:
    """Load ``network.checkpoint`` or initialise a network and train it for
    ``network.train_steps`` steps."""
    section = config["network"]
    if section["checkpoint"] is not None:
        try:
            net = load_checkpoint(section["checkpoint"])
        except (OSError, CheckpointError) as error:
            raise ConfigError(f"cannot load checkpoint: {error}") from None
        check_compatible(net, dataset)
        return net
    try:
        spec = NetworkSpec(
            tuple(section["layer_sizes"]), section["activation"], int(section["seed"])
        )
    except (TypeError, ValueError) as error:
        raise ConfigError(f"invalid network: {error}") from None
    net = Network(spec)
    check_compatible(net, dataset)
    if section["train_steps"]:
        logger.info(f"training for {section['train_steps']} steps")
        net = net.train(
            training_examples(config, dataset),
            section["train_steps"],
            section["train_lr"],
            show_progress=show_progress,
        )
    return net


def build_grid(config: dict) -> ExperimentGrid:
    preset = config["matrix"]["preset"]
    if preset not in PRESETS:
        raise ConfigError(f"unknown grid preset '{preset}', expected one of {sorted(PRESETS)}")
    return PRESETS[preset]


def build_matrix_defenses(config: dict) -> list:
    return [_defense_from(d) for d in config["matrix"]["defenses"]]


def build_matrix_attacks(config: dict, image_shape=None) -> Dict[str, Optional[AttackConfig]]:
    """Attack templates by name; ``analytic`` maps to None."""
    template = build_attack(config, image_shape)
    return {
        name: None if name == "analytic" else template.replace(conditional=name)
        for name in config["matrix"]["attacks"]
    }
