"""Resolved run configuration: command-line flags > config file > built-in defaults."""

import logging
import re
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any, Final, cast

import hjson
from sasv_utils.data_verification import ParseError, ValidationError
from sasv_utils.fusion.mlp_backend import TrainingConfig
from sasv_utils.synthetic import LA_EVAL_ATTACKS, SynthSpec

logger = logging.getLogger(__name__)

_TRAINING_DEFAULTS = TrainingConfig()
_SYNTH_DEFAULTS = SynthSpec()

_TRAINING_KEYS: Final = {
    "seed": _TRAINING_DEFAULTS.seed,
    "epochs": _TRAINING_DEFAULTS.epochs,
    "batch_size": _TRAINING_DEFAULTS.batch_size,
    "learning_rate": _TRAINING_DEFAULTS.learning_rate,
    "hidden_dims": _TRAINING_DEFAULTS.hidden_dims,
    "sampling_ratios": _TRAINING_DEFAULTS.sampling_ratios,
    "max_trials": _TRAINING_DEFAULTS.max_trials,
    "patience": _TRAINING_DEFAULTS.patience,
}

# Every setting a command accepts, with its default (None: no default).
COMMAND_DEFAULTS: Final = {
    "validate": {"protocol": None, "scores": None},
    "evaluate": {
        "protocol": None,
        "scores": None,
        "dev_protocol": None,
        "dev_scores": None,
        "eval_protocol": None,
        "eval_scores": None,
        "team": None,
        "output_dir": ".",
        "per_attack": False,
        "det_out": None,
        "reference": None,
    },
    "score-cosine": {
        "protocol": None,
        "enrollment": None,
        "speaker_embeddings": None,
        "enrol_embeddings": None,
        "output": None,
    },
    "fuse": {
        "asv": None,
        "cm": None,
        "normalizer": "none",
        "output": None,
        "team": None,
        "split": None,
        "output_dir": ".",
    },
    "backend-train": {
        "labels": None,
        "speaker_embeddings": None,
        "cm_embeddings": None,
        "enrollment": None,
        "held_out_protocol": None,
        "held_out_enrollment": None,
        "model": None,
        **_TRAINING_KEYS,
    },
    "backend-score": {
        "model": None,
        "protocol": None,
        "enrollment": None,
        "speaker_embeddings": None,
        "enrol_embeddings": None,
        "cm_embeddings": None,
        "output": None,
        "team": None,
        "split": None,
        "output_dir": ".",
    },
    "synth-scores": {
        "output_dir": None,
        "n_target": _SYNTH_DEFAULTS.n_target,
        "n_nontarget": _SYNTH_DEFAULTS.n_nontarget,
        "n_spoof": _SYNTH_DEFAULTS.n_spoof,
        "dprime_sv": _SYNTH_DEFAULTS.dprime_sv,
        "dprime_spf": _SYNTH_DEFAULTS.dprime_spf,
        "n_speakers": _SYNTH_DEFAULTS.n_speakers,
        "n_enrollment": _SYNTH_DEFAULTS.n_enrollment,
        "seed": _SYNTH_DEFAULTS.seed,
    },
    "synth-embeddings": {
        "output_dir": None,
        "n_target": _SYNTH_DEFAULTS.n_target,
        "n_nontarget": _SYNTH_DEFAULTS.n_nontarget,
        "n_spoof": _SYNTH_DEFAULTS.n_spoof,
        "dprime_sv": _SYNTH_DEFAULTS.dprime_sv,
        "dprime_spf": _SYNTH_DEFAULTS.dprime_spf,
        "spk_dim": _SYNTH_DEFAULTS.spk_dim,
        "cm_dim": _SYNTH_DEFAULTS.cm_dim,
        "n_speakers": _SYNTH_DEFAULTS.n_speakers,
        "n_enrollment": _SYNTH_DEFAULTS.n_enrollment,
        "seed": _SYNTH_DEFAULTS.seed,
    },
}

# Settings naming files that must exist before a command starts.
INPUT_PATH_KEYS: Final = frozenset({
    "protocol", "scores", "dev_protocol", "dev_scores", "eval_protocol", "eval_scores", "reference",
    "enrollment", "speaker_embeddings", "enrol_embeddings", "cm_embeddings", "asv", "cm", "labels",
    "held_out_protocol", "held_out_enrollment",
})

# Inputs of one command that are outputs of another.
COMMAND_INPUT_KEYS: Final = {
    "backend-score": frozenset({"model"}),
}

_KEY_VALUE_RE = re.compile(r'^(\s*[A-Za-z_][\w-]*)\s*=\s*(.*)$')


def _as_int_tuple(value: Any) -> tuple[int, ...]:
    if isinstance(value, str):
        value = [v for v in re.split(r'[,\s]+', value.strip('[]() ')) if v]
    return tuple(int(v) for v in value)

def _as_float_tuple(value: Any) -> tuple[float, ...] | None:
    if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
        return None
    if isinstance(value, str):
        value = [v for v in re.split(r'[,:\s]+', value.strip('[]() ')) if v]
    return tuple(float(v) for v in value)

def _as_optional_int(value: Any) -> int | None:
    if value is None or (isinstance(value, str) and value.lower() in ("none", "null", "")):
        return None
    return int(value)

def _as_bool(value: Any) -> bool:
    if isinstance(value, str):
        return value.lower() in ("1", "true", "yes", "on")
    return bool(value)

_COERCE: Final[Mapping[str, Callable[[Any], Any]]] = {
    "seed": int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "hidden_dims": _as_int_tuple,
    "sampling_ratios": _as_float_tuple,
    "max_trials": _as_optional_int,
    "patience": int,
    "n_target": int,
    "n_nontarget": int,
    "n_spoof": int,
    "dprime_sv": float,
    "dprime_spf": float,
    "spk_dim": int,
    "cm_dim": int,
    "n_speakers": int,
    "n_enrollment": int,
    "per_attack": _as_bool,
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    settings: Mapping[str, Any]

    def __post_init__(self) -> None:
        object.__setattr__(self, "settings", MappingProxyType(dict(self.settings)))

    def __getitem__(self, key: str) -> Any:
        return self.settings[key]

    def get(self, key: str, default: Any = None) -> Any:
        value = self.settings.get(key)
        return default if value is None else value

    def require(self, *keys: str) -> None:
        missing = [k for k in keys if self.settings.get(k) is None]
        if missing:
            raise ValidationError(f"{self.command}: missing required setting(s): {', '.join(missing)}")

    def path(self, key: str) -> Path | None:
        value = self.settings.get(key)
        return None if value is None else Path(value)

    def check_inputs(self) -> None:
        inputs = INPUT_PATH_KEYS | COMMAND_INPUT_KEYS.get(self.command, frozenset())
        for key in sorted(inputs & set(self.settings)):
            value = self.settings[key]
            if value is not None and not Path(value).is_file():
                raise FileNotFoundError(f"{key}: no such file: {value}")

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(**{k: self.settings[k] for k in _TRAINING_KEYS})

    def synth_spec(self) -> SynthSpec:
        fields = ("n_target", "n_nontarget", "n_spoof", "dprime_sv", "dprime_spf",
                  "spk_dim", "cm_dim", "n_speakers", "n_enrollment", "seed")
        return SynthSpec(**{k: self.settings[k] for k in fields if k in self.settings}, attack_types=LA_EVAL_ATTACKS)

    def dumps(self) -> str:
        printable = {"command": self.command}
        for key, value in self.settings.items():
            if isinstance(value, tuple):
                value = list(value)
            elif isinstance(value, Path):
                value = str(value)
            printable[key] = value
        return hjson.dumps(printable, indent=2)


def load_config_file(config_path: Path) -> dict[str, Any]:
    """Flat hjson mapping; ``key = value`` lines are accepted too."""
    try:
        with open(config_path, 'r', encoding='utf-8') as handle:
            lines = handle.read().splitlines()
    except PermissionError:
        logger.error("Permission Error. Unable to load configuration file")
        raise

    converted = []
    for line in lines:
        match = _KEY_VALUE_RE.match(line)
        converted.append(f"{match.group(1)}: {match.group(2)}" if match else line)

    try:
        content = hjson.loads("\n".join(converted))
    except hjson.HjsonDecodeError as err:
        raise ParseError(str(err), source=config_path.name, line=err.lineno) from None

    if not isinstance(content, Mapping):
        raise ParseError("configuration must be a flat mapping", source=config_path.name)

    known = set().union(*(d.keys() for d in COMMAND_DEFAULTS.values()))
    config = {str(k).replace('-', '_'): v for k, v in cast(Mapping[str, Any], content).items()}
    unknown = sorted(set(config) - known)
    if unknown:
        raise ValidationError(f"{config_path.name}: unknown configuration key(s): {', '.join(unknown)}")

    logger.debug(f"{config_path.name} loaded")
    return config

def resolve(command: str, flags: Mapping[str, Any], config_path: Path | None = None) -> RunConfig:
    defaults = COMMAND_DEFAULTS[command]
    settings = dict(defaults)

    if config_path is not None:
        file_settings = load_config_file(config_path)
        settings.update({k: v for k, v in file_settings.items() if k in defaults})

    settings.update({k: v for k, v in flags.items() if k in defaults and v is not None})

    for key, coerce in _COERCE.items():
        if key in settings and settings[key] is not None:
            try:
                settings[key] = coerce(settings[key])
            except (TypeError, ValueError) as err:
                raise ValidationError(f"Invalid value for {key}: {settings[key]!r} ({err})") from None

    return RunConfig(command, settings)
