"""Experiment configuration, dataset presets, and seed derivation.

Configs are YAML key-value trees validated into ExperimentConfig. A single
master seed deterministically derives every stage's seed through labeled
hashing, so changing one stage never perturbs another.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import yaml

from .errors import ValidationError

# Per-dataset hyper-parameters used for the headline runs. quant_ratio is
# carried through verbatim for provenance but has no implemented semantics.
PRESETS = {
    "sst5":   {"k": 32, "num_clients": 4, "labels_per_client": 2,
               "proxy_size": 500, "delta": 3, "alpha": 0, "quant_ratio": 0.5},
    "amazon": {"k": 8,  "num_clients": 2, "labels_per_client": 3,
               "proxy_size": 750, "delta": 2, "alpha": 0, "quant_ratio": 0.5},
    "yelp":   {"k": 4,  "num_clients": 2, "labels_per_client": 3,
               "proxy_size": 750, "delta": 2, "alpha": 2, "quant_ratio": 0.5},
    "mr":     {"k": 32, "num_clients": 4, "labels_per_client": 1,
               "proxy_size": 500, "delta": 3, "alpha": 0, "quant_ratio": 0.5},
    "yahoo":  {"k": 4,  "num_clients": 2, "labels_per_client": 5,
               "proxy_size": 750, "delta": 2, "alpha": 2, "quant_ratio": 0.5},
    "agnews": {"k": 4,  "num_clients": 2, "labels_per_client": 2,
               "proxy_size": 750, "delta": 2, "alpha": 2, "quant_ratio": 0.5},
    "subj":   {"k": 32, "num_clients": 4, "labels_per_client": 1,
               "proxy_size": 500, "delta": 3, "alpha": 0, "quant_ratio": 0.3},
}

KNOWN_POLICIES = ("learned", "uniform", "random", "singleton",
                  "social_learning", "infinite", "proxy_only", "zero_shot")


def derive_seed(master: int, label: str) -> int:
    """Stable 63-bit seed for a named stage."""
    digest = hashlib.blake2b(f"{master}:{label}".encode("utf-8"),
                             digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


@dataclass
class SyntheticSpec:
    num_classes: int = 4
    per_class_train: int = 250
    per_class_eval: int = 200
    dim: int = 8
    spread: float = 0.35
    scale: float = 1.0
    label_noise: float = 0.0  # applied to the training pool only


@dataclass
class DatasetSpec:
    train_path: str
    eval_path: str


@dataclass
class EmbeddingSpec:
    source: str = "synthetic"  # synthetic | hash | file
    dim: int = 8
    train_path: str | None = None
    eval_path: str | None = None

    def __post_init__(self):
        if self.source not in ("synthetic", "hash", "file"):
            raise ValidationError(f"unknown embedding source: {self.source}")
        if self.source == "file" and not (self.train_path and self.eval_path):
            raise ValidationError("file embeddings need train_path and eval_path")


@dataclass
class PartitionConfig:
    scheme: str = "noniid"  # noniid | iid
    num_clients: int = 4
    labels_per_client: int = 1

    def __post_init__(self):
        if self.scheme not in ("noniid", "iid"):
            raise ValidationError(f"unknown partition scheme: {self.scheme}")
        if self.num_clients < 1:
            raise ValidationError("num_clients must be >= 1")


@dataclass
class TrainSpec:
    epochs: int = 800
    learning_rate: float = 0.01
    batch_size: int = 8
    width: int = 300
    validation_fraction: float = 0.0


@dataclass
class BackendSpec:
    type: str = "mock"  # mock | http
    endpoint: str = ""
    model: str = ""
    auth_env: str = "ICEBUDGET_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    max_tokens: int = 8

    def __post_init__(self):
        if self.type not in ("mock", "http"):
            raise ValidationError(f"unknown backend type: {self.type}")
        if self.type == "http" and not self.endpoint:
            raise ValidationError("http backend needs an endpoint")


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    num_seeds: int = 3
    k: int = 8
    delta: int = 1
    alpha: int = 0
    proxy_size: int = 300
    policies: list[str] = field(default_factory=lambda: ["uniform"])
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    synthetic: SyntheticSpec | None = None
    dataset: DatasetSpec | None = None
    embeddings: EmbeddingSpec = field(default_factory=EmbeddingSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    backend: BackendSpec = field(default_factory=BackendSpec)
    output_dir: str = "out"
    ice_order: str = "descending"
    max_prompt_chars: int = 1_000_000
    quant_ratio: float | None = None  # recorded, no semantics

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.delta < 1:
            raise ValidationError("delta must be >= 1")
        if self.alpha < 0:
            raise ValidationError("alpha must be >= 0")
        if self.num_seeds < 1:
            raise ValidationError("num_seeds must be >= 1")
        if self.proxy_size < 1:
            raise ValidationError("proxy_size must be >= 1")
        if not self.policies:
            raise ValidationError("at least one policy required")
        for policy in self.policies:
            if policy not in KNOWN_POLICIES:
                raise ValidationError(f"unknown policy: {policy}")
        if (self.synthetic is None) == (self.dataset is None):
            raise ValidationError(
                "config needs exactly one of 'synthetic' or 'dataset'")
        if self.dataset is not None and self.embeddings.source == "synthetic":
            raise ValidationError(
                "file datasets need 'hash' or 'file' embeddings")

    def to_dict(self) -> dict:
        def plain(obj):
            if obj is None or isinstance(obj, (int, float, str, bool)):
                return obj
            if isinstance(obj, list):
                return [plain(v) for v in obj]
            return {key: plain(val) for key, val in vars(obj).items()}

        return plain(self)


def _pop_section(data: dict, key: str, cls):
    section = data.pop(key, None)
    if section is None:
        return None
    if not isinstance(section, dict):
        raise ValidationError(f"config section '{key}' must be a mapping")
    try:
        return cls(**section)
    except TypeError as exc:
        raise ValidationError(f"config section '{key}': {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    preset_name = data.pop("preset", None)
    if preset_name is not None:
        preset = PRESETS.get(str(preset_name).lower())
        if preset is None:
            raise ValidationError(f"unknown preset: {preset_name}")
        data.setdefault("k", preset["k"])
        data.setdefault("delta", preset["delta"])
        data.setdefault("alpha", preset["alpha"])
        data.setdefault("proxy_size", preset["proxy_size"])
        data.setdefault("quant_ratio", preset["quant_ratio"])
        part = data.setdefault("partition", {})
        part.setdefault("scheme", "noniid")
        part.setdefault("num_clients", preset["num_clients"])
        part.setdefault("labels_per_client", preset["labels_per_client"])

    sections = {
        "partition": (PartitionConfig, True),
        "synthetic": (SyntheticSpec, False),
        "dataset": (DatasetSpec, False),
        "embeddings": (EmbeddingSpec, True),
        "train": (TrainSpec, True),
        "backend": (BackendSpec, True),
    }
    kwargs = {}
    for key, (cls, has_default) in sections.items():
        value = _pop_section(data, key, cls)
        if value is not None:
            kwargs[key] = value
        elif not has_default:
            kwargs[key] = None
    known = {"name", "seed", "num_seeds", "k", "delta", "alpha", "proxy_size",
             "policies", "output_dir", "ice_order", "max_prompt_chars",
             "quant_ratio"}
    for key in data:
        if key not in known:
            raise ValidationError(f"unknown config key: {key}")
    kwargs.update(data)
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ValidationError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"config root must be a mapping: {path}")
    return config_from_dict(data)
