"""Run configuration: a flat ``key = value`` text file.

Schema (defaults in parentheses)::

    seed (0)
    # world
    n_users (200)  n_items (100)  n_categories (7)  n_clusters (8)
    main_len_min (5)  main_len_max (15)  play_len_min (2)  play_len_max (5)
    friend_len_min (3)  friend_len_max (8)
    tasks (download,category,play,friend)  rho (0.9)
    latent_dim (8)  sharpness (1.0)
    # model
    dim (128)  layers (1)  max_len (50)  group_task (true)
    # training
    learning_rate (0.0001)  batch_size (128)  epochs (10)
    beta1 (0.9)  beta2 (0.999)  adam_eps (1e-8)  augment (false)
    n_groups (0 = ceil(sqrt(users / 2)))  kmeans_iter (100)
    weight.<task> (1.0)

Blank lines and ``#`` comments are ignored; unknown keys are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .datagen import ConfigError, KNOWN_TASKS, WorldConfig
from .train import GROUP_TASK, TrainConfig


@dataclass
class RunConfig:
    seed: int = 0
    n_users: int = 200
    n_items: int = 100
    n_categories: int = 7
    n_clusters: int = 8
    main_len_min: int = 5
    main_len_max: int = 15
    play_len_min: int = 2
    play_len_max: int = 5
    friend_len_min: int = 3
    friend_len_max: int = 8
    tasks: str = "download,category,play,friend"
    rho: float = 0.9
    latent_dim: int = 8
    sharpness: float = 1.0
    dim: int = 128
    layers: int = 1
    max_len: int = 50
    group_task: bool = True
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: bool = False
    n_groups: int = 0
    kmeans_iter: int = 100
    weights: dict[str, float] = field(default_factory=dict)

    def world(self) -> WorldConfig:
        return WorldConfig(
            n_users=self.n_users,
            n_items=self.n_items,
            n_categories=self.n_categories,
            n_clusters=self.n_clusters,
            main_len=(self.main_len_min, self.main_len_max),
            play_len=(self.play_len_min, self.play_len_max),
            friend_len=(self.friend_len_min, self.friend_len_max),
            tasks=tuple(t.strip() for t in self.tasks.split(",") if t.strip()),
            rho=self.rho,
            latent_dim=self.latent_dim,
            sharpness=self.sharpness,
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            weights=dict(self.weights),
            seed=self.seed,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.adam_eps,
            augment=self.augment,
            n_groups=self.n_groups,
            kmeans_iter=self.kmeans_iter,
        )

    def validate(self) -> None:
        self.world().validate()
        checks = [
            ("dim", self.dim >= 1),
            ("layers", self.layers >= 1),
            ("max_len", self.max_len >= 1),
            ("learning_rate", self.learning_rate > 0),
            ("batch_size", self.batch_size >= 1),
            ("epochs", self.epochs >= 0),
            ("beta1", 0 <= self.beta1 < 1),
            ("beta2", 0 <= self.beta2 < 1),
            ("adam_eps", self.adam_eps > 0),
            ("n_groups", self.n_groups >= 0),
            ("kmeans_iter", self.kmeans_iter >= 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value for {name}: {getattr(self, name)!r}")
        for t, w in self.weights.items():
            if t not in KNOWN_TASKS and t != GROUP_TASK:
                raise ConfigError(f"weight.{t}: unknown task")
            if not w >= 0:
                raise ConfigError(f"weight.{t} must be non-negative")


_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "weights"}


def _coerce(key: str, raw: str):
    typ = _FIELDS[key].type
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from None


def apply(cfg: RunConfig, key: str, raw: str) -> None:
    key = key.strip()
    raw = raw.strip()
    if key.startswith("weight."):
        try:
            cfg.weights[key[len("weight."):]] = float(raw)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {raw!r} as float") from None
    elif key in _FIELDS:
        setattr(cfg, key, _coerce(key, raw))
    else:
        raise ConfigError(f"unknown config key {key!r}")


def parse(text: str, cfg: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    cfg = cfg or RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        apply(cfg, k, v)
    return cfg


def load(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        parse(p.read_text(), cfg, str(p))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        apply(cfg, *item.split("=", 1))
    cfg.validate()
    return cfg
