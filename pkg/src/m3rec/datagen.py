"""Synthetic multi-sequence game world, dataset files, leave-last-out split."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .multitask import Example, TaskSpec
from .seqgraph import ActionSequence

FORMAT_VERSION = 1

# task id -> (vocab kind, role)
KNOWN_TASKS = {
    "download": ("item", "main"),
    "category": ("category", "auxiliary"),
    "play": ("item", "auxiliary"),
    "friend": ("user", "auxiliary"),
}


class ConfigError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 200
    n_items: int = 100
    n_categories: int = 7
    n_clusters: int = 8
    main_len: tuple[int, int] = (5, 15)
    play_len: tuple[int, int] = (2, 5)
    friend_len: tuple[int, int] = (3, 8)
    tasks: tuple[str, ...] = ("download", "category", "play", "friend")
    rho: float = 0.9
    latent_dim: int = 8
    sharpness: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("n_users", "n_items", "n_categories", "n_clusters", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        for name in ("main_len", "play_len", "friend_len"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ConfigError(f"{name} must satisfy 1 <= min <= max, got {(lo, hi)}")
        if "download" not in self.tasks:
            raise ConfigError("the download (main) task is required")
        unknown = set(self.tasks) - set(KNOWN_TASKS)
        if unknown:
            raise ConfigError(f"unknown tasks {sorted(unknown)}")
        if "play" in self.tasks and self.play_len[1] > self.main_len[0]:
            raise ConfigError(
                f"play length up to {self.play_len[1]} can exceed download length {self.main_len[0]}"
            )
        if "friend" in self.tasks and self.n_users < 2:
            raise ConfigError("friend sequences need at least two users")


@dataclass
class Dataset:
    n_users: int
    n_items: int
    n_categories: int
    item_category: tuple[int, ...]
    tasks: tuple[TaskSpec, ...]
    sequences: dict[str, dict[int, ActionSequence]]
    seed: int = 0
    rho: float = 0.0
    # per (task, user): which actions were derived from the download sequence
    provenance: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def vocab_sizes(self) -> dict[str, int]:
        return {"item": self.n_items, "category": self.n_categories, "user": self.n_users}

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)

    @property
    def main_task(self) -> TaskSpec:
        return next(t for t in self.tasks if t.role == "main")

    def validate(self) -> None:
        sizes = self.vocab_sizes
        if len(self.item_category) != self.n_items:
            raise DatasetFormatError("item category map does not cover every item")
        for c in self.item_category:
            if not 0 <= c < self.n_categories:
                raise DatasetFormatError(f"category {c} out of range")
        for t in self.tasks:
            for u, s in self.sequences.get(t.task_id, {}).items():
                if not 0 <= u < self.n_users:
                    raise DatasetFormatError(f"user {u} out of range in task {t.task_id}")
                for i in s.ids:
                    if not 0 <= i < sizes[t.vocab_kind]:
                        raise DatasetFormatError(f"{t.vocab_kind} id {i} out of range in {t.task_id}/{u}")


def default_tasks(names) -> tuple[TaskSpec, ...]:
    return tuple(TaskSpec(n, *KNOWN_TASKS[n]) for n in names)


def _softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def generate(config: WorldConfig) -> Dataset:
    config.validate()
    c = config
    rng = np.random.default_rng([c.seed, 0])
    k = c.latent_dim
    protos = rng.normal(size=(c.n_categories, k))
    item_cat = rng.integers(c.n_categories, size=c.n_items)
    item_vec = protos[item_cat] + 0.5 * rng.normal(size=(c.n_items, k))
    centers = rng.normal(size=(c.n_clusters, k))
    user_cluster = rng.integers(c.n_clusters, size=c.n_users)
    user_vec = centers[user_cluster] + 0.5 * rng.normal(size=(c.n_users, k))
    # user taste lives in item space: attraction to one category prototype
    taste = protos[rng.integers(c.n_categories, size=c.n_users)] + 0.3 * user_vec
    by_cluster = [np.flatnonzero(user_cluster == j) for j in range(c.n_clusters)]
    scale = c.sharpness / np.sqrt(k)

    seqs: dict[str, dict[int, ActionSequence]] = {t: {} for t in c.tasks}
    prov: dict = {}
    for u in range(c.n_users):
        r = np.random.default_rng([c.seed, 1, u])
        n_main = int(r.integers(c.main_len[0], c.main_len[1] + 1))
        t0 = int(r.integers(0, 100)) * 10
        times = [t0 + 10 * (j + 1) for j in range(n_main)]
        items = []
        prev = None
        for _ in range(n_main):
            ctx = taste[u] if prev is None else taste[u] + item_vec[prev]
            prev = int(r.choice(c.n_items, p=_softmax(scale * item_vec @ ctx)))
            items.append(prev)
        seqs["download"][u] = ActionSequence(u, "download", tuple(zip(items, times)))

        if "category" in c.tasks:
            cats, flags = [], []
            for i in items:
                keep = r.random() < c.rho
                cats.append(int(item_cat[i]) if keep else int(r.integers(c.n_categories)))
                flags.append(keep)
            seqs["category"][u] = ActionSequence(u, "category", tuple(zip(cats, times)))
            prov[("category", u)] = tuple(flags)

        if "play" in c.tasks:
            n_play = int(r.integers(c.play_len[0], c.play_len[1] + 1))
            pos = np.sort(r.choice(n_main, size=n_play, replace=False))
            played, flags = [], []
            for p in pos:
                keep = r.random() < c.rho
                played.append((items[p] if keep else int(r.integers(c.n_items)), times[p] + 5))
                flags.append(keep)
            seqs["play"][u] = ActionSequence(u, "play", tuple(played))
            prov[("play", u)] = tuple(flags)

        if "friend" in c.tasks:
            n_f = int(r.integers(c.friend_len[0], c.friend_len[1] + 1))
            mates = by_cluster[user_cluster[u]]
            mates = mates[mates != u]
            others = np.delete(np.arange(c.n_users), u)
            ft0 = int(r.integers(0, 100)) * 10
            friends, flags = [], []
            for j in range(n_f):
                keep = r.random() < c.rho and len(mates) > 0
                pool = mates if keep else others
                friends.append((int(pool[r.integers(len(pool))]), ft0 + 10 * (j + 1)))
                flags.append(keep)
            seqs["friend"][u] = ActionSequence(u, "friend", tuple(friends))
            prov[("friend", u)] = tuple(flags)

    return Dataset(
        c.n_users,
        c.n_items,
        c.n_categories,
        tuple(int(x) for x in item_cat),
        default_tasks(c.tasks),
        seqs,
        seed=c.seed,
        rho=float(c.rho),
        provenance=prov,
    )


def split(dataset: Dataset) -> tuple[Dataset, dict[str, list[Example]]]:
    """Leave-last-out per sequence: the final action becomes the test target."""
    train: dict[str, dict[int, ActionSequence]] = {}
    test: dict[str, list[Example]] = {}
    for t in dataset.tasks:
        train[t.task_id] = {}
        cases = test[t.task_id] = []
        for u, s in sorted(dataset.sequences.get(t.task_id, {}).items()):
            if len(s) >= 2:
                train[t.task_id][u] = replace(s, actions=s.actions[:-1])
                cases.append(Example(s.ids[:-1], s.ids[-1], owner=u))
            else:
                train[t.task_id][u] = s
    return replace(dataset, sequences=train, provenance={}), test


# persistence


def _tasks_field(tasks) -> str:
    return ",".join(f"{t.task_id}:{t.vocab_kind}:{t.role}" for t in tasks)


def save(dataset: Dataset, path) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_users": dataset.n_users,
        "n_items": dataset.n_items,
        "n_categories": dataset.n_categories,
        "tasks": _tasks_field(dataset.tasks),
        "seed": dataset.seed,
        "rho": repr(float(dataset.rho)),
    }
    (out / "manifest").write_text("".join(f"{k}={v}\n" for k, v in manifest.items()))
    lines = ["task\tuser\tid\tt\n"]
    for t in dataset.tasks:
        for u, s in sorted(dataset.sequences.get(t.task_id, {}).items()):
            lines.extend(f"{t.task_id}\t{u}\t{i}\t{ts}\n" for i, ts in s.actions)
    (out / "actions.tsv").write_text("".join(lines))
    (out / "item_categories.tsv").write_text(
        "".join(f"{i}\t{c}\n" for i, c in enumerate(dataset.item_category))
    )


def _read_manifest(path: Path) -> dict[str, str]:
    fields = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise DatasetFormatError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        fields[k.strip()] = v.strip()
    return fields


def load(path) -> Dataset:
    root = Path(path)
    if not (root / "manifest").is_file():
        raise FileNotFoundError(f"no dataset manifest in {root}")
    m = _read_manifest(root / "manifest")
    try:
        if int(m["format_version"]) != FORMAT_VERSION:
            raise DatasetFormatError(f"unsupported dataset format {m['format_version']}")
        tasks = []
        for entry in filter(None, m["tasks"].split(",")):
            tid, kind, role = entry.split(":")
            tasks.append(TaskSpec(tid, kind, role))
        n_users, n_items, n_cats = int(m["n_users"]), int(m["n_items"]), int(m["n_categories"])
        seed, rho = int(m["seed"]), float(m["rho"])
    except (KeyError, ValueError) as exc:
        if isinstance(exc, DatasetFormatError):
            raise
        raise DatasetFormatError(f"{root / 'manifest'}: bad or missing field ({exc})") from None
    task_ids = {t.task_id for t in tasks}

    cats = {}
    cat_path = root / "item_categories.tsv"
    for lineno, line in enumerate(cat_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            i, c = map(int, line.split("\t"))
        except ValueError:
            raise DatasetFormatError(f"{cat_path}:{lineno}: malformed line {line!r}") from None
        cats[i] = c
    if sorted(cats) != list(range(n_items)):
        raise DatasetFormatError(f"{cat_path}: categories must cover items 0..{n_items - 1}")

    raw: dict[tuple[str, int], list[tuple[int, int]]] = {}
    act_path = root / "actions.tsv"
    for lineno, line in enumerate(act_path.read_text().splitlines(), 1):
        if not line.strip() or (lineno == 1 and line.startswith("task\t")):
            continue
        parts = line.split("\t")
        try:
            if len(parts) != 4:
                raise ValueError
            task, user, vid, ts = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
        except ValueError:
            raise DatasetFormatError(f"{act_path}:{lineno}: malformed line {line!r}") from None
        if task not in task_ids:
            raise DatasetFormatError(f"{act_path}:{lineno}: unknown task {task!r}")
        raw.setdefault((task, user), []).append((vid, ts))

    seqs: dict[str, dict[int, ActionSequence]] = {t.task_id: {} for t in tasks}
    for (task, user), acts in raw.items():
        try:
            seqs[task][user] = ActionSequence(user, task, tuple(acts))
        except ValueError as exc:
            raise DatasetFormatError(f"sequence {task}/{user}: {exc}") from None
    ds = Dataset(
        n_users, n_items, n_cats, tuple(cats[i] for i in range(n_items)), tuple(tasks),
        {t: dict(sorted(s.items())) for t, s in seqs.items()}, seed=seed, rho=rho,
    )
    ds.validate()
    return ds
