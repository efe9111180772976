"""Joint multi-task training and offline evaluation."""
from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .datagen import Dataset
from .diffmath import Tape
from .evaluation import MetricReport, ranks_from_logits
from .grouping import UserGroup, default_group_count, make_groups, merge_group_sequence, user_features
from .multitask import (
    Adam,
    Example,
    M3RecModel,
    TaskSpec,
    batch_logits,
    graph_for,
    init_model,
    joint_loss,
)

log = logging.getLogger(__name__)

GROUP_TASK = "group"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 10
    weights: dict[str, float] = field(default_factory=dict)
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # every prefix of a training sequence becomes an example, not just the full one
    augment: bool = False
    n_groups: int = 0  # 0: ceil(sqrt(|U| / 2))
    kmeans_iter: int = 100

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def build_model(
    dataset: Dataset,
    d: int = 128,
    n_layers: int = 1,
    seed: int = 0,
    max_len: int = 50,
    weights: Mapping[str, float] | None = None,
    group_task: bool = True,
) -> M3RecModel:
    """Model over the dataset's tasks (plus the group task), weights baked into the registry.

    The group task defaults to the mean auxiliary weight.
    """
    weights = dict(weights or {})
    tasks = [
        TaskSpec(t.task_id, t.vocab_kind, t.role, float(weights.get(t.task_id, t.weight)))
        for t in dataset.tasks
    ]
    if group_task:
        aux = [t.weight for t in tasks if t.role == "auxiliary"]
        default = float(np.mean(aux)) if aux else 1.0
        tasks.append(TaskSpec(GROUP_TASK, "item", "auxiliary", float(weights.get(GROUP_TASK, default)), "group"))
    return init_model(dataset.vocab_sizes, d, tasks, seed=seed, n_layers=n_layers, max_len=max_len)


def sequence_examples(sequences: Mapping[int, object], augment: bool = False, max_len: int = 50) -> list[Example]:
    out = []
    for u, s in sorted(sequences.items()):
        ids = s.ids
        starts = range(1, len(ids)) if augment else range(len(ids) - 1, len(ids))
        for k in starts:
            if k >= 1:
                out.append(Example(tuple(ids[max(0, k - max_len):k]), ids[k], owner=u))
    return out


def activity_counts(dataset: Dataset) -> np.ndarray:
    counts = np.zeros((dataset.n_users, len(dataset.tasks)))
    for j, t in enumerate(dataset.tasks):
        for u, s in dataset.sequences.get(t.task_id, {}).items():
            counts[u, j] = len(s)
    return counts


def build_groups(model: M3RecModel, dataset: Dataset, k: int = 0, seed: int = 0, max_iter: int = 100) -> list[UserGroup]:
    feats = user_features(model.embeddings.user_table.value[: dataset.n_users], activity_counts(dataset))
    k = k or default_group_count(dataset.n_users)
    return make_groups(feats, min(k, dataset.n_users), seed=seed, max_iter=max_iter)


def merged_group_sequences(dataset: Dataset, groups: Sequence[UserGroup]):
    main = dataset.sequences[dataset.main_task.task_id]
    out = {}
    for g in groups:
        seqs = [main[u] for u in sorted(g.members) if u in main and len(main[u])]
        if seqs:
            out[g.group_id] = merge_group_sequence(seqs, g.group_id)
    return out


def group_examples(
    dataset: Dataset, groups: Sequence[UserGroup], max_len: int = 50, all_prefixes: bool = True
) -> list[Example]:
    """Next-download cases on each group's merged main sequence.

    Groups are few, so by default every prefix of a merged sequence is a case.
    """
    merged = merged_group_sequences(dataset, groups)
    out = []
    for g in groups:
        s = merged.get(g.group_id)
        if s is None or len(s) < 2:
            continue
        ids = s.ids
        members = tuple(sorted(g.members))
        ends = range(1, len(ids)) if all_prefixes else [len(ids) - 1]
        out.extend(Example(tuple(ids[max(0, k - max_len):k]), ids[k], members, owner=g.group_id) for k in ends)
    return out


def effective_weights(model: M3RecModel, config: TrainConfig) -> dict[str, float]:
    unknown = set(config.weights) - {t.task_id for t in model.tasks}
    if unknown:
        raise ValueError(f"weights given for unknown tasks {sorted(unknown)}")
    return {t.task_id: float(config.weights.get(t.task_id, t.weight)) for t in model.tasks}


def task_pools(model: M3RecModel, train_ds: Dataset, config: TrainConfig, groups=None) -> dict[str, list[Example]]:
    weights = effective_weights(model, config)
    pools = {}
    for t in model.tasks:
        if weights[t.task_id] == 0.0:
            continue
        if t.level == "group":
            if groups is None:
                raise ValueError("group task needs groups")
            pool = group_examples(train_ds, groups, model.max_len)
        else:
            pool = sequence_examples(train_ds.sequences.get(t.task_id, {}), config.augment, model.max_len)
        if not pool:
            raise ValueError(f"empty training pool for task {t.task_id!r} with weight {weights[t.task_id]}")
        pools[t.task_id] = pool
    return pools


class _Cycler:
    """Round-robin over a shuffled pool; reshuffles each epoch and on wrap-around."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n, self.rng = n, rng
        self.new_epoch()

    def new_epoch(self):
        self.order = self.rng.permutation(self.n)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            m = min(k, self.n - self.pos)
            out.append(self.order[self.pos:self.pos + m])
            self.pos += m
            k -= m
        return np.concatenate(out)


def train(
    model: M3RecModel,
    train_ds: Dataset,
    config: TrainConfig,
    groups: Sequence[UserGroup] | None = None,
    callback: Callable[[int, M3RecModel], None] | None = None,
) -> tuple[M3RecModel, list[dict]]:
    """Optimise the weighted joint loss with Adam, one batch per task per step.

    An epoch is one pass over the main task's pool; other tasks cycle
    through their own pools.  Returns the model and per-epoch loss history.
    """
    config.validate()
    weights = effective_weights(model, config)
    if groups is None and any(t.level == "group" and weights[t.task_id] > 0 for t in model.tasks):
        groups = build_groups(model, train_ds, config.n_groups, config.seed, config.kmeans_iter)
    pools = task_pools(model, train_ds, config, groups)
    main_id = model.main_task.task_id
    if main_id not in pools:
        raise ValueError("main task has zero weight")
    graphs = {tid: [graph_for(model, model.task(tid), ex.inputs) for ex in pool] for tid, pool in pools.items()}
    cyclers = {
        tid: _Cycler(len(pool), np.random.default_rng([config.seed, zlib.crc32(tid.encode())]))
        for tid, pool in pools.items()
    }
    opt = Adam(model.parameters(), config.learning_rate, config.beta1, config.beta2, config.eps)
    steps = math.ceil(len(pools[main_id]) / config.batch_size)
    history = []
    for epoch in range(1, config.epochs + 1):
        for c in cyclers.values():
            c.new_epoch()
        sums = {tid: 0.0 for tid in pools}
        joint = 0.0
        for _ in range(steps):
            batches, bgraphs = {}, {}
            for tid, pool in pools.items():
                k = min(config.batch_size, len(pool))
                if tid == main_id:
                    k = min(k, len(pool) - cyclers[tid].pos)
                idx = cyclers[tid].take(k)
                batches[tid] = [pool[i] for i in idx]
                bgraphs[tid] = [graphs[tid][i] for i in idx]
            model.zero_grads()
            tape = Tape()
            loss, parts = joint_loss(model, batches, weights, tape, bgraphs)
            tape.backward(loss)
            opt.step()
            joint += loss.item()
            for tid, v in parts.items():
                sums[tid] += v
        rec = {"epoch": epoch, "joint": joint, **{f"loss.{t}": v for t, v in sums.items()}}
        history.append(rec)
        log.info("epoch %d joint loss %.4f", epoch, joint)
        if callback is not None:
            callback(epoch, model)
    return model, history


def history_tsv(history: Sequence[dict]) -> str:
    if not history:
        return "epoch\tjoint\n"
    keys = list(history[0])
    lines = ["\t".join(keys)]
    for rec in history:
        lines.append("\t".join(str(rec[k]) if k == "epoch" else f"{rec[k]:.10g}" for k in keys))
    return "\n".join(lines) + "\n"


def example_ranks(model: M3RecModel, task: TaskSpec, examples: Sequence[Example], chunk: int = 256) -> np.ndarray:
    ranks = []
    for lo in range(0, len(examples), chunk):
        part = examples[lo:lo + chunk]
        graphs = [graph_for(model, task, ex.inputs) for ex in part]
        members = [ex.members for ex in part] if task.level == "group" else None
        logits = batch_logits(model, Tape(), task, graphs, members).value
        ranks.append(ranks_from_logits(logits, [ex.target for ex in part]))
    return np.concatenate(ranks) if ranks else np.zeros(0, dtype=np.int64)


def evaluate(
    model: M3RecModel,
    cases: Mapping[str, Sequence[Example]],
    ns: Sequence[int] = (1, 2, 5, 10),
    setting: str = "default",
) -> MetricReport:
    report = MetricReport(setting)
    for t in model.tasks:
        exs = cases.get(t.task_id)
        if exs:
            report.add_task(t.task_id, example_ranks(model, t, exs).tolist(), ns)
    return report


def group_test_cases(dataset: Dataset, groups: Sequence[UserGroup], max_len: int = 50) -> list[Example]:
    """Leave-last-out cases on each group's merged full main sequence."""
    return group_examples(dataset, groups, max_len, all_prefixes=False)
