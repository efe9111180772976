"""Multi-task model: shared embedding tables, one GGS-NN unit per task."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import diffmath as dm
from .diffmath import Parameter, Tape, Var
from .ggsnn import AttentionReadout, GGSNNUnit, project, propagate, readout, score
from .grouping import GroupAggParams, group_embed_batch
from .seqgraph import ActionSequence, GraphBatch, SequenceGraph, build_graph

VOCAB_KINDS = ("item", "category", "user")
ROLES = ("main", "auxiliary")
LEVELS = ("user", "group")


class VocabularyError(LookupError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    vocab_kind: str
    role: str = "auxiliary"
    weight: float = 1.0
    # "group" tasks run the main unit on merged member sequences
    level: str = "user"

    def __post_init__(self):
        if self.vocab_kind not in VOCAB_KINDS:
            raise ValueError(f"task {self.task_id}: unknown vocab kind {self.vocab_kind!r}")
        if self.role not in ROLES:
            raise ValueError(f"task {self.task_id}: unknown role {self.role!r}")
        if self.level not in LEVELS:
            raise ValueError(f"task {self.task_id}: unknown level {self.level!r}")
        if not np.isfinite(self.weight) or self.weight < 0:
            raise ValueError(f"task {self.task_id}: weight must be finite and non-negative")
        if self.level == "group" and self.vocab_kind != "item":
            raise ValueError(f"group task {self.task_id} must predict items")


def uniform_init(seed: int, d: int):
    """Per-parameter generator keyed on (seed, name), so adding tasks never shifts other draws."""
    bound = 1.0 / np.sqrt(d)

    def init(name: str, shape: tuple) -> np.ndarray:
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        return rng.uniform(-bound, bound, size=shape)

    return init


@dataclass(eq=False)
class SharedEmbeddings:
    item_table: Parameter
    category_table: Parameter
    user_table: Parameter

    def table(self, kind: str) -> Parameter:
        return {"item": self.item_table, "category": self.category_table, "user": self.user_table}[kind]


@dataclass(eq=False)
class M3RecModel:
    d: int
    n_layers: int
    vocab_sizes: dict[str, int]
    tasks: tuple[TaskSpec, ...]
    seed: int
    max_len: int
    embeddings: SharedEmbeddings
    units: dict[str, GGSNNUnit]
    readouts: dict[str, AttentionReadout]
    group: GroupAggParams | None = None
    _by_id: dict[str, TaskSpec] = field(init=False, repr=False)

    def __post_init__(self):
        self._by_id = {t.task_id: t for t in self.tasks}

    @property
    def main_task(self) -> TaskSpec:
        return next(t for t in self.tasks if t.role == "main")

    def task(self, task_id: str | TaskSpec) -> TaskSpec:
        if isinstance(task_id, TaskSpec):
            return task_id
        try:
            return self._by_id[task_id]
        except KeyError:
            raise VocabularyError(f"unknown task {task_id!r}") from None

    def unit_of(self, task: TaskSpec) -> tuple[GGSNNUnit, AttentionReadout]:
        key = self.main_task.task_id if task.level == "group" else task.task_id
        return self.units[key], self.readouts[key]

    def parameters(self) -> list[Parameter]:
        e = self.embeddings
        ps = [e.item_table, e.category_table, e.user_table]
        for t in self.tasks:
            if t.task_id in self.units:
                ps += self.units[t.task_id].parameters() + self.readouts[t.task_id].parameters()
        if self.group is not None:
            ps += self.group.parameters()
        return ps

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def task_parameters(self, task_id: str) -> list[Parameter]:
        """Parameters owned by one task's unit and readout (not the shared tables)."""
        return self.units[task_id].parameters() + self.readouts[task_id].parameters()

    def zero_grads(self) -> None:
        dm.zero_grads(self.parameters())


def init_model(
    vocab_sizes: Mapping[str, int],
    d: int,
    tasks: Sequence[TaskSpec],
    seed: int = 0,
    n_layers: int = 1,
    max_len: int = 50,
) -> M3RecModel:
    if d < 1:
        raise ValueError("embedding width d must be >= 1")
    ids = [t.task_id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate task ids in {ids}")
    if sum(t.role == "main" for t in tasks) != 1:
        raise ValueError("exactly one main task is required")
    main = next(t for t in tasks if t.role == "main")
    if main.level != "user":
        raise ValueError("the main task must be an individual-level task")
    sizes = {k: int(vocab_sizes.get(k, 0)) for k in VOCAB_KINDS}
    for t in tasks:
        if sizes[t.vocab_kind] < 1:
            raise ValueError(f"task {t.task_id}: {t.vocab_kind} vocabulary is empty")
    if any(t.level == "group" for t in tasks) and sizes["user"] < 1:
        raise ValueError("group task needs a user vocabulary")
    init = uniform_init(seed, d)
    emb = SharedEmbeddings(
        *(Parameter(f"emb.{k}", init(f"emb.{k}", (max(sizes[k], 1), d))) for k in VOCAB_KINDS)
    )
    units, readouts = {}, {}
    for t in tasks:
        if t.level == "user":
            units[t.task_id] = GGSNNUnit.create(f"{t.task_id}.unit", d, n_layers, init)
            readouts[t.task_id] = AttentionReadout.create(f"{t.task_id}.readout", d, init)
    group = None
    if any(t.level == "group" for t in tasks):
        group = GroupAggParams.create("group.agg", d, init)
    return M3RecModel(d, n_layers, sizes, tuple(tasks), seed, max_len, emb, units, readouts, group)


@dataclass(frozen=True)
class Example:
    """Input ids, the next id to predict, and (group tasks) the member users."""

    inputs: tuple[int, ...]
    target: int
    members: tuple[int, ...] = ()
    owner: int = -1


def _check_ids(model: M3RecModel, task: TaskSpec, ids, what="id") -> None:
    size = model.vocab_sizes[task.vocab_kind]
    for i in ids:
        if not 0 <= i < size:
            raise VocabularyError(f"{what} {i} is not in the {task.vocab_kind} vocabulary of task {task.task_id!r}")


def graph_for(model: M3RecModel, task: TaskSpec, ids: Sequence[int]) -> SequenceGraph:
    ids = tuple(ids)[-model.max_len:]
    _check_ids(model, task, ids)
    return build_graph(ids)


def batch_logits(
    model: M3RecModel,
    tape: Tape,
    task: TaskSpec,
    graphs: Sequence[SequenceGraph],
    members: Sequence[Sequence[int]] | None = None,
) -> Var:
    """Logits (one row per graph) over the task's vocabulary."""
    unit, ro = model.unit_of(task)
    batch = GraphBatch(graphs)
    table = tape.param(model.embeddings.table(task.vocab_kind))
    h = propagate(batch, dm.take_rows(table, batch.node_ids), unit)
    s_g, h_l = readout(batch, h, ro)
    q = project(s_g, h_l, ro)
    if task.level == "group":
        q = dm.add(q, _group_rows(model, tape, members))
    return score(q, table)


def _group_rows(model: M3RecModel, tape: Tape, members) -> Var:
    if members is None or any(len(m) == 0 for m in members):
        raise ValueError("group task needs a non-empty member list per example")
    flat = np.array([u for m in members for u in m], dtype=np.int64)
    seg = np.repeat(np.arange(len(members)), [len(m) for m in members])
    users = tape.param(model.embeddings.user_table)
    p, _ = group_embed_batch(model.group, dm.take_rows(users, flat), seg, len(members))
    return p


def forward_task(model: M3RecModel, task, s: ActionSequence | Sequence[int]) -> np.ndarray:
    task = model.task(task)
    if task.level == "group":
        raise ValueError("use forward_group for group-level tasks")
    ids = s.ids if isinstance(s, ActionSequence) else tuple(s)
    logits = batch_logits(model, Tape(), task, [graph_for(model, task, ids)])
    return logits.value[0]


def forward_group(model: M3RecModel, merged: ActionSequence, members: Sequence[int], task=None) -> np.ndarray:
    task = model.task(task) if task is not None else _group_task(model)
    _check_user_ids(model, members)
    g = graph_for(model, task, merged.ids)
    return batch_logits(model, Tape(), task, [g], [tuple(members)]).value[0]


def _group_task(model: M3RecModel) -> TaskSpec:
    for t in model.tasks:
        if t.level == "group":
            return t
    raise VocabularyError("model has no group-level task")


def _check_user_ids(model: M3RecModel, users) -> None:
    for u in users:
        if not 0 <= u < model.vocab_sizes["user"]:
            raise VocabularyError(f"user {u} is not in the user vocabulary")


def examples_loss(model: M3RecModel, tape: Tape, task: TaskSpec, examples: Sequence[Example], graphs=None) -> Var:
    if graphs is None:
        graphs = [graph_for(model, task, ex.inputs) for ex in examples]
    targets = np.array([ex.target for ex in examples], dtype=np.int64)
    _check_ids(model, task, targets, "target")
    members = [ex.members for ex in examples] if task.level == "group" else None
    logits = batch_logits(model, tape, task, graphs, members)
    return dm.softmax_cross_entropy(logits, targets)


def task_loss(model: M3RecModel, task, examples: Sequence[Example], tape: Tape | None = None) -> Var:
    """Summed cross-entropy of one task over a batch of examples."""
    return examples_loss(model, tape or Tape(), model.task(task), examples)


def joint_loss(
    model: M3RecModel,
    batches: Mapping[str, Sequence[Example]],
    weights: Mapping[str, float] | Sequence[float] | None = None,
    tape: Tape | None = None,
    graphs: Mapping[str, Sequence[SequenceGraph]] | None = None,
) -> tuple[Var, dict[str, float]]:
    """Weighted sum of task losses; zero-weight tasks are not evaluated.

    Returns the loss Var and the per-task (unweighted) loss values.
    """
    tape = tape or Tape()
    if weights is None:
        w = {t.task_id: t.weight for t in model.tasks}
    elif isinstance(weights, Mapping):
        w = {t.task_id: float(weights.get(t.task_id, t.weight)) for t in model.tasks}
    else:
        weights = list(weights)
        if len(weights) != len(model.tasks):
            raise ValueError(f"{len(weights)} weights for {len(model.tasks)} tasks")
        w = {t.task_id: float(x) for t, x in zip(model.tasks, weights)}
    total, parts = None, {}
    for t in model.tasks:
        if w[t.task_id] == 0.0 or not batches.get(t.task_id):
            continue
        g = graphs.get(t.task_id) if graphs else None
        lt = examples_loss(model, tape, t, batches[t.task_id], g)
        parts[t.task_id] = lt.item()
        term = lt if w[t.task_id] == 1.0 else dm.scale(lt, w[t.task_id])
        total = term if total is None else dm.add(total, term)
    if total is None:
        total = tape.const(0.0)
    return total, parts


def rank_ids(logits: np.ndarray, n: int) -> list[tuple[int, float]]:
    """Descending logit, ties by ascending id."""
    if n < 1:
        raise ValueError("n must be >= 1")
    order = np.argsort(-np.asarray(logits), kind="stable")[:n]
    return [(int(i), float(logits[i])) for i in order]


def recommend(model: M3RecModel, task, s: ActionSequence | Sequence[int], n: int) -> list[tuple[int, float]]:
    return rank_ids(forward_task(model, task, s), n)


def recommend_group(model: M3RecModel, merged: ActionSequence, members: Sequence[int], n: int, task=None):
    return rank_ids(forward_group(model, merged, members, task), n)


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    """One bias-corrected Adam update of each parameter from its ``.grad``.

    ``state`` maps parameter name to ``(m, v)`` and is updated in place.
    """
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p in params:
        m, v = state.setdefault(p.name, (np.zeros_like(p.value), np.zeros_like(p.value)))
        if m.shape != p.value.shape:
            raise dm.DimensionError(f"Adam state for {p.name} has shape {m.shape}")
        g = p.grad
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.t = 0

    def step(self):
        self.t += 1
        adam_step(self.params, self.state, self.lr, self.beta1, self.beta2, self.eps, self.t)
