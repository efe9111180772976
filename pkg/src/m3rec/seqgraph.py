"""Action sequences and their unique-node session graphs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffmath as dm


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True)
class ActionSequence:
    """Time-ordered actions of one action type for one user (or group).

    ``actions`` is a tuple of ``(vocab_id, timestamp)`` pairs.
    """

    user: int
    action_type: str
    actions: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple((int(i), int(t)) for i, t in self.actions))
        ts = [t for _, t in self.actions]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError(
                f"timestamps decrease in {self.action_type} sequence of user {self.user}"
            )

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.actions)

    def __len__(self):
        return len(self.actions)


@dataclass(frozen=True, eq=False)
class SequenceGraph:
    nodes: tuple[int, ...]
    last_node_index: int
    a_out: np.ndarray
    a_in: np.ndarray

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def connection(self) -> np.ndarray:
        """``[A_out | A_in]``, shape ``n x 2n``."""
        return np.hstack([self.a_out, self.a_in])


def build_graph(s: ActionSequence | Sequence[int]) -> SequenceGraph:
    ids = s.ids if isinstance(s, ActionSequence) else tuple(int(i) for i in s)
    if not ids:
        raise EmptyInputError("cannot build a graph from an empty sequence")
    index: dict[int, int] = {}
    for i in ids:
        index.setdefault(i, len(index))
    n = len(index)
    edges = {(index[u], index[v]) for u, v in zip(ids, ids[1:])}
    a_out = np.zeros((n, n))
    a_in = np.zeros((n, n))
    for u, v in edges:
        a_out[u, v] = 1.0
        a_in[v, u] = 1.0
    for a in (a_out, a_in):
        deg = a.sum(axis=1, keepdims=True)
        np.divide(a, deg, out=a, where=deg > 0)
    return SequenceGraph(tuple(index), index[ids[-1]], a_out, a_in)


class GraphBatch:
    """Several graphs whose node rows are stacked into one ``N x d`` matrix.

    Row ``k`` belongs to graph ``segment[k]`` at local position ``local[k]``.
    """

    def __init__(self, graphs: Sequence[SequenceGraph]):
        if not graphs:
            raise EmptyInputError("empty graph batch")
        self.graphs = list(graphs)
        self.size = len(graphs)
        sizes = np.array([g.n for g in graphs])
        self.n_max = int(sizes.max())
        self.offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.segment = np.repeat(np.arange(self.size), sizes)
        self.local = np.concatenate([np.arange(k) for k in sizes])
        self.node_ids = np.array([v for g in graphs for v in g.nodes], dtype=np.int64)
        self.last_rows = self.offsets + np.array([g.last_node_index for g in graphs])
        self.a_out = np.zeros((self.size, self.n_max, self.n_max))
        self.a_in = np.zeros((self.size, self.n_max, self.n_max))
        for b, g in enumerate(graphs):
            self.a_out[b, : g.n, : g.n] = g.a_out
            self.a_in[b, : g.n, : g.n] = g.a_in

    @property
    def n_rows(self) -> int:
        return self.node_ids.size


def _gather_rows(batch: GraphBatch, h: np.ndarray):
    pad = np.zeros((batch.size, batch.n_max, h.shape[1]))
    pad[batch.segment, batch.local] = h
    out = np.matmul(batch.a_out, pad)[batch.segment, batch.local]
    inn = np.matmul(batch.a_in, pad)[batch.segment, batch.local]
    return np.hstack([out, inn])


def gather_batch(batch: GraphBatch, h: dm.Var, b: dm.Var | None = None) -> dm.Var:
    """Tape op: row k of the result is ``(A_out_k · H) ⊕ (A_in_k · H) (+ b)``."""
    if h.shape[0] != batch.n_rows:
        raise dm.DimensionError(
            f"gather: graph batch has {batch.n_rows} nodes, H has {h.shape[0]} rows"
        )
    d = h.shape[1]
    out = dm.Var(_gather_rows(batch, h.value), h.tape)

    def bw(g):
        pad = np.zeros((batch.size, batch.n_max, 2 * d))
        pad[batch.segment, batch.local] = g
        gh = np.matmul(batch.a_out.transpose(0, 2, 1), pad[..., :d])
        gh += np.matmul(batch.a_in.transpose(0, 2, 1), pad[..., d:])
        h._accum(gh[batch.segment, batch.local])

    c = h.tape.record(out, bw)
    return c if b is None else dm.add(c, b)


def gather(g: SequenceGraph, h, b=None) -> np.ndarray:
    """Plain-array gather for a single graph: ``C = [A_out H | A_in H] + b``."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != g.n:
        raise dm.DimensionError(f"gather: graph has {g.n} nodes, H has shape {h.shape}")
    c = np.hstack([g.a_out @ h, g.a_in @ h])
    if b is not None:
        c = c + np.asarray(b, dtype=np.float64).reshape(1, -1)
    return c
