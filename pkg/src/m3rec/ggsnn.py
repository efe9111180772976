"""Gated graph layers, soft-attention readout and vocabulary scoring.

All functions work on a :class:`~m3rec.seqgraph.GraphBatch`, keeping one
node state per row, so ``W c`` for a node becomes ``C @ W.T`` for the batch.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffmath as dm
from .diffmath import Parameter, Tape, Var
from .seqgraph import GraphBatch, SequenceGraph, gather_batch

Init = Callable[[str, tuple], np.ndarray]


@dataclass(eq=False)
class GGSNNLayer:
    W_z: Parameter
    W_r: Parameter
    W_h: Parameter
    V_z: Parameter
    V_r: Parameter
    V_h: Parameter
    b: Parameter

    @classmethod
    def create(cls, prefix: str, d: int, init: Init) -> GGSNNLayer:
        ps = {}
        for k in ("W_z", "W_r", "W_h"):
            ps[k] = Parameter(f"{prefix}.{k}", init(f"{prefix}.{k}", (d, 2 * d)))
        for k in ("V_z", "V_r", "V_h"):
            ps[k] = Parameter(f"{prefix}.{k}", init(f"{prefix}.{k}", (d, d)))
        ps["b"] = Parameter(f"{prefix}.b", init(f"{prefix}.b", (1, 2 * d)))
        return cls(**ps)

    def parameters(self) -> list[Parameter]:
        return [self.W_z, self.W_r, self.W_h, self.V_z, self.V_r, self.V_h, self.b]


@dataclass(eq=False)
class GGSNNUnit:
    d: int
    layers: list[GGSNNLayer]

    @classmethod
    def create(cls, prefix: str, d: int, n_layers: int, init: Init) -> GGSNNUnit:
        if n_layers < 1:
            raise ValueError("a GGS-NN unit needs at least one layer")
        return cls(d, [GGSNNLayer.create(f"{prefix}.layer{l}", d, init) for l in range(n_layers)])

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass(eq=False)
class AttentionReadout:
    g: Parameter  # d x 1
    W1: Parameter
    W2: Parameter
    c_att: Parameter  # 1 x d
    W3: Parameter  # d x 2d

    @classmethod
    def create(cls, prefix: str, d: int, init: Init) -> AttentionReadout:
        shapes = {"g": (d, 1), "W1": (d, d), "W2": (d, d), "c_att": (1, d), "W3": (d, 2 * d)}
        return cls(**{k: Parameter(f"{prefix}.{k}", init(f"{prefix}.{k}", s)) for k, s in shapes.items()})

    def parameters(self) -> list[Parameter]:
        return [self.g, self.W1, self.W2, self.c_att, self.W3]


def _lin(tape: Tape, x: Var, w: Parameter) -> Var:
    return dm.matmul(x, dm.transpose(tape.param(w)))


def unit_step(batch: GraphBatch, h: Var, layer: GGSNNLayer) -> Var:
    tape = h.tape
    d = h.shape[1]
    if layer.V_z.shape != (d, d):
        raise dm.DimensionError(f"layer expects width {layer.V_z.shape[0]}, H has width {d}")
    c = gather_batch(batch, h, tape.param(layer.b))
    z = dm.sigmoid(dm.add(_lin(tape, c, layer.W_z), _lin(tape, h, layer.V_z)))
    r = dm.sigmoid(dm.add(_lin(tape, c, layer.W_r), _lin(tape, h, layer.V_r)))
    cand = dm.tanh(dm.add(_lin(tape, c, layer.W_h), _lin(tape, dm.hadamard(r, h), layer.V_h)))
    return dm.add(dm.hadamard(dm.one_minus(z), h), dm.hadamard(z, cand))


def propagate(batch: GraphBatch, h0: Var, unit: GGSNNUnit) -> Var:
    h = h0
    for layer in unit.layers:
        h = unit_step(batch, h, layer)
    return h


def readout(batch: GraphBatch, h: Var, ro: AttentionReadout) -> tuple[Var, Var]:
    """Return ``(s_g, h_l)``, one row per graph.

    The attention weights are used as computed, without normalisation.
    """
    tape = h.tape
    h_last = dm.take_rows(h, batch.last_rows)
    h_last_per_node = dm.take_rows(h_last, batch.segment)
    pre = dm.add(dm.add(_lin(tape, h_last_per_node, ro.W1), _lin(tape, h, ro.W2)), tape.param(ro.c_att))
    alpha = dm.matmul(dm.sigmoid(pre), tape.param(ro.g))
    s_g = dm.segment_sum(dm.mul_rows(h, alpha), batch.segment, batch.size)
    return s_g, h_last


def project(s_g: Var, h_l: Var, ro: AttentionReadout) -> Var:
    """``W3 (s_g ⊕ h_l)``, one row per graph."""
    return _lin(s_g.tape, dm.hcat(s_g, h_l), ro.W3)


def score(query: Var, table: Var) -> Var:
    """Logits ``<query_b, v_j>`` for every vocabulary row ``j``."""
    if query.shape[1] != table.shape[1]:
        raise dm.DimensionError(f"score: query {query.shape} vs table {table.shape}")
    return dm.matmul(query, dm.transpose(table))


# single-graph conveniences on plain arrays


def step_graph(g: SequenceGraph, h: np.ndarray, layer: GGSNNLayer) -> np.ndarray:
    tape = Tape()
    return unit_step(GraphBatch([g]), tape.const(h), layer).value


def propagate_graph(g: SequenceGraph, h0: np.ndarray, unit: GGSNNUnit) -> np.ndarray:
    tape = Tape()
    return propagate(GraphBatch([g]), tape.const(h0), unit).value


def readout_graph(g: SequenceGraph, h: np.ndarray, ro: AttentionReadout, last_node_index=None):
    idx = g.last_node_index if last_node_index is None else last_node_index
    if not 0 <= idx < g.n:
        raise IndexError(f"last node index {idx} out of range for {g.n} nodes")
    if idx != g.last_node_index:
        g = SequenceGraph(g.nodes, idx, g.a_out, g.a_in)
    tape = Tape()
    s_g, h_l = readout(GraphBatch([g]), tape.const(h), ro)
    return s_g.value[0], h_l.value[0]


def score_vectors(s_g, h_l, w3, table) -> np.ndarray:
    q = np.asarray(w3) @ np.concatenate([np.ravel(s_g), np.ravel(h_l)])
    return np.asarray(table, dtype=np.float64) @ q
