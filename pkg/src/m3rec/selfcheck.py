"""Gradient and oracle self-tests runnable without pytest (``m3rec check``)."""
from __future__ import annotations

import math

import numpy as np

from . import diffmath as dm
from .evaluation import hr_at_n, mrr_at_n, ndcg_at_n
from .grouping import attention_weights
from .multitask import Example, TaskSpec, init_model, joint_loss
from .seqgraph import build_graph


def micro_model(seed: int = 0):
    tasks = [
        TaskSpec("download", "item", "main"),
        TaskSpec("category", "category", "auxiliary", 0.5),
        TaskSpec("friend", "user", "auxiliary", 0.7),
        TaskSpec("group", "item", "auxiliary", 0.3, "group"),
    ]
    return init_model({"item": 8, "category": 5, "user": 6}, 4, tasks, seed=seed)


def micro_batches(seed: int = 0):
    rng = np.random.default_rng(seed)

    def seqs(vocab, k):
        return [
            Example(tuple(int(x) for x in rng.integers(vocab, size=rng.integers(1, 5))), int(rng.integers(vocab)))
            for _ in range(k)
        ]

    groups = [
        Example(tuple(int(x) for x in rng.integers(8, size=4)), int(rng.integers(8)), (0, 2, 5)),
        Example((3, 1, 3, 6), 2, (1,)),
    ]
    return {"download": seqs(8, 3), "category": seqs(5, 3), "friend": seqs(6, 3), "group": groups}


def gradient_check(seed: int = 0, eps: float = 1e-4) -> float:
    """Worst relative gradient error of the full joint loss on the micro model."""
    model = micro_model(seed)
    batches = micro_batches(seed)
    return dm.finite_diff_check(lambda tape: joint_loss(model, batches, tape=tape)[0], model.parameters(), eps)


def edge_oracle(ids):
    """Connection matrices from explicit edge enumeration."""
    nodes = list(dict.fromkeys(ids))
    n = len(nodes)
    edges = set()
    for a, b in zip(ids, ids[1:]):
        edges.add((nodes.index(a), nodes.index(b)))
    a_out = np.zeros((n, n))
    a_in = np.zeros((n, n))
    for u in range(n):
        outs = [v for (x, v) in edges if x == u]
        ins = [x for (x, v) in edges if v == u]
        for v in outs:
            a_out[u, v] = 1.0 / len(outs)
        for x in ins:
            a_in[u, x] = 1.0 / len(ins)
    return nodes, a_out, a_in


def connection_check(n_random: int = 1000, seed: int = 0) -> bool:
    g = build_graph([1, 2, 3, 2, 4])
    ok = np.array_equal(g.a_out[1], [0, 0, 0.5, 0.5]) and np.array_equal(g.a_in[1], [0.5, 0, 0.5, 0])
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        ids = [int(x) for x in rng.integers(0, rng.integers(1, 10), size=rng.integers(1, 12))]
        g = build_graph(ids)
        nodes, a_out, a_in = edge_oracle(ids)
        ok &= list(g.nodes) == nodes and np.array_equal(g.a_out, a_out) and np.array_equal(g.a_in, a_in)
        ok &= g.nodes[g.last_node_index] == ids[-1]
    return bool(ok)


def brute_metrics(rank, n):
    if rank is None or rank > n:
        return 0.0, 0.0, 0.0
    return 1.0, 1.0 / rank, 1.0 / math.log2(rank + 1)


def metric_check(n_cases: int = 10_000, seed: int = 0) -> bool:
    rng = np.random.default_rng(seed)
    ranks = [None if rng.random() < 0.1 else int(rng.integers(1, 30)) for _ in range(n_cases)]
    ok = True
    prev = None
    for n in range(1, 21):
        hr, mrr, ndcg = hr_at_n(ranks, n), mrr_at_n(ranks, n), ndcg_at_n(ranks, n)
        sums = np.zeros(3)
        for r in ranks:
            sums += brute_metrics(r, n)
        ok &= bool(np.allclose([hr, mrr, ndcg], sums / n_cases, rtol=0, atol=1e-12))
        if n == 1:
            ok &= hr == mrr == ndcg
        if prev is not None:
            ok &= all(a >= b for a, b in zip((hr, mrr, ndcg), prev))
        prev = (hr, mrr, ndcg)
    return bool(ok)


def attention_check(seed: int = 0) -> bool:
    model = micro_model(seed)
    x = np.random.default_rng(seed).normal(size=(5, 4))
    beta = attention_weights(x, model.group)
    perm = attention_weights(x[[4, 2, 0, 3, 1]], model.group)
    return abs(beta.sum() - 1.0) <= 1e-12 and np.allclose(perm, beta[[4, 2, 0, 3, 1]], atol=1e-12)


def run_all(stream=print) -> bool:
    results = []
    err = gradient_check()
    results.append(("gradient oracle (max rel err < 1e-4)", err < 1e-4, f"{err:.2e}"))
    results.append(("connection matrix oracle", connection_check(), ""))
    results.append(("metric oracle", metric_check(), ""))
    results.append(("group attention invariants", attention_check(), ""))
    for name, ok, extra in results:
        stream(f"{'PASS' if ok else 'FAIL'}\t{name}" + (f"\t{extra}" if extra else ""))
    return all(ok for _, ok, _ in results)

