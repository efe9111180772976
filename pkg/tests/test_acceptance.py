"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from m3rec import datagen
from m3rec.checkpoint import from_bytes, to_bytes
from m3rec.diffmath import finite_diff_check
from m3rec.evaluation import hr_at_n, mrr_at_n, ndcg_at_n
from m3rec.experiments import BenefitConfig, multitask_benefit, overfit
from m3rec.grouping import UserGroup, attention_weights, group_embed, group_recommend, kmeans
from m3rec.multitask import TaskSpec, init_model, joint_loss, recommend
from m3rec.selfcheck import brute_metrics, edge_oracle, micro_batches, micro_model
from m3rec.seqgraph import ActionSequence, build_graph
from m3rec.train import GROUP_TASK, TrainConfig, build_groups, build_model, evaluate, train


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail=""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else ""))
        assert ok, f"{name}: {detail}"

    return emit


def test_1_gradient_oracle(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(3):
        model = micro_model(seed)
        batches = micro_batches(seed)
        f = lambda tape: joint_loss(model, batches, tape=tape)[0]  # noqa: E731
        worst = max(worst, finite_diff_check(f, model.parameters()))
    secs = time.perf_counter() - t0
    verdict("1 gradient oracle", worst < 1e-4 and secs < 60, f"max rel err {worst:.2e}, {secs:.1f}s")


def test_2_connection_matrix_oracle(verdict):
    g = build_graph([1, 2, 3, 2, 4])
    fig = (
        g.nodes == (1, 2, 3, 4)
        and np.array_equal(g.a_out[1], [0, 0, 0.5, 0.5])
        and np.array_equal(g.a_in[1], [0.5, 0, 0.5, 0])
        and g.nodes[g.last_node_index] == 4
    )
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        ids = [int(x) for x in rng.integers(0, rng.integers(1, 12), size=rng.integers(1, 15))]
        g = build_graph(ids)
        nodes, a_out, a_in = edge_oracle(ids)
        ok = list(g.nodes) == nodes and np.array_equal(g.a_out, a_out) and np.array_equal(g.a_in, a_in)
        mismatches += not ok
    verdict("2 connection-matrix oracle", fig and mismatches == 0, f"example ok={fig}, {mismatches}/1000 mismatches")


def test_3_degenerate_configuration_equivalence(verdict):
    ds, _ = datagen.split(datagen.generate(datagen.WorldConfig(n_users=200, n_items=50, seed=11)))
    cfg = TrainConfig(learning_rate=5e-3, batch_size=32, epochs=3, seed=11)
    zeros = {t.task_id: 0.0 for t in ds.tasks if t.role == "auxiliary"} | {GROUP_TASK: 0.0}

    def trace(model):
        names = ["emb.item"] + [p.name for p in model.task_parameters("download")]
        out = []
        train(model, ds, cfg, callback=lambda e, m: out.append([m.named_parameters()[n].value.copy() for n in names]))
        return out

    multi = trace(build_model(ds, d=16, seed=11, weights=zeros))
    single = trace(init_model(ds.vocab_sizes, 16, [TaskSpec("download", "item", "main")], seed=11))
    diff = max(float(np.max(np.abs(a - b))) for ea, eb in zip(multi, single) for a, b in zip(ea, eb))
    moved = float(np.max(np.abs(multi[-1][0] - multi[0][0])))
    verdict("3 degenerate-configuration equivalence", diff <= 1e-12 and moved > 0, f"max abs diff {diff:.1e}")


def test_4_overfit_sanity(verdict):
    t0 = time.perf_counter()
    epochs, hr = overfit(n_seqs=50, vocab=20, d=32, max_epochs=500)
    secs = time.perf_counter() - t0
    verdict("4 overfit sanity", hr >= 0.95 and secs < 120, f"train HR@1 {hr:.3f} after {epochs} epochs, {secs:.1f}s")


def test_5_directional_multitask_benefit(verdict):
    res = multitask_benefit(BenefitConfig())
    main, full = res.mean_hr10("main"), res.mean_hr10("all")
    shares = res.shares()
    best = res.best_counts()
    table = ", ".join(f"{k} {v:.3f}" for k, v in shares.items())
    wins = ", ".join(f"{k} {v}" for k, v in best.items())
    verdict(
        "5 directional multi-task benefit",
        full >= main and res.seconds < 900,
        f"HR@10 all {full:.4f} vs main {main:.4f}, delta {full - main:+.4f}; "
        f"top-3 share: {table}; strict wins: {wins}; {res.seconds:.0f}s",
    )


def test_6_metric_oracle(verdict):
    rng = np.random.default_rng(77)
    ranks = [None if rng.random() < 0.15 else int(rng.integers(1, 40)) for _ in range(10_000)]
    exact, identity, monotone = True, True, True
    prev = None
    for n in range(1, 41):
        got = (hr_at_n(ranks, n), mrr_at_n(ranks, n), ndcg_at_n(ranks, n))
        want = tuple(math.fsum(brute_metrics(r, n)[k] for r in ranks) / len(ranks) for k in range(3))
        exact &= got == want
        if n == 1:
            identity &= got[0] == got[1] == got[2]
        per_case = [brute_metrics(r, n) for r in ranks]
        if prev is not None:
            monotone &= all(a[k] >= b[k] for a, b in zip(per_case, prev) for k in range(3))
        prev = per_case
    verdict("6 metric oracle", exact and identity and monotone,
            f"exact={exact} HR@1=MRR@1=NDCG@1={identity} monotone={monotone}")


def test_7_group_level_invariants(verdict):
    model = micro_model(5)
    rng = np.random.default_rng(5)
    beta_err, perm_err = 0.0, 0.0
    for k in range(1, 12):
        x = rng.normal(size=(k, 4)) * 2
        beta_err = max(beta_err, abs(attention_weights(x, model.group).sum() - 1.0))
        p = rng.permutation(k)
        perm_err = max(perm_err, float(np.max(np.abs(group_embed(x[p], model.group) - group_embed(x, model.group)))))
    for q in model.group.parameters():
        q.value[...] = 0.0
    s = ActionSequence(2, "download", ((3, 1), (1, 2), (3, 3), (6, 4)))
    same = group_recommend(model, UserGroup(0, (2,)), {2: s}, 8) == recommend(model, "download", s, 8)
    pure = 0
    for seed in range(5):
        r = np.random.default_rng(seed)
        a = r.normal(size=(50, 4))
        b = r.normal(size=(50, 4)) + 10.0 * np.eye(4)[seed % 4]
        assign, _ = kmeans(np.vstack([a, b]), 2, seed=seed)
        pure += len(set(assign[:50])) == 1 and len(set(assign[50:])) == 1 and assign[0] != assign[50]
    ok = beta_err <= 1e-12 and perm_err <= 1e-12 and same and pure == 5
    verdict("7 group-level invariants", ok,
            f"|sum beta - 1| {beta_err:.1e}, perm diff {perm_err:.1e}, fusion equal={same}, purity {pure}/5 seeds")


def test_8_determinism_and_persistence(verdict, tmp_path):
    world = datagen.WorldConfig(n_users=80, n_items=30, seed=8)

    def run():
        ds = datagen.generate(world)
        train_ds, test = datagen.split(ds)
        model = build_model(train_ds, d=8, seed=8)
        groups = build_groups(model, train_ds, seed=8)
        train(model, train_ds, TrainConfig(learning_rate=5e-3, batch_size=16, epochs=2, seed=8), groups=groups)
        return ds, model, evaluate(model, test).to_tsv()

    ds1, m1, tsv1 = run()
    ds2, m2, tsv2 = run()
    same_ckpt = to_bytes(m1) == to_bytes(m2)
    same_tsv = tsv1 == tsv2
    back = from_bytes(to_bytes(m1))
    ckpt_rt = to_bytes(back) == to_bytes(m1) and all(
        p.value.tobytes() == back.named_parameters()[n].value.tobytes() for n, p in m1.named_parameters().items()
    )
    datagen.save(ds1, tmp_path / "d")
    ds_rt = datagen.load(tmp_path / "d") == ds1 == ds2
    verdict("8 determinism & persistence", same_ckpt and same_tsv and ckpt_rt and ds_rt,
            f"checkpoints={same_ckpt} tables={same_tsv} ckpt round-trip={ckpt_rt} dataset round-trip={ds_rt}")
