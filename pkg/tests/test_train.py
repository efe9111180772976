import numpy as np
import pytest

from m3rec import datagen
from m3rec.datagen import Dataset, WorldConfig
from m3rec.experiments import overfit_sequences
from m3rec.multitask import TaskSpec, init_model
from m3rec.seqgraph import ActionSequence
from m3rec.train import (
    GROUP_TASK,
    TrainConfig,
    build_groups,
    build_model,
    effective_weights,
    evaluate,
    group_examples,
    group_test_cases,
    history_tsv,
    sequence_examples,
    task_pools,
    train,
)

WORLD = WorldConfig(n_users=40, n_items=15, seed=2)


def small():
    train_ds, test = datagen.split(datagen.generate(WORLD))
    return train_ds, test


def main_params(model):
    return {p.name: p.value.copy() for p in [model.embeddings.item_table] + model.task_parameters("download")}


def trace(model, ds, cfg):
    out = []
    train(model, ds, cfg, callback=lambda epoch, m: out.append(main_params(m)))
    return out


def test_zero_aux_weights_reproduce_single_task_trajectory():
    ds, _ = small()
    cfg = TrainConfig(learning_rate=1e-2, batch_size=16, epochs=4, seed=3)
    zeros = {t.task_id: 0.0 for t in ds.tasks if t.role == "auxiliary"} | {GROUP_TASK: 0.0}
    multi = build_model(ds, d=8, seed=3, weights=zeros)
    single = init_model(ds.vocab_sizes, 8, [TaskSpec("download", "item", "main")], seed=3)
    a, b = trace(multi, ds, cfg), trace(single, ds, cfg)
    assert len(a) == 4
    for ea, eb in zip(a, b):
        assert ea.keys() == eb.keys()
        assert max(np.max(np.abs(ea[k] - eb[k])) for k in ea) <= 1e-12
    assert any(np.any(a[0][k] != a[-1][k]) for k in a[0])


def test_history_is_deterministic_and_finite():
    ds, _ = small()
    cfg = TrainConfig(learning_rate=5e-3, batch_size=16, epochs=2, seed=1)
    h1 = train(build_model(ds, d=8, seed=1), ds, cfg)[1]
    h2 = train(build_model(ds, d=8, seed=1), ds, cfg)[1]
    assert h1 == h2
    assert all(np.isfinite(v) for rec in h1 for k, v in rec.items() if k != "epoch")
    assert {"loss.download", "loss.category", "loss.play", "loss.friend", f"loss.{GROUP_TASK}"} <= set(h1[0])
    text = history_tsv(h1)
    assert text.splitlines()[0].startswith("epoch\tjoint") and len(text.splitlines()) == 3


def overfit_dataset(held_out: bool = False):
    """The overfit pool as a dataset; ``held_out`` appends one action for the split to remove."""
    seqs = {}
    for u, ex in enumerate(overfit_sequences()):
        ids = ex.inputs + (ex.target,) + ((0,) if held_out else ())
        seqs[u] = ActionSequence(u, "download", tuple((i, t) for t, i in enumerate(ids)))
    return Dataset(50, 20, 1, (0,) * 20, datagen.default_tasks(["download"]), {"download": seqs})


def test_overfit_fixture_loss_drops():
    ds = overfit_dataset()
    model = build_model(ds, d=32, seed=0, group_task=False)
    _, hist = train(model, ds, TrainConfig(learning_rate=1e-2, epochs=150, seed=0))
    assert hist[-1]["joint"] < 0.05 * hist[0]["joint"]
    report = evaluate(model, {"download": sequence_examples(ds.sequences["download"])}, [1])
    assert report.values[("download", "HR", 1)] >= 0.95


def test_effective_weights_and_pools():
    ds, _ = small()
    model = build_model(ds, d=4, seed=0, weights={"play": 0.0})
    cfg = TrainConfig(weights={"friend": 0.25})
    w = effective_weights(model, cfg)
    assert w["play"] == 0.0 and w["friend"] == 0.25 and w[GROUP_TASK] == pytest.approx(2 / 3)
    groups = build_groups(model, ds, 3, 0)
    pools = task_pools(model, ds, cfg, groups)
    assert "play" not in pools and len(pools["download"]) == 40
    with pytest.raises(ValueError):
        effective_weights(model, TrainConfig(weights={"rating": 1.0}))
    with pytest.raises(ValueError):
        task_pools(model, ds, cfg, None)


def test_empty_pool_for_weighted_task_is_an_error():
    ds, _ = small()
    ds.sequences["friend"] = {}
    model = build_model(ds, d=4, seed=0, group_task=False)
    with pytest.raises(ValueError, match="friend"):
        train(model, ds, TrainConfig(epochs=1))


def test_augmented_examples_cover_every_prefix():
    s = {0: ActionSequence(0, "download", ((4, 0), (5, 1), (6, 2)))}
    assert [(e.inputs, e.target) for e in sequence_examples(s)] == [((4, 5), 6)]
    assert [(e.inputs, e.target) for e in sequence_examples(s, augment=True)] == [((4,), 5), ((4, 5), 6)]
    assert [e.inputs for e in sequence_examples(s, augment=True, max_len=1)] == [(4,), (5,)]


def test_group_examples():
    ds, _ = small()
    model = build_model(ds, d=4, seed=0)
    groups = build_groups(model, ds, 4, 0)
    assert sorted(u for g in groups for u in g.members) == list(range(40))
    train_cases = group_examples(ds, groups)
    test_cases = group_test_cases(ds, groups)
    assert len(test_cases) == len(groups)
    total = sum(len(ds.sequences["download"][u]) for u in range(40))
    assert len(train_cases) == total - len(groups)
    for ex in test_cases:
        assert ex.members == tuple(sorted(groups[ex.owner].members))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0).validate()


def test_main_task_weight_zero_is_rejected():
    ds, _ = small()
    model = build_model(ds, d=4, seed=0, group_task=False)
    with pytest.raises(ValueError):
        train(model, ds, TrainConfig(epochs=1, weights={"download": 0.0}))
