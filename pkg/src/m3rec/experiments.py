"""Runnable experiments: per-setting multi-task comparison and the overfit probe."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import datagen
from .evaluation import MetricReport, hr_at_n, share_table, top3_share
from .diffmath import Tape
from .multitask import Adam, Example, TaskSpec, init_model, joint_loss
from .train import GROUP_TASK, TrainConfig, build_groups, build_model, evaluate, example_ranks, train

log = logging.getLogger(__name__)

# tasks switched on in each setting; "all" also trains the group level
SETTINGS = {
    "main": ("download",),
    "main+category": ("download", "category"),
    "main+friend": ("download", "friend"),
    "all": ("download", "category", "play", "friend", GROUP_TASK),
}


@dataclass
class BenefitConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    n_users: int = 2000
    n_items: int = 200
    n_categories: int = 7
    rho: float = 0.9
    dim: int = 32
    epochs: int = 16
    learning_rate: float = 5e-3
    batch_size: int = 128
    ns: tuple[int, ...] = tuple(range(1, 11))
    settings: dict[str, tuple[str, ...]] = field(default_factory=lambda: dict(SETTINGS))


@dataclass
class BenefitResult:
    reports: dict[int, dict[str, MetricReport]]
    hr10: dict[str, list[float]]
    seconds: float

    def mean_hr10(self, setting: str) -> float:
        return float(np.mean(self.hr10[setting]))

    def shares(self, task: str = "download") -> dict[str, float]:
        """Top-3 share per setting over every (seed, metric, n) instance of ``task``."""
        table = {}
        for seed, reps in self.reports.items():
            for inst, row in share_table(list(reps.values()), task).items():
                table[(seed,) + inst] = row
        return top3_share(table)

    def best_counts(self, task: str = "download") -> dict[str, int]:
        """How often each setting is strictly best on a (seed, metric, n) instance."""
        counts = {s: 0 for s in self.hr10}
        for reps in self.reports.values():
            for row in share_table(list(reps.values()), task).values():
                top = max(row.values())
                winners = [s for s, v in row.items() if v == top]
                if len(winners) == 1:
                    counts[winners[0]] += 1
        return counts


def run_setting(ds: datagen.Dataset, active, cfg: BenefitConfig, seed: int) -> MetricReport:
    train_ds, test = datagen.split(ds)
    all_tasks = [t.task_id for t in ds.tasks] + [GROUP_TASK]
    weights = {t: (1.0 if t in active else 0.0) for t in all_tasks}
    model = build_model(train_ds, d=cfg.dim, seed=seed, weights=weights, group_task=True)
    tc = TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size, epochs=cfg.epochs, seed=seed)
    groups = build_groups(model, train_ds, seed=seed) if GROUP_TASK in active else None
    model, _ = train(model, train_ds, tc, groups=groups)
    main = model.main_task.task_id
    return evaluate(model, {main: test[main]}, cfg.ns)


def multitask_benefit(cfg: BenefitConfig | None = None) -> BenefitResult:
    cfg = cfg or BenefitConfig()
    t0 = time.perf_counter()
    reports: dict[int, dict[str, MetricReport]] = {}
    hr10: dict[str, list[float]] = {s: [] for s in cfg.settings}
    for seed in cfg.seeds:
        ds = datagen.generate(datagen.WorldConfig(
            n_users=cfg.n_users, n_items=cfg.n_items, n_categories=cfg.n_categories, rho=cfg.rho, seed=seed,
        ))
        reports[seed] = {}
        for name, active in cfg.settings.items():
            rep = run_setting(ds, active, cfg, seed)
            rep.setting = name
            reports[seed][name] = rep
            hr10[name].append(rep.values[("download", "HR", 10)])
            log.info("seed %d %s HR@10 %.4f", seed, name, hr10[name][-1])
    return BenefitResult(reports, hr10, time.perf_counter() - t0)


def overfit_sequences(n_seqs: int = 50, vocab: int = 20, seed: int = 0, length=(3, 8)):
    """Random item sequences whose last item is the training target."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_seqs):
        ids = rng.integers(vocab, size=int(rng.integers(length[0], length[1] + 1)))
        out.append(Example(tuple(int(x) for x in ids[:-1]), int(ids[-1])))
    return out


def overfit(
    n_seqs: int = 50, vocab: int = 20, d: int = 32, max_epochs: int = 500, lr: float = 1e-2, seed: int = 0,
    target: float = 0.95,
):
    """Train the main task alone on a tiny pool until train HR@1 reaches ``target``.

    Returns (epochs used, final train HR@1).  Each epoch is one full batch.
    """
    model = init_model({"item": vocab, "category": 1, "user": 1}, d, [TaskSpec("download", "item", "main")], seed)
    task = model.main_task
    pool = overfit_sequences(n_seqs, vocab, seed)
    opt = Adam(model.parameters(), lr)
    hr = 0.0
    for epoch in range(1, max_epochs + 1):
        model.zero_grads()
        tape = Tape()
        loss, _ = joint_loss(model, {"download": pool}, tape=tape)
        tape.backward(loss)
        opt.step()
        if epoch % 5 == 0 or epoch == max_epochs:
            hr = hr_at_n(example_ranks(model, task, pool).tolist(), 1)
            if hr >= target:
                return epoch, hr
    return max_epochs, hr
