"""Single-truth top-n metrics and the top-3 share score across settings."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

METRICS = ("HR", "MRR", "NDCG")


@dataclass(frozen=True)
class RankedCase:
    ranked: tuple[int, ...]
    truth: int

    def __post_init__(self):
        if len(set(self.ranked)) != len(self.ranked):
            raise ValueError("ranked ids must be unique")


def rank_of_truth(case: RankedCase) -> int | None:
    """1-based position of the truth, or ``None`` when it is not ranked."""
    try:
        return case.ranked.index(case.truth) + 1
    except ValueError:
        return None


def _ranks(cases) -> np.ndarray:
    """Ranks as floats with ``inf`` for a miss; accepts cases or raw ranks."""
    cases = list(cases)
    if not cases:
        raise ValueError("no cases to evaluate")
    if isinstance(cases[0], RankedCase):
        cases = [rank_of_truth(c) for c in cases]
    return np.array([math.inf if r is None else float(r) for r in cases])


def _check_n(n):
    if n < 1:
        raise ValueError("cutoff n must be >= 1")


def _mean(x: np.ndarray) -> float:
    # correctly rounded, so results do not depend on summation order
    return math.fsum(x.tolist()) / x.size


def hr_at_n(cases, n: int) -> float:
    _check_n(n)
    r = _ranks(cases)
    return _mean((r <= n).astype(np.float64))


def mrr_at_n(cases, n: int) -> float:
    _check_n(n)
    r = _ranks(cases)
    return _mean(np.where(r <= n, 1.0 / r, 0.0))


def ndcg_at_n(cases, n: int) -> float:
    _check_n(n)
    r = _ranks(cases)
    hit = r <= n
    gain = np.zeros_like(r)
    gain[hit] = 1.0 / np.log2(r[hit] + 1.0)
    return _mean(gain)


METRIC_FUNCS = {"HR": hr_at_n, "MRR": mrr_at_n, "NDCG": ndcg_at_n}


def ranks_from_logits(logits: np.ndarray, targets) -> np.ndarray:
    """Rank of each target under descending-logit order with ties by ascending id."""
    logits = np.atleast_2d(logits)
    t = np.asarray(targets, dtype=np.int64)
    truth = logits[np.arange(len(t)), t][:, None]
    ids = np.arange(logits.shape[1])[None, :]
    ahead = (logits > truth) | ((logits == truth) & (ids < t[:, None]))
    return ahead.sum(axis=1) + 1


@dataclass
class MetricReport:
    """values[(task, metric, n)] -> value; counts[task] -> number of cases."""

    setting: str = "default"
    values: dict[tuple[str, str, int], float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def add_task(self, task: str, ranks, ns: Iterable[int]) -> None:
        ranks = list(ranks)
        self.counts[task] = len(ranks)
        for n in ns:
            for m in METRICS:
                self.values[(task, m, n)] = METRIC_FUNCS[m](ranks, n)

    def to_tsv(self, header: bool = True) -> str:
        buf = io.StringIO()
        if header:
            buf.write("setting\ttask\tmetric\tn\tvalue\n")
        for (task, m, n), v in self.values.items():
            buf.write(f"{self.setting}\t{task}\t{m}\t{n}\t{v:.6f}\n")
        return buf.getvalue()


def parse_tsv(text: str) -> list[tuple[str, str, str, int, float]]:
    rows = []
    for line in text.splitlines():
        if not line or line.startswith("setting\t"):
            continue
        s, t, m, n, v = line.split("\t")
        rows.append((s, t, m, int(n), float(v)))
    return rows


def top3_share(table: Mapping[object, Mapping[str, float]]) -> dict[str, float]:
    """Share of top-3 placements per setting.

    ``table`` maps each metric instance (e.g. ``("HR", 5)``) to
    ``{setting: value}``.  Settings tied with the third-best value are all
    marked, so an instance can contribute more than three marks.
    """
    if not table:
        raise ValueError("empty result table")
    counts: dict[str, int] = {}
    for inst, row in table.items():
        if len(row) < 3:
            raise ValueError(f"metric instance {inst!r} compares fewer than 3 settings")
        third = sorted(row.values(), reverse=True)[2]
        for s, v in row.items():
            counts.setdefault(s, 0)
            if v >= third:
                counts[s] += 1
    total = sum(counts.values())
    return {s: c / total for s, c in counts.items()}


def share_table(reports: Sequence[MetricReport], task: str | None = None) -> dict:
    """Pivot reports into the ``instance -> {setting: value}`` form for :func:`top3_share`."""
    table: dict = {}
    for rep in reports:
        for (t, m, n), v in rep.values.items():
            if task is None or t == task:
                table.setdefault((t, m, n), {})[rep.setting] = v
    return table
