"""Second user level: k-means player groups and attentive group embeddings."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import diffmath as dm
from .diffmath import Parameter, Tape, Var
from .seqgraph import ActionSequence, EmptyInputError


@dataclass(eq=False)
class GroupAggParams:
    W_p: Parameter
    W_e: Parameter
    b_e_vec: Parameter
    W_b: Parameter
    b_e_scalar: Parameter

    @classmethod
    def create(cls, prefix: str, d: int, init) -> GroupAggParams:
        shapes = {"W_p": (d, d), "W_e": (d, d), "b_e_vec": (1, d), "W_b": (1, d), "b_e_scalar": (1, 1)}
        return cls(**{k: Parameter(f"{prefix}.{k}", init(f"{prefix}.{k}", s)) for k, s in shapes.items()})

    def parameters(self) -> list[Parameter]:
        return [self.W_p, self.W_e, self.b_e_vec, self.W_b, self.b_e_scalar]


@dataclass
class UserGroup:
    group_id: int
    members: tuple[int, ...]
    centroid: np.ndarray | None = None
    p_g: np.ndarray | None = None


def group_embed_batch(params: GroupAggParams, members: Var, segments, n_groups: int) -> tuple[Var, Var]:
    """Group embeddings for stacked member rows.

    ``members`` holds one member representation per row and ``segments``
    names each row's group.  Returns ``(p, beta)`` with ``p`` of shape
    ``n_groups x d`` and ``beta`` the per-member attention column.
    """
    tape = members.tape
    seg = np.asarray(segments, dtype=np.int64)
    if seg.size == 0:
        raise EmptyInputError("group has no members")
    e = dm.relu(dm.add(dm.matmul(members, dm.transpose(tape.param(params.W_e))), tape.param(params.b_e_vec)))
    beta_hat = dm.add(dm.matmul(e, dm.transpose(tape.param(params.W_b))), tape.param(params.b_e_scalar))
    beta = dm.segment_softmax(beta_hat, seg, n_groups)
    pooled = dm.segment_sum(dm.mul_rows(members, beta), seg, n_groups)
    p = dm.relu(dm.matmul(pooled, dm.transpose(tape.param(params.W_p))))
    return p, beta


def group_embed(member_reps, params: GroupAggParams) -> np.ndarray:
    """``p_g`` for a single group from its members' d-vectors."""
    x = np.asarray(member_reps, dtype=np.float64)
    if x.size == 0:
        raise EmptyInputError("group has no members")
    x = x.reshape(len(x), -1)
    tape = Tape()
    p, _ = group_embed_batch(params, tape.const(x), np.zeros(len(x), dtype=np.int64), 1)
    return p.value[0]


def attention_weights(member_reps, params: GroupAggParams) -> np.ndarray:
    x = np.asarray(member_reps, dtype=np.float64)
    x = x.reshape(len(x), -1)
    tape = Tape()
    _, beta = group_embed_batch(params, tape.const(x), np.zeros(len(x), dtype=np.int64), 1)
    return beta.value[:, 0]


# k-means


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [int(rng.integers(n))]
    closest = _sq_dists(x, x[centers]).min(axis=1)
    for _ in range(1, k):
        tot = closest.sum()
        if tot <= 0:
            # all remaining points coincide with a centre; pick any unused index
            unused = np.setdiff1d(np.arange(n), centers)
            nxt = int(unused[rng.integers(len(unused))])
        else:
            nxt = int(rng.choice(n, p=closest / tot))
        centers.append(nxt)
        closest = np.minimum(closest, _sq_dists(x, x[[nxt]])[:, 0])
    return x[centers].copy()


def kmeans_objective(x, assignments, centroids) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    diff = x - np.asarray(centroids)[np.asarray(assignments)]
    return float((diff * diff).sum())


def _repair_empty(x, assign, centroids, k):
    counts = np.bincount(assign, minlength=k)
    for j in np.flatnonzero(counts == 0):
        dist = ((x - centroids[assign]) ** 2).sum(1)
        dist[counts[assign] <= 1] = -1.0  # never empty another cluster
        far = int(np.argmax(dist))
        counts[assign[far]] -= 1
        assign[far] = j
        counts[j] = 1
        centroids[j] = x[far]
    return assign


def kmeans(features, k: int, seed: int = 0, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """k-means++ seeding followed by Lloyd iterations.

    Stops at an assignment fixpoint or after ``max_iter`` Lloyd rounds.
    Returns ``(assignments, centroids)``.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.size == 0:
        raise EmptyInputError("k-means on an empty feature set")
    x = x.reshape(len(x), -1)
    n = len(x)
    if k < 1 or k > n:
        raise ValueError(f"k={k} must be between 1 and the population size {n}")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(x, k, rng)
    assign = None
    for _ in range(max_iter):
        new = np.argmin(_sq_dists(x, centroids), axis=1)
        new = _repair_empty(x, new, centroids, k)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            centroids[j] = x[assign == j].mean(axis=0)
    return assign, centroids


def default_group_count(n_users: int) -> int:
    return max(1, math.ceil(math.sqrt(n_users / 2)))


def standardize(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    out = np.zeros_like(x)
    np.divide(x - mu, sd, out=out, where=sd > 0)
    return out


def user_features(user_table: np.ndarray, activity_counts: np.ndarray) -> np.ndarray:
    """Standardized ``[user embedding | per-task activity counts]`` rows."""
    return standardize(np.hstack([user_table, np.asarray(activity_counts, dtype=np.float64)]))


def make_groups(features, k: int, seed: int = 0, max_iter: int = 100) -> list[UserGroup]:
    """Cluster rows of ``features`` (row index = user id) into groups."""
    assign, centroids = kmeans(features, k, seed=seed, max_iter=max_iter)
    return [
        UserGroup(j, tuple(int(u) for u in np.flatnonzero(assign == j)), centroids[j].copy())
        for j in range(k)
    ]


def merge_group_sequence(sequences: Iterable[ActionSequence], group_id: int = -1) -> ActionSequence:
    """Merge member sequences in timestamp order, ties by (user, position)."""
    keyed = []
    action_type = None
    for s in sequences:
        action_type = action_type or s.action_type
        keyed.extend((t, s.user, pos, i) for pos, (i, t) in enumerate(s.actions))
    if not keyed:
        raise EmptyInputError("all member sequences are empty")
    keyed.sort()
    return ActionSequence(group_id, action_type, tuple((i, t) for t, _, _, i in keyed))


def save_groups(groups: Sequence[UserGroup], path) -> None:
    rows = sorted((g.group_id, u) for g in groups for u in g.members)
    Path(path).write_text("".join(f"{g}\t{u}\n" for g, u in rows))


def load_groups(path) -> list[UserGroup]:
    members: dict[int, list[int]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected group_id<TAB>user_id")
        try:
            g, u = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-integer id") from None
        members.setdefault(g, []).append(u)
    return [UserGroup(g, tuple(sorted(m))) for g, m in sorted(members.items())]


def groups_by_id(groups: Sequence[UserGroup]) -> Mapping[int, UserGroup]:
    return {g.group_id: g for g in groups}


def group_recommend(model, group: UserGroup, sequences: Mapping[int, ActionSequence], n: int):
    """Rank items for a group from its members' main sequences.

    ``sequences`` maps user id to that user's main-task sequence.
    """
    from .multitask import recommend_group

    merged = merge_group_sequence(
        [sequences[u] for u in sorted(group.members) if u in sequences and len(sequences[u])],
        group.group_id,
    )
    return recommend_group(model, merged, group.members, n)
