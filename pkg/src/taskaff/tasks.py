"""Node-labeling tasks: community ingestion and train/val/test splits."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, ShortfallError
from .graphs import Graph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitPolicy:
    """Sampling fractions for per-task splits.

    Train positives/negatives are sized relative to the community, the
    validation pool relative to the remaining nodes.
    """

    train_pos_frac: float = 0.1
    train_neg_frac: float = 0.1
    val_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("train_pos_frac", "train_neg_frac", "val_frac"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise InvalidInputError(f"{name} must lie in (0, 1), got {v}")
        if self.train_pos_frac + self.val_frac >= 1.0:
            raise InvalidInputError("train_pos_frac + val_frac must be < 1")


@dataclass(frozen=True)
class TaskSet:
    """T node-labeling tasks over one graph.

    labels[i] is a length-N vector (binary 0/1 for communities, real for
    synthetic regression tasks); masks are sorted arrays of node ids,
    pairwise disjoint within each task.
    """

    num_nodes: int
    labels: tuple
    train_mask: tuple
    val_mask: tuple
    test_mask: tuple

    def __post_init__(self):
        n_t = len(self.labels)
        if not (len(self.train_mask) == len(self.val_mask) == len(self.test_mask) == n_t):
            raise InvalidInputError("per-task arrays have inconsistent lengths")
        for i in range(n_t):
            if self.labels[i].shape[0] != self.num_nodes:
                raise InvalidInputError(f"task {i}: label vector length mismatch")
            tr, va, te = set(self.train_mask[i]), set(self.val_mask[i]), set(self.test_mask[i])
            if tr & va or tr & te or va & te:
                raise InvalidInputError(f"task {i}: masks are not pairwise disjoint")
            for mask in (self.train_mask[i], self.val_mask[i], self.test_mask[i]):
                if mask.size and (mask.min() < 0 or mask.max() >= self.num_nodes):
                    raise InvalidInputError(f"task {i}: mask node id out of range")

    @property
    def num_tasks(self) -> int:
        return len(self.labels)


def load_communities(path, g: Graph, top_k: int):
    """Read a SNAP cmty file and keep the top_k largest communities.

    One community per line, whitespace-separated member ids. Ids are
    remapped through the graph's id map; members absent from the graph are
    dropped (a warning reports how many). Raises ShortfallError when fewer
    than top_k communities remain.
    """
    id_map = g.id_map()
    communities = []
    dropped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            members = []
            for tok in line.split():
                internal = id_map.get(int(tok))
                if internal is None:
                    dropped += 1
                else:
                    members.append(internal)
            if members:
                communities.append(np.array(sorted(set(members)), dtype=np.int64))
    if dropped:
        log.warning("dropped %d community member(s) absent from the graph", dropped)
    if len(communities) < top_k:
        raise ShortfallError(f"requested top {top_k} communities", len(communities))
    communities.sort(key=lambda c: -c.size)
    return communities[:top_k]


def make_splits(communities, g: Graph, policy: SplitPolicy) -> TaskSet:
    """Build one binary task per community with disjoint train/val/test masks.

    Per task: ceil(train_pos_frac*|C|) training positives from the community,
    ceil(train_neg_frac*|C|) training negatives from outside it, then a
    val_frac share of the remaining nodes as validation and the rest as test.
    Deterministic under (policy.seed, task index). Communities smaller than
    two nodes are rejected with a warning.
    """
    n = g.num_nodes
    all_nodes = np.arange(n)
    labels, trains, vals, tests = [], [], [], []
    for idx, comm in enumerate(communities):
        if comm.size < 2:
            log.warning("task %d rejected: community has %d node(s)", idx, comm.size)
            continue
        outside = np.setdiff1d(all_nodes, comm, assume_unique=False)
        if outside.size == 0:
            log.warning("task %d rejected: no negative pool", idx)
            continue
        rng = np.random.default_rng([policy.seed, idx])
        n_pos = math.ceil(policy.train_pos_frac * comm.size)
        n_neg = min(math.ceil(policy.train_neg_frac * comm.size), outside.size)
        train = np.concatenate([
            rng.choice(comm, size=n_pos, replace=False),
            rng.choice(outside, size=n_neg, replace=False),
        ])
        rest = np.setdiff1d(all_nodes, train)
        n_val = math.ceil(policy.val_frac * rest.size)
        val = rng.choice(rest, size=n_val, replace=False)
        test = np.setdiff1d(rest, val)
        y = np.zeros(n)
        y[comm] = 1.0
        labels.append(y)
        trains.append(np.sort(train))
        vals.append(np.sort(val))
        tests.append(np.sort(test))
    if not labels:
        raise InvalidInputError("no usable communities after filtering")
    return TaskSet(n, tuple(labels), tuple(trains), tuple(vals), tuple(tests))


def save_task_set(tasks: TaskSet, path) -> None:
    """Persist a binary TaskSet as a JSON manifest of node-id arrays."""
    payload = {
        "num_nodes": tasks.num_nodes,
        "tasks": [
            {
                "positives": np.flatnonzero(tasks.labels[i] == 1).tolist(),
                "train": tasks.train_mask[i].tolist(),
                "val": tasks.val_mask[i].tolist(),
                "test": tasks.test_mask[i].tolist(),
            }
            for i in range(tasks.num_tasks)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_task_set(path) -> TaskSet:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    n = payload["num_nodes"]
    labels, trains, vals, tests = [], [], [], []
    for rec in payload["tasks"]:
        y = np.zeros(n)
        y[np.asarray(rec["positives"], dtype=np.int64)] = 1.0
        labels.append(y)
        trains.append(np.asarray(rec["train"], dtype=np.int64))
        vals.append(np.asarray(rec["val"], dtype=np.int64))
        tests.append(np.asarray(rec["test"], dtype=np.int64))
    return TaskSet(n, tuple(labels), tuple(trains), tuple(vals), tuple(tests))
