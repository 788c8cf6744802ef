"""Planted block model of tasks: generation and closed-form affinity theory.

Tasks are linear regression problems over diffused Gaussian features. Task
label vectors cluster into C groups whose projected distances through the
hat matrix of the least-squares problem are controlled exactly: at most
``within_sep`` inside a group, at least ``between_sep`` across groups. Under
that separation the affinity matrix of the closed-form learner is provably
block-structured, which :func:`verify_block_structure` checks numerically.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, field, asdict
from math import comb

import numpy as np

from .affinity import AffinityMatrix, _aggregate
from .errors import (
    CoverageError,
    GenerationError,
    InvalidInputError,
)
from .learners import PINV_RCOND
from .tasks import TaskSet

MAX_GENERATION_RETRIES = 100
ENUMERATION_BOUND = 1_000_000
SEPARATION_SLACK = 1e-9


@dataclass(frozen=True)
class PlantedConfig:
    """Dimensions and separation targets of one synthetic instance."""

    num_tasks: int
    num_groups: int
    feature_dim: int
    num_nodes: int
    observed: int
    within_sep: float = 0.0
    between_sep: float = 1.0
    label_bound: float = 1.0
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_groups > self.num_tasks:
            raise InvalidInputError("num_groups must be <= num_tasks")
        if self.num_groups < 1:
            raise InvalidInputError("num_groups must be >= 1")
        if self.observed > self.num_nodes:
            raise InvalidInputError("observed must be <= num_nodes")
        if self.observed < 1:
            raise InvalidInputError("observed must be >= 1")
        if not 0.0 <= self.within_sep < self.between_sep:
            raise InvalidInputError("need 0 <= within_sep < between_sep")
        if self.label_bound <= 0:
            raise InvalidInputError("label_bound must be positive")
        if self.noise_std < 0:
            raise InvalidInputError("noise_std must be >= 0")


@dataclass
class PlantedInstance:
    """One generated instance with its projection matrices precomputed."""

    config: PlantedConfig
    features: np.ndarray = field(repr=False)
    diffusion: np.ndarray = field(repr=False)
    observed_rows: np.ndarray
    labels: np.ndarray = field(repr=False)
    group_of: np.ndarray
    sigma: np.ndarray = field(repr=False)
    sigma_tilde: np.ndarray = field(repr=False)


def _projection(design: np.ndarray) -> np.ndarray:
    return design @ np.linalg.pinv(design.T @ design, rcond=PINV_RCOND) @ design.T


def _random_diffusion(rng, n: int) -> np.ndarray:
    # P = I + 0.5 * sym-normalized adjacency; eigenvalues in [0.5, 1.5],
    # so P is always full rank.
    p_edge = min(1.0, 2.0 * math.log(max(n, 2)) / n)
    upper = np.triu(rng.random((n, n)) < p_edge, k=1)
    adj = (upper | upper.T).astype(float)
    deg = adj.sum(axis=1)
    inv_sqrt = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0)
    a_hat = inv_sqrt[:, None] * adj * inv_sqrt[None, :]
    return np.eye(n) + 0.5 * a_hat


def _separations(sigma, labels, group_of):
    """(max within-group, min cross-group) projected pair distance."""
    t = labels.shape[0]
    max_within, min_between = 0.0, np.inf
    for i in range(t):
        for j in range(i + 1, t):
            dist = float(np.linalg.norm(sigma @ (labels[i] - labels[j])))
            if group_of[i] == group_of[j]:
                max_within = max(max_within, dist)
            else:
                min_between = min(min_between, dist)
    return max_within, min_between


def generate(cfg: PlantedConfig) -> PlantedInstance:
    """Draw an instance satisfying the separation targets, with retries.

    Group centroids are placed on orthogonal directions inside the column
    space of the diffused design, scaled so cross-group projected distances
    clear ``between_sep`` even after within-group perturbations of norm at
    most within_sep/2. Optional noise lives in the orthogonal complement of
    the projection, so it never disturbs the separations; labels are clipped
    to the configured sup-norm bound and the separations re-verified.
    """
    if cfg.num_groups > cfg.feature_dim:
        raise InvalidInputError(
            "num_groups must be <= feature_dim (centroids are orthogonal "
            "directions of the design column space)"
        )
    rng = np.random.default_rng(cfg.seed)
    n, d, t, m = cfg.num_nodes, cfg.feature_dim, cfg.num_tasks, cfg.observed
    group_of = np.concatenate([
        np.full(len(chunk), gi, dtype=np.int64)
        for gi, chunk in enumerate(np.array_split(np.arange(t), cfg.num_groups))
    ])
    achieved = (np.inf, 0.0)
    for _ in range(MAX_GENERATION_RETRIES):
        x = rng.standard_normal((n, d))
        p = _random_diffusion(rng, n)
        design = p @ x
        sigma = _projection(design)
        rows = np.sort(rng.choice(n, size=m, replace=False))
        design_obs = p[np.ix_(rows, rows)] @ x[rows]
        sigma_tilde = _projection(design_obs)

        basis, _ = np.linalg.qr(design)  # N x d orthonormal basis of col(sigma)
        dirs, _ = np.linalg.qr(rng.standard_normal((d, d)))
        rho = (cfg.between_sep + cfg.within_sep) / math.sqrt(2.0)
        centroids = (basis @ dirs[:, :cfg.num_groups]) * rho

        labels = np.empty((t, n))
        for i in range(t):
            y = centroids[:, group_of[i]].copy()
            if cfg.within_sep > 0:
                v = rng.standard_normal(d)
                v /= np.linalg.norm(v)
                y += (basis @ v) * (0.5 * cfg.within_sep * rng.random())
            if cfg.noise_std > 0:
                g_noise = rng.standard_normal(n)
                y += cfg.noise_std * (g_noise - sigma @ g_noise)
            labels[i] = np.clip(y, -cfg.label_bound, cfg.label_bound)

        max_within, min_between = _separations(sigma, labels, group_of)
        within_ok = max_within <= cfg.within_sep + SEPARATION_SLACK
        between_ok = cfg.num_groups == 1 or min_between >= cfg.between_sep - SEPARATION_SLACK
        if within_ok and between_ok:
            return PlantedInstance(
                config=cfg, features=x, diffusion=p, observed_rows=rows,
                labels=labels, group_of=group_of, sigma=sigma,
                sigma_tilde=sigma_tilde,
            )
        achieved = (max_within, min_between)
    raise GenerationError(
        f"separation targets unreachable in {MAX_GENERATION_RETRIES} tries",
        achieved_within=achieved[0], achieved_between=achieved[1],
    )


class _TheoryEval:
    """Minimal stand-in for SubsetEvaluation used by the shared aggregator."""

    __slots__ = ("subset", "scores")

    def __init__(self, subset, scores):
        self.subset = subset
        self.scores = scores


def _subset_losses(inst: PlantedInstance, subsets):
    rows = inst.observed_rows
    m = rows.size
    y_obs = inst.labels[:, rows]
    projected = y_obs @ inst.sigma_tilde.T
    evals = []
    for subset in subsets:
        members = list(subset)
        fitted = projected[members].mean(axis=0)
        scores = {
            i: float(np.sum((fitted - y_obs[i]) ** 2)) / m
            for i in members
        }
        evals.append(_TheoryEval(tuple(members), scores))
    return evals


def theta_closed_form(inst: PlantedInstance, subsets) -> AffinityMatrix:
    """Loss-oriented affinity matrix from the closed-form learner, no training.

    theta[i, j] averages (1/m) * || sigma_tilde @ (mean of subset labels)
    - y_i ||^2 over the given subsets containing both tasks. Every pair must
    be covered; theory mode does not impute.
    """
    t = inst.config.num_tasks
    evals = _subset_losses(inst, subsets)
    theta, counts = _aggregate(evals, t)
    missing = [(int(i), int(j)) for i, j in np.argwhere(counts == 0)]
    if missing:
        raise CoverageError(
            f"{len(missing)} task pair(s) never co-sampled", uncovered=missing
        )
    return AffinityMatrix(theta, counts, orientation="loss")


def population_theta(inst: PlantedInstance, alpha: int) -> AffinityMatrix:
    """Exact affinity average over every size-alpha subset."""
    t = inst.config.num_tasks
    if not 2 <= alpha <= t:
        raise InvalidInputError(f"alpha must lie in [2, {t}]")
    total = comb(t, alpha)
    if total > ENUMERATION_BOUND:
        raise InvalidInputError(
            f"C({t},{alpha}) = {total} exceeds the enumeration bound {ENUMERATION_BOUND}"
        )
    subsets = itertools.combinations(range(t), alpha)
    return theta_closed_form(inst, subsets)


@dataclass(frozen=True)
class BlockStructureReport:
    """Per-row and global gaps between cross-group and within-group scores."""

    per_row_gaps: np.ndarray
    global_gap: float
    passed: bool


def verify_block_structure(aff: AffinityMatrix, group_of) -> BlockStructureReport:
    """Check that cross-group losses exceed within-group losses row by row.

    For each task i the row gap is (min over cross-group j' of theta[i, j'])
    minus (max over same-group j != i of theta[i, j]); the global gap is the
    minimum over rows and the check passes iff it is positive. Rows whose
    group has no other member are reported as NaN and skipped.
    """
    if aff.orientation != "loss":
        raise InvalidInputError("block structure is defined on loss-oriented scores")
    group_of = np.asarray(group_of)
    if np.unique(group_of).size < 2:
        raise InvalidInputError("block structure needs at least two groups")
    t = aff.num_tasks
    gaps = np.full(t, np.nan)
    for i in range(t):
        same = (group_of == group_of[i]) & (np.arange(t) != i)
        other = group_of != group_of[i]
        if not same.any():
            continue
        gaps[i] = float(aff.theta[i, other].min() - aff.theta[i, same].max())
    valid = gaps[~np.isnan(gaps)]
    if valid.size == 0:
        raise InvalidInputError("no task has a same-group partner")
    global_gap = float(valid.min())
    return BlockStructureReport(per_row_gaps=gaps, global_gap=global_gap,
                                passed=global_gap > 0)


@dataclass(frozen=True)
class TheoryTaskView:
    """TaskSet-shaped view whose train/val/test masks all alias one node set.

    The closed-form theory evaluates the fitted loss on the same observed
    rows it trains on, which a strict TaskSet (pairwise-disjoint masks)
    cannot express. This view satisfies the same attribute surface.
    """

    num_nodes: int
    labels: tuple
    train_mask: tuple
    val_mask: tuple
    test_mask: tuple

    @property
    def num_tasks(self) -> int:
        return len(self.labels)


def to_task_set(inst: PlantedInstance, holdout_frac: float = 0.0,
                split_seed: int = 0):
    """View the instance as tasks plus its design feature matrix.

    With holdout_frac = 0 every mask equals the observed rows (a
    TheoryTaskView), matching the theory where training loss and evaluation
    coincide. A positive fraction carves validation and test shares out of
    the observed rows into a regular TaskSet (masks shared across tasks, so
    the closed-form learner stays applicable).

    Returns (tasks, features) where features[observed_rows] is the
    restricted diffused design and other rows are zero.
    """
    if not 0.0 <= holdout_frac < 0.5:
        raise InvalidInputError("holdout_frac must lie in [0, 0.5)")
    rows = inst.observed_rows
    m = rows.size
    n = inst.config.num_nodes
    features = np.zeros((n, inst.config.feature_dim))
    features[rows] = inst.diffusion[np.ix_(rows, rows)] @ inst.features[rows]
    t = inst.config.num_tasks
    labels = tuple(inst.labels[i] for i in range(t))
    if holdout_frac == 0.0:
        masks = tuple(rows.copy() for _ in range(3))
        tasks = TheoryTaskView(
            num_nodes=n, labels=labels,
            train_mask=tuple(masks[0] for _ in range(t)),
            val_mask=tuple(masks[1] for _ in range(t)),
            test_mask=tuple(masks[2] for _ in range(t)),
        )
        return tasks, features
    perm = np.random.default_rng([inst.config.seed, split_seed]).permutation(m)
    n_val = math.ceil(holdout_frac * m)
    n_test = math.ceil(holdout_frac * m)
    val = np.sort(rows[perm[:n_val]])
    test = np.sort(rows[perm[n_val:n_val + n_test]])
    train = np.sort(rows[perm[n_val + n_test:]])
    tasks = TaskSet(
        num_nodes=n, labels=labels,
        train_mask=tuple(train for _ in range(t)),
        val_mask=tuple(val for _ in range(t)),
        test_mask=tuple(test for _ in range(t)),
    )
    return tasks, features


def save_instance(inst: PlantedInstance, out_dir) -> None:
    """Persist the instance as CSVs plus a meta.json."""
    os.makedirs(out_dir, exist_ok=True)
    np.savetxt(os.path.join(out_dir, "features.csv"), inst.features,
               delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(out_dir, "pg.csv"), inst.diffusion,
               delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(out_dir, "labels.csv"), inst.labels,
               delimiter=",", fmt="%.17g")
    max_within, min_between = _separations(inst.sigma, inst.labels, inst.group_of)
    meta = {
        "kind": "planted",
        "config": asdict(inst.config),
        "group_of": inst.group_of.tolist(),
        "observed_rows": inst.observed_rows.tolist(),
        "achieved_within": max_within,
        "achieved_between": min_between,
    }
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)


def load_instance(in_dir) -> PlantedInstance:
    """Rebuild an instance from disk, recomputing its projection matrices."""
    with open(os.path.join(in_dir, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    cfg = PlantedConfig(**meta["config"])
    x = np.loadtxt(os.path.join(in_dir, "features.csv"), delimiter=",", ndmin=2)
    p = np.loadtxt(os.path.join(in_dir, "pg.csv"), delimiter=",", ndmin=2)
    labels = np.loadtxt(os.path.join(in_dir, "labels.csv"), delimiter=",", ndmin=2)
    rows = np.asarray(meta["observed_rows"], dtype=np.int64)
    sigma = _projection(p @ x)
    sigma_tilde = _projection(p[np.ix_(rows, rows)] @ x[rows])
    return PlantedInstance(
        config=cfg, features=x, diffusion=p, observed_rows=rows, labels=labels,
        group_of=np.asarray(meta["group_of"], dtype=np.int64),
        sigma=sigma, sigma_tilde=sigma_tilde,
    )
