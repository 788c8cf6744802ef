"""Sparse undirected graphs, diffusion operators, and personalized PageRank.

The graph is immutable after construction: adjacency lives in CSR form,
node ids are remapped to 0..N-1, and an id map back to the original labels
is kept so external annotations can be joined again later.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import (
    ConvergenceError,
    EmptyDomainError,
    InvalidInputError,
    ParseError,
)

log = logging.getLogger(__name__)

PPR_MAX_ITER = 1000
PPR_DEFAULT_TOL = 1e-10

OPERATOR_KINDS = ("row-normalized", "symmetric-normalized", "ppr")


@dataclass(frozen=True)
class DiffusionOperator:
    """Configuration of a graph diffusion operator.

    kind: one of ``row-normalized``, ``symmetric-normalized``, ``ppr``.
    num_hops: default stacking depth for SIGN-style feature diffusion.
    teleport: restart probability, used by the ``ppr`` kind only.
    """

    kind: str = "row-normalized"
    num_hops: int = 1
    teleport: float = 0.15

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise InvalidInputError(f"unknown operator kind {self.kind!r}")
        if self.num_hops < 0:
            raise InvalidInputError("num_hops must be >= 0")
        if not 0.0 < self.teleport <= 1.0:
            raise InvalidInputError("teleport must lie in (0, 1]")


@dataclass(frozen=True)
class Graph:
    """Immutable undirected graph with dense node features.

    ``adj`` is a symmetric CSR matrix without self-loops, node ids run
    0..num_nodes-1, and ``orig_ids[i]`` is the external label of node i
    (identity when the graph was built from already-contiguous ids).
    """

    num_nodes: int
    adj: sparse.csr_matrix
    node_features: np.ndarray
    orig_ids: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.node_features.shape[0] != self.num_nodes:
            raise InvalidInputError(
                f"feature matrix has {self.node_features.shape[0]} rows, "
                f"expected {self.num_nodes}"
            )
        if self.orig_ids is None:
            object.__setattr__(self, "orig_ids", np.arange(self.num_nodes))

    @property
    def num_edges(self) -> int:
        """Number of undirected edges (each stored twice in adj)."""
        return self.adj.nnz // 2

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    def id_map(self) -> dict:
        """Map from original external id to internal contiguous id."""
        return {int(orig): i for i, orig in enumerate(self.orig_ids)}

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adj.sum(axis=1)).ravel()

    def with_features(self, features: np.ndarray) -> "Graph":
        """Return a copy of this graph carrying the given feature matrix."""
        features = np.asarray(features, dtype=float)
        if features.ndim != 2 or features.shape[0] != self.num_nodes:
            raise InvalidInputError(
                f"features must be a {self.num_nodes}-row matrix, got shape "
                f"{features.shape}"
            )
        return Graph(self.num_nodes, self.adj, features, self.orig_ids)


def build_graph(edges, num_nodes=None, features=None, orig_ids=None) -> Graph:
    """Construct a Graph from an iterable of (u, v) pairs with internal ids.

    Duplicate edges and self-loops are dropped. When ``num_nodes`` is None it
    is inferred as max id + 1.
    """
    seen = set()
    max_id = -1
    for u, v in edges:
        max_id = max(max_id, u, v)
        if u == v:
            continue
        seen.add((u, v) if u < v else (v, u))
    if num_nodes is None:
        num_nodes = max_id + 1
    if num_nodes <= 0:
        raise InvalidInputError("graph has no nodes")
    if seen:
        arr = np.array(sorted(seen), dtype=np.int64)
        rows = np.concatenate([arr[:, 0], arr[:, 1]])
        cols = np.concatenate([arr[:, 1], arr[:, 0]])
        data = np.ones(rows.shape[0])
        adj = sparse.csr_matrix((data, (rows, cols)), shape=(num_nodes, num_nodes))
    else:
        adj = sparse.csr_matrix((num_nodes, num_nodes))
    if features is None:
        features = np.zeros((num_nodes, 0))
    return Graph(num_nodes, adj, np.asarray(features, dtype=float), orig_ids)


def load_edge_list(path, idmap_path=None) -> Graph:
    """Load a SNAP-style edge list: one "u v" pair per line, '#' comments.

    Node ids are remapped to a contiguous 0..N-1 range in order of first
    appearance. When ``idmap_path`` is given, the original-to-internal map is
    persisted there as JSON so external labels can be joined back later.
    """
    remap = {}
    edges = []
    n_self = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected two node ids, got {line!r}", lineno)
            try:
                u_raw, v_raw = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"non-integer node id in {line!r}", lineno) from None
            u = remap.setdefault(u_raw, len(remap))
            v = remap.setdefault(v_raw, len(remap))
            if u == v:
                n_self += 1
                continue
            edges.append((u, v))
    if not remap:
        raise InvalidInputError(f"edge list {path} holds no edges")
    if n_self:
        log.warning("dropped %d self-loop(s) while loading %s", n_self, path)
    orig_ids = np.empty(len(remap), dtype=np.int64)
    for orig, internal in remap.items():
        orig_ids[internal] = orig
    g = build_graph(edges, num_nodes=len(remap), orig_ids=orig_ids)
    if idmap_path is not None:
        with open(idmap_path, "w", encoding="utf-8") as fh:
            json.dump({str(int(o)): i for i, o in enumerate(orig_ids)}, fh,
                      sort_keys=True, indent=0)
    return g


def save_edge_list(g: Graph, path) -> None:
    """Write the graph as "u v" lines using original node ids."""
    coo = sparse.triu(g.adj, k=1).tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in zip(coo.row, coo.col):
            fh.write(f"{int(g.orig_ids[u])} {int(g.orig_ids[v])}\n")


def load_features_csv(path, num_nodes) -> np.ndarray:
    """Read an N x d headerless CSV whose row order is the internal node id."""
    feats = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    if feats.shape[0] != num_nodes:
        raise InvalidInputError(
            f"feature file {path} has {feats.shape[0]} rows, expected {num_nodes}"
        )
    return feats


def _row_normalized(g: Graph) -> sparse.csr_matrix:
    # Isolated nodes become self-loop rows so the operator stays stochastic.
    deg = g.degrees()
    isolated = np.where(deg == 0)[0]
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    p = sparse.diags(inv) @ g.adj
    if isolated.size:
        p = (p + sparse.csr_matrix(
            (np.ones(isolated.size), (isolated, isolated)),
            shape=(g.num_nodes, g.num_nodes),
        )).tocsr()
    return p.tocsr()


def _sym_normalized(g: Graph) -> sparse.csr_matrix:
    deg = g.degrees()
    inv_sqrt = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0)
    d = sparse.diags(inv_sqrt)
    return (d @ g.adj @ d).tocsr()


def _ppr_matrix(g: Graph, teleport: float) -> np.ndarray:
    # Dense solve; row i holds the PPR weights of a walk restarted at i.
    p = _row_normalized(g).toarray()
    n = g.num_nodes
    return teleport * np.linalg.solve(np.eye(n) - (1.0 - teleport) * p, np.eye(n)).T


def operator_matrix(g: Graph, op: DiffusionOperator):
    """Materialize the operator as a matrix acting on node-indexed rows."""
    if op.kind == "row-normalized":
        return _row_normalized(g)
    if op.kind == "symmetric-normalized":
        return _sym_normalized(g)
    return _ppr_matrix(g, op.teleport)


def diffuse_features(g: Graph, op: DiffusionOperator, hops: int) -> np.ndarray:
    """Stack [X, PX, P^2 X, ..., P^hops X] column blocks (SIGN-style).

    Hop 0 equals the raw feature matrix exactly; block order follows hop
    index, so the hops=h output is a column-prefix of the hops=h+1 output.
    """
    if hops < 0:
        raise InvalidInputError("hops must be >= 0")
    p = operator_matrix(g, op)
    blocks = [g.node_features]
    cur = g.node_features
    for _ in range(hops):
        cur = np.asarray(p @ cur)
        blocks.append(cur)
    return np.hstack(blocks)


def personalized_pagerank(g: Graph, seeds, teleport: float,
                          tol: float = PPR_DEFAULT_TOL) -> np.ndarray:
    """Power-iterate r = teleport*s + (1-teleport)*P^T r to a fixed point.

    ``s`` is uniform over the seed set. Raises ConvergenceError with the last
    L1 residual if the iteration cap is hit.
    """
    seeds = np.asarray(sorted(set(int(s) for s in seeds)), dtype=np.int64)
    if seeds.size == 0:
        raise InvalidInputError("seed set must be nonempty")
    if seeds.min() < 0 or seeds.max() >= g.num_nodes:
        raise InvalidInputError("seed id out of range")
    if not 0.0 < teleport <= 1.0:
        raise InvalidInputError("teleport must lie in (0, 1]")
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    s = np.zeros(g.num_nodes)
    s[seeds] = 1.0 / seeds.size
    if teleport == 1.0:
        return s
    pt = _row_normalized(g).T.tocsr()
    r = s.copy()
    residual = math.inf
    for _ in range(PPR_MAX_ITER):
        r_next = teleport * s + (1.0 - teleport) * (pt @ r)
        residual = float(np.abs(r_next - r).sum())
        r = r_next
        if residual < tol:
            return r
    raise ConvergenceError("personalized PageRank did not converge", residual)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(u @ v / (nu * nv))


def ppr_group_similarity(g: Graph, tasks, grouping, teleport: float = 0.15,
                         tol: float = PPR_DEFAULT_TOL):
    """Mean pairwise PPR cosine similarity within vs. between task groups.

    Each task's PPR vector is seeded at its positively-labeled training
    nodes. A pair of tasks counts as "within" when the two tasks share at
    least one group; every unordered pair is counted once. A side with no
    pairs is returned as None.
    """
    groups = getattr(grouping, "groups", grouping)
    num_tasks = tasks.num_tasks
    vectors = []
    for i in range(num_tasks):
        mask = tasks.train_mask[i]
        seeds = mask[tasks.labels[i][mask] == 1]
        if seeds.size == 0:
            raise InvalidInputError(f"task {i} has no positive training nodes")
        vectors.append(personalized_pagerank(g, seeds, teleport, tol))
    member_groups = [set() for _ in range(num_tasks)]
    for gi, members in enumerate(groups):
        for t in members:
            member_groups[t].add(gi)
    within, between = [], []
    for i in range(num_tasks):
        for j in range(i + 1, num_tasks):
            sim = _cosine(vectors[i], vectors[j])
            if member_groups[i] & member_groups[j]:
                within.append(sim)
            else:
                between.append(sim)
    if not within and not between:
        raise EmptyDomainError("no task pairs to compare")
    within_mean = float(np.mean(within)) if within else None
    between_mean = float(np.mean(between)) if between else None
    return within_mean, between_mean
