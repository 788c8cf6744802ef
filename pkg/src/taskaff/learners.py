"""Multitask learners: closed-form linear fits and a shared-encoder MLP.

The linear learner minimizes the mean squared error of one shared weight
vector against the average label of the subset's tasks, which is the
quadratic problem the affinity theory analyzes. The MLP learner is a shared
encoder with one output head per task, trained by full-batch gradient
descent on the unweighted mean of per-task losses.

All metrics returned by :func:`evaluate` are oriented higher-is-better;
losses are negated.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, TrainingError

log = logging.getLogger(__name__)

PINV_RCOND = 1e-10

LEARNER_KINDS = ("closed-form-linear", "shared-encoder-mlp")
METRICS = ("negative-cross-entropy", "negative-mse", "f1")

_PROB_EPS = 1e-12


@dataclass(frozen=True)
class LearnerSpec:
    """Hyperparameters of one learner configuration."""

    kind: str = "closed-form-linear"
    hidden_width: int = 64
    hidden_layers: int = 1
    learning_rate: float = 0.05
    epochs: int = 500
    ridge: float = 0.0
    metric: str = "negative-cross-entropy"

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise InvalidInputError(f"unknown learner kind {self.kind!r}")
        if self.metric not in METRICS:
            raise InvalidInputError(f"unknown metric {self.metric!r}")
        if self.kind == "shared-encoder-mlp":
            if self.hidden_width < 1:
                raise InvalidInputError("hidden_width must be >= 1 for the mlp kind")
            if self.hidden_layers < 0:
                raise InvalidInputError("hidden_layers must be >= 0")
        if self.ridge < 0:
            raise InvalidInputError("ridge must be >= 0")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")

    def train_loss_kind(self) -> str:
        # Probabilistic metrics train with cross-entropy, regression with MSE.
        return "mse" if self.metric == "negative-mse" else "bce"


@dataclass
class MtlModel:
    """A trained multitask model plus the feature matrix it was fit on.

    Linear kind: a single shared weight vector, usable for any task.
    MLP kind: shared encoder layers plus one head per subset member.
    """

    kind: str
    subset: tuple
    seed: int
    features: np.ndarray = field(repr=False)
    weights: np.ndarray | None = None
    encoder: list | None = None
    heads: dict | None = None
    loss_kind: str = "bce"
    monotone_loss: bool = True

    def raw_scores(self, rows: np.ndarray, task_id: int) -> np.ndarray:
        """Pre-link model outputs at the given node rows."""
        x = self.features[rows]
        if self.kind == "closed-form-linear":
            return x @ self.weights
        if task_id not in self.heads:
            raise InvalidInputError(f"model has no head for task {task_id}")
        h = _encode(self.encoder, x)
        w, b = self.heads[task_id]
        return h @ w + b


@dataclass(frozen=True)
class SubsetEvaluation:
    """Scores f_i(S) for every task i of one trained subset S."""

    subset: tuple
    scores: dict
    metric: str
    seed: int

    def __post_init__(self):
        if set(self.scores) != set(self.subset):
            raise InvalidInputError("scores must be keyed exactly by subset members")


def fit_closed_form(features, labels, ridge: float = 0.0) -> np.ndarray:
    """Least-squares fit of one weight vector against the mean label.

    Solves (Z^T Z + ridge*I)^+ Z^T ybar where Z is the (already diffused)
    design matrix and ybar the mean of the given label vectors. With
    ridge=0 the Moore-Penrose pseudo-inverse is used, truncating singular
    values below PINV_RCOND relative to the largest.
    """
    z = np.asarray(features, dtype=float)
    if z.ndim != 2:
        raise InvalidInputError("features must be a 2-D matrix")
    m = z.shape[0]
    stack = []
    for y in labels:
        y = np.asarray(y, dtype=float)
        if y.shape != (m,):
            raise InvalidInputError(
                f"label vector shape {y.shape} does not match {m} feature rows"
            )
        stack.append(y)
    if not stack:
        raise InvalidInputError("at least one label vector is required")
    if ridge < 0:
        raise InvalidInputError("ridge must be >= 0")
    ybar = np.mean(stack, axis=0)
    gram = z.T @ z
    rhs = z.T @ ybar
    if ridge > 0:
        return np.linalg.solve(gram + ridge * np.eye(gram.shape[0]), rhs)
    return np.linalg.pinv(gram, rcond=PINV_RCOND) @ rhs


def _canonical_subset(subset, num_tasks):
    ids = sorted(set(int(i) for i in subset))
    if not ids:
        raise InvalidInputError("subset must be nonempty")
    if ids[0] < 0 or ids[-1] >= num_tasks:
        raise InvalidInputError(f"task id out of range in subset {ids}")
    return tuple(ids)


def _init_params(rng, in_dim, spec: LearnerSpec, subset):
    encoder = []
    fan_in = in_dim
    for _ in range(spec.hidden_layers):
        w = rng.normal(0.0, np.sqrt(2.0 / max(fan_in, 1)), size=(fan_in, spec.hidden_width))
        encoder.append([w, np.zeros(spec.hidden_width)])
        fan_in = spec.hidden_width
    heads = {}
    for tid in subset:
        heads[tid] = [rng.normal(0.0, np.sqrt(1.0 / max(fan_in, 1)), size=fan_in), 0.0]
    return encoder, heads


def _encode(encoder, x):
    h = x
    for w, b in encoder:
        h = np.maximum(h @ w + b, 0.0)
    return h


def _forward_backward(encoder, heads, x, task_rows, task_labels, loss_kind):
    """Loss and gradients of the mean per-task loss at the current params.

    ``x`` holds the feature rows for the union of train masks; task_rows
    maps each task to its positions inside that union.
    """
    acts = [x]
    pre = []
    h = x
    for w, b in encoder:
        a = h @ w + b
        pre.append(a)
        h = np.maximum(a, 0.0)
        acts.append(h)
    n_tasks = len(task_rows)
    top = acts[-1]
    d_top = np.zeros_like(top)
    g_heads = {}
    total = 0.0
    for tid, rows in task_rows.items():
        w, b = heads[tid]
        y = task_labels[tid]
        out = top[rows] @ w + b
        m_i = rows.size
        if loss_kind == "bce":
            p = _sigmoid(out)
            pc = np.clip(p, _PROB_EPS, 1.0 - _PROB_EPS)
            total += -float(np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
            d_out = (p - y) / (m_i * n_tasks)
        else:
            diff = out - y
            total += float(np.mean(diff**2))
            d_out = 2.0 * diff / (m_i * n_tasks)
        g_heads[tid] = [top[rows].T @ d_out, float(d_out.sum())]
        d_top[rows] += np.outer(d_out, w)
    loss = total / n_tasks
    g_encoder = []
    d_h = d_top
    for layer in range(len(encoder) - 1, -1, -1):
        w, _ = encoder[layer]
        d_a = d_h * (pre[layer] > 0.0)
        g_w = acts[layer].T @ d_a
        g_b = d_a.sum(axis=0)
        g_encoder.insert(0, [g_w, g_b])
        d_h = d_a @ w.T
    return loss, g_encoder, g_heads


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def train_subset(g, tasks, subset, spec: LearnerSpec, seed: int,
                 features: np.ndarray | None = None) -> MtlModel:
    """Train one multitask model on the union of the subset's training data.

    The subset is canonicalized (sorted, deduplicated) so results do not
    depend on member order. ``features`` overrides the graph's node features
    (e.g. a precomputed diffused stack); one of the two must be present.
    Deterministic under (subset, seed).
    """
    if features is None:
        if g is None:
            raise InvalidInputError("either a graph or a feature matrix is required")
        features = g.node_features
    features = np.asarray(features, dtype=float)
    subset = _canonical_subset(subset, tasks.num_tasks)

    if spec.kind == "closed-form-linear":
        base = tasks.train_mask[subset[0]]
        for tid in subset[1:]:
            if not np.array_equal(tasks.train_mask[tid], base):
                raise InvalidInputError(
                    "closed-form-linear requires identical train masks across the subset"
                )
        z = features[base]
        labels = [tasks.labels[tid][base] for tid in subset]
        w = fit_closed_form(z, labels, spec.ridge)
        return MtlModel("closed-form-linear", subset, seed, features, weights=w,
                        loss_kind=spec.train_loss_kind())

    rng = np.random.default_rng(seed)
    union = np.unique(np.concatenate([tasks.train_mask[tid] for tid in subset]))
    pos_of = {node: k for k, node in enumerate(union)}
    task_rows = {
        tid: np.array([pos_of[v] for v in tasks.train_mask[tid]], dtype=np.int64)
        for tid in subset
    }
    task_labels = {tid: tasks.labels[tid][tasks.train_mask[tid]] for tid in subset}
    x = features[union]
    encoder, heads = _init_params(rng, features.shape[1], spec, subset)
    loss_kind = spec.train_loss_kind()
    lr = spec.learning_rate
    prev_loss = np.inf
    monotone = True
    for epoch in range(spec.epochs):
        loss, g_enc, g_heads = _forward_backward(
            encoder, heads, x, task_rows, task_labels, loss_kind
        )
        if not np.isfinite(loss):
            raise TrainingError("training loss became non-finite", epoch=epoch)
        if monotone and loss > prev_loss + 1e-12:
            monotone = False
            log.warning("training loss increased at epoch %d (lr=%g); flagged, "
                        "not fatal", epoch, lr)
        prev_loss = loss
        for layer, (gw, gb) in zip(encoder, g_enc):
            layer[0] -= lr * gw
            layer[1] -= lr * gb
        for tid, (gw, gb) in g_heads.items():
            heads[tid][0] -= lr * gw
            heads[tid][1] -= lr * gb
    return MtlModel("shared-encoder-mlp", subset, seed, features,
                    encoder=encoder, heads=heads, loss_kind=loss_kind,
                    monotone_loss=monotone)


def f1_score(y_true, y_pred) -> float:
    """F1 of the positive class; 0.0 when the denominator vanishes."""
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = int(np.sum(y_true & y_pred))
    fp = int(np.sum(~y_true & y_pred))
    fn = int(np.sum(y_true & ~y_pred))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def evaluate(model: MtlModel, tasks, task_id: int, mask_kind: str,
             metric: str) -> float:
    """Score one task on its val or test mask, oriented higher-is-better."""
    if mask_kind not in ("val", "test"):
        raise InvalidInputError(f"mask_kind must be 'val' or 'test', got {mask_kind!r}")
    if metric not in METRICS:
        raise InvalidInputError(f"unknown metric {metric!r}")
    mask = tasks.val_mask[task_id] if mask_kind == "val" else tasks.test_mask[task_id]
    if mask.size == 0:
        raise InvalidInputError(f"task {task_id} has an empty {mask_kind} mask")
    if model.kind == "shared-encoder-mlp" and task_id not in model.subset:
        raise InvalidInputError(f"model trained on {model.subset} has no head for task {task_id}")
    raw = model.raw_scores(mask, task_id)
    y = tasks.labels[task_id][mask]
    if metric == "negative-mse":
        return -float(np.mean((raw - y) ** 2))
    probs = _sigmoid(raw)
    if metric == "negative-cross-entropy":
        pc = np.clip(probs, _PROB_EPS, 1.0 - _PROB_EPS)
        return float(np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))
    return f1_score(y == 1, probs >= 0.5)


def _flatten(encoder, heads, subset):
    parts = []
    for w, b in encoder:
        parts.append(w.ravel())
        parts.append(np.atleast_1d(b).ravel())
    for tid in subset:
        w, b = heads[tid]
        parts.append(np.atleast_1d(w).ravel())
        parts.append(np.atleast_1d(b).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def _unflatten(vec, encoder, heads, subset):
    enc_out, heads_out = [], {}
    k = 0
    for w, b in encoder:
        nw = w.size
        enc_out.append([vec[k:k + nw].reshape(w.shape), vec[k + nw:k + nw + b.size].copy()])
        k += nw + b.size
    for tid in subset:
        w, _ = heads[tid]
        nw = np.atleast_1d(w).size
        heads_out[tid] = [vec[k:k + nw].copy(), float(vec[k + nw])]
        k += nw + 1
    return enc_out, heads_out


def gradient_check(spec: LearnerSpec, features, masks, labels, seed: int = 0,
                   num_params: int = 120, step: float = 1e-5,
                   zero_weights: bool = False) -> float:
    """Max relative error of analytic vs. central finite-difference gradients.

    Builds MLP parameters for a toy instance (``masks``/``labels`` are
    per-task node-index arrays and full label vectors), perturbs at least
    ``num_params`` random parameter coordinates, and compares. With
    ``zero_weights`` all weights are zeroed and biases set to 0.1, a smooth
    point of the loss surface.
    """
    if spec.kind != "shared-encoder-mlp":
        raise InvalidInputError("gradient_check applies to the mlp kind only")
    features = np.asarray(features, dtype=float)
    subset = tuple(range(len(masks)))
    rng = np.random.default_rng(seed)
    encoder, heads = _init_params(rng, features.shape[1], spec, subset)
    if zero_weights:
        for layer in encoder:
            layer[0][...] = 0.0
            layer[1][...] = 0.1
        for tid in subset:
            heads[tid][0] = np.zeros_like(np.atleast_1d(heads[tid][0]))
            heads[tid][1] = 0.1
    union = np.unique(np.concatenate([np.asarray(m) for m in masks]))
    pos_of = {node: k for k, node in enumerate(union)}
    task_rows = {
        tid: np.array([pos_of[v] for v in masks[tid]], dtype=np.int64)
        for tid in subset
    }
    task_labels = {tid: np.asarray(labels[tid])[np.asarray(masks[tid])] for tid in subset}
    x = features[union]
    loss_kind = spec.train_loss_kind()

    _, g_enc, g_heads = _forward_backward(encoder, heads, x, task_rows, task_labels, loss_kind)
    analytic = _flatten(g_enc, g_heads, subset)
    theta = _flatten(encoder, heads, subset)

    def loss_at(vec):
        enc, hds = _unflatten(vec, encoder, heads, subset)
        val, _, _ = _forward_backward(enc, hds, x, task_rows, task_labels, loss_kind)
        return val

    count = min(num_params, theta.size)
    coords = rng.choice(theta.size, size=count, replace=False)
    max_rel = 0.0
    for c in coords:
        plus = theta.copy()
        plus[c] += step
        minus = theta.copy()
        minus[c] -= step
        fd = (loss_at(plus) - loss_at(minus)) / (2.0 * step)
        denom = max(abs(analytic[c]), abs(fd), 1e-8)
        max_rel = max(max_rel, abs(analytic[c] - fd) / denom)
    return max_rel


def save_model(model: MtlModel, path_prefix) -> None:
    """Dump weights to ``<prefix>.npz`` with a JSON header at ``<prefix>.json``."""
    header = {
        "kind": model.kind,
        "subset": list(model.subset),
        "seed": model.seed,
        "loss_kind": model.loss_kind,
        "feature_dim": int(model.features.shape[1]),
    }
    arrays = {}
    if model.kind == "closed-form-linear":
        arrays["weights"] = model.weights
    else:
        for li, (w, b) in enumerate(model.encoder):
            arrays[f"enc_w_{li}"] = w
            arrays[f"enc_b_{li}"] = b
        header["num_layers"] = len(model.encoder)
        for tid in model.subset:
            w, b = model.heads[tid]
            arrays[f"head_w_{tid}"] = np.atleast_1d(w)
            arrays[f"head_b_{tid}"] = np.array([b])
    with open(f"{path_prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, sort_keys=True)
    np.savez(f"{path_prefix}.npz", **arrays)


def load_model(path_prefix, features) -> MtlModel:
    with open(f"{path_prefix}.json", "r", encoding="utf-8") as fh:
        header = json.load(fh)
    data = np.load(f"{path_prefix}.npz")
    subset = tuple(header["subset"])
    if header["kind"] == "closed-form-linear":
        return MtlModel("closed-form-linear", subset, header["seed"], features,
                        weights=data["weights"], loss_kind=header["loss_kind"])
    encoder = [[data[f"enc_w_{li}"], data[f"enc_b_{li}"]]
               for li in range(header["num_layers"])]
    heads = {tid: [data[f"head_w_{tid}"], float(data[f"head_b_{tid}"][0])]
             for tid in subset}
    return MtlModel("shared-encoder-mlp", subset, header["seed"], features,
                    encoder=encoder, heads=heads, loss_kind=header["loss_kind"])
