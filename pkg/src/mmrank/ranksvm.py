"""Per-query linear pairwise ranking models.

The model is a weight vector over one modality's layout, fit by
stochastic subgradient descent on the hinge loss over signed difference
instances, with elastic-net regularization:

    sum_i max(1 - y_i <w, x_i>, 0) + lambda1 ||w||_1 + lambda2 ||w||_2^2

L2 is applied as per-step weight decay and L1 as a proximal shrink that
clips at zero. Sparse coordinates are regularized lazily: a per-coordinate
last-touched step plus running decay-product / decay-weighted-penalty
accumulators reproduce, on next access, exactly the same value an eager
implementation would have reached by regularizing every coordinate every
step. Per-step cost therefore scales with instance sparsity, not with
the vocabulary.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .embedding import Modality, MultimodalVector, SparseVector
from .pairgen import PairwiseInstance

__all__ = [
    "TrainConfig",
    "TrainStats",
    "QueryModel",
    "LayoutError",
    "DivergenceError",
    "objective",
    "objective_gradient",
    "train_sgd",
    "score",
    "rank",
    "pairwise_error",
    "save_model",
    "load_model",
]

# Rebase the lazy-regularization accumulators before they leave float64's
# comfortable range; see _train notes.
_REBASE_P_FLOOR = 1e-120
_REBASE_V_CEIL = 1e120


class LayoutError(ValueError):
    """Instance or document layout does not match the model's."""


class DivergenceError(RuntimeError):
    def __init__(self, step: int, detail: str = "non-finite update"):
        super().__init__(f"training diverged at step {step}: {detail}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    lr_decay: float = 1e-4
    lambda1: float = 0.0
    lambda2: float = 0.0
    epochs: int = 5
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        for name in ("learning_rate", "lr_decay", "lambda1", "lambda2"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.lr_decay < 0 or self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lr_decay, lambda1, lambda2 must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass(frozen=True)
class TrainStats:
    epochs_run: int = 0
    final_objective: float = float("nan")
    n_instances: int = 0


@dataclass
class QueryModel:
    query: str
    modality: Modality
    text_dim: int
    image_dim: int
    sparse_weights: dict[int, float] = field(default_factory=dict)
    dense_weights: np.ndarray | None = None
    train_config: TrainConfig = field(default_factory=TrainConfig)
    train_stats: TrainStats = field(default_factory=TrainStats)


def _check_instance_layout(model: QueryModel, inst: PairwiseInstance) -> None:
    if inst.sparse.dim != model.text_dim:
        raise LayoutError(f"instance sparse dim {inst.sparse.dim} != model {model.text_dim}")
    if (inst.dense is None) != (model.image_dim == 0):
        raise LayoutError("dense block presence differs between instance and model")
    if inst.dense is not None and len(inst.dense) != model.image_dim:
        raise LayoutError(f"instance dense dim {len(inst.dense)} != model {model.image_dim}")


def _raw_score(model: QueryModel, sparse: SparseVector, dense: np.ndarray | None) -> float:
    total = sparse.dot(model.sparse_weights)
    if dense is not None and model.dense_weights is not None:
        total += float(np.dot(model.dense_weights, dense))
    return total


def score(model: QueryModel, d: MultimodalVector) -> float:
    """Ranking score <w, d>; higher means more relevant for the query."""
    if d.modality is not model.modality:
        raise LayoutError(f"document modality {d.modality} != model {model.modality}")
    if d.text.dim != model.text_dim:
        raise LayoutError(f"document sparse dim {d.text.dim} != model {model.text_dim}")
    if (d.image is None) != (model.image_dim == 0):
        raise LayoutError("dense block presence differs between document and model")
    if d.image is not None and len(d.image) != model.image_dim:
        raise LayoutError(f"document dense dim {len(d.image)} != model {model.image_dim}")
    return _raw_score(model, d.text, d.image)


def rank(model: QueryModel, docs: list[tuple[str, MultimodalVector]]
         ) -> list[tuple[str, float]]:
    """Sort by score descending; ties break by ascending id for determinism."""
    scored = [(doc_id, score(model, vec)) for doc_id, vec in docs]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored


def pairwise_error(model: QueryModel, instances: list[PairwiseInstance]) -> float:
    """Fraction of instances with y.<w,x> <= 0; a zero margin is an error
    because it orders nothing."""
    if not instances:
        raise ValueError("pairwise_error needs at least one instance")
    wrong = 0
    for inst in instances:
        _check_instance_layout(model, inst)
        if inst.y * _raw_score(model, inst.sparse, inst.dense) <= 0.0:
            wrong += 1
    return wrong / len(instances)


def objective(model: QueryModel, instances: list[PairwiseInstance]) -> float:
    """Summed hinge loss plus lambda1 ||w||_1 + lambda2 ||w||_2^2 over both blocks."""
    total = 0.0
    for inst in instances:
        _check_instance_layout(model, inst)
        margin = inst.y * _raw_score(model, inst.sparse, inst.dense)
        if margin < 1.0:
            total += 1.0 - margin
    l1 = sum(abs(v) for v in model.sparse_weights.values())
    l2 = sum(v * v for v in model.sparse_weights.values())
    if model.dense_weights is not None:
        l1 += float(np.sum(np.abs(model.dense_weights)))
        l2 += float(np.dot(model.dense_weights, model.dense_weights))
    cfg = model.train_config
    return total + cfg.lambda1 * l1 + cfg.lambda2 * l2


def objective_gradient(model: QueryModel, instances: list[PairwiseInstance]
                       ) -> tuple[dict[int, float], np.ndarray | None]:
    """Analytic gradient of `objective` where it is differentiable.

    Valid at points with no margin exactly 1 and, for the L1 term, only
    with lambda1 = 0 (the hinge kink and |w| kink are excluded).
    """
    cfg = model.train_config
    if cfg.lambda1 != 0.0:
        raise ValueError("analytic gradient requires lambda1 = 0")
    grad_sparse: dict[int, float] = {k: 2.0 * cfg.lambda2 * v
                                     for k, v in model.sparse_weights.items()}
    grad_dense = (2.0 * cfg.lambda2 * model.dense_weights.copy()
                  if model.dense_weights is not None else None)
    for inst in instances:
        _check_instance_layout(model, inst)
        margin = inst.y * _raw_score(model, inst.sparse, inst.dense)
        if margin < 1.0:
            for idx, val in zip(inst.sparse.indices, inst.sparse.values):
                grad_sparse[idx] = grad_sparse.get(idx, 0.0) - inst.y * val
            if inst.dense is not None:
                grad_dense -= inst.y * inst.dense
    return grad_sparse, grad_dense


def _infer_layout(instances: list[PairwiseInstance]) -> tuple[str, Modality, int, int]:
    first = instances[0]
    query = first.query
    text_dim = first.sparse.dim
    image_dim = len(first.dense) if first.dense is not None else 0
    for inst in instances:
        if inst.query != query:
            raise ValueError(f"mixed queries in one training set: {query!r} vs {inst.query!r}")
        if inst.sparse.dim != text_dim:
            raise LayoutError("inconsistent sparse dimensions across instances")
        inst_image = len(inst.dense) if inst.dense is not None else 0
        if inst_image != image_dim:
            raise LayoutError("inconsistent dense blocks across instances")
    if text_dim > 0 and image_dim > 0:
        modality = Modality.MULTIMODAL
    elif image_dim > 0:
        modality = Modality.IMAGE
    else:
        modality = Modality.TEXT
    return query, modality, text_dim, image_dim


def train_sgd(instances: list[PairwiseInstance], config: TrainConfig) -> QueryModel:
    """Fit a model by SGD; deterministic given (instances, config).

    Step size follows eta_t = eta0 / (1 + lr_decay * t) with t counting
    completed steps, so the first step uses exactly eta0. The hinge
    subgradient step fires only when y.<w,x> < 1; regularization is then
    applied proximally (decay for L2, shrink-and-clip for L1).
    """
    if not instances:
        raise ValueError("cannot train on an empty instance list")
    query, modality, text_dim, image_dim = _infer_layout(instances)
    if 2.0 * config.learning_rate * config.lambda2 >= 1.0:
        raise ValueError("learning_rate * lambda2 too large: per-step decay factor "
                         "would be non-positive")

    eta0 = config.learning_rate
    lr_decay = config.lr_decay
    lam1 = config.lambda1
    lam2 = config.lambda2
    m = len(instances)

    prepared = [(inst.y, inst.sparse.indices, inst.sparse.values, inst.dense)
                for inst in instances]

    w: dict[int, float] = {}
    last: dict[int, int] = {}
    dense_w = np.zeros(image_dim, dtype=np.float64) if image_dim else None

    # Accumulators, segment-relative: p_hist[s] is the product of decay
    # factors and v_hist[s] the decay-weighted L1 allowance over steps in
    # the current segment. A full catch-up rebases both before they can
    # underflow/overflow.
    p_hist = [1.0]
    v_hist = [0.0]
    seg_base = 0

    def catch_up(key: int, value: float, upto: int) -> float:
        a = last[key]
        if a == upto or value == 0.0:
            return value
        scale = p_hist[upto - seg_base] / p_hist[a - seg_base]
        mag = abs(value) * scale
        if lam1:
            mag -= p_hist[upto - seg_base] * (v_hist[upto - seg_base] - v_hist[a - seg_base])
        return math.copysign(mag, value) if mag > 0.0 else 0.0

    rng = np.random.default_rng(config.seed)
    steps_done = 0
    for _epoch in range(config.epochs):
        order = rng.permutation(m) if config.shuffle else range(m)
        for i in order:
            y, idx, val, dense_x = prepared[i]
            t = steps_done + 1
            eta = eta0 / (1.0 + lr_decay * steps_done)

            # Bring this step's coordinates current through step t-1.
            sdot = 0.0
            current: list[float] = []
            for k, xv in zip(idx, val):
                wk = w.get(k)
                if wk is not None:
                    wk = catch_up(k, wk, t - 1)
                    sdot += wk * xv
                    current.append(wk)
                else:
                    current.append(0.0)
            if dense_x is not None:
                sdot += float(np.dot(dense_w, dense_x))
            margin = y * sdot
            if not math.isfinite(margin):
                raise DivergenceError(t, f"margin became {margin}")

            step = eta * y if margin < 1.0 else 0.0
            decay = 1.0 - 2.0 * eta * lam2
            shrink = eta * lam1

            for pos, (k, xv) in enumerate(zip(idx, val)):
                wk = current[pos] + step * xv
                wk *= decay
                if shrink:
                    mag = abs(wk) - shrink
                    wk = math.copysign(mag, wk) if mag > 0.0 else 0.0
                if wk != 0.0:
                    w[k] = wk
                    last[k] = t
                elif k in w:
                    del w[k]
                    del last[k]
            if dense_x is not None:
                if step:
                    dense_w += step * dense_x
                dense_w *= decay
                if shrink:
                    np.sign(dense_w, out=(signs := np.empty_like(dense_w)))
                    np.abs(dense_w, out=dense_w)
                    dense_w -= shrink
                    np.maximum(dense_w, 0.0, out=dense_w)
                    dense_w *= signs

            p_hist.append(p_hist[-1] * decay)
            v_hist.append(v_hist[-1] + (shrink / p_hist[-1] if shrink else 0.0))
            steps_done = t

            if p_hist[-1] < _REBASE_P_FLOOR or v_hist[-1] > _REBASE_V_CEIL:
                for k in list(w):
                    wk = catch_up(k, w[k], t)
                    if wk != 0.0:
                        w[k] = wk
                        last[k] = t
                    else:
                        del w[k]
                        del last[k]
                p_hist = [1.0]
                v_hist = [0.0]
                seg_base = t

    for k in list(w):
        wk = catch_up(k, w[k], steps_done)
        if wk != 0.0:
            w[k] = wk
        else:
            del w[k]
    if any(not math.isfinite(v) for v in w.values()) or (
            dense_w is not None and not np.all(np.isfinite(dense_w))):
        raise DivergenceError(steps_done, "non-finite weights after training")

    model = QueryModel(
        query=query,
        modality=modality,
        text_dim=text_dim,
        image_dim=image_dim,
        sparse_weights=dict(sorted(w.items())),
        dense_weights=dense_w,
        train_config=config,
        train_stats=TrainStats(epochs_run=config.epochs, final_objective=0.0,
                               n_instances=m),
    )
    model.train_stats = replace(model.train_stats,
                                final_objective=objective(model, instances))
    return model


def save_model(model: QueryModel, path: str | Path) -> None:
    obj = {
        "query": model.query,
        "modality": model.modality.value,
        "text_dim": model.text_dim,
        "image_dim": model.image_dim,
        "config": {
            "learning_rate": model.train_config.learning_rate,
            "lr_decay": model.train_config.lr_decay,
            "lambda1": model.train_config.lambda1,
            "lambda2": model.train_config.lambda2,
            "epochs": model.train_config.epochs,
            "seed": model.train_config.seed,
            "shuffle": model.train_config.shuffle,
        },
        "stats": {
            "epochs_run": model.train_stats.epochs_run,
            "final_objective": model.train_stats.final_objective,
            "n_instances": model.train_stats.n_instances,
        },
        "sparse_weights": [[k, v] for k, v in sorted(model.sparse_weights.items())],
        "dense_weights": (list(map(float, model.dense_weights))
                          if model.dense_weights is not None else None),
    }
    Path(path).write_text(json.dumps(obj), encoding="utf-8")


def load_model(path: str | Path) -> QueryModel:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    dense = obj["dense_weights"]
    return QueryModel(
        query=obj["query"],
        modality=Modality(obj["modality"]),
        text_dim=obj["text_dim"],
        image_dim=obj["image_dim"],
        sparse_weights={int(k): float(v) for k, v in obj["sparse_weights"]},
        dense_weights=np.array(dense, dtype=np.float64) if dense is not None else None,
        train_config=TrainConfig(**obj["config"]),
        train_stats=TrainStats(**obj["stats"]),
    )
