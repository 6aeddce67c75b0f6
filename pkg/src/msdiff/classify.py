"""Frozen-feature classification and accuracy metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .numkit import Tensor

log = logging.getLogger(__name__)

Params = dict[str, Tensor]


def init_classifier(in_dim: int, n_classes: int, seed: int = 0, hidden: int | None = None) -> Params:
    hidden = 2 * in_dim if hidden is None else hidden
    rng = np.random.default_rng(seed)
    return {
        "l1.weight": Tensor(rng.normal(0, 1 / math.sqrt(in_dim), size=(in_dim, hidden)), requires_grad=True),
        "l1.bias": Tensor(np.zeros(hidden), requires_grad=True),
        "l2.weight": Tensor(rng.normal(0, 1 / math.sqrt(hidden), size=(hidden, n_classes)), requires_grad=True),
        "l2.bias": Tensor(np.zeros(n_classes), requires_grad=True),
    }


def classifier_logits(x, params: Params) -> Tensor:
    h = nk.gelu(nk.matmul(nk.as_tensor(x), params["l1.weight"]) + params["l1.bias"])
    return nk.matmul(h, params["l2.weight"]) + params["l2.bias"]


def predict(x: np.ndarray, params: Params) -> np.ndarray:
    frozen = {k: Tensor(v.data) for k, v in params.items()}
    return classifier_logits(np.atleast_2d(x), frozen).data.argmax(axis=1)


def train_classifier(features: np.ndarray, labels: np.ndarray, n_classes: int, epochs: int = 20, seed: int = 0,
                     batch_size: int = 64, lr: float = 1e-3, weight_decay: float = 1e-4,
                     hidden: int | None = None, params: Params | None = None) -> tuple[Params, list[float]]:
    """Cross-entropy MLP on fixed features; ``labels`` are 0-based."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) != len(labels):
        raise ValueError(f"{len(features)} feature rows but {len(labels)} labels")
    params = init_classifier(features.shape[1], n_classes, seed, hidden) if params is None else params
    opt = nk.AdamW(params, lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed + 1)
    history = []
    step = 0
    n = len(features)
    for epoch in range(epochs):
        total, batches = 0.0, 0
        for idx in np.array_split(rng.permutation(n), max(1, math.ceil(n / batch_size))):
            opt.zero_grad()
            loss = nk.softmax_cross_entropy(classifier_logits(features[idx], params), labels[idx])
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite classifier loss at step {step}")
            loss.backward()
            opt.step()
            step += 1
            total += loss.item()
            batches += 1
        history.append(total / batches)
        log.info("classifier epoch %d: loss=%.5f", epoch + 1, history[-1])
    return params, history


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def confusion(predictions, labels, n_classes: int) -> np.ndarray:
    """counts[truth, pred]; inputs are 0-based class indices."""
    predictions = np.asarray(predictions, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels are not aligned")
    for name, arr in (("prediction", predictions), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


@dataclass(frozen=True)
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    recalls: tuple[float, ...]

    def line(self, case: str = "none") -> str:
        return f"case={case} oa={self.oa:.4f} aa={self.aa:.4f} kappa={self.kappa:.4f}"


def metrics(cm) -> MetricsReport:
    """OA, AA (over classes with nonempty ground truth rows) and Cohen's kappa."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    rows, cols = cm.sum(axis=1), cm.sum(axis=0)
    oa = np.trace(cm) / total
    present = rows > 0
    recalls = np.where(present, np.diag(cm) / np.where(present, rows, 1), np.nan)
    aa = float(np.mean(recalls[present]))
    p_e = float(rows @ cols) / total**2
    kappa = 0.0 if p_e == 1.0 else (oa - p_e) / (1.0 - p_e)
    return MetricsReport(float(oa), aa, float(kappa), tuple(float(r) for r in recalls))


def cm_to_csv(cm: np.ndarray) -> str:
    n = cm.shape[0]
    lines = ["truth\\pred," + ",".join(str(i + 1) for i in range(n))]
    lines += [f"{i + 1}," + ",".join(str(int(v)) for v in row) for i, row in enumerate(cm)]
    return "\n".join(lines) + "\n"


def format_table(report: MetricsReport, case: str = "none") -> str:
    out = [f"case {case}", f"  OA     {100 * report.oa:6.2f}%", f"  AA     {100 * report.aa:6.2f}%",
           f"  kappa  {report.kappa:7.4f}"]
    for i, r in enumerate(report.recalls):
        out.append(f"  class {i + 1:<3d} " + ("   n/a" if np.isnan(r) else f"{100 * r:6.2f}%"))
    return "\n".join(out)
