"""Domain-aware and domain-agnostic prediction.

Domain-agnostic prediction runs a sample through every bank and keeps the
bank whose output distribution has the lowest entropy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .layers import EVAL, sigmoid, softmax
from .model import DilModel, TaskKind, forward
from .tensor import Tensor, no_grad


@dataclass
class Prediction:
    """Per-sample outputs for a batch.

    ``probabilities[n]`` is over the class list of ``chosen_bank[n]``;
    ``uncertainty[n, j]`` is the entropy measured for candidate bank
    ``candidates[j]``.
    """

    chosen_bank: np.ndarray
    probabilities: list[np.ndarray]
    uncertainty: np.ndarray
    candidates: tuple[int, ...]


def _as_batch(x) -> Tensor:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim == 3:
        arr = arr[None]
    return Tensor(arr)


def bank_probabilities(model: DilModel, bank_id: int, x, classes: Sequence[str] | None = None) -> np.ndarray:
    """Class probabilities from one bank with EVAL-mode BatchNorm, float64."""
    bank = model.bank(bank_id)
    with no_grad():
        logits = forward(model, bank_id, _as_batch(x), EVAL, classes=classes).data.astype(np.float64)
    if bank.spec.task_kind == TaskKind.MULTI:
        return sigmoid(logits)
    return softmax(logits)


def entropy_uncertainty(probabilities, task_kind=TaskKind.SINGLE, normalize: bool = False) -> np.ndarray | float:
    """Predictive entropy (natural log) along the last axis.

    Single-label: -sum p ln p. Multi-label: mean over classes of the binary
    entropy. ``0 ln 0`` counts as 0. With ``normalize`` the value is divided
    by its maximum (ln C, or ln 2 for multi-label).
    """
    p = np.asarray(probabilities, dtype=np.float64)
    if p.size == 0 or (p < 0).any() or (p > 1).any() or not np.isfinite(p).all():
        raise ValueError("probabilities must lie in [0, 1]")
    task_kind = TaskKind(task_kind)
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    if task_kind == TaskKind.SINGLE:
        h = -plogp.sum(axis=-1)
        scale = np.log(p.shape[-1]) if p.shape[-1] > 1 else 1.0
    else:
        q = 1.0 - p
        qlogq = np.where(q > 0, q * np.log(np.where(q > 0, q, 1.0)), 0.0)
        h = -(plogp + qlogq).mean(axis=-1)
        scale = np.log(2.0)
    if normalize:
        h = h / scale
    return float(h) if np.ndim(h) == 0 else h


def predict_domain_aware(model: DilModel, bank_id: int, x, classes: Sequence[str] | None = None) -> Prediction:
    probs = bank_probabilities(model, bank_id, x, classes)
    kind = model.bank(bank_id).spec.task_kind
    return Prediction(
        np.full(len(probs), bank_id, dtype=np.int64),
        list(probs),
        entropy_uncertainty(probs, kind).reshape(-1, 1),
        (bank_id,),
    )


def select_bank(uncertainty: np.ndarray) -> np.ndarray:
    """Column index of the minimum per row; ties go to the lowest index."""
    return np.argmin(np.asarray(uncertainty), axis=-1)


def predict_domain_agnostic(
    model: DilModel,
    x,
    candidates: Sequence[int] | None = None,
    normalize: bool = False,
) -> Prediction:
    candidates = tuple(range(model.n_banks)) if candidates is None else tuple(candidates)
    per_bank = [bank_probabilities(model, b, x) for b in candidates]
    unc = np.stack(
        [entropy_uncertainty(p, model.bank(b).spec.task_kind, normalize) for b, p in zip(candidates, per_bank)],
        axis=1,
    )
    pick = select_bank(unc)
    chosen = np.asarray(candidates, dtype=np.int64)[pick]
    probs = [per_bank[j][n] for n, j in enumerate(pick)]
    return Prediction(chosen, probs, unc, candidates)
