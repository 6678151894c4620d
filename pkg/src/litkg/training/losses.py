"""Scoring functions and losses for pretraining and fine-tuning."""
from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from ..kg import RELATIONS, RelationKind
from ..model.params import ModelParams
from ..numerics import (
    ContractError,
    Tensor,
    as_tensor,
    clip,
    concat,
    gather_rows,
    leaky_relu,
    log,
    log_sigmoid,
    matmul,
    sigmoid,
    square,
)

PROB_FLOOR = 1e-12


def triplet_score(h, r, t, W_r) -> Tensor:
    """Row-wise ||h W_r + r - t W_r||^2; lower means more plausible."""
    diff = matmul(h, W_r) + r - matmul(t, W_r)
    return square(diff).sum(axis=1)


def l2_penalty(params: ModelParams, names: Optional[Iterable[str]] = None) -> Tensor:
    total = None
    for name in (params.names() if names is None else names):
        term = square(params[name]).sum()
        total = term if total is None else total + term
    return total


def phase_param_names(params: ModelParams, phase: str,
                      relations: Optional[Iterable] = None) -> list[str]:
    """Parameters an objective actually depends on, and so the ones it decays.

    The classifier head is outside the ranking objective and the non-diagnosis
    projections are outside the classifier. For pretraining, ``relations``
    names the relations present in its triples (default: all but the
    diagnosis link); projections of absent relations are left alone. Decaying
    an unused tensor would let Adam, which rescales even a pure weight-decay
    gradient to unit step size, drive it to zero within a few hundred steps.
    """
    if phase == "pretrain":
        if relations is None:
            relations = [r for r in RELATIONS if r != RelationKind.r_D]
        used = {f"proj.{RelationKind(r).value}" for r in relations}
        return [n for n in params.names()
                if not n.startswith("clf.") and (not n.startswith("proj.") or n in used)]
    if phase == "finetune":
        keep = f"proj.{RelationKind.r_D.value}"
        return [n for n in params.names() if not n.startswith("proj.") or n == keep]
    raise ValueError(f"unknown phase {phase!r}")


def _relation_groups(rels: np.ndarray):
    for r in np.unique(rels):
        yield int(r), np.flatnonzero(rels == r)


def pair_scores(reps, params: ModelParams, heads, rels, pos_tails, neg_tails):
    """Scores of positive and negative triples, grouped by relation.

    Returns ``(pos, neg, order)`` where ``pos``/``neg`` are 1-d tensors whose
    row ``j`` belongs to input pair ``order[j]``.
    """
    heads, rels = np.asarray(heads), np.asarray(rels)
    pos_tails, neg_tails = np.asarray(pos_tails), np.asarray(neg_tails)
    pos_parts, neg_parts, order = [], [], []
    for r, idx in _relation_groups(rels):
        W_r = params[f"proj.{RELATIONS[r].value}"]
        r_vec = gather_rows(params["relation"], [r])
        h = gather_rows(reps, heads[idx])
        pos_parts.append(triplet_score(h, r_vec, gather_rows(reps, pos_tails[idx]), W_r))
        neg_parts.append(triplet_score(h, r_vec, gather_rows(reps, neg_tails[idx]), W_r))
        order.append(idx)
    pos = pos_parts[0] if len(pos_parts) == 1 else concat(pos_parts, axis=0)
    neg = neg_parts[0] if len(neg_parts) == 1 else concat(neg_parts, axis=0)
    return pos, neg, np.concatenate(order)


def ranking_loss(pos_scores, neg_scores) -> Tensor:
    """mean of -ln sigmoid(neg - pos)."""
    return -log_sigmoid(as_tensor(neg_scores) - as_tensor(pos_scores)).mean()


def pretrain_loss(reps, params: ModelParams, batch, lambda_reg: float = 0.0,
                  decay: Optional[Sequence[str]] = None) -> Tensor:
    """Triplet ranking loss over ``batch`` plus ``lambda_reg`` times the squared
    norm of the parameters in ``decay`` (default: those the ranking objective
    uses, see :func:`phase_param_names`).

    ``batch`` is a :class:`PretrainBatch` (aligned positive/negative arrays).
    """
    if len(batch) == 0:
        raise ContractError("pretrain batch is empty")
    pos, neg, _ = pair_scores(reps, params, batch.heads, batch.rels, batch.pos_tails,
                              batch.neg_tails)
    loss = ranking_loss(pos, neg)
    if lambda_reg:
        if decay is None:
            decay = phase_param_names(params, "pretrain")
        loss = loss + lambda_reg * l2_penalty(params, decay)
    return loss


def finetune_score(reps, heads, tails, params: ModelParams,
                   relation: RelationKind = RelationKind.r_D) -> Tensor:
    """sigmoid(FC(h W_r | t W_r)) per (head, tail) row pair."""
    W_r = params[f"proj.{RelationKind(relation).value}"]
    h = matmul(gather_rows(reps, heads), W_r)
    t = matmul(gather_rows(reps, tails), W_r)
    x = concat([h, t], axis=1)
    hidden = leaky_relu(matmul(x, params["clf.W1"]) + params["clf.b1"])
    logits = matmul(hidden, params["clf.W2"]) + params["clf.b2"]
    return sigmoid(logits.reshape(-1))


def bce_loss(probs, labels: Sequence) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [1e-12, 1 - 1e-12]."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("labels must be 0 or 1")
    p = clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    if p.shape[0] != len(y):
        raise ContractError(f"{p.shape[0]} predictions for {len(y)} labels")
    ll = Tensor._wrap(y) * log(p) + Tensor._wrap(1.0 - y) * log(1.0 - p)
    return -ll.mean()


def finetune_loss(reps, params: ModelParams, pairs, lambda_reg: float = 0.0) -> Tensor:
    if len(pairs) == 0:
        raise ContractError("fine-tune batch is empty")
    heads = np.array([p.record for p in pairs])
    tails = np.array([p.disease for p in pairs])
    labels = [p.label for p in pairs]
    loss = bce_loss(finetune_score(reps, heads, tails, params), labels)
    if lambda_reg:
        loss = loss + lambda_reg * l2_penalty(params, phase_param_names(params, "finetune"))
    return loss
