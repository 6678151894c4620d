"""Epoch loop shared by pretraining and fine-tuning."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence

import numpy as np

from ..config import LayerConfig, TrainRunConfig
from ..ingest.numeric import AttributeVectors
from ..kg import KnowledgeGraph, Triple
from ..metrics import MetricsReport, evaluate_predictions
from ..model.layers import GraphContext, NumericError, forward
from ..model.params import ModelParams
from ..numerics import AdamState, Tape, TrainingError, adam_step, backward
from .losses import (
    bce_loss,
    finetune_loss,
    finetune_score,
    pair_scores,
    phase_param_names,
    pretrain_loss,
    ranking_loss,
)
from .pairs import FinetunePair, make_pretrain_batch

log = logging.getLogger(__name__)


class TrainingDivergence(TrainingError):
    """Loss or parameters became non-finite; ``params`` holds the last good state."""

    def __init__(self, message: str, params: ModelParams, epoch: int, batch: int):
        super().__init__(message)
        self.params = params
        self.epoch = epoch
        self.batch = batch


@dataclass
class PhaseResult:
    params: ModelParams
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = float("-inf")


class Model:
    """Bundle of graph context, literal inputs and config used by the loops."""

    def __init__(self, graph, attrs: AttributeVectors, config: LayerConfig):
        self.ctx = graph if isinstance(graph, GraphContext) else GraphContext(graph)
        inputs = attrs.model_inputs()
        self.numeric = inputs.numeric
        self.text = inputs.text
        self.config = config

    def represent(self, params: ModelParams, rng: Optional[np.random.Generator] = None):
        return forward(self.ctx, self.numeric, self.text, params, self.config, rng=rng)


def predict_pairs(model: Model, params: ModelParams, pairs: Sequence[FinetunePair],
                  reps=None) -> np.ndarray:
    if reps is None:
        reps = model.represent(params)
    heads = np.array([p.record for p in pairs])
    tails = np.array([p.disease for p in pairs])
    return finetune_score(reps, heads, tails, params).data.copy()


def evaluate_pairs(model: Model, params: ModelParams, pairs: Sequence[FinetunePair],
                   threshold: float = 0.5) -> MetricsReport:
    probs = predict_pairs(model, params, pairs)
    return evaluate_predictions(probs, [p.label for p in pairs], threshold)


def _valid_finetune(model: Model, params: ModelParams, pairs: Sequence[FinetunePair]):
    probs = predict_pairs(model, params, pairs)
    labels = [p.label for p in pairs]
    return evaluate_predictions(probs, labels), bce_loss(probs, labels).item()


def score_triples(model: Model, params: ModelParams, heads, rels, tails, reps=None) -> np.ndarray:
    """Plausibility scores (lower is better) aligned with the inputs."""
    if reps is None:
        reps = model.represent(params)
    pos, _, order = pair_scores(reps, params, heads, rels, tails, tails)
    out = np.empty(len(order))
    out[order] = pos.data
    return out


def _name_grads(params: ModelParams, grads: dict) -> dict:
    return {name: grads[t] for name, t in params.items() if t in grads}


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def run_phase(model: Model, params: ModelParams, config: TrainRunConfig, *,
              train: Sequence, valid: Sequence = (), kg: Optional[KnowledgeGraph] = None,
              history_out: Optional[IO[str]] = None) -> PhaseResult:
    """Train ``params`` in place for one phase and keep the best epoch.

    Pretraining takes positive triples in ``train``/``valid`` and needs ``kg``
    for negative sampling; model selection uses validation ranking loss.
    Fine-tuning takes :class:`FinetunePair` lists and selects on validation
    F1, with validation loss breaking ties. Training stops after
    ``config.patience`` epochs without improvement.
    """
    pretrain = config.phase == "pretrain"
    if pretrain and kg is None:
        raise ValueError("pretraining needs the knowledge graph for negative sampling")
    if not pretrain and train and not isinstance(train[0], FinetunePair):
        raise ValueError("fine-tuning needs FinetunePair examples")
    if len(train) == 0:
        raise ValueError("no training examples")

    state = AdamState(lr=config.lr)
    decay = None
    if pretrain:
        decay = phase_param_names(params, "pretrain", {tr.relation for tr in train})
    root = np.random.SeedSequence([config.seed, 0 if pretrain else 1])
    valid_batch = None
    if pretrain and valid:
        valid_batch = make_pretrain_batch(kg, valid, config.negatives,
                                          np.random.default_rng(root.spawn(1)[0]))

    best = params.copy()
    result = PhaseResult(params=params)
    stale = 0
    best_key = None
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        rng = np.random.default_rng([config.seed, epoch, 0 if pretrain else 1])
        total, count = 0.0, 0
        for b, idx in enumerate(_batches(len(train), config.batch_size, rng)):
            chunk = [train[i] for i in idx]
            if pretrain:
                batch = make_pretrain_batch(kg, chunk, config.negatives, rng)
                if len(batch) == 0:
                    continue
            params.zero_grad()
            try:
                with Tape():
                    reps = model.represent(params, rng=rng)
                    if pretrain:
                        loss = pretrain_loss(reps, params, batch, config.lambda_reg, decay)
                    else:
                        loss = finetune_loss(reps, params, chunk, config.lambda_reg)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise TrainingDivergence(f"loss is {value} at epoch {epoch} batch {b}",
                                                 best, epoch, b)
                    grads = _name_grads(params, backward(loss))
                adam_step(params.tensors, grads, state)
            except NumericError as exc:
                raise TrainingDivergence(str(exc), best, epoch, b) from exc
            except TrainingDivergence:
                raise
            except TrainingError as exc:
                raise TrainingDivergence(str(exc), best, epoch, b) from exc
            if not params.all_finite():
                raise TrainingDivergence(f"parameters non-finite after epoch {epoch} batch {b}",
                                         best, epoch, b)
            n = len(batch) if pretrain else len(chunk)
            total += value * n
            count += n

        record = {"phase": config.phase, "epoch": epoch,
                  "loss": total / count if count else float("nan"),
                  "acc": None, "precision": None, "recall": None, "f1": None}
        if pretrain:
            if valid_batch is not None and len(valid_batch):
                reps = model.represent(params)
                pos, neg, _ = pair_scores(reps, params, valid_batch.heads, valid_batch.rels,
                                          valid_batch.pos_tails, valid_batch.neg_tails)
                record["valid_loss"] = ranking_loss(pos, neg).item()
                score = (-record["valid_loss"],)
            else:
                score = (-record["loss"],)
        else:
            report, vloss = _valid_finetune(model, params, valid if valid else train)
            record.update(acc=report.acc, precision=report.precision, recall=report.recall,
                          f1=report.f1, valid_loss=vloss)
            score = (report.f1, -vloss)
        record["wall_ms"] = round((time.perf_counter() - t0) * 1000.0, 3)
        result.history.append(record)
        if history_out is not None:
            history_out.write(json.dumps(record) + "\n")
        log.info("%s epoch %d loss %.5f score %s", config.phase, epoch, record["loss"], score)

        if best_key is None or score > best_key:
            best_key = score
            result.best_score = score[0]
            result.best_epoch = epoch
            best = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break

    params.assign(best)
    return result


def holdout_triples(triples: Sequence[Triple], fraction: float, rng: np.random.Generator):
    """Split triples into (kept, held_out) with ``fraction`` held out."""
    order = rng.permutation(len(triples))
    n_hold = int(round(fraction * len(triples)))
    held = [triples[i] for i in sorted(order[:n_hold])]
    kept = [triples[i] for i in sorted(order[n_hold:])]
    return kept, held
