"""End-to-end experiment wiring: data preparation, pretraining, fine-tuning."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import IO, Optional, Sequence

import numpy as np

from .config import ExperimentConfig
from .ingest.numeric import AttributeVectors, NumericStats
from .ingest.text import DEFAULT_WIDTH
from .kg import (
    MISSING,
    KnowledgeGraph,
    Numeric,
    PropagationGraph,
    RelationKind,
    Triple,
    split_finetune_pairs,
)
from .metrics import MetricsReport
from .model.params import ModelParams, init_params
from .training import (
    FinetunePair,
    Model,
    PhaseResult,
    build_finetune_pairs,
    evaluate_pairs,
    holdout_triples,
    run_phase,
)

PRETRAIN_HOLDOUT = 0.1
SPLITS = ("train", "valid", "test")


def fit_stats_from_kg(kg: KnowledgeGraph, record_ids: Sequence[int]) -> NumericStats:
    """Min/max of age and weight over the given record entities."""
    values = {"age": [], "weight": []}
    field_of = {RelationKind.r_E: "age", RelationKind.r_W: "weight"}
    for m in record_ids:
        for rel, name in field_of.items():
            for t in kg.tails_of(m, rel):
                p = kg.entities[t].payload
                if isinstance(p, Numeric) and p.value != MISSING:
                    values[name].append(p.value)
    return NumericStats({k: (min(v), max(v)) if v else (0.0, 0.0) for k, v in values.items()})


@dataclass
class Dataset:
    """A knowledge graph with its deterministic splits and encoded literals.

    ``train_kg`` drops the record/disease triples of validation and test
    positives; ``graph`` is the propagation view of ``train_kg`` without any
    record/disease edges, so labels never leak through message passing.
    Pretraining triples also leave out record/disease links: otherwise the
    free embeddings of training records memorise their diagnosis and the
    classifier learns a shortcut that unseen records cannot take.
    """
    kg: KnowledgeGraph
    train_kg: KnowledgeGraph
    graph: PropagationGraph
    attrs: AttributeVectors
    stats: NumericStats
    pairs: dict
    pretrain_train: list
    pretrain_valid: list
    seed: int

    def split(self, name: str) -> list[FinetunePair]:
        return self.pairs[name]


def prepare_dataset(kg: KnowledgeGraph, config: ExperimentConfig,
                    text_width: int = DEFAULT_WIDTH) -> Dataset:
    seed = config.seed
    pairs = build_finetune_pairs(kg, config.finetune_negatives, np.random.default_rng([seed, 11]))
    # whole records go to one split: a record seen in training only through
    # its negative pairs would otherwise teach the model that it is negative
    train, valid, test = split_finetune_pairs(pairs, config.split,
                                              np.random.default_rng([seed, 12]),
                                              key=lambda p: p.record)
    held = [Triple(p.record, RelationKind.r_D, p.disease)
            for p in (*valid, *test) if p.label == 1]
    train_kg = kg.without_triples(held)
    train_records = sorted({p.record for p in train})
    stats = fit_stats_from_kg(kg, train_records)
    attrs = AttributeVectors.encode(kg, stats, text_width=text_width)
    graph = PropagationGraph.from_kg(train_kg, exclude=[RelationKind.r_D])
    unlabeled = [t for t in train_kg.triples if t.relation != RelationKind.r_D]
    kept, held_out = holdout_triples(unlabeled, PRETRAIN_HOLDOUT,
                                     np.random.default_rng([seed, 13]))
    return Dataset(kg=kg, train_kg=train_kg, graph=graph, attrs=attrs, stats=stats,
                   pairs={"train": train, "valid": valid, "test": test},
                   pretrain_train=kept, pretrain_valid=held_out, seed=seed)


@dataclass
class ExperimentResult:
    params: ModelParams
    pretrain: Optional[PhaseResult]
    finetune: Optional[PhaseResult]
    reports: dict

    def metrics_json(self, split: str = "test") -> dict:
        return self.reports[split].to_dict()


def make_model(ds: Dataset, config: ExperimentConfig) -> Model:
    return Model(ds.graph, ds.attrs.masked(config.use_numeric, config.use_text), config.model)


def new_params(ds: Dataset, config: ExperimentConfig) -> ModelParams:
    return init_params(config.model, len(ds.kg), ds.attrs.numeric.shape[1],
                       ds.attrs.text.shape[1], seed=config.seed)


def pretrain(ds: Dataset, config: ExperimentConfig, params: Optional[ModelParams] = None,
             history_out: Optional[IO[str]] = None) -> tuple[ModelParams, PhaseResult]:
    params = params if params is not None else new_params(ds, config)
    run_cfg = dataclasses.replace(config.pretrain, seed=config.seed)
    result = run_phase(make_model(ds, config), params, run_cfg, train=ds.pretrain_train,
                       valid=ds.pretrain_valid, kg=ds.train_kg, history_out=history_out)
    return params, result


def finetune(ds: Dataset, config: ExperimentConfig, params: Optional[ModelParams] = None,
             history_out: Optional[IO[str]] = None) -> tuple[ModelParams, PhaseResult]:
    params = params if params is not None else new_params(ds, config)
    run_cfg = dataclasses.replace(config.finetune, seed=config.seed)
    result = run_phase(make_model(ds, config), params, run_cfg, train=ds.split("train"),
                       valid=ds.split("valid"), history_out=history_out)
    return params, result


def evaluate(ds: Dataset, config: ExperimentConfig, params: ModelParams,
             splits: Sequence[str] = SPLITS) -> dict[str, MetricsReport]:
    model = make_model(ds, config)
    return {s: evaluate_pairs(model, params, ds.split(s)) for s in splits}


def run_experiment(ds: Dataset, config: ExperimentConfig,
                   pretrained: Optional[ModelParams] = None,
                   history_out: Optional[IO[str]] = None) -> ExperimentResult:
    """Pretrain (unless disabled or ``pretrained`` is given), fine-tune, evaluate."""
    pre_result = None
    if pretrained is not None:
        params = pretrained.copy()
    elif config.use_pretrain:
        params, pre_result = pretrain(ds, config, history_out=history_out)
    else:
        params = new_params(ds, config)
    params, ft_result = finetune(ds, config, params, history_out=history_out)
    return ExperimentResult(params, pre_result, ft_result, evaluate(ds, config, params))
