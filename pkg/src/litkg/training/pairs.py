"""Training examples: corrupted-tail triplet batches and record/disease pairs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ..kg import (
    RELATION_INDEX,
    EntityKind,
    KnowledgeGraph,
    RelationKind,
    SamplingError,
    Triple,
    count_negative_candidates,
    sample_negatives,
)


class FinetunePair(NamedTuple):
    record: int
    disease: int
    label: int


@dataclass
class PretrainBatch:
    """Aligned arrays, one row per (positive, negative) pair.

    A positive with ``k`` negatives occupies ``k`` consecutive rows.
    """
    heads: np.ndarray
    rels: np.ndarray
    pos_tails: np.ndarray
    neg_tails: np.ndarray

    def __len__(self) -> int:
        return len(self.heads)


def make_pretrain_batch(kg: KnowledgeGraph, positives: Sequence[Triple], k: int,
                        rng: np.random.Generator) -> PretrainBatch:
    """Sample ``k`` tail corruptions per positive triple.

    Relations whose tail kind has fewer than ``k`` free candidates (tiny
    vocabularies such as gender) use every available candidate instead.
    """
    heads, rels, pos, neg = [], [], [], []
    for tr in positives:
        kk = min(k, count_negative_candidates(kg, tr))
        if kk < 1:
            continue
        for corrupt in sample_negatives(kg, tr, kk, rng):
            heads.append(tr[0])
            rels.append(RELATION_INDEX[RelationKind(tr[1])])
            pos.append(tr[2])
            neg.append(corrupt.tail)
    as_int = lambda xs: np.array(xs, dtype=np.int64)
    return PretrainBatch(as_int(heads), as_int(rels), as_int(pos), as_int(neg))


def build_finetune_pairs(kg: KnowledgeGraph, negatives_per_positive: int,
                         rng: np.random.Generator) -> list[FinetunePair]:
    """One positive per record/disease triple plus sampled non-linked diseases."""
    if negatives_per_positive < 0:
        raise ValueError("negatives_per_positive must be >= 0")
    positives = [t for t in kg.triples if t.relation == RelationKind.r_D]
    if not positives:
        raise SamplingError("knowledge graph has no record/disease triples")
    diseases = kg.entities_of(EntityKind.DISEASE)
    pairs = []
    for tr in positives:
        pairs.append(FinetunePair(tr.head, tr.tail, 1))
        if negatives_per_positive == 0:
            continue
        linked = kg.tails_of(tr.head, RelationKind.r_D)
        free = [d for d in diseases if d not in linked]
        if len(free) < negatives_per_positive:
            raise SamplingError(f"record {tr.head} has {len(free)} unlinked diseases, "
                                f"need {negatives_per_positive}")
        for i in rng.choice(len(free), size=negatives_per_positive, replace=False):
            pairs.append(FinetunePair(tr.head, free[i], 0))
    return pairs
