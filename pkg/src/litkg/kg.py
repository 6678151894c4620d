"""Typed knowledge-graph store.

Entities carry a kind, a name and an optional literal payload; triples are
checked against a fixed relation signature table. Each relation is stored
once in its canonical direction; inverse edges are materialised only when
building a :class:`PropagationGraph`.
"""
from __future__ import annotations

import enum
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np

MISSING = -1.0


class SchemaError(ValueError):
    pass


class SamplingError(ValueError):
    pass


class FrozenGraphError(RuntimeError):
    pass


class EntityKind(str, enum.Enum):
    MEDICAL_RECORD = "MedicalRecord"
    ANIMAL = "Animal"
    SPECIES = "Species"
    BREED = "Breed"
    DISEASE = "Disease"
    SYMPTOM = "Symptom"
    DRUGS = "Drugs"
    PRESCRIPTION = "Prescription"
    TREATMENT_CODE = "TreatmentCode"
    TREATMENT = "Treatment"
    COMMENT = "Comment"
    AGE = "Age"
    AGE_GROUP = "AgeGroup"
    GENDER = "Gender"
    WEIGHT = "Weight"
    DISEASE_CATEGORY = "DiseaseCategory"


K = EntityKind

TEXT_KINDS = frozenset({K.DISEASE, K.SYMPTOM, K.PRESCRIPTION, K.TREATMENT, K.COMMENT})
NUMERIC_KINDS = frozenset({K.AGE, K.WEIGHT})


class RelationKind(str, enum.Enum):
    r_A = "r_A"
    r_D = "r_D"
    r_Y = "r_Y"
    r_P = "r_P"
    r_T = "r_T"
    r_C = "r_C"
    r_E = "r_E"
    r_U = "r_U"
    r_W = "r_W"
    r_G = "r_G"
    r_B = "r_B"
    r_S = "r_S"
    r_I = "r_I"
    r_R = "r_R"
    r_O = "r_O"


R = RelationKind

# (head kind, tail kind) per relation; the enumeration order is the index order.
RELATION_SIGNATURES: dict[RelationKind, tuple[EntityKind, EntityKind]] = {
    R.r_A: (K.MEDICAL_RECORD, K.ANIMAL),
    R.r_D: (K.MEDICAL_RECORD, K.DISEASE),
    R.r_Y: (K.MEDICAL_RECORD, K.SYMPTOM),
    R.r_P: (K.MEDICAL_RECORD, K.PRESCRIPTION),
    R.r_T: (K.MEDICAL_RECORD, K.TREATMENT),
    R.r_C: (K.MEDICAL_RECORD, K.COMMENT),
    R.r_E: (K.MEDICAL_RECORD, K.AGE),
    R.r_U: (K.MEDICAL_RECORD, K.AGE_GROUP),
    R.r_W: (K.MEDICAL_RECORD, K.WEIGHT),
    R.r_G: (K.MEDICAL_RECORD, K.GENDER),
    R.r_B: (K.ANIMAL, K.BREED),
    R.r_S: (K.ANIMAL, K.SPECIES),
    R.r_I: (K.DISEASE, K.DISEASE_CATEGORY),
    R.r_R: (K.PRESCRIPTION, K.DRUGS),
    R.r_O: (K.TREATMENT, K.TREATMENT_CODE),
}

RELATIONS: tuple[RelationKind, ...] = tuple(RELATION_SIGNATURES)
RELATION_INDEX = {r: i for i, r in enumerate(RELATIONS)}


@dataclass(frozen=True)
class Numeric:
    value: float


@dataclass(frozen=True)
class Text:
    content: str


Payload = Optional[Union[Numeric, Text]]


class Triple(NamedTuple):
    head: int
    relation: RelationKind
    tail: int


@dataclass(frozen=True)
class Entity:
    id: int
    kind: EntityKind
    name: str
    payload: Payload = None


def check_payload(kind: EntityKind, payload: Payload) -> None:
    if payload is None:
        return
    if isinstance(payload, Numeric):
        if kind not in NUMERIC_KINDS:
            raise SchemaError(f"{kind.value} entities cannot carry a numeric payload")
        if not (math.isfinite(payload.value) or payload.value == MISSING):
            raise SchemaError(f"numeric payload must be finite, got {payload.value}")
    elif isinstance(payload, Text):
        if kind not in TEXT_KINDS:
            raise SchemaError(f"{kind.value} entities cannot carry a text payload")
    else:
        raise SchemaError(f"unknown payload type {type(payload).__name__}")


class KnowledgeGraph:
    def __init__(self):
        self.entities: list[Entity] = []
        self.triples: list[Triple] = []
        self._ids: dict[tuple[EntityKind, str], int] = {}
        self._triple_set: set[Triple] = set()
        self._neighbors: dict[int, list[int]] = defaultdict(list)
        self._tails: dict[tuple[int, RelationKind], set[int]] = defaultdict(set)
        self._by_kind: dict[EntityKind, list[int]] = defaultdict(list)
        self._frozen = False

    def __len__(self) -> int:
        return len(self.entities)

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "KnowledgeGraph":
        self._frozen = True
        return self

    def _check_mutable(self) -> None:
        if self._frozen:
            raise FrozenGraphError("knowledge graph is frozen")

    def add_entity(self, kind: EntityKind, name: str, payload: Payload = None) -> int:
        self._check_mutable()
        kind = EntityKind(kind)
        if not name:
            raise SchemaError("entity name must be nonempty")
        check_payload(kind, payload)
        key = (kind, name)
        if key in self._ids:
            return self._ids[key]
        eid = len(self.entities)
        self.entities.append(Entity(eid, kind, name, payload))
        self._ids[key] = eid
        self._by_kind[kind].append(eid)
        return eid

    def add_triple(self, head: int, relation: RelationKind, tail: int) -> None:
        self._check_mutable()
        relation = RelationKind(relation)
        for eid in (head, tail):
            if not 0 <= eid < len(self.entities):
                raise SchemaError(f"unknown entity id {eid}")
        if head == tail:
            raise SchemaError("triple head and tail must differ")
        want_h, want_t = RELATION_SIGNATURES[relation]
        got_h, got_t = self.entities[head].kind, self.entities[tail].kind
        if (got_h, got_t) != (want_h, want_t):
            raise SchemaError(
                f"{relation.value} expects {want_h.value} -> {want_t.value}, "
                f"got {got_h.value} -> {got_t.value}")
        triple = Triple(head, relation, tail)
        if triple in self._triple_set:
            return
        idx = len(self.triples)
        self.triples.append(triple)
        self._triple_set.add(triple)
        self._neighbors[head].append(idx)
        self._neighbors[tail].append(idx)
        self._tails[(head, relation)].add(tail)

    def entity_id(self, kind: EntityKind, name: str) -> Optional[int]:
        return self._ids.get((EntityKind(kind), name))

    def entities_of(self, kind: EntityKind) -> list[int]:
        return self._by_kind.get(EntityKind(kind), [])

    def has_triple(self, triple: Sequence) -> bool:
        return Triple(triple[0], RelationKind(triple[1]), triple[2]) in self._triple_set

    def tails_of(self, head: int, relation: RelationKind) -> set[int]:
        return self._tails.get((head, RelationKind(relation)), set())

    def neighborhood(self, entity: int) -> list[Triple]:
        """Triples incident to ``entity`` in either direction."""
        return [self.triples[i] for i in self._neighbors.get(entity, [])]

    def neighborhood_index(self) -> dict[int, list[int]]:
        return {k: list(v) for k, v in self._neighbors.items() if v}

    def rebuild_neighborhood_index(self) -> dict[int, list[int]]:
        index: dict[int, list[int]] = defaultdict(list)
        for i, (h, _, t) in enumerate(self.triples):
            index[h].append(i)
            index[t].append(i)
        return dict(index)

    def validate(self) -> None:
        for h, r, t in self.triples:
            sig = (self.entities[h].kind, self.entities[t].kind)
            if sig != RELATION_SIGNATURES[r]:
                raise SchemaError(f"triple {(h, r.value, t)} violates {r.value} signature")
        if self.rebuild_neighborhood_index() != self.neighborhood_index():
            raise SchemaError("neighborhood index out of sync with triple set")

    def without_triples(self, drop: Iterable[Triple]) -> "KnowledgeGraph":
        """Copy with the same entity ids and the given triples removed."""
        drop = {Triple(h, RelationKind(r), t) for h, r, t in drop}
        kg = KnowledgeGraph()
        for e in self.entities:
            kg.add_entity(e.kind, e.name, e.payload)
        for tr in self.triples:
            if tr not in drop:
                kg.add_triple(*tr)
        return kg.freeze() if self._frozen else kg

    # serialization

    def to_dict(self) -> dict:
        def payload(p: Payload):
            if isinstance(p, Numeric):
                return {"numeric": p.value}
            if isinstance(p, Text):
                return {"text": p.content}
            return None

        return {
            "entities": [{"id": e.id, "kind": e.kind.value, "name": e.name,
                          "payload": payload(e.payload)} for e in self.entities],
            "triples": [[h, r.value, t] for h, r, t in self.triples],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "KnowledgeGraph":
        kg = cls()
        for i, ent in enumerate(doc["entities"]):
            if ent.get("id", i) != i:
                raise SchemaError(f"entity ids must be dense and ordered, got {ent['id']} at {i}")
            p = ent.get("payload")
            if p is None:
                payload = None
            elif "numeric" in p:
                payload = Numeric(float(p["numeric"]))
            else:
                payload = Text(p["text"])
            eid = kg.add_entity(EntityKind(ent["kind"]), ent["name"], payload)
            if eid != i:
                raise SchemaError(f"duplicate entity ({ent['kind']}, {ent['name']})")
        for h, r, t in doc["triples"]:
            kg.add_triple(int(h), RelationKind(r), int(t))
        return kg.freeze()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "KnowledgeGraph":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def sample_negatives(kg: KnowledgeGraph, positive: Sequence, k: int,
                     rng: np.random.Generator) -> list[Triple]:
    """Corrupt the tail of ``positive`` ``k`` times, uniformly without replacement.

    Candidates are entities of the relation's tail kind that do not form a
    stored triple with the positive's head and relation.
    """
    if k < 1:
        raise SamplingError("k must be >= 1")
    h, r, t = positive[0], RelationKind(positive[1]), positive[2]
    pool = kg.entities_of(RELATION_SIGNATURES[r][1])
    taken = kg.tails_of(h, r)
    available = len(pool) - len(taken)
    if available < k:
        raise SamplingError(
            f"only {available} corruption candidates for {(h, r.value, t)}, need {k}")
    chosen: list[int] = []
    seen: set[int] = set()
    if available <= 4 * k or available < len(pool) // 2:
        cands = [c for c in pool if c not in taken]
        picks = rng.choice(len(cands), size=k, replace=False)
        chosen = [cands[i] for i in picks]
    else:
        # rejection sampling keeps each accepted draw uniform over what is left
        n = len(pool)
        while len(chosen) < k:
            c = pool[int(rng.integers(n))]
            if c in taken or c in seen:
                continue
            seen.add(c)
            chosen.append(c)
    return [Triple(h, r, c) for c in chosen]


def count_negative_candidates(kg: KnowledgeGraph, positive: Sequence) -> int:
    r = RelationKind(positive[1])
    return len(kg.entities_of(RELATION_SIGNATURES[r][1])) - len(kg.tails_of(positive[0], r))


def split_finetune_pairs(pairs: Sequence, ratios: Sequence[float] = (0.6, 0.2, 0.2),
                         rng: Optional[np.random.Generator] = None,
                         key: Optional[Callable] = None):
    """Shuffle ``pairs`` and cut them into train/valid/test by ``ratios``.

    With ``key``, pairs sharing a key value stay in the same part and the
    ratios apply to the number of distinct keys.
    """
    if len(pairs) == 0:
        raise ValueError("cannot split an empty pair list")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three nonnegative values summing to 1, got {ratios}")
    rng = rng if rng is not None else np.random.default_rng(0)
    if key is None:
        groups = [[p] for p in pairs]
    else:
        by_key: dict = {}
        for p in pairs:
            by_key.setdefault(key(p), []).append(p)
        groups = list(by_key.values())
    order = rng.permutation(len(groups))
    n = len(groups)
    n_train = int(round(n * ratios[0]))
    n_valid = min(int(round(n * ratios[1])), n - n_train)
    shuffled = [groups[i] for i in order]
    flat = lambda gs: [p for g in gs for p in g]
    return (flat(shuffled[:n_train]), flat(shuffled[n_train:n_train + n_valid]),
            flat(shuffled[n_train + n_valid:]))


@dataclass
class PropagationGraph:
    """Edge arrays for message passing, inverse directions included.

    Edge ``j`` carries a message from ``dst[j]`` to ``src[j]`` under relation
    slot ``rel[j]``; inverse edges use slot ``relation_index + n_relations``.
    """
    n_entities: int
    src: np.ndarray
    rel: np.ndarray
    dst: np.ndarray
    n_relations: int = len(RELATIONS)

    @classmethod
    def from_kg(cls, kg: KnowledgeGraph, exclude: Iterable[RelationKind] = ()) -> "PropagationGraph":
        skip = {RelationKind(r) for r in exclude}
        rows = [(h, RELATION_INDEX[r], t) for h, r, t in kg.triples if r not in skip]
        n_rel = len(RELATIONS)
        if rows:
            h, r, t = (np.array(c, dtype=np.int64) for c in zip(*rows))
        else:
            h = r = t = np.zeros(0, dtype=np.int64)
        return cls(
            n_entities=len(kg),
            src=np.concatenate([h, t]),
            rel=np.concatenate([r, r + n_rel]),
            dst=np.concatenate([t, h]),
            n_relations=n_rel,
        )

    @property
    def n_edges(self) -> int:
        return len(self.src)

    @property
    def n_relation_slots(self) -> int:
        return 2 * self.n_relations
