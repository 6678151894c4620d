"""Numeric literal encoding and per-entity attribute vectors."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from ..kg import MISSING, EntityKind, KnowledgeGraph, Numeric, Text
from .records import NUMERIC_FIELDS, EmrRecord
from .text import DEFAULT_WIDTH, embed_text

NUMERIC_WIDTH = 8


@dataclass(frozen=True)
class NumericStats:
    """Per-field (min, max), fit on the training records only."""
    ranges: dict

    @classmethod
    def fit(cls, records: Iterable[EmrRecord]) -> "NumericStats":
        ranges = {}
        records = list(records)
        for name in NUMERIC_FIELDS:
            vals = [getattr(r, name) for r in records if getattr(r, name) is not None]
            ranges[name] = (min(vals), max(vals)) if vals else (0.0, 0.0)
        return cls(ranges)

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.ranges.items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "NumericStats":
        return cls({k: tuple(v) for k, v in doc.items()})


def encode_numeric(values: Mapping[str, Optional[float]], stats: NumericStats,
                   width: int = NUMERIC_WIDTH) -> np.ndarray:
    """Encode ``values`` into the fixed layout ``[age, weight, 0, ...]``.

    A field absent from ``values`` stays 0. A field present with ``None`` (or
    the -1 sentinel) is missing and encodes as -1. Present values are
    min-max scaled into [0, 1]; a degenerate range yields 0.5.
    """
    if width < len(NUMERIC_FIELDS):
        raise ValueError(f"numeric width must be >= {len(NUMERIC_FIELDS)}")
    out = np.zeros(width)
    for slot, name in enumerate(NUMERIC_FIELDS):
        if name not in values:
            continue
        v = values[name]
        if v is None or v == MISSING:
            out[slot] = MISSING
            continue
        lo, hi = stats.ranges[name]
        out[slot] = 0.5 if hi == lo else float(np.clip((v - lo) / (hi - lo), 0.0, 1.0))
    return out


_NUMERIC_FIELD_OF = {EntityKind.AGE: "age", EntityKind.WEIGHT: "weight"}


@dataclass
class AttributeVectors:
    numeric: np.ndarray   # (n_entities, N)
    text: np.ndarray      # (n_entities, T)

    @property
    def n_entities(self) -> int:
        return self.numeric.shape[0]

    @classmethod
    def encode(cls, kg: KnowledgeGraph, stats: NumericStats,
               numeric_width: int = NUMERIC_WIDTH, text_width: int = DEFAULT_WIDTH
               ) -> "AttributeVectors":
        n = len(kg)
        numeric = np.zeros((n, numeric_width))
        text = np.zeros((n, text_width))
        for e in kg.entities:
            if isinstance(e.payload, Numeric):
                numeric[e.id] = encode_numeric({_NUMERIC_FIELD_OF[e.kind]: e.payload.value},
                                               stats, numeric_width)
            elif isinstance(e.payload, Text):
                text[e.id] = embed_text(e.payload.content, text_width)
        return cls(numeric, text)

    def masked(self, use_numeric: bool = True, use_text: bool = True) -> "AttributeVectors":
        return AttributeVectors(
            self.numeric if use_numeric else np.zeros_like(self.numeric),
            self.text if use_text else np.zeros_like(self.text),
        )

    def model_inputs(self) -> "AttributeVectors":
        """Inputs as fed to the gate: text rescaled from unit norm to unit RMS.

        A unit-norm vector spread over T coordinates is ~1/sqrt(T) per entry,
        which starts every downstream activation near zero and leaves training
        stuck on the class-prior plateau; numeric slots are already O(1).
        """
        return AttributeVectors(self.numeric, self.text * np.sqrt(self.text.shape[1]))

    def permuted(self, order: np.ndarray) -> "AttributeVectors":
        return AttributeVectors(self.numeric[order], self.text[order])

    def to_dict(self) -> dict:
        vectors = {}
        for i in range(self.n_entities):
            entry = {}
            if self.numeric[i].any():
                entry["numeric"] = self.numeric[i].tolist()
            if self.text[i].any():
                entry["text"] = self.text[i].tolist()
            if entry:
                vectors[str(i)] = entry
        return {"n_entities": self.n_entities, "numeric_width": self.numeric.shape[1],
                "text_width": self.text.shape[1], "vectors": vectors}

    @classmethod
    def from_dict(cls, doc: dict) -> "AttributeVectors":
        n = doc["n_entities"]
        numeric = np.zeros((n, doc["numeric_width"]))
        text = np.zeros((n, doc["text_width"]))
        for key, entry in doc["vectors"].items():
            i = int(key)
            if "numeric" in entry:
                numeric[i] = entry["numeric"]
            if "text" in entry:
                text[i] = entry["text"]
        return cls(numeric, text)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "AttributeVectors":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
