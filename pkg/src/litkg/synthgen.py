"""Synthetic EMR corpora with planted disease structure.

Two signal modes:

``literal_dependent``
    Each record draws its disease independently. The symptom text is built
    from the disease's signature words and the weight from the disease's
    band, so only literals reveal the diagnosis.
``structural_only``
    Each animal has one chronic disease shared by all its records. Symptom
    text and weight are uniform noise, so the diagnosis is recoverable only
    through the graph (sibling records of the same animal).
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest.records import EmrRecord

SIGNAL_MODES = ("structural_only", "literal_dependent")

SYMPTOM_WORDS = (
    "vomiting", "diarrhea", "lethargy", "anorexia", "coughing", "sneezing", "limping",
    "itching", "alopecia", "polyuria", "polydipsia", "seizure", "fever", "dyspnea",
    "tachycardia", "jaundice", "constipation", "hematuria", "salivation", "tremor",
    "swelling", "discharge", "bleeding", "ataxia", "weakness", "pruritus", "nausea",
    "wheezing", "stiffness", "collapse", "dehydration", "pallor", "halitosis", "rash",
    "cyanosis", "regurgitation", "tenesmus", "incontinence", "blindness", "headshaking",
)

DISEASES = (
    ("liver tumor", "hepatobiliary system"),
    ("otitis externa", "ear"),
    ("atopic dermatitis", "skin"),
    ("chronic kidney disease", "urinary system"),
    ("epilepsy", "nervous system"),
    ("gastroenteritis", "digestive system"),
    ("tracheal collapse", "respiratory system"),
    ("mitral valve disease", "cardiovascular system"),
    ("cystitis", "urinary system"),
    ("patellar luxation", "musculoskeletal system"),
    ("diabetes mellitus", "endocrine system"),
    ("pancreatitis", "digestive system"),
)

SPECIES_BREEDS = {
    "Canine": ("Poodle", "Maltese", "Shih Tzu", "Pomeranian", "Chihuahua", "Retriever"),
    "Feline": ("Korean Shorthair", "Persian", "Siamese", "Russian Blue"),
    "Rabbit": ("Holland Lop", "Netherland Dwarf"),
    "Ferret": ("Sable Ferret",),
    "Hamster": ("Syrian Hamster", "Dwarf Hamster"),
}

GENDERS = ("unspayed female", "spayed female", "unneutered male", "neutered male")

DRUGS = ("Amoxicillin/clavulanic acid Tab.", "Metronidazole Tab.", "Prednisolone Tab.",
         "Famotidine Inj.", "Maropitant Inj.", "Furosemide Tab.", "Cefazolin Inj.",
         "Meloxicam Susp.", "Gabapentin Cap.", "Enrofloxacin Tab.")

TREATMENTS = (("Intravenous injection", "A022"), ("Subcutaneous fluid", "A031"),
              ("Ear cleaning", "B104"), ("Blood test", "L001"), ("Radiography", "R010"),
              ("Ultrasonography", "R020"), ("Urinalysis", "L014"), ("Wound dressing", "S205"),
              ("Nebulization", "A040"), ("Physical examination", "E001"))

COMMENTS = ("The animal breaths uncomfortably", "Appetite is recovering", "Owner reports no change",
            "Condition improved after medication", "Recheck in one week",
            "Mild discomfort on palpation", "Vital signs stable", "Follow up with blood work")


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_animals: int = 100
    records_per_animal: tuple = (1, 3)
    n_diseases: int = 10
    n_symptom_vocab: int = 40
    seed: int = 0
    signal_mode: str = "literal_dependent"

    def validate(self) -> None:
        lo, hi = self.records_per_animal
        if min(self.n_animals, lo, hi, self.n_diseases, self.n_symptom_vocab) < 1:
            raise SynthConfigError("all counts must be >= 1")
        if lo > hi:
            raise SynthConfigError("records_per_animal range is inverted")
        if self.n_symptom_vocab < self.n_diseases:
            raise SynthConfigError("symptom vocabulary is smaller than the disease count")
        if self.signal_mode not in SIGNAL_MODES:
            raise SynthConfigError(f"signal_mode must be one of {SIGNAL_MODES}")


@dataclass(frozen=True)
class Plan:
    """Per-disease planted structure shared by every record."""
    diseases: tuple          # (name, category)
    vocab: tuple
    signatures: tuple        # tuple of word tuples, one per disease
    weight_bands: tuple      # (low, high) kg per disease


def _make_vocab(n: int, rng: np.random.Generator) -> tuple:
    words = list(SYMPTOM_WORDS[:n])
    syllables = ("ka", "lo", "mi", "ra", "tu", "ne", "so", "vi", "de", "po", "zu", "fe")
    seen = set(words)
    while len(words) < n:
        w = "".join(syllables[i] for i in rng.integers(len(syllables), size=4)) + "itis"
        if w not in seen:
            seen.add(w)
            words.append(w)
    return tuple(words)


def make_plan(config: SynthConfig) -> Plan:
    config.validate()
    rng = np.random.default_rng([config.seed, 0])
    diseases = list(DISEASES[:config.n_diseases])
    for i in range(len(diseases), config.n_diseases):
        diseases.append((f"idiopathic disorder {i}", DISEASES[i % len(DISEASES)][1]))
    vocab = _make_vocab(config.n_symptom_vocab, rng)
    size = min(3, len(vocab) // config.n_diseases)
    order = rng.permutation(len(vocab))
    signatures = tuple(tuple(vocab[j] for j in order[i * size:(i + 1) * size])
                       for i in range(config.n_diseases))
    lows = rng.uniform(1.0, 30.0, size=config.n_diseases)
    bands = tuple((round(float(lo), 1), round(float(lo) + 4.0, 1)) for lo in lows)
    return Plan(tuple(diseases), vocab, signatures, bands)


def generate(config: SynthConfig) -> list[EmrRecord]:
    """Deterministic corpus for ``config``; every entity kind is populated."""
    plan = make_plan(config)
    literal = config.signal_mode == "literal_dependent"
    species_names = list(SPECIES_BREEDS)
    lo, hi = config.records_per_animal
    records = []
    serial = 0
    for a in range(config.n_animals):
        rng = np.random.default_rng([config.seed, 1, a])
        species = species_names[int(rng.integers(len(species_names)))]
        breeds = SPECIES_BREEDS[species]
        breed = breeds[int(rng.integers(len(breeds)))]
        gender = GENDERS[int(rng.integers(len(GENDERS)))]
        age0 = int(rng.integers(0, 17))
        chronic = int(rng.integers(config.n_diseases))
        for visit in range(int(rng.integers(lo, hi + 1))):
            d = int(rng.integers(config.n_diseases)) if literal else chronic
            name, category = plan.diseases[d]
            if literal:
                sig = plan.signatures[d]
                k = min(2, len(sig))
                words = [sig[i] for i in sorted(rng.choice(len(sig), size=k, replace=False))]
                words.append(plan.vocab[int(rng.integers(len(plan.vocab)))])
                band = plan.weight_bands[d]
                weight = float(rng.uniform(*band))
            else:
                words = [plan.vocab[int(i)] for i in rng.integers(len(plan.vocab), size=3)]
                weight = float(rng.uniform(1.0, 34.0))
            drug_i = int(rng.integers(len(DRUGS)))
            dose = (250, 100, 50, 20)[int(rng.integers(4))]
            per_day = int(rng.integers(1, 4))
            treatment, code = TREATMENTS[int(rng.integers(len(TREATMENTS)))]
            records.append(EmrRecord(
                record_id=f"M{serial:06d}",
                animal_id=f"A{a:05d}",
                species=species,
                breed=breed,
                gender=gender,
                age=float(min(age0 + visit, 20)),
                weight=round(weight, 2),
                symptom=", ".join(words),
                disease=name,
                disease_category=category,
                prescription=f"1 time {dose}mg, {per_day} times a day {DRUGS[drug_i]}",
                drug_code=f"ANB{drug_i:03d}",
                treatment=treatment,
                treatment_code=code,
                comment=COMMENTS[int(rng.integers(len(COMMENTS)))],
            ))
            serial += 1
    return records


def symptom_words(record: EmrRecord) -> list[str]:
    return [w.strip() for w in (record.symptom or "").split(",") if w.strip()]


def signature_oracle_accuracy(records: Sequence[EmrRecord], plan: Plan) -> float:
    """Accuracy of predicting each record's disease by signature-word overlap."""
    names = [d[0] for d in plan.diseases]
    sigs = [set(s) for s in plan.signatures]
    hits = 0
    for rec in records:
        words = set(symptom_words(rec))
        overlap = [len(words & s) for s in sigs]
        hits += names[int(np.argmax(overlap))] == rec.disease
    return hits / len(records)


def signature_mutual_information(records: Sequence[EmrRecord], plan: Plan) -> float:
    """Empirical MI (nats) between the disease and which signature words appear.

    The feature is the index of the signature with the largest overlap (the
    oracle's evidence), so MI > 0 iff symptoms carry label information.
    """
    sigs = [set(s) for s in plan.signatures]
    joint = Counter()
    for rec in records:
        words = set(symptom_words(rec))
        feat = int(np.argmax([len(words & s) for s in sigs]))
        joint[(feat, rec.disease)] += 1
    n = sum(joint.values())
    fx, fy = Counter(), Counter()
    for (x, y), c in joint.items():
        fx[x] += c
        fy[y] += c
    return sum(c / n * math.log(c * n / (fx[x] * fy[y])) for (x, y), c in joint.items())

