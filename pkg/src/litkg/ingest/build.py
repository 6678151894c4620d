"""Turn EMR records into a knowledge graph."""
from __future__ import annotations

from typing import Sequence

from ..kg import MISSING, EntityKind as K, KnowledgeGraph, Numeric, RelationKind as R, Text
from .records import EmrRecord


def _fmt_number(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def build_kg(records: Sequence[EmrRecord], freeze: bool = True) -> KnowledgeGraph:
    """Build the graph for ``records`` in order.

    Shared vocabulary entities (animals, species, breeds, diseases, ages,
    genders, drugs, codes, prescriptions, treatments) are deduplicated by
    name. Symptom, comment and weight observations belong to one visit and
    are keyed by the record id. A missing age or weight becomes an entity
    carrying the -1 sentinel.
    """
    if not records:
        raise ValueError("build_kg needs at least one record")
    kg = KnowledgeGraph()
    add, link = kg.add_entity, kg.add_triple
    for rec in records:
        m = add(K.MEDICAL_RECORD, rec.record_id)
        a = add(K.ANIMAL, rec.animal_id)
        link(m, R.r_A, a)
        if rec.species:
            link(a, R.r_S, add(K.SPECIES, rec.species))
        if rec.breed:
            link(a, R.r_B, add(K.BREED, rec.breed))
        if rec.gender:
            link(m, R.r_G, add(K.GENDER, rec.gender))

        if rec.age is not None:
            link(m, R.r_E, add(K.AGE, _fmt_number(rec.age), Numeric(float(rec.age))))
            link(m, R.r_U, add(K.AGE_GROUP, rec.age_group))
        else:
            link(m, R.r_E, add(K.AGE, "missing", Numeric(MISSING)))
        weight = float(rec.weight) if rec.weight is not None else MISSING
        link(m, R.r_W, add(K.WEIGHT, f"{rec.record_id}/weight", Numeric(weight)))

        if rec.symptom:
            link(m, R.r_Y, add(K.SYMPTOM, f"{rec.record_id}/symptom", Text(rec.symptom)))
        if rec.comment:
            link(m, R.r_C, add(K.COMMENT, f"{rec.record_id}/comment", Text(rec.comment)))
        if rec.disease:
            d = add(K.DISEASE, rec.disease, Text(rec.disease))
            link(m, R.r_D, d)
            if rec.disease_category:
                link(d, R.r_I, add(K.DISEASE_CATEGORY, rec.disease_category))
        if rec.prescription:
            p = add(K.PRESCRIPTION, rec.prescription, Text(rec.prescription))
            link(m, R.r_P, p)
            if rec.drug_code:
                link(p, R.r_R, add(K.DRUGS, rec.drug_code))
        if rec.treatment:
            t = add(K.TREATMENT, rec.treatment, Text(rec.treatment))
            link(m, R.r_T, t)
            if rec.treatment_code:
                link(t, R.r_O, add(K.TREATMENT_CODE, rec.treatment_code))
    return kg.freeze() if freeze else kg
