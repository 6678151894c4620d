"""EMR record schema and CSV/JSONL parsing."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional

AGE_GROUPS = ("Infancy", "Adult", "Old-age", "Super-aged")

MAX_MALFORMED_FRACTION = 0.10


class RecordError(ValueError):
    pass


class MalformedCorpusError(RecordError):
    def __init__(self, message: str, report: list):
        super().__init__(message)
        self.report = report


def age_group(age: Optional[float]) -> Optional[str]:
    if age is None:
        return None
    if age < 1:
        return "Infancy"
    if age < 7:
        return "Adult"
    if age < 13:
        return "Old-age"
    return "Super-aged"


@dataclass(frozen=True)
class EmrRecord:
    record_id: str
    animal_id: str
    species: Optional[str] = None
    breed: Optional[str] = None
    gender: Optional[str] = None
    age: Optional[float] = None
    weight: Optional[float] = None
    symptom: Optional[str] = None
    disease: Optional[str] = None
    disease_category: Optional[str] = None
    prescription: Optional[str] = None
    drug_code: Optional[str] = None
    treatment: Optional[str] = None
    treatment_code: Optional[str] = None
    comment: Optional[str] = None

    def __post_init__(self):
        if not self.record_id or not self.animal_id:
            raise RecordError("record_id and animal_id are required")
        if self.age is not None and not (math.isfinite(self.age) and self.age >= 0):
            raise RecordError(f"age must be a finite value >= 0, got {self.age}")
        if self.weight is not None and not (math.isfinite(self.weight) and self.weight > 0):
            raise RecordError(f"weight must be a finite value > 0, got {self.weight}")

    @property
    def age_group(self) -> Optional[str]:
        return age_group(self.age)

    def to_dict(self) -> dict:
        return asdict(self)


FIELD_NAMES = tuple(f.name for f in fields(EmrRecord))
NUMERIC_FIELDS = ("age", "weight")


def _coerce(raw: dict) -> EmrRecord:
    unknown = set(raw) - set(FIELD_NAMES) - {"age_group"}
    if unknown:
        raise RecordError(f"unknown fields: {sorted(unknown)}")
    values = {}
    for name in FIELD_NAMES:
        v = raw.get(name)
        if isinstance(v, str):
            v = v.strip()
        if v is None or v == "":
            values[name] = None
            continue
        if name in NUMERIC_FIELDS:
            try:
                v = float(v)
            except (TypeError, ValueError):
                raise RecordError(f"{name} is not a number: {v!r}") from None
        else:
            v = str(v)
        values[name] = v
    return EmrRecord(**values)


def record_from_dict(raw: dict) -> EmrRecord:
    return _coerce(raw)


def parse_records(path, format: Optional[str] = None, *, report: Optional[list] = None
                  ) -> list[EmrRecord]:
    """Read EMR records from a CSV (with header) or JSONL file.

    Malformed rows are skipped and described in ``report`` as
    ``{"line": n, "error": msg}``. If more than 10% of rows are malformed the
    whole parse is aborted with :class:`MalformedCorpusError`.
    """
    path = Path(path)
    fmt = format or ("jsonl" if path.suffix in (".jsonl", ".json") else "csv")
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unsupported format {fmt!r}")
    with path.open(encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            reader = csv.DictReader(fh)
            missing = {"record_id", "animal_id"} - set(reader.fieldnames or ())
            if missing:
                raise RecordError(f"CSV header lacks required columns {sorted(missing)}")
            rows = [(i + 2, row) for i, row in enumerate(reader)]
        else:
            rows = [(i + 1, line) for i, line in enumerate(fh) if line.strip()]

    errors = report if report is not None else []
    records = []
    for lineno, row in rows:
        try:
            if fmt == "jsonl":
                row = json.loads(row)
                if not isinstance(row, dict):
                    raise RecordError("line is not a JSON object")
            elif None in row:
                raise RecordError("row has more cells than the header")
            records.append(_coerce(row))
        except (RecordError, json.JSONDecodeError) as exc:
            errors.append({"line": lineno, "error": str(exc)})
    if rows and len(errors) > MAX_MALFORMED_FRACTION * len(rows):
        raise MalformedCorpusError(
            f"{len(errors)} of {len(rows)} rows malformed in {path}", errors)
    return records


def write_records(records: Iterable[EmrRecord], path, format: Optional[str] = None) -> None:
    path = Path(path)
    fmt = format or ("jsonl" if path.suffix in (".jsonl", ".json") else "csv")

    def cell(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return v

    with path.open("w", encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            writer = csv.DictWriter(fh, fieldnames=FIELD_NAMES, lineterminator="\n")
            writer.writeheader()
            for rec in records:
                writer.writerow({k: cell(v) for k, v in rec.to_dict().items()})
        else:
            for rec in records:
                fh.write(json.dumps(rec.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")

