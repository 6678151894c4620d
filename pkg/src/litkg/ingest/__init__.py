from .build import build_kg
from .numeric import NUMERIC_WIDTH, AttributeVectors, NumericStats, encode_numeric
from .records import (
    AGE_GROUPS,
    FIELD_NAMES,
    EmrRecord,
    MalformedCorpusError,
    RecordError,
    age_group,
    parse_records,
    record_from_dict,
    write_records,
)
from .text import embed_text, text_ngrams
