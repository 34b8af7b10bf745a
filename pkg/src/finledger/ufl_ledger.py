"""Universal Fact Ledger: row schema, in-memory store, schema-driven offload.

The ledger is the data contract between probabilistic extraction and
deterministic computation. Every row carries its grounding evidence (verbatim
quote, character interval, alignment status, confidence) so downstream
consumers can audit where a number came from. Values are stored unscaled with
the scale kept separately; consumers multiply on read.

Safety rules enforced here:

    * FORMULA facts never carry a numeric value; the formula text is kept in
      ``text_nuance`` so an execution agent reads the string instead of doing
      arithmetic on a fragment like "2.25".
    * LIMIT facts keep their value but the metric name gains a " [Limit]"
      suffix, separating covenants from performance metrics.
    * UNALIGNED rows are pinned to confidence 0.0 and excluded from execution
      reads.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import InvalidKey, LedgerSealed, RejectedCandidate
from .textutils import tokenize

CONFIDENCE_FLOOR = 0.61
CONFIDENCE_CEILING = 0.95


class AlignmentStatus(str, Enum):
    EXACT = "EXACT"
    PARTIAL = "PARTIAL"
    FUZZY = "FUZZY"
    UNALIGNED = "UNALIGNED"


class FactType(str, Enum):
    ACTUAL = "ACTUAL"
    LIMIT = "LIMIT"
    FORMULA = "FORMULA"


def encode_period(period_end: str | None, period_type: str | None) -> str:
    """Stable period key used in row ids; absent parts render as "NA"."""
    return f"{period_end or 'NA'}-{period_type or 'NA'}"


def make_row_id(entity: str, metric: str, period: str) -> str:
    """Deterministic row id: md5 of the lowercased, trimmed key fields.

    The fields are joined with "|" before hashing so that ("ab", "c") and
    ("a", "bc") cannot collide.
    """
    parts = [entity.strip().lower(), metric.strip().lower(), period.strip().lower()]
    if not parts[0] or not parts[1]:
        raise InvalidKey("entity and metric must be non-empty")
    if not parts[2]:
        raise InvalidKey("period key must be non-empty")
    return hashlib.md5("|".join(parts).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class UFLRow:
    """One typed financial fact with grounding metadata."""

    row_id: str
    canonical_entity_id: str
    metric_name: str
    num_value: float | None
    grounding_quote: str
    unit_normalized: str
    scale: float
    period_end: str | None
    period_type: str | None
    doc_section: str
    source_chunk_id: str
    text_nuance: str | None
    related_entity_id: str | None
    char_interval: tuple[int, int] | None
    alignment_status: AlignmentStatus
    confidence_score: float

    def __post_init__(self) -> None:
        if self.alignment_status is AlignmentStatus.UNALIGNED:
            if self.confidence_score != 0.0:
                raise ValueError("UNALIGNED rows must carry confidence 0.0")
            if self.char_interval is not None:
                raise ValueError("UNALIGNED rows must not carry a char interval")
        else:
            if not (CONFIDENCE_FLOOR <= self.confidence_score <= CONFIDENCE_CEILING):
                raise ValueError(
                    f"aligned confidence {self.confidence_score} outside "
                    f"[{CONFIDENCE_FLOOR}, {CONFIDENCE_CEILING}]"
                )
            if self.char_interval is not None:
                start, end = self.char_interval
                if start < 0 or end < start:
                    raise ValueError(f"invalid char interval {self.char_interval}")

    def execution_value(self) -> float | None:
        """Scaled value for computation, or None when the row is unusable.

        UNALIGNED rows and qualitative/formula rows expose no number here.
        """
        if self.alignment_status is AlignmentStatus.UNALIGNED:
            return None
        if self.num_value is None:
            return None
        return self.num_value * self.scale

    def to_json_dict(self) -> dict:
        return {
            "row_id": self.row_id,
            "canonical_entity_id": self.canonical_entity_id,
            "metric_name": self.metric_name,
            "num_value": self.num_value,
            "grounding_quote": self.grounding_quote,
            "unit_normalized": self.unit_normalized,
            "scale": self.scale,
            "period_end": self.period_end,
            "period_type": self.period_type,
            "doc_section": self.doc_section,
            "source_chunk_id": self.source_chunk_id,
            "text_nuance": self.text_nuance,
            "related_entity_id": self.related_entity_id,
            "char_interval": list(self.char_interval) if self.char_interval else None,
            "alignment_status": self.alignment_status.value,
            "confidence_score": self.confidence_score,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "UFLRow":
        interval = obj.get("char_interval")
        return cls(
            row_id=obj["row_id"],
            canonical_entity_id=obj["canonical_entity_id"],
            metric_name=obj["metric_name"],
            num_value=obj.get("num_value"),
            grounding_quote=obj["grounding_quote"],
            unit_normalized=obj["unit_normalized"],
            scale=obj["scale"],
            period_end=obj.get("period_end"),
            period_type=obj.get("period_type"),
            doc_section=obj.get("doc_section", ""),
            source_chunk_id=obj.get("source_chunk_id", ""),
            text_nuance=obj.get("text_nuance"),
            related_entity_id=obj.get("related_entity_id"),
            char_interval=(interval[0], interval[1]) if interval else None,
            alignment_status=AlignmentStatus(obj["alignment_status"]),
            confidence_score=obj["confidence_score"],
        )


@dataclass(frozen=True)
class FactCandidate:
    """A classified fact proposal, not yet admitted to the ledger."""

    metric_name: str
    raw_value: float | None
    grounding_quote: str
    fact_type: FactType
    unit: str
    scale: float
    period_end: str | None
    period_type: str | None
    entity: str
    nuance: str | None
    source_chunk_id: str

    def to_json_dict(self) -> dict:
        return {
            "metric_name": self.metric_name,
            "raw_value": self.raw_value,
            "grounding_quote": self.grounding_quote,
            "fact_type": self.fact_type.value,
            "unit": self.unit,
            "scale": self.scale,
            "period_end": self.period_end,
            "period_type": self.period_type,
            "entity": self.entity,
            "nuance": self.nuance,
            "source_chunk_id": self.source_chunk_id,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "FactCandidate":
        return cls(
            metric_name=obj["metric_name"],
            raw_value=obj.get("raw_value"),
            grounding_quote=obj["grounding_quote"],
            fact_type=FactType(obj["fact_type"]),
            unit=obj.get("unit", "USD"),
            scale=obj.get("scale", 1.0),
            period_end=obj.get("period_end"),
            period_type=obj.get("period_type"),
            entity=obj.get("entity", ""),
            nuance=obj.get("nuance"),
            source_chunk_id=obj.get("source_chunk_id", ""),
        )


@dataclass(frozen=True)
class StructuredFilter:
    """Deterministic ledger filter; every field is optional (AND across fields)."""

    entity_id: str | None = None
    year: int | None = None
    metric_keywords: tuple[str, ...] = ()
    nuance: str | None = None

    def is_empty(self) -> bool:
        return (
            self.entity_id is None
            and self.year is None
            and not self.metric_keywords
            and self.nuance is None
        )

    def to_json_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "year": self.year,
            "metric_keywords": list(self.metric_keywords),
            "nuance": self.nuance,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "StructuredFilter":
        return cls(
            entity_id=obj.get("entity_id"),
            year=obj.get("year"),
            metric_keywords=tuple(obj.get("metric_keywords") or ()),
            nuance=obj.get("nuance"),
        )


def offload_candidate(candidate: FactCandidate, alignment) -> UFLRow:
    """Convert a classified candidate plus its alignment into a safe row.

    ``alignment`` is a grounding.AlignmentResult (duck-typed here to keep the
    ledger free of a grounding import cycle).
    """
    metric_name = candidate.metric_name
    num_value = candidate.raw_value
    nuance = candidate.nuance

    if candidate.fact_type is FactType.FORMULA:
        formula_text = candidate.grounding_quote.strip()
        if not formula_text:
            raise RejectedCandidate("FORMULA candidate with an empty grounding quote")
        num_value = None
        if nuance and formula_text in nuance:
            pass
        elif nuance:
            nuance = f"{nuance} | {formula_text}"
        else:
            nuance = formula_text
    elif candidate.fact_type is FactType.LIMIT:
        metric_name = f"{candidate.metric_name} [Limit]"

    period = encode_period(candidate.period_end, candidate.period_type)
    return UFLRow(
        row_id=make_row_id(candidate.entity, metric_name, period),
        canonical_entity_id=candidate.entity,
        metric_name=metric_name,
        num_value=num_value,
        grounding_quote=candidate.grounding_quote,
        unit_normalized=candidate.unit,
        scale=candidate.scale,
        period_end=candidate.period_end,
        period_type=candidate.period_type,
        doc_section="",
        source_chunk_id=candidate.source_chunk_id,
        text_nuance=nuance,
        related_entity_id=None,
        char_interval=alignment.char_interval,
        alignment_status=alignment.status,
        confidence_score=alignment.confidence,
    )


class Ledger:
    """In-memory row store. Built single-threaded, then sealed and read-only."""

    def __init__(self, rows: Iterable[UFLRow] = ()):
        self._rows: list[UFLRow] = list(rows)
        self._sealed = False

    def __len__(self) -> int:
        return len(self._rows)

    def __iter__(self) -> Iterator[UFLRow]:
        return iter(self._rows)

    @property
    def rows(self) -> tuple[UFLRow, ...]:
        return tuple(self._rows)

    @property
    def sealed(self) -> bool:
        return self._sealed

    def add(self, row: UFLRow) -> None:
        if self._sealed:
            raise LedgerSealed("cannot add rows to a sealed ledger")
        self._rows.append(row)

    def seal(self) -> "Ledger":
        self._sealed = True
        return self

    def filter(self, flt: StructuredFilter) -> list[UFLRow]:
        """Rows matching all provided filter fields.

        The ledger is filtered sequentially, one field at a time. The nuance
        field is a boolean AND-gate over ``text_nuance`` (rows without any
        nuance never match it). Metric keywords match when any keyword's
        tokens are all contained in the metric-name tokens.
        """
        out = list(self._rows)
        if flt.entity_id is not None:
            wanted = flt.entity_id.strip().lower()
            out = [r for r in out if r.canonical_entity_id.strip().lower() == wanted]
        if flt.year is not None:
            prefix = str(flt.year)
            out = [r for r in out if r.period_end and r.period_end.startswith(prefix)]
        if flt.metric_keywords:
            keyword_token_sets = [set(tokenize(kw)) for kw in flt.metric_keywords]
            keyword_token_sets = [s for s in keyword_token_sets if s]
            if keyword_token_sets:
                out = [
                    r
                    for r in out
                    if any(s <= set(tokenize(r.metric_name)) for s in keyword_token_sets)
                ]
        if flt.nuance is not None:
            needle = flt.nuance.lower()
            out = [r for r in out if r.text_nuance and needle in r.text_nuance.lower()]
        return out

    def save_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for row in self._rows:
                fh.write(json.dumps(row.to_json_dict(), sort_keys=True, ensure_ascii=False))
                fh.write("\n")

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "Ledger":
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(UFLRow.from_json_dict(json.loads(line)))
        return cls(rows)
