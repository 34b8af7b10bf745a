"""Saboteur engine: deterministic hard-negative generation and validation.

Golden records are cloned into UNFOUNDED children through four attack
vectors that mirror how production retrieval pipelines actually fail:

    * Logic code lie: swap one trace input for a contextual distractor,
      re-execute, and rewrite the claimed answer so the lie is internally
      consistent.
    * Numeric neighbor trap: shift the claimed scalar to an adjacent table
      cell (wrong year, or wrong line item).
    * Time warp: move the query's year; the evidence answers the wrong
      question.
    * Context swap: keep query and claim, replace the evidence with chunks
      from an unrelated document.
    * Semantic / scale drift: invert a scale token or swap an entity name.

Parents are never mutated; children are pure clones with lineage metadata.
All randomness flows through a per-record generator derived from
(seed, record_id), so the same inputs always produce byte-identical children.
"""

from __future__ import annotations

import hashlib
import random
import re
from dataclasses import dataclass, replace
from difflib import SequenceMatcher
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import (
    AmbiguousAnchor,
    EmptyDistractorPool,
    NoMutableSpan,
    NoNeighbor,
    NoViableTarget,
    NoYearToken,
    TraceError,
)
from .ingest import TableGrid
from .textutils import canon_float, canon_number, scan_numerals, tokenize
from .trace_engine import (
    eval_trace,
    extract_scalars,
    extract_scalars_text,
    parse_trace,
    substitute_scalar,
)

EFFECT_MATCH_THRESHOLD = 0.8

# Values that act as structural indices in traces, never as extracted facts.
STRUCTURAL_SCALARS = frozenset({"0", "1"})

_YEAR_RE = re.compile(r"\b(19|20)\d{2}\b")
_SCALE_TOKEN_RE = re.compile(r"\b(thousand|million|billion)(s?)\b", re.IGNORECASE)
_ENTITY_RE = re.compile(r"\b[A-Z][A-Za-z]+(?: [A-Z][A-Za-z]+)+\b")

DEFAULT_SCALE_MAP: Mapping[str, tuple[str, ...]] = {
    "thousand": ("million",),
    "million": ("thousand", "billion"),
    "billion": ("million",),
}


class Label(str, Enum):
    SUPPORTED = "SUPPORTED"
    UNFOUNDED = "UNFOUNDED"
    GENERAL = "GENERAL"


class SabotageType(str, Enum):
    LOGIC_CODE_LIE = "LOGIC_CODE_LIE"
    NUMERIC_NEIGHBOR = "NUMERIC_NEIGHBOR"
    TIME_WARP = "TIME_WARP"
    CONTEXT_SWAP = "CONTEXT_SWAP"
    SEMANTIC_DRIFT = "SEMANTIC_DRIFT"
    SCALE_DRIFT = "SCALE_DRIFT"


@dataclass(frozen=True)
class DatasetRecord:
    """One (query, context, trace, sentence, label) tuple with lineage."""

    record_id: str
    query: str
    context: tuple[str, ...]
    trace: str | None
    sentence: str
    label: Label
    family_id: str
    sabotage_type: SabotageType | None = None
    parent_id: str | None = None
    injected_value: str | None = None

    def __post_init__(self) -> None:
        if self.label is Label.UNFOUNDED and self.parent_id is not None:
            if self.sabotage_type is None or self.injected_value is None:
                raise ValueError(
                    "programmatic UNFOUNDED children must carry sabotage_type "
                    "and injected_value"
                )

    def to_json_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "query": self.query,
            "context": list(self.context),
            "trace": self.trace,
            "sentence": self.sentence,
            "label": self.label.value,
            "family_id": self.family_id,
            "sabotage_type": self.sabotage_type.value if self.sabotage_type else None,
            "parent_id": self.parent_id,
            "injected_value": self.injected_value,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "DatasetRecord":
        sab = obj.get("sabotage_type")
        return cls(
            record_id=obj["record_id"],
            query=obj["query"],
            context=tuple(obj.get("context") or ()),
            trace=obj.get("trace"),
            sentence=obj["sentence"],
            label=Label(obj["label"]),
            family_id=obj["family_id"],
            sabotage_type=SabotageType(sab) if sab else None,
            parent_id=obj.get("parent_id"),
            injected_value=obj.get("injected_value"),
        )


DistractorPool = Sequence[tuple[str, str]]  # (family_id, chunk text)


def record_rng(rng_seed: int | str, record_id: str) -> random.Random:
    """Per-record generator derived from (global seed, record id)."""
    return random.Random(f"{rng_seed}:{record_id}")


def _child(
    parent: DatasetRecord,
    sabotage_type: SabotageType,
    injected_value: str,
    **overrides,
) -> DatasetRecord:
    return replace(
        parent,
        record_id=f"{parent.record_id}::{sabotage_type.value.lower()}",
        label=Label.UNFOUNDED,
        family_id=parent.family_id,
        sabotage_type=sabotage_type,
        parent_id=parent.record_id,
        injected_value=injected_value,
        **overrides,
    )


def _replace_scalar_spans(sentence: str, target_canon: str, new_text: str) -> str | None:
    """Sentence with every numeral equal to ``target_canon`` replaced.

    Matching runs over scanned numeral tokens (never raw substrings), so "20"
    cannot be rewritten inside "2023". Returns None when no numeral matches.
    """
    spans = [
        (start, end)
        for raw, start, end in scan_numerals(sentence)
        if canon_number(raw) == target_canon
    ]
    if not spans:
        return None
    out = []
    cursor = 0
    for start, end in spans:
        out.append(sentence[cursor:start])
        out.append(new_text)
        cursor = end
    out.append(sentence[cursor:])
    return "".join(out)


def _decimals_in_surface(sentence: str, target_canon: str) -> int:
    for raw, _s, _e in scan_numerals(sentence):
        if canon_number(raw) == target_canon:
            return len(raw.split(".")[1]) if "." in raw else 0
    return 0


def logic_code_lie(rec: DatasetRecord, rng_seed: int | str) -> DatasetRecord:
    """Swap a trace input scalar for a contextual distractor.

    Picks a target v from the trace scalars (excluding the structural 0 and
    1) and a distractor d from context scalars absent from the trace, then
    re-executes the mutated trace and rewrites the claimed answer at the
    original's decimal precision. Pairs are tried in seeded order; a pair is
    viable only when the mutated trace evaluates, changes the result, and the
    reformatted result round-trips exactly, so the child's sentence scalar
    always equals the re-executed trace value.
    """
    if rec.trace is None:
        raise NoViableTarget("record carries no trace")
    try:
        program = parse_trace(rec.trace)
        old_result = eval_trace(program)
    except TraceError as exc:
        raise NoViableTarget(f"trace unusable: {exc}") from exc

    trace_scalars = set(extract_scalars(program))
    context_scalars = set(extract_scalars_text("\n".join(rec.context)))
    targets = sorted(trace_scalars - STRUCTURAL_SCALARS)
    distractors = sorted(context_scalars - trace_scalars)
    if not targets:
        raise NoViableTarget("no non-structural trace scalar to mutate")
    if not distractors:
        raise NoViableTarget("no context scalar outside the trace scalars")

    old_canon = canon_float(old_result)
    decimals = _decimals_in_surface(rec.sentence, old_canon)
    if _replace_scalar_spans(rec.sentence, old_canon, "x") is None:
        raise NoViableTarget("result scalar not present verbatim in sentence")

    rng = record_rng(rng_seed, rec.record_id)
    pairs = [(v, d) for v in targets for d in distractors]
    rng.shuffle(pairs)
    for target, distractor in pairs:
        mutated = substitute_scalar(program, target, distractor)
        try:
            new_result = eval_trace(mutated)
        except TraceError:
            continue
        if new_result == old_result:
            continue
        formatted = format(new_result, f".{decimals}f")
        if float(formatted) != new_result:
            continue
        # the rewritten scalar must survive a re-scan of the sentence (the
        # numeral grammar carries no sign, so negative results are skipped
        # rather than written unverifiably)
        rescanned = [canon_number(raw) for raw, _s, _e in scan_numerals(formatted)]
        if rescanned != [canon_float(new_result)]:
            continue
        new_sentence = _replace_scalar_spans(rec.sentence, old_canon, formatted)
        if new_sentence is None:
            continue
        return _child(
            rec,
            SabotageType.LOGIC_CODE_LIE,
            injected_value=distractor,
            trace=mutated.to_text(),
            sentence=new_sentence,
        )
    raise NoViableTarget("no (target, distractor) pair produced a consistent lie")


def numeric_neighbor(
    rec: DatasetRecord, grid: TableGrid, rng_seed: int | str
) -> DatasetRecord:
    """Shift the claimed scalar to an adjacent cell of the source table.

    A horizontal move lands in the neighboring column (temporal slip: wrong
    fiscal year); a vertical move lands in the adjacent row (metric slip:
    wrong line item). The anchor must appear in exactly one cell.
    """
    matrix = grid.cell_matrix()
    positions: dict[str, list[tuple[int, int]]] = {}
    for i, row in enumerate(matrix):
        for j, cell in enumerate(row):
            if cell is not None:
                positions.setdefault(canon_float(cell), []).append((i, j))

    anchor_canon = None
    for raw, _s, _e in scan_numerals(rec.sentence):
        canon = canon_number(raw)
        if canon in positions:
            anchor_canon = canon
            break
    if anchor_canon is None:
        raise NoViableTarget("no sentence scalar matches any grid cell")
    cells = positions[anchor_canon]
    if len(cells) > 1:
        raise AmbiguousAnchor(f"scalar {anchor_canon} appears in {len(cells)} cells")

    i, j = cells[0]
    neighbors = []
    for ni, nj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
        if 0 <= ni < len(matrix) and 0 <= nj < len(matrix[ni]):
            value = matrix[ni][nj]
            if value is not None and canon_float(value) != anchor_canon:
                neighbors.append((ni, nj, value))
    if not neighbors:
        raise NoNeighbor("anchored cell has no distinct populated neighbor")

    rng = record_rng(rng_seed, rec.record_id)
    _ni, _nj, value = rng.choice(sorted(neighbors))
    new_text = canon_float(value)
    new_sentence = _replace_scalar_spans(rec.sentence, anchor_canon, new_text)
    if new_sentence is None:
        raise NoViableTarget("anchor scalar not replaceable in sentence")
    return _child(
        rec,
        SabotageType.NUMERIC_NEIGHBOR,
        injected_value=new_text,
        sentence=new_sentence,
    )


def time_warp(rec: DatasetRecord, rng_seed: int | str | None = None) -> DatasetRecord:
    """Mutate only the query's year; context and sentence stay byte-identical.

    Default mutation is +1 year, falling back to -1 when the +1 year already
    appears in the query. Passing a seed shuffles that preference.
    """
    m = _YEAR_RE.search(rec.query)
    if m is None:
        raise NoYearToken("query carries no 4-digit year token")
    year = int(m.group())
    offsets = [1, -1]
    if rng_seed is not None:
        record_rng(rng_seed, rec.record_id).shuffle(offsets)
    new_year = None
    for offset in offsets:
        candidate = str(year + offset)
        if not re.search(rf"\b{candidate}\b", rec.query):
            new_year = candidate
            break
    if new_year is None:
        raise NoViableTarget("both adjacent years already appear in the query")
    new_query = re.sub(rf"\b{year}\b", new_year, rec.query)
    return _child(
        rec,
        SabotageType.TIME_WARP,
        injected_value=new_year,
        query=new_query,
    )


def context_swap(
    rec: DatasetRecord,
    distractor_pool: DistractorPool,
    rng_seed: int | str | None = None,
) -> DatasetRecord:
    """Replace the context with chunks from a disjoint family.

    Query and sentence are untouched: the claim becomes a "non-existence"
    hallucination, entirely ungrounded by its evidence.
    """
    pool = [(fam, text) for fam, text in distractor_pool if fam != rec.family_id]
    if not pool:
        raise EmptyDistractorPool("no distractor chunks outside the record's family")
    count = min(max(1, len(rec.context)), len(pool))
    if rng_seed is not None:
        chosen = record_rng(rng_seed, rec.record_id).sample(pool, count)
    else:
        chosen = pool[:count]
    new_context = tuple(text for _fam, text in chosen)
    digest = hashlib.md5("\n".join(new_context).encode("utf-8")).hexdigest()[:12]
    return _child(
        rec,
        SabotageType.CONTEXT_SWAP,
        injected_value=f"swapped_context:{digest}",
        context=new_context,
    )


@dataclass(frozen=True)
class DriftOntology:
    """Bounded substitution tables for scale inversion and entity swaps."""

    scale_map: Mapping[str, tuple[str, ...]] = None  # type: ignore[assignment]
    entity_pool: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.scale_map is None:
            object.__setattr__(self, "scale_map", dict(DEFAULT_SCALE_MAP))


def _match_case(template: str, replacement: str) -> str:
    if template[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


def semantic_scale_drift(
    rec: DatasetRecord, ontology: DriftOntology, rng_seed: int | str
) -> DatasetRecord:
    """Apply exactly one bounded substitution to the sentence.

    Either a scale token is inverted through the ontology ("millions" ->
    "billions") or a capitalized multi-token entity is swapped for a disjoint
    entity from the pool. Scale inversions are tagged SCALE_DRIFT, entity
    swaps SEMANTIC_DRIFT.
    """
    mutations: list[tuple[SabotageType, int, int, str]] = []

    for m in _SCALE_TOKEN_RE.finditer(rec.sentence):
        base = m.group(1).lower()
        plural = m.group(2)
        for replacement_base in ontology.scale_map.get(base, ()):
            replacement = _match_case(m.group(1), replacement_base) + plural
            mutations.append((SabotageType.SCALE_DRIFT, m.start(), m.end(), replacement))

    record_text = rec.sentence + "\n" + "\n".join(rec.context)
    disjoint_entities = [e for e in ontology.entity_pool if e and e not in record_text]
    if disjoint_entities:
        for m in _ENTITY_RE.finditer(rec.sentence):
            for entity in disjoint_entities:
                mutations.append((SabotageType.SEMANTIC_DRIFT, m.start(), m.end(), entity))

    if not mutations:
        raise NoMutableSpan("sentence has no scale token and no swappable entity")

    rng = record_rng(rng_seed, rec.record_id)
    kind, start, end, replacement = rng.choice(mutations)
    new_sentence = rec.sentence[:start] + replacement + rec.sentence[end:]
    return _child(rec, kind, injected_value=replacement, sentence=new_sentence)


@dataclass(frozen=True)
class AuditorVerdict:
    """What an auditor reported for a sabotaged record."""

    error_span: str
    reasoning: str


def token_set_ratio(a: str, b: str) -> float:
    """Fuzzy token-set similarity in [0, 1].

    Compares the sorted token intersection against each side's full sorted
    token string and returns the best pairwise sequence ratio, so word order
    and one-sided extra words do not penalize a match.
    """
    set_a, set_b = set(tokenize(a)), set(tokenize(b))
    if not set_a or not set_b:
        return 0.0
    intersection = " ".join(sorted(set_a & set_b))
    combined_a = (intersection + " " + " ".join(sorted(set_a - set_b))).strip()
    combined_b = (intersection + " " + " ".join(sorted(set_b - set_a))).strip()
    candidates = [(intersection, combined_a), (intersection, combined_b), (combined_a, combined_b)]
    return max(SequenceMatcher(None, x, y).ratio() for x, y in candidates)


def dual_path_validate(child: DatasetRecord, auditor_verdict: AuditorVerdict) -> bool:
    """Accept a sabotage when the auditor saw its effect or named its cause.

    Effect match: the injected value fuzzy-matches the reported error span.
    Cause match: the injected value appears verbatim inside the auditor's
    reasoning block. Auditors often flag the computed output rather than the
    injected input; the cause path keeps those valid sabotages.
    """
    if child.injected_value is None:
        raise ValueError("dual-path validation requires an injected_value")
    effect = token_set_ratio(child.injected_value, auditor_verdict.error_span)
    if effect >= EFFECT_MATCH_THRESHOLD:
        return True
    return child.injected_value in auditor_verdict.reasoning


class FixtureAuditor:
    """Offline auditor deriving verdicts from sabotage metadata.

    Stands in for a teacher model so the validation protocol is testable
    without any network backend.
    """

    def audit(self, child: DatasetRecord) -> AuditorVerdict:
        injected = child.injected_value or ""
        return AuditorVerdict(
            error_span=f"the value {injected}",
            reasoning=(
                f"The claim relies on {injected}, which is not supported by "
                "the provided evidence."
            ),
        )


def axiomatic_noise_inject(
    rec: DatasetRecord,
    distractor_pool: DistractorPool,
    rng_seed: int | str,
) -> DatasetRecord:
    """Attach 1-3 irrelevant chunks to an empty-context GENERAL record.

    Breaks the "empty context means GENERAL" shortcut: the model must ignore
    real-looking but irrelevant evidence and still answer from parametric
    knowledge. The record keeps its id and label; only context changes.
    """
    if rec.label is not Label.GENERAL:
        raise ValueError("noise injection applies to GENERAL records only")
    if rec.context:
        raise ValueError("noise injection applies to empty-context records only")
    pool = [(fam, text) for fam, text in distractor_pool if fam != rec.family_id]
    if not pool:
        raise EmptyDistractorPool("no distractor chunks outside the record's family")
    rng = record_rng(rng_seed, rec.record_id)
    count = rng.randint(1, min(3, len(pool)))
    chosen = rng.sample(pool, count)
    return replace(rec, context=tuple(text for _fam, text in chosen))


def build_distractor_pool(records: Iterable[DatasetRecord]) -> list[tuple[str, str]]:
    """(family_id, chunk text) pairs usable as swap / noise material."""
    pool: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for rec in records:
        for text in rec.context:
            key = (rec.family_id, text)
            if text and key not in seen:
                seen.add(key)
                pool.append(key)
    return pool
