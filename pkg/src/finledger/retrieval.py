"""Hybrid lexical-semantic retrieval: the gate, graph expansion, assembly.

Vector search is pluggable and never computed here; candidates arrive as
(chunk_id, similarity) pairs from a backend. What this module owns is the
deterministic half: the recall-based lexical gate that blocks distributional
conflation ("Net Income" retrieving "Net Sales"), the three ledger expansion
pathways, and priority-scored context assembly.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .errors import VacuousQuery
from .ingest import Chunk, strip_prefix
from .textutils import DOMAIN_STOP_WORDS, tokenize
from .ufl_ledger import Ledger, StructuredFilter, UFLRow

LEXICAL_GATE_THRESHOLD = 0.30
PIVOT_GATE_THRESHOLD = 0.20
CONTEXT_TOP_K = 5
LINK_BONUS = 5.0


@dataclass(frozen=True)
class RetrievalPlan:
    """Bipartite retrieval instruction: structured filter plus vector hypothesis."""

    structured_filter: StructuredFilter = field(default_factory=StructuredFilter)
    vector_hypothesis: str = ""

    def __post_init__(self) -> None:
        if self.structured_filter.is_empty() and not self.vector_hypothesis.strip():
            raise ValueError("a retrieval plan needs a filter or a vector hypothesis")

    def to_json_dict(self) -> dict:
        return {
            "structured_filter": self.structured_filter.to_json_dict(),
            "vector_hypothesis": self.vector_hypothesis,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "RetrievalPlan":
        return cls(
            structured_filter=StructuredFilter.from_json_dict(obj.get("structured_filter") or {}),
            vector_hypothesis=obj.get("vector_hypothesis", ""),
        )


class VectorBackend(Protocol):
    def search(self, query: str) -> list[tuple[str, float]]:
        """Pre-scored candidates for ``query`` as (chunk_id, similarity)."""
        ...


class FixtureVectorBackend:
    """Deterministic backend replaying pre-scored candidates per query."""

    def __init__(self, results: Mapping[str, Sequence[tuple[str, float]]]):
        self._results = {q: list(v) for q, v in results.items()}

    def search(self, query: str) -> list[tuple[str, float]]:
        return [(cid, float(sim)) for cid, sim in self._results.get(query, [])]

    @classmethod
    def from_json(cls, path: str | Path) -> "FixtureVectorBackend":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls({q: [(c, s) for c, s in v] for q, v in raw.items()})


class ChunkStore:
    """Read-only chunk lookup keyed by chunk_id."""

    def __init__(self, chunks: Iterable[Chunk] = ()):
        self._chunks = {c.chunk_id: c for c in chunks}

    def __len__(self) -> int:
        return len(self._chunks)

    def get(self, chunk_id: str) -> Chunk | None:
        return self._chunks.get(chunk_id)

    def ids(self) -> list[str]:
        return sorted(self._chunks)

    def all(self) -> list[Chunk]:
        return [self._chunks[cid] for cid in sorted(self._chunks)]


def lexical_gate(
    query: str,
    candidate_body: str,
    tau_lex: float = LEXICAL_GATE_THRESHOLD,
    stop_words: frozenset[str] = DOMAIN_STOP_WORDS,
) -> tuple[float, bool]:
    """Token-intersection recall of the query against a candidate body.

    Stop-words are removed from the query multiset before |Q| is computed;
    the candidate keeps all its tokens. Recall uses multiset multiplicities:

        R = sum over distinct t in Q of min(count(t, Q), count(t, C)) / |Q|

    Jaccard is deliberately not used: verbose chunks make the union
    denominator explode, dragging perfect matches toward zero. The candidate
    body must already be prefix-stripped. Raises VacuousQuery when nothing
    but stop-words remains (such a gate passes nothing).
    """
    query_tokens = [t for t in tokenize(query) if t not in stop_words]
    if not query_tokens:
        raise VacuousQuery(f"query '{query}' has no tokens after stop-word removal")
    query_counts = Counter(query_tokens)
    body_counts = Counter(tokenize(candidate_body))
    overlap = sum(min(n, body_counts[t]) for t, n in query_counts.items())
    recall = overlap / len(query_tokens)
    return recall, recall >= tau_lex


@dataclass(frozen=True)
class GatedChunk:
    chunk: Chunk
    recall: float
    pathway: str
    forced: bool = False


@dataclass
class RetrievalSet:
    """Raw output of plan execution before assembly."""

    rows: list[UFLRow]
    chunks: list[GatedChunk]


def execute_plan(
    plan: RetrievalPlan,
    ledger: Ledger,
    chunk_store: ChunkStore,
    vector_backend: VectorBackend,
    tau_lex: float = LEXICAL_GATE_THRESHOLD,
    tau_lex_pivot: float = PIVOT_GATE_THRESHOLD,
) -> RetrievalSet:
    """Run the three concurrent expansion pathways and merge by id.

    1. Structured expansion: sequential ledger filtering, nuance AND-gate
       included.
    2. Entity pivoting: rows that carry a related entity trigger a second
       vector query for that entity, gated at the relaxed threshold
       (entity mentions in prose are sparse).
    3. Frequency-based chunking: the most frequent source chunks among the
       retrieved rows are force-included so the qualitative "data hub" text
       travels with the numbers.
    """
    rows = ledger.filter(plan.structured_filter)

    gated: dict[str, GatedChunk] = {}

    def admit(candidate: GatedChunk) -> None:
        existing = gated.get(candidate.chunk.chunk_id)
        if existing is None:
            gated[candidate.chunk.chunk_id] = candidate
            return
        merged = GatedChunk(
            chunk=existing.chunk,
            recall=max(existing.recall, candidate.recall),
            pathway=existing.pathway,
            forced=existing.forced or candidate.forced,
        )
        gated[candidate.chunk.chunk_id] = merged

    def gate_candidates(query: str, threshold: float, pathway: str) -> None:
        for chunk_id, _similarity in vector_backend.search(query):
            chunk = chunk_store.get(chunk_id)
            if chunk is None:
                continue
            try:
                recall, passed = lexical_gate(query, strip_prefix(chunk), threshold)
            except VacuousQuery:
                return
            if passed:
                admit(GatedChunk(chunk=chunk, recall=recall, pathway=pathway))

    if plan.vector_hypothesis.strip():
        gate_candidates(plan.vector_hypothesis, tau_lex, "vector")

    for entity in sorted({r.related_entity_id for r in rows if r.related_entity_id}):
        gate_candidates(entity, tau_lex_pivot, "pivot")

    counts = Counter(r.source_chunk_id for r in rows if r.source_chunk_id)
    if counts:
        top = max(counts.values())
        for chunk_id in sorted(cid for cid, n in counts.items() if n == top):
            chunk = chunk_store.get(chunk_id)
            if chunk is not None:
                admit(GatedChunk(chunk=chunk, recall=0.0, pathway="frequency", forced=True))

    ordered = [gated[cid] for cid in sorted(gated)]
    return RetrievalSet(rows=rows, chunks=ordered)


@dataclass(frozen=True)
class AssembledContext:
    """Deduplicated, priority-ranked context ready for prompt fusion."""

    ufl_rows: tuple[UFLRow, ...]
    chunks: tuple[tuple[Chunk, float], ...]
    rendered: str

    def to_json_dict(self) -> dict:
        return {
            "ufl_rows": [r.to_json_dict() for r in self.ufl_rows],
            "chunks": [
                {"chunk": c.to_json_dict(), "score": score} for c, score in self.chunks
            ],
            "rendered": self.rendered,
        }


def _render(rows: Sequence[UFLRow], scored: Sequence[tuple[Chunk, float]]) -> str:
    lines: list[str] = []
    if rows:
        lines.append("## Fact Ledger")
        lines.append("| entity | metric | value | unit | scale | period | source_chunk |")
        lines.append("| --- | --- | --- | --- | --- | --- | --- |")
        for r in rows:
            value = "" if r.num_value is None else format(r.num_value, "g")
            period = f"{r.period_end or ''} {r.period_type or ''}".strip()
            lines.append(
                f"| {r.canonical_entity_id} | {r.metric_name} | {value} "
                f"| {r.unit_normalized} | {format(r.scale, 'g')} | {period} "
                f"| {r.source_chunk_id} |"
            )
        lines.append("")
    for chunk, score in scored:
        lines.append(f"### Chunk {chunk.chunk_id} (score {format(score, 'g')})")
        lines.append(strip_prefix(chunk))
        lines.append("")
    return "\n".join(lines).rstrip() + ("\n" if lines else "")


def assemble_context(
    rows: Iterable[UFLRow],
    chunks: Iterable[Chunk],
    query_keywords: Iterable[str],
    k: int = CONTEXT_TOP_K,
) -> AssembledContext:
    """Deduplicate, score, truncate to the top k chunks, and render.

    A chunk earns +5 when it is physically linked to a retrieved row via
    source_chunk_id and +1 per distinct contained query keyword. Ties break
    lexicographically on chunk_id.
    """
    unique_rows: dict[str, UFLRow] = {}
    for row in rows:
        unique_rows.setdefault(row.row_id, row)
    row_list = [unique_rows[rid] for rid in sorted(unique_rows)]
    linked_ids = {r.source_chunk_id for r in row_list if r.source_chunk_id}

    keywords = {kw.lower() for kw in query_keywords if kw}
    unique_chunks: dict[str, Chunk] = {}
    for chunk in chunks:
        unique_chunks.setdefault(chunk.chunk_id, chunk)

    scored: list[tuple[Chunk, float]] = []
    for chunk_id in sorted(unique_chunks):
        chunk = unique_chunks[chunk_id]
        body_tokens = set(tokenize(strip_prefix(chunk)))
        score = (LINK_BONUS if chunk_id in linked_ids else 0.0) + float(
            sum(1 for kw in keywords if kw in body_tokens)
        )
        scored.append((chunk, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0].chunk_id))
    top = scored[: max(k, 0)]

    return AssembledContext(
        ufl_rows=tuple(row_list),
        chunks=tuple(top),
        rendered=_render(row_list, top),
    )


def rule_based_plan(
    query: str,
    entity_aliases: Mapping[str, str] | None = None,
    stop_words: frozenset[str] = DOMAIN_STOP_WORDS,
) -> RetrievalPlan:
    """Offline stand-in for the query navigator: pattern-extract a plan.

    Picks up a 4-digit year, maps the first matching alias ("apple" ->
    "id_aapl") to an entity id, and uses the stop-word-filtered query tokens
    as metric keywords. The vector hypothesis is the query itself.
    """
    year = None
    m = re.search(r"\b(19|20)\d{2}\b", query)
    if m:
        year = int(m.group())
    entity_id = None
    lowered = query.lower()
    for alias, canonical in sorted((entity_aliases or {}).items()):
        if alias.lower() in lowered:
            entity_id = canonical
            break
    keywords = tuple(
        t for t in tokenize(query) if t not in stop_words and not t.isdigit()
    )
    return RetrievalPlan(
        structured_filter=StructuredFilter(
            entity_id=entity_id, year=year, metric_keywords=keywords
        ),
        vector_hypothesis=query,
    )
