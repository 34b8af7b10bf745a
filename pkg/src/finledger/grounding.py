"""Double-lock grounding: mechanical quote alignment plus the semantic gate.

Lock 1 maps a grounding quote to character offsets in its source chunk via a
three-tier fallback (exact / numeric-partial / fuzzy sliding window). Full
normalized sequence matching over a 3000-character chunk is useless for short
numeric quotes (the giant denominator drags every score to zero), so the fuzzy
tier scores token recall against quote-sized windows instead.

Lock 2 guards against "phantom metrics": a real, aligned number attached to a
fabricated metric name. It requires a minimum overlap between the metric's
core tokens and the chunk's tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidQuote, VacuousMetric
from .textutils import (
    DOMAIN_STOP_WORDS,
    canon_number,
    scan_numerals,
    tokenize,
    tokenize_with_spans,
)
from .ufl_ledger import AlignmentStatus

TIER1_CONFIDENCE = 0.95
TIER2_CONFIDENCE = 0.70
TIER3_CONFIDENCE = 0.61
TIER3_RECALL_THRESHOLD = 0.55
SEMANTIC_GATE_THRESHOLD = 0.30


@dataclass(frozen=True)
class AlignmentResult:
    status: AlignmentStatus
    char_interval: tuple[int, int] | None
    confidence: float
    tier_detail: str

    def __post_init__(self) -> None:
        unaligned = self.status is AlignmentStatus.UNALIGNED
        if unaligned != (self.confidence == 0.0) or unaligned != (self.char_interval is None):
            raise ValueError(
                "UNALIGNED, zero confidence, and a missing interval must coincide"
            )


_UNALIGNED = AlignmentResult(
    status=AlignmentStatus.UNALIGNED,
    char_interval=None,
    confidence=0.0,
    tier_detail="unaligned",
)


def _normalize_whitespace(text: str) -> tuple[str, list[int]]:
    """Collapse whitespace runs to single spaces, keeping an offset map.

    Returns (normalized, index_map) where index_map[i] is the original index
    of normalized[i]. Leading and trailing whitespace is dropped.
    """
    out: list[str] = []
    index_map: list[int] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            j = i
            while j < n and text[j].isspace():
                j += 1
            if out and j < n:
                out.append(" ")
                index_map.append(i)
            i = j
        else:
            out.append(ch)
            index_map.append(i)
            i += 1
    return "".join(out), index_map


def _longest_common_substring(a: str, b: str) -> tuple[int, int]:
    """(start offset in b, length) of the longest common substring."""
    if not a or not b:
        return 0, 0
    prev = [0] * (len(b) + 1)
    best_len = 0
    best_end = 0
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            if ai == b[j - 1]:
                cur[j] = prev[j - 1] + 1
                if cur[j] > best_len:
                    best_len = cur[j]
                    best_end = j
        prev = cur
    return best_end - best_len, best_len


def _tier1(quote: str, chunk_body: str) -> AlignmentResult | None:
    pos = chunk_body.find(quote)
    if pos >= 0:
        return AlignmentResult(
            status=AlignmentStatus.EXACT,
            char_interval=(pos, pos + len(quote)),
            confidence=TIER1_CONFIDENCE,
            tier_detail="tier1_exact",
        )
    norm_quote, _ = _normalize_whitespace(quote)
    norm_chunk, index_map = _normalize_whitespace(chunk_body)
    if norm_quote:
        pos = norm_chunk.find(norm_quote)
        if pos >= 0:
            start = index_map[pos]
            end = index_map[pos + len(norm_quote) - 1] + 1
            return AlignmentResult(
                status=AlignmentStatus.EXACT,
                char_interval=(start, end),
                confidence=TIER1_CONFIDENCE,
                tier_detail="tier1_ws_normalized",
            )
    return None


def _tier2(quote: str, chunk_body: str) -> AlignmentResult | None:
    numerals = scan_numerals(quote)
    if not numerals:
        return None
    raw = max(numerals, key=lambda t: len(t[0]))[0]
    target = canon_number(raw)
    # Compare numeral tokens canonically so both the comma'd and bare forms
    # match, and "615" never anchors inside a larger numeral like "1,615".
    for chunk_raw, start, end in scan_numerals(chunk_body):
        if canon_number(chunk_raw) == target:
            return AlignmentResult(
                status=AlignmentStatus.PARTIAL,
                char_interval=(start, end),
                confidence=TIER2_CONFIDENCE,
                tier_detail="tier2_numeric",
            )
    return None


def _tier3(quote: str, chunk_body: str, recall_threshold: float) -> AlignmentResult | None:
    quote_tokens = tokenize(quote)
    if not quote_tokens:
        return None
    chunk_spans = tokenize_with_spans(chunk_body)
    if not chunk_spans:
        return None
    quote_set = set(quote_tokens)
    width = len(quote_tokens)
    best_recall = -1.0
    best_index = 0
    last_start = max(0, len(chunk_spans) - width)
    for i in range(last_start + 1):
        window = chunk_spans[i : i + width]
        window_set = {tok for tok, _, _ in window}
        recall = len(quote_set & window_set) / len(quote_set)
        if recall > best_recall:
            best_recall = recall
            best_index = i
    if best_recall <= recall_threshold:
        return None
    window = chunk_spans[best_index : best_index + width]
    span_start = window[0][1]
    span_end = window[-1][2]
    region = chunk_body[span_start:span_end]
    offset, length = _longest_common_substring(quote.lower(), region.lower())
    if length == 0:
        return None
    return AlignmentResult(
        status=AlignmentStatus.FUZZY,
        char_interval=(span_start + offset, span_start + offset + length),
        confidence=TIER3_CONFIDENCE,
        tier_detail="tier3_fuzzy",
    )


def align_quote(
    quote: str,
    chunk_body: str,
    recall_threshold: float = TIER3_RECALL_THRESHOLD,
) -> AlignmentResult:
    """Locate ``quote`` inside a prefix-stripped chunk body.

    Tier 1: character-exact substring search, then a whitespace-normalized
    pass mapped back to original offsets (EXACT, 0.95). Tier 2: the quote's
    longest contiguous numeric token searched on its own (PARTIAL, 0.70).
    Tier 3: a quote-sized token window slides over the chunk; the best window
    by token recall, when strictly above ``recall_threshold``, is refined to
    the longest common substring (FUZZY, 0.61). Anything else is UNALIGNED
    with confidence 0.0.
    """
    if not quote or not quote.strip():
        raise InvalidQuote("quote must be non-empty")
    result = _tier1(quote, chunk_body)
    if result is not None:
        return result
    result = _tier2(quote, chunk_body)
    if result is not None:
        return result
    result = _tier3(quote, chunk_body, recall_threshold)
    if result is not None:
        return result
    return _UNALIGNED


def semantic_gate(
    metric_name: str,
    chunk_body: str,
    tau_sem: float = SEMANTIC_GATE_THRESHOLD,
    stop_words: frozenset[str] = DOMAIN_STOP_WORDS,
) -> tuple[float, bool]:
    """Overlap score between a metric name's core tokens and the chunk.

    Core tokens are the metric tokens minus financial stop-words; the score is
    |core ∩ chunk tokens| / |core|. Falling below ``tau_sem`` rejects the fact
    as a phantom metric. Raises VacuousMetric when nothing but stop-words
    remains, so callers can log that failure distinctly.
    """
    if not metric_name or not metric_name.strip():
        raise VacuousMetric("metric name must be non-empty")
    core = set(tokenize(metric_name)) - stop_words
    if not core:
        raise VacuousMetric(f"metric '{metric_name}' has no core tokens after stop-word removal")
    chunk_tokens = set(tokenize(chunk_body))
    score = len(core & chunk_tokens) / len(core)
    return score, score >= tau_sem
