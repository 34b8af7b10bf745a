"""Shared text primitives: tokenization, numeral scanning, canonical numbers.

Every overlap computation in the toolchain (quote alignment, semantic gate,
lexical gate, keyword scoring) runs on the same tokenizer so thresholds stay
comparable: lowercase, split on any non-alphanumeric, drop empties.
"""

from __future__ import annotations

import re

# Non-discriminative financial modifiers. Removed from the query / metric-name
# side of overlap scores, never from the candidate side.
DOMAIN_STOP_WORDS = frozenset(
    {"net", "total", "per", "ratio", "gross", "overall", "aggregate", "combined"}
)

_TOKEN_RE = re.compile(r"[A-Za-z0-9]+")

# A numeral is a maximal run of digits and commas with at most one decimal
# point, starting with a digit. "$100M" scans as "100"; "1,234.56" as itself.
_NUMERAL_RE = re.compile(r"\d[\d,]*(?:\.\d+)?")


def tokenize(text: str) -> list[str]:
    return [m.group().lower() for m in _TOKEN_RE.finditer(text)]


def tokenize_with_spans(text: str) -> list[tuple[str, int, int]]:
    """Tokens plus their (start, end) character offsets in the original text."""
    return [(m.group().lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def scan_numerals(text: str) -> list[tuple[str, int, int]]:
    """All numeral tokens in ``text`` as (raw, start, end), left to right."""
    out = []
    for m in _NUMERAL_RE.finditer(text):
        raw = m.group().rstrip(",")
        out.append((raw, m.start(), m.start() + len(raw)))
    return out


def canon_number(raw: str) -> str:
    """Canonical decimal form of a numeral string.

    Strips commas and currency prefixes, then renders the parsed value so that
    surface variants compare equal: "100", "100.0" and "1,00" + "0" artifacts
    all canonicalize to "100".
    """
    cleaned = raw.strip().lstrip("$").replace(",", "")
    return format(float(cleaned), ".12g")


def canon_float(value: float) -> str:
    """Canonical decimal form of a float, matching ``canon_number`` output."""
    return format(value, ".12g")
