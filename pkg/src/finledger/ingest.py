"""Deterministic ingestion: trailing-buffer chunking and markdown table melts.

Chunking splits source text at newline boundaries under a character threshold
and injects the previous block's tail as a labeled prefix, so cross-boundary
references ("see Note 12", a table's scale caption) survive the split. Table
parsing walks a hierarchical indentation stack to emit fully qualified metric
paths and one numeric fact candidate per populated cell.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable

from .errors import EmptyInput, MalformedTable
from .ufl_ledger import FactCandidate, FactType

DEFAULT_CHUNK_CHARS = 3000
DEFAULT_TAIL_CHARS = 300

PREFIX_MARKER = "Previous Context: "

_CAPTION_SCALES = {
    "thousands": 1e3,
    "millions": 1e6,
    "billions": 1e9,
}
_CAPTION_RE = re.compile(r"in\s+(thousands|millions|billions)", re.IGNORECASE)
_YEAR_RE = re.compile(r"\b(19|20)\d{2}\b")
_PERIOD_TYPE_RE = re.compile(r"\b(FY|TTM|Q[1-4])\b", re.IGNORECASE)
_SEPARATOR_ROW_RE = re.compile(r"^[\s|:\-+]+$")


@dataclass(frozen=True)
class Chunk:
    """A text block plus the injected previous-context prefix."""

    chunk_id: str
    body: str
    prefix: str | None
    source_doc: str
    start_offset: int
    is_table_tail_carrier: bool = False

    def prefix_payload(self) -> str | None:
        if self.prefix is None:
            return None
        return self.prefix[len(PREFIX_MARKER):]

    def rendered(self) -> str:
        """Full text as presented to an extraction model."""
        if self.prefix is None:
            return self.body
        return f"{self.prefix}\n{self.body}"

    def to_json_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "body": self.body,
            "prefix": self.prefix,
            "source_doc": self.source_doc,
            "start_offset": self.start_offset,
            "is_table_tail_carrier": self.is_table_tail_carrier,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Chunk":
        return cls(
            chunk_id=obj["chunk_id"],
            body=obj["body"],
            prefix=obj.get("prefix"),
            source_doc=obj.get("source_doc", ""),
            start_offset=obj.get("start_offset", 0),
            is_table_tail_carrier=obj.get("is_table_tail_carrier", False),
        )


def chunk_text(
    source: str,
    tau: int = DEFAULT_CHUNK_CHARS,
    k: int = DEFAULT_TAIL_CHARS,
    source_doc: str = "doc",
) -> list[Chunk]:
    """Split ``source`` into newline-preference chunks with trailing buffers.

    Each split point is the last newline at or before the ``tau`` boundary;
    when no newline exists in the window the cut is hard at ``tau``. Every
    chunk after the first carries a prefix built from the final ``k``
    characters of the preceding block, so a table tail (scale captions,
    headers) propagates into the following prose chunk. Concatenating the
    bodies in order reconstructs the source exactly.
    """
    if not source:
        raise EmptyInput("cannot chunk empty source text")
    if k <= 0 or tau <= k:
        raise ValueError("chunking requires tau > k > 0")

    chunks: list[Chunk] = []
    pos = 0
    buffer: str | None = None
    while pos < len(source):
        remaining = source[pos:]
        if len(remaining) <= tau:
            body = remaining
        else:
            window = remaining[:tau]
            cut = window.rfind("\n")
            body = window if cut == -1 else window[: cut + 1]
        prefix = None
        carrier = False
        if buffer is not None:
            prefix = PREFIX_MARKER + buffer
            carrier = "|" in buffer
        chunks.append(
            Chunk(
                chunk_id=f"{source_doc}:{len(chunks):04d}",
                body=body,
                prefix=prefix,
                source_doc=source_doc,
                start_offset=pos,
                is_table_tail_carrier=carrier,
            )
        )
        buffer = body[-k:]
        pos += len(body)
    return chunks


def strip_prefix(chunk: Chunk) -> str:
    """Body only; the injected prefix never reaches downstream tokenization."""
    return chunk.body


@dataclass(frozen=True)
class ColumnHeader:
    label: str
    scale: float | None = None
    period_end: str | None = None
    period_type: str | None = None


@dataclass(frozen=True)
class TableRow:
    indent_depth: int
    label: str
    cells: tuple[float | None, ...]


@dataclass(frozen=True)
class TableGrid:
    """Parsed table: headers, indented rows, and the caption-level scale."""

    headers: tuple[ColumnHeader, ...]
    rows: tuple[TableRow, ...]
    caption_scale: float | None = None
    caption_scale_unknown: bool = False

    def __post_init__(self) -> None:
        prev_depth = 0
        for i, row in enumerate(self.rows):
            if len(row.cells) != len(self.headers):
                raise MalformedTable(
                    f"row {i} has {len(row.cells)} cells, expected {len(self.headers)}",
                    row_index=i,
                )
            if row.indent_depth < 0 or row.indent_depth > prev_depth + 1:
                raise MalformedTable(
                    f"row {i} indent depth {row.indent_depth} jumps past {prev_depth + 1}",
                    row_index=i,
                )
            prev_depth = row.indent_depth

    def cell_matrix(self) -> list[list[float | None]]:
        return [list(row.cells) for row in self.rows]


def _split_row(line: str) -> list[str]:
    stripped = line.strip()
    if stripped.startswith("|"):
        stripped = stripped[1:]
    if stripped.endswith("|"):
        stripped = stripped[:-1]
    return stripped.split("|")


def _indent_depth(raw_cell: str) -> tuple[int, str]:
    """(depth, cleaned label) from a raw label cell.

    Each "&nbsp;" entity counts one indent unit, as does each leading space
    beyond the conventional single markdown pad; two units make one depth
    level.
    """
    text = raw_cell
    if text.startswith(" "):
        text = text[1:]
    units = 0
    while text.startswith("&nbsp;"):
        units += 1
        text = text[len("&nbsp;"):]
    while text.startswith(" "):
        units += 1
        text = text[1:]
    return units // 2, text.strip()


def _parse_cell(text: str) -> tuple[float, bool] | None:
    """Numeric value of a table cell, or None for blanks and labels.

    Accepts "$" prefixes, thousands commas, "(1,234)" negatives, and a
    trailing "%". Returns (value, is_percent).
    """
    t = text.strip()
    if not t or t in {"-", "—", "–"}:
        return None
    if t.startswith("$"):
        t = t[1:].strip()
    negative = t.startswith("(") and t.endswith(")")
    if negative:
        t = t[1:-1].strip()
    if t.startswith("$"):
        t = t[1:].strip()
    percent = t.endswith("%")
    if percent:
        t = t[:-1].strip()
    t = t.replace(",", "")
    try:
        value = float(t)
    except ValueError:
        return None
    return (-value if negative else value), percent


def _parse_header_cell(text: str, caption_scale: float | None) -> ColumnHeader:
    label = text.strip()
    scale = None
    m = _CAPTION_RE.search(label)
    if m:
        scale = _CAPTION_SCALES[m.group(1).lower()]
    period_end = None
    period_type = None
    ym = _YEAR_RE.search(label)
    if ym:
        period_end = ym.group()
        pm = _PERIOD_TYPE_RE.search(label)
        # Bare year columns are annual-report columns; default to FY.
        period_type = pm.group().upper() if pm else "FY"
    return ColumnHeader(
        label=label,
        scale=scale if scale is not None else caption_scale,
        period_end=period_end,
        period_type=period_type,
    )


def parse_table(
    markdown: str,
    entity: str = "",
    source_chunk_id: str = "",
    default_unit: str = "USD",
) -> tuple[TableGrid, list[FactCandidate]]:
    """Parse a pipe-delimited markdown table into a grid and fact candidates.

    Indentation drives a hierarchical disambiguation stack: a leaf row emits
    one candidate per numeric cell with the fully qualified path as metric
    name ("Assets > Current Assets > Inventory"). A caption scale ("in
    millions") applies to every column unless the metric path contains
    "per share", which forces a 1.0 multiplier and the unit "USD/Share".
    """
    lines = markdown.splitlines()
    caption_lines: list[str] = []
    table_lines: list[str] = []
    for line in lines:
        if "|" in line:
            table_lines.append(line)
        elif not table_lines and line.strip():
            caption_lines.append(line.strip())
    if not table_lines:
        raise MalformedTable("no pipe-delimited rows found")

    caption = " ".join(caption_lines)
    caption_scale: float | None = None
    caption_unknown = False
    if caption:
        m = _CAPTION_RE.search(caption)
        if m:
            caption_scale = _CAPTION_SCALES[m.group(1).lower()]
        else:
            caption_unknown = True

    header_cells = _split_row(table_lines[0])
    headers = tuple(_parse_header_cell(c, caption_scale) for c in header_cells)

    data_lines = table_lines[1:]
    if data_lines and _SEPARATOR_ROW_RE.match(data_lines[0]):
        data_lines = data_lines[1:]

    rows: list[TableRow] = []
    candidates: list[FactCandidate] = []
    path_stack: list[tuple[int, str]] = []
    prev_depth = 0
    for row_index, line in enumerate(data_lines):
        cells_raw = _split_row(line)
        if len(cells_raw) != len(headers):
            raise MalformedTable(
                f"row {row_index} has {len(cells_raw)} cells, expected {len(headers)}",
                row_index=row_index,
            )
        depth, label = _indent_depth(cells_raw[0])
        if depth > prev_depth + 1:
            depth = prev_depth + 1
        prev_depth = depth

        while path_stack and path_stack[-1][0] >= depth:
            path_stack.pop()
        metric_path = " > ".join([p[1] for p in path_stack] + [label]) if label else ""
        if label:
            path_stack.append((depth, label))

        parsed_cells: list[float | None] = [None]
        for j, raw in enumerate(cells_raw[1:], start=1):
            parsed = _parse_cell(raw)
            if parsed is None:
                parsed_cells.append(None)
                continue
            value, is_percent = parsed
            parsed_cells.append(value)
            if not metric_path:
                continue
            per_share = "per share" in metric_path.lower()
            header = headers[j]
            if per_share:
                scale = 1.0
                unit = "USD/Share"
            elif is_percent:
                scale = 1.0
                unit = "Ratio"
            else:
                scale = header.scale if header.scale is not None else 1.0
                unit = default_unit
            candidates.append(
                FactCandidate(
                    metric_name=metric_path,
                    raw_value=value,
                    grounding_quote=raw.strip(),
                    fact_type=FactType.ACTUAL,
                    unit=unit,
                    scale=scale,
                    period_end=header.period_end,
                    period_type=header.period_type,
                    entity=entity,
                    nuance=None,
                    source_chunk_id=source_chunk_id,
                )
            )
        rows.append(TableRow(indent_depth=depth, label=label, cells=tuple(parsed_cells)))

    grid = TableGrid(
        headers=headers,
        rows=tuple(rows),
        caption_scale=caption_scale,
        caption_scale_unknown=caption_unknown,
    )
    return grid, candidates


def find_table_block(text: str) -> str | None:
    """First contiguous run of pipe-delimited lines in ``text``, if any."""
    lines = text.splitlines()
    start = None
    for i, line in enumerate(lines):
        if "|" in line:
            start = i
            break
    if start is None:
        return None
    end = start
    while end < len(lines) and "|" in lines[end]:
        end += 1
    if end - start < 2:
        return None
    return "\n".join(lines[start:end])


def write_chunks_jsonl(chunks: Iterable[Chunk], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for chunk in chunks:
            fh.write(json.dumps(chunk.to_json_dict(), sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def read_chunks_jsonl(path) -> list[Chunk]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Chunk.from_json_dict(json.loads(line)))
    return out
