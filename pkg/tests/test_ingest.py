from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from finledger.errors import EmptyInput, MalformedTable
from finledger.ingest import (
    Chunk,
    PREFIX_MARKER,
    chunk_text,
    find_table_block,
    parse_table,
    strip_prefix,
)
from finledger.textutils import tokenize

FIXTURE_TABLE = """(in millions)
| | 2023 | 2022 |
| --- | --- | --- |
| Assets | | |
| &nbsp;&nbsp;Current Assets | | |
| &nbsp;&nbsp;&nbsp;&nbsp;Inventory | 1,204 | 1,117 |
| Earnings per share | 6.13 | 5.67 |
"""


class TestChunkText:
    def test_short_source_single_chunk_no_prefix(self):
        chunks = chunk_text("x" * 100)
        assert len(chunks) == 1
        assert chunks[0].prefix is None
        assert chunks[0].body == "x" * 100

    def test_two_paragraphs_prefix_is_300_char_tail(self):
        source = "a" * 2500 + "\n" + "b" * 2500
        chunks = chunk_text(source)
        assert len(chunks) == 2
        # offset-arithmetic oracle: the payload is a direct slice of the source
        assert chunks[1].prefix_payload() == source[: len(chunks[0].body)][-300:]
        assert chunks[1].prefix.startswith(PREFIX_MARKER)

    def test_no_newline_hard_cuts(self):
        chunks = chunk_text("z" * 6500)
        assert [len(c.body) for c in chunks] == [3000, 3000, 500]
        assert [c.start_offset for c in chunks] == [0, 3000, 6000]

    def test_split_prefers_last_newline_in_window(self):
        # lines of 90 chars + newline; boundary at 3000 -> cut at char 2912
        line = "m" * 90 + "\n"
        source = line * 80
        chunks = chunk_text(source)
        for chunk in chunks[:-1]:
            assert chunk.body.endswith("\n")
            assert len(chunk.body) <= 3000

    def test_lossless_reconstruction(self):
        source = ("para " * 200 + "\n") * 12 + "tail without newline"
        chunks = chunk_text(source)
        assert "".join(c.body for c in chunks) == source

    def test_table_tail_propagates_and_flags_carrier(self):
        table = "| Revenue | 100 |\n| Costs | 60 |\n"
        source = "intro\n" + "x" * 2900 + "\n" + table + "y" * 2500
        chunks = chunk_text(source)
        carriers = [c for c in chunks if c.is_table_tail_carrier]
        assert carriers, "a chunk after the table should carry its tail"
        assert "|" in carriers[0].prefix_payload()

    def test_empty_source_raises(self):
        with pytest.raises(EmptyInput):
            chunk_text("")

    def test_bad_thresholds_raise(self):
        with pytest.raises(ValueError):
            chunk_text("abc", tau=100, k=100)

    @settings(max_examples=60, deadline=None)
    @given(
        st.text(alphabet="ab\n", min_size=1, max_size=4000),
        st.integers(40, 200),
    )
    def test_partition_property(self, source, tau):
        k = tau // 4 + 1
        chunks = chunk_text(source, tau=tau, k=k)
        assert "".join(c.body for c in chunks) == source
        assert all(len(c.body) <= tau for c in chunks)
        for prev, cur in zip(chunks, chunks[1:]):
            assert cur.prefix_payload() == prev.body[-k:]

    def test_no_split_bisects_line_when_newline_available(self):
        source = ("w" * 50 + "\n") * 200
        for chunk in chunk_text(source)[:-1]:
            assert chunk.body.endswith("\n")


class TestStripPrefix:
    def test_with_prefix(self):
        chunk = Chunk("c:0", "body text", PREFIX_MARKER + "tail", "doc", 0)
        assert strip_prefix(chunk) == "body text"

    def test_without_prefix(self):
        chunk = Chunk("c:0", "body text", None, "doc", 0)
        assert strip_prefix(chunk) == "body text"

    def test_no_prefix_token_leaks_downstream(self):
        chunk = Chunk("c:1", "alpha beta", PREFIX_MARKER + "gamma delta", "doc", 0)
        body_tokens = set(tokenize(strip_prefix(chunk)))
        prefix_tokens = set(tokenize(chunk.prefix))
        assert body_tokens & prefix_tokens == set()


class TestParseTable:
    def test_hierarchical_path(self):
        _grid, candidates = parse_table(FIXTURE_TABLE)
        inventory = [c for c in candidates if "Inventory" in c.metric_name]
        assert inventory
        assert all(
            c.metric_name == "Assets > Current Assets > Inventory" for c in inventory
        )

    def test_caption_scale_applies_to_plain_rows(self):
        _grid, candidates = parse_table(FIXTURE_TABLE)
        inventory = [c for c in candidates if "Inventory" in c.metric_name]
        assert all(c.scale == 1e6 for c in inventory)
        assert {c.raw_value for c in inventory} == {1204.0, 1117.0}

    def test_per_share_override(self):
        _grid, candidates = parse_table(FIXTURE_TABLE)
        eps = [c for c in candidates if "per share" in c.metric_name.lower()]
        assert len(eps) == 2
        assert all(c.scale == 1.0 and c.unit == "USD/Share" for c in eps)
        assert {c.raw_value for c in eps} == {6.13, 5.67}

    def test_empty_cells_emit_nothing(self):
        _grid, candidates = parse_table(FIXTURE_TABLE)
        assert all(c.raw_value is not None for c in candidates)
        assert not any(c.metric_name == "Assets" for c in candidates)

    def test_period_annotations_from_headers(self):
        _grid, candidates = parse_table(FIXTURE_TABLE)
        assert {(c.period_end, c.period_type) for c in candidates} == {
            ("2023", "FY"),
            ("2022", "FY"),
        }

    def test_parenthesized_negative_and_dollar(self):
        md = "| | FY 2023 |\n| --- | --- |\n| Charge | $(1,234) |\n"
        grid, candidates = parse_table(md)
        assert candidates[0].raw_value == -1234.0
        assert grid.rows[0].cells == (None, -1234.0)

    def test_percent_cell_gets_ratio_unit(self):
        md = "| | 2023 |\n| --- | --- |\n| Margin | 12.5% |\n"
        _grid, candidates = parse_table(md)
        assert candidates[0].unit == "Ratio"
        assert candidates[0].raw_value == 12.5
        assert candidates[0].scale == 1.0

    def test_ragged_row_raises_with_index(self):
        # index counts data rows, zero-based, separator excluded
        md = "| | 2023 |\n| --- | --- |\n| A | 1 |\n| B | 2 | 3 |\n"
        with pytest.raises(MalformedTable) as exc_info:
            parse_table(md)
        assert exc_info.value.row_index == 1

    def test_unknown_caption_flags_warning(self):
        md = "stated at fair value\n| | 2023 |\n| --- | --- |\n| A | 5 |\n"
        grid, candidates = parse_table(md)
        assert grid.caption_scale is None
        assert grid.caption_scale_unknown
        assert candidates[0].scale == 1.0

    def test_purity_byte_identical(self):
        first = parse_table(FIXTURE_TABLE, entity="id_x", source_chunk_id="c:9")
        second = parse_table(FIXTURE_TABLE, entity="id_x", source_chunk_id="c:9")
        assert first == second

    def test_grid_shape_invariants(self):
        grid, _ = parse_table(FIXTURE_TABLE)
        width = len(grid.headers)
        assert all(len(r.cells) == width for r in grid.rows)
        prev = 0
        for row in grid.rows:
            assert row.indent_depth <= prev + 1
            prev = row.indent_depth

    def test_space_indentation_counts_like_entities(self):
        md = (
            "| | 2023 |\n| --- | --- |\n"
            "| Parent | |\n"
            "|   Child | 7 |\n"  # pad + two spaces -> depth 1
        )
        _grid, candidates = parse_table(md)
        assert candidates[0].metric_name == "Parent > Child"


def test_find_table_block():
    text = "prose before\n| a | 1 |\n| b | 2 |\nprose after"
    assert find_table_block(text) == "| a | 1 |\n| b | 2 |"
    assert find_table_block("no table here") is None
