from __future__ import annotations

import math

import pytest
from hypothesis import given, settings, strategies as st

from finledger.errors import DivisionByZero, Overflow, ParseError, UndefinedStep
from finledger.trace_engine import (
    eval_trace,
    extract_scalars,
    extract_scalars_text,
    parse_trace,
    substitute_scalar,
)


class TestParse:
    def test_single_step(self):
        program = parse_trace("step_1 = 100 - 80")
        assert program.final == "step_1"
        assert dict(extract_scalars(program)) == {"100": 1, "80": 1}

    def test_chaining(self):
        program = parse_trace("step_1 = 2\nstep_2 = step_1 * 3")
        assert program.final == "step_2"
        assert eval_trace(program) == 6.0

    def test_forward_reference_rejected(self):
        with pytest.raises(UndefinedStep) as exc_info:
            parse_trace("step_1 = step_2 + 1")
        assert exc_info.value.name == "step_2"

    def test_malformed_expression_reports_line(self):
        with pytest.raises(ParseError) as exc_info:
            parse_trace("step_1 = 1\nstep_2 = 2 +")
        assert exc_info.value.line == 2

    def test_missing_equals_sign(self):
        with pytest.raises(ParseError):
            parse_trace("just some words")

    def test_empty_trace(self):
        with pytest.raises(ParseError):
            parse_trace("\n\n")

    def test_parentheses_and_unary_minus(self):
        program = parse_trace("x = -(3 + 2) * 4")
        assert eval_trace(program) == -20.0

    def test_comma_literals(self):
        program = parse_trace("x = 1,204 - 204")
        assert eval_trace(program) == 1000.0
        assert dict(extract_scalars(program)) == {"1204": 1, "204": 1}


class TestEval:
    def test_appendix_subtraction(self):
        assert eval_trace(parse_trace("step_1 = 100 - 80")) == 20.0

    def test_mutated_subtraction(self):
        assert eval_trace(parse_trace("step_1 = 150 - 80")) == 70.0

    def test_division_by_zero(self):
        with pytest.raises(DivisionByZero) as exc_info:
            eval_trace(parse_trace("step_1 = 5 / 0"))
        assert exc_info.value.step == "step_1"

    def test_division_by_computed_zero(self):
        with pytest.raises(DivisionByZero):
            eval_trace(parse_trace("a = 2 - 2\nb = 5 / a"))

    def test_overflow_surfaces(self):
        big = "9" * 200
        with pytest.raises(Overflow):
            eval_trace(parse_trace(f"a = {big}\nb = a * a"))

    def test_precedence(self):
        assert eval_trace(parse_trace("x = 2 + 3 * 4")) == 14.0
        assert eval_trace(parse_trace("x = (2 + 3) * 4")) == 20.0


class TestScalars:
    def test_text_scan_matches_appendix_context(self):
        counts = extract_scalars_text(
            "revenue was $100M, while operating expenses were $80M"
        )
        assert dict(counts) == {"100": 1, "80": 1}

    def test_no_numerals(self):
        assert dict(extract_scalars_text("no numbers at all")) == {}

    def test_multiset_counts_duplicates(self):
        counts = extract_scalars_text("40 then 40 then 7")
        assert counts["40"] == 2 and counts["7"] == 1

    def test_unit_suffix_not_multiplied(self):
        assert dict(extract_scalars_text("$3.5B and 2,000 units")) == {
            "3.5": 1,
            "2000": 1,
        }

    def test_structural_values_still_reported(self):
        program = parse_trace("x = 1 + 0")
        counts = extract_scalars(program)
        assert counts["1"] == 1 and counts["0"] == 1


class TestSubstitution:
    def test_substitute_all_occurrences(self):
        program = parse_trace("x = 100 + 100 - 80")
        mutated = substitute_scalar(program, "100", "150")
        assert mutated.to_text() == "x = 150 + 150 - 80"
        assert eval_trace(mutated) == 220.0

    def test_ast_substitution_matches_text_substitution(self):
        text = "a = 100 - 80\nb = a / 4"
        program = parse_trace(text)
        via_ast = substitute_scalar(program, "100", "150")
        via_text = parse_trace(text.replace("100", "150"))
        assert eval_trace(via_ast) == eval_trace(via_text)
        assert via_ast == via_text


class TestRoundTrip:
    def test_simple(self):
        text = "step_1 = 100 - 80"
        assert parse_trace(text).to_text() == text

    def test_parenthesization_preserved_by_meaning(self):
        program = parse_trace("x = (2 + 3) * 4\ny = 2 - (3 - 1)")
        assert parse_trace(program.to_text()) == program

    @settings(max_examples=80, deadline=None)
    @given(st.data())
    def test_random_programs_round_trip(self, data):
        literals = st.sampled_from(["1", "2", "3.5", "40", "1,204"])
        ops = st.sampled_from(["+", "-", "*", "/"])
        n_steps = data.draw(st.integers(1, 4))
        lines = []
        for i in range(n_steps):
            terms = [data.draw(literals)]
            if i > 0 and data.draw(st.booleans()):
                terms.append(f"s{data.draw(st.integers(0, i - 1))}")
            expr = terms[0]
            for term in terms[1:]:
                expr = f"{expr} {data.draw(ops)} {term}"
            lines.append(f"s{i} = {expr}")
        program = parse_trace("\n".join(lines))
        assert parse_trace(program.to_text()) == program

    def test_eval_deterministic(self):
        program = parse_trace("a = 10 / 3\nb = a * 3")
        assert eval_trace(program) == eval_trace(program)
        assert math.isclose(eval_trace(program), 10.0)
