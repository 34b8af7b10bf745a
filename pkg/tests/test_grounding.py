from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from finledger.errors import InvalidQuote, VacuousMetric
from finledger.grounding import (
    AlignmentResult,
    TIER1_CONFIDENCE,
    TIER2_CONFIDENCE,
    TIER3_CONFIDENCE,
    align_quote,
    semantic_gate,
)
from finledger.textutils import tokenize
from finledger.ufl_ledger import AlignmentStatus

CHUNK = (
    "Consolidated revenue for fiscal 2023 was $615 million in total, an "
    "increase of 4.2% year over year driven by services growth."
)


def brute_force_best_recall(quote: str, chunk: str) -> float:
    """Independent window sweep: best set-recall over all quote-sized windows."""
    q_tokens = tokenize(quote)
    c_tokens = tokenize(chunk)
    if not q_tokens or not c_tokens:
        return 0.0
    q_set = set(q_tokens)
    width = len(q_tokens)
    best = 0.0
    for i in range(max(1, len(c_tokens) - width + 1)):
        window = set(c_tokens[i : i + width])
        best = max(best, len(q_set & window) / len(q_set))
    return best


class TestTier1:
    def test_exact_substring(self):
        result = align_quote("$615 million", CHUNK)
        assert result.status is AlignmentStatus.EXACT
        assert result.confidence == TIER1_CONFIDENCE
        start, end = result.char_interval
        assert CHUNK[start:end] == "$615 million"

    def test_whitespace_normalized(self):
        result = align_quote("$615  million", CHUNK)
        assert result.status is AlignmentStatus.EXACT
        assert result.tier_detail == "tier1_ws_normalized"
        start, end = result.char_interval
        assert CHUNK[start:end] == "$615 million"

    def test_newline_in_quote_normalizes(self):
        chunk = "total debt\nwas repaid early"
        result = align_quote("total debt was", chunk)
        assert result.status is AlignmentStatus.EXACT
        start, end = result.char_interval
        assert chunk[start:end] == "total debt\nwas"


class TestTier2:
    def test_numeric_partial(self):
        result = align_quote("$615 million", "a running total of 615 for the quarter")
        assert result.status is AlignmentStatus.PARTIAL
        assert result.confidence == TIER2_CONFIDENCE

    def test_interval_covers_numeric_span(self):
        chunk = "a running total of 615 for the quarter"
        result = align_quote("$615 million", chunk)
        start, end = result.char_interval
        assert chunk[start:end] == "615"

    def test_comma_form_matches_bare_form(self):
        result = align_quote("$1,234 thousand", "balance of 1234 at year end")
        assert result.status is AlignmentStatus.PARTIAL
        result = align_quote("1234 items", "balance of 1,234 at year end")
        assert result.status is AlignmentStatus.PARTIAL

    def test_no_anchor_inside_larger_numeral(self):
        # "615" must not ground inside "1,615"
        result = align_quote("615", "the figure 1,615 appears")
        assert result.status is not AlignmentStatus.PARTIAL

    def test_longest_numeric_token_chosen(self):
        # longest numeral in the quote is 2.25, not 2
        result = align_quote(
            "rate of SOFR plus 2.25% on 2 notes", "margin set at 2.25 above benchmark"
        )
        assert result.status is AlignmentStatus.PARTIAL
        chunk = "margin set at 2.25 above benchmark"
        start, end = result.char_interval
        assert chunk[start:end] == "2.25"


class TestTier3:
    def test_fuzzy_match_above_threshold(self):
        quote = "deferred income tax assets rose sharply"
        chunk = "during the year deferred tax assets on income rose modestly overall"
        assert brute_force_best_recall(quote, chunk) > 0.55
        result = align_quote(quote, chunk)
        assert result.status is AlignmentStatus.FUZZY
        assert result.confidence == TIER3_CONFIDENCE
        start, end = result.char_interval
        assert chunk[start:end].lower() in quote.lower()

    def test_recall_at_040_is_unaligned(self):
        # 10-token quote sharing exactly 4 tokens with the chunk
        quote = "alpha beta gamma delta epsilon zeta eta theta iota kappa"
        chunk = "alpha beta gamma delta unrelated words fill this window completely now"
        assert brute_force_best_recall(quote, chunk) == pytest.approx(0.4)
        result = align_quote(quote, chunk)
        assert result.status is AlignmentStatus.UNALIGNED

    def test_recall_exactly_at_threshold_fails(self):
        # strict inequality: a 20-token quote sharing 11 tokens sits at
        # exactly 0.55 and must not pass; tokens stay digit-free so the
        # numeric tier cannot fire
        shared = [f"shared{c}" for c in "abcdefghijk"]
        filler_quote = [f"quote{c}" for c in "abcdefghi"]
        filler_chunk = [f"chunk{c}" for c in "abcdefghi"]
        quote = " ".join(shared + filler_quote)
        chunk = " ".join(shared + filler_chunk)
        assert brute_force_best_recall(quote, chunk) == pytest.approx(0.55)
        result = align_quote(quote, chunk)
        assert result.status is AlignmentStatus.UNALIGNED

    def test_matches_brute_force_oracle_on_random_cases(self):
        import random

        rng = random.Random(9)
        vocab = [f"w{i}" for i in range(18)]
        for _ in range(300):
            quote = " ".join(rng.choices(vocab, k=rng.randint(2, 8)))
            chunk = " ".join(rng.choices(vocab, k=rng.randint(5, 40)))
            result = align_quote(quote, chunk)
            oracle = brute_force_best_recall(quote, chunk)
            if result.status is AlignmentStatus.FUZZY:
                assert oracle > 0.55
            elif result.status is AlignmentStatus.UNALIGNED:
                assert oracle <= 0.55


class TestAlignQuoteContract:
    def test_empty_quote_raises(self):
        with pytest.raises(InvalidQuote):
            align_quote("   ", CHUNK)

    def test_unaligned_pairs_zero_confidence(self):
        result = align_quote("totally absent wording", "nothing shared at all")
        assert result.status is AlignmentStatus.UNALIGNED
        assert result.confidence == 0.0
        assert result.char_interval is None

    def test_tier_ordering_exact_wins(self):
        # satisfies tier 1; must never report PARTIAL even though a numeral matches
        result = align_quote("615", "the 615 value")
        assert result.status is AlignmentStatus.EXACT

    def test_result_invariant_enforced(self):
        with pytest.raises(ValueError):
            AlignmentResult(
                status=AlignmentStatus.UNALIGNED,
                char_interval=None,
                confidence=0.5,
                tier_detail="bad",
            )

    def test_monotonicity_exact_survives_superset(self):
        result = align_quote("$615 million", CHUNK)
        assert result.status is AlignmentStatus.EXACT
        bigger = "Preamble text first. " + CHUNK + " And a trailing sentence."
        result2 = align_quote("$615 million", bigger)
        assert result2.status is AlignmentStatus.EXACT

    @settings(max_examples=150, deadline=None)
    @given(
        st.text(alphabet="abc 123$.,", min_size=1, max_size=30).filter(str.strip),
        st.text(alphabet="abc 123$.,xyz\n", max_size=120),
    )
    def test_fuzz_never_unaligned_with_confidence(self, quote, chunk):
        result = align_quote(quote, chunk)
        if result.status is AlignmentStatus.UNALIGNED:
            assert result.confidence == 0.0 and result.char_interval is None
        else:
            assert result.confidence in (0.61, 0.70, 0.95)
            start, end = result.char_interval
            assert 0 <= start < end <= len(chunk)


class TestSemanticGate:
    def test_full_overlap_passes(self):
        score, passed = semantic_gate("Operating Income", "operating income grew 4%")
        assert score == 1.0 and passed

    def test_zero_overlap_fails(self):
        score, passed = semantic_gate(
            "Adjusted EBITDA Margin", "revenue and costs moved in line"
        )
        assert score == 0.0 and not passed

    def test_one_third_passes_at_030(self):
        # core tokens {deferred, tax, assets}; chunk contains only "tax"
        score, passed = semantic_gate(
            "Net Deferred Tax Assets", "the tax provision rose again this year"
        )
        assert score == pytest.approx(1 / 3)
        assert passed

    def test_vacuous_metric_raises(self):
        with pytest.raises(VacuousMetric):
            semantic_gate("Net Total Ratio", "anything")

    def test_adding_chunk_tokens_never_lowers_score(self):
        base = "the tax provision"
        score1, _ = semantic_gate("Net Deferred Tax Assets", base)
        score2, _ = semantic_gate("Net Deferred Tax Assets", base + " on deferred assets")
        assert score2 >= score1
        assert 0.0 <= score1 <= 1.0 and 0.0 <= score2 <= 1.0
