from __future__ import annotations

import dataclasses
import json

import pytest

from finledger.errors import (
    AmbiguousAnchor,
    EmptyDistractorPool,
    NoMutableSpan,
    NoNeighbor,
    NoViableTarget,
    NoYearToken,
)
from finledger.ingest import parse_table
from finledger.saboteur import (
    AuditorVerdict,
    DatasetRecord,
    DriftOntology,
    FixtureAuditor,
    Label,
    SabotageType,
    axiomatic_noise_inject,
    build_distractor_pool,
    context_swap,
    dual_path_validate,
    logic_code_lie,
    numeric_neighbor,
    semantic_scale_drift,
    time_warp,
    token_set_ratio,
)
from finledger.textutils import canon_number, scan_numerals
from finledger.trace_engine import (
    eval_trace,
    extract_scalars,
    extract_scalars_text,
    parse_trace,
)

from conftest import make_record


POOL = [
    ("fam_other_1", "Distractor text about copper futures and hedging."),
    ("fam_other_2", "Another unrelated passage on lease accounting."),
    ("fam_other_3", "Commentary about store openings in new regions."),
    ("fam_other_4", "Goodwill impairment testing narrative."),
]


class TestLogicCodeLie:
    def test_injected_value_comes_from_context_minus_trace(self, golden_record):
        child = logic_code_lie(golden_record, 42)
        trace_scalars = set(extract_scalars(parse_trace(golden_record.trace)))
        context_scalars = set(extract_scalars_text("\n".join(golden_record.context)))
        assert child.injected_value in context_scalars - trace_scalars

    def test_sentence_scalar_equals_reexecuted_trace(self, golden_record):
        child = logic_code_lie(golden_record, 42)
        new_value = eval_trace(parse_trace(child.trace))
        sentence_scalars = {
            canon_number(raw) for raw, _s, _e in scan_numerals(child.sentence)
        }
        assert canon_number(format(new_value, ".12g")) in sentence_scalars

    def test_label_and_lineage(self, golden_record):
        child = logic_code_lie(golden_record, 42)
        assert child.label is Label.UNFOUNDED
        assert child.sabotage_type is SabotageType.LOGIC_CODE_LIE
        assert child.parent_id == golden_record.record_id
        assert child.family_id == golden_record.family_id

    def test_no_distractor_available(self):
        rec = make_record(
            "r", Label.SUPPORTED, "f",
            context=("revenue was 100 and expenses 80",),
            sentence="Profit was 20.",
            trace="step_1 = 100 - 80",
        )
        with pytest.raises(NoViableTarget):
            logic_code_lie(rec, 0)

    def test_result_scalar_missing_from_sentence_skips(self, golden_record):
        rec = dataclasses.replace(golden_record, sentence="Profit was healthy.")
        with pytest.raises(NoViableTarget):
            logic_code_lie(rec, 0)

    def test_seeded_determinism(self, golden_record):
        first = logic_code_lie(golden_record, 7)
        second = logic_code_lie(golden_record, 7)
        assert first == second
        different = logic_code_lie(golden_record, 8)
        assert isinstance(different, DatasetRecord)

    def test_parent_never_mutated(self, golden_record):
        snapshot = dataclasses.replace(golden_record)
        logic_code_lie(golden_record, 42)
        assert golden_record == snapshot

    def test_canonical_variable_swap_case(self):
        # context holds exactly one distractor (150); the only viable pair is
        # 100 -> 150 (the 80 -> 150 swap goes negative and is skipped), so
        # every seed lands on "step_1 = 150 - 80" and "Profit was 70."
        rec = make_record(
            "r", Label.SUPPORTED, "f",
            context=("revenue was $100M, while operating expenses were $80M, "
                     "and 150 was recorded separately",),
            sentence="Profit was 20.",
            trace="step_1 = 100 - 80",
        )
        for seed in range(8):
            child = logic_code_lie(rec, seed)
            assert child.trace == "step_1 = 150 - 80"
            assert child.sentence == "Profit was 70."
            assert child.injected_value == "150"

    def test_structural_indices_excluded(self):
        rec = make_record(
            "r", Label.SUPPORTED, "f",
            context=("values 7 and 9 appear here",),
            sentence="Result was 1.",
            trace="step_1 = 1 * 1",
        )
        # only scalar in the trace is structural -> nothing to mutate
        with pytest.raises(NoViableTarget):
            logic_code_lie(rec, 0)


class TestNumericNeighbor:
    GRID_MD = (
        "| Metric | 2022 | 2023 |\n"
        "| --- | --- | --- |\n"
        "| Margin | 45.5 | 52.1 |\n"
    )

    def make_grid(self, md=None):
        grid, _ = parse_table(md or self.GRID_MD)
        return grid

    def test_temporal_slip_case(self):
        rec = make_record(
            "r", Label.SUPPORTED, "f",
            query="What was the metric in 2022?",
            sentence="The metric in 2022 was 45.5.",
        )
        child = numeric_neighbor(rec, self.make_grid(), 0)
        assert child.sentence == "The metric in 2022 was 52.1."
        assert child.injected_value == "52.1"
        assert child.label is Label.UNFOUNDED
        assert child.sabotage_type is SabotageType.NUMERIC_NEIGHBOR

    def test_injected_is_grid_neighbor(self):
        md = (
            "| Metric | 2021 | 2022 | 2023 |\n"
            "| --- | --- | --- | --- |\n"
            "| Revenue | 90 | 100 | 110 |\n"
            "| Costs | 70 | 75 | 85 |\n"
        )
        grid = self.make_grid(md)
        rec = make_record(
            "r", Label.SUPPORTED, "f", sentence="Revenue reached 100 in 2022."
        )
        child = numeric_neighbor(rec, grid, 3)
        matrix = grid.cell_matrix()
        # anchor 100 sits at (0 data row, col 2); neighbors: 90, 110, 75
        anchor = None
        for i, row in enumerate(matrix):
            for j, cell in enumerate(row):
                if cell == 100.0:
                    anchor = (i, j)
        ni, nj = anchor
        neighbor_values = set()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            x, y = ni + di, nj + dj
            if 0 <= x < len(matrix) and 0 <= y < len(matrix[x]):
                if matrix[x][y] is not None:
                    neighbor_values.add(format(matrix[x][y], ".12g"))
        assert child.injected_value in neighbor_values

    def test_single_cell_grid_has_no_neighbor(self):
        md = "| Metric | 2023 |\n| --- | --- |\n| Margin | 45.5 |\n"
        rec = make_record("r", Label.SUPPORTED, "f", sentence="It was 45.5.")
        with pytest.raises(NoNeighbor):
            numeric_neighbor(rec, self.make_grid(md), 0)

    def test_ambiguous_anchor_guard(self):
        md = (
            "| Metric | 2022 | 2023 |\n"
            "| --- | --- | --- |\n"
            "| A | 45.5 | 9 |\n"
            "| B | 8 | 45.5 |\n"
        )
        rec = make_record("r", Label.SUPPORTED, "f", sentence="It was 45.5.")
        with pytest.raises(AmbiguousAnchor):
            numeric_neighbor(rec, self.make_grid(md), 0)

    def test_scalar_absent_from_grid(self):
        rec = make_record("r", Label.SUPPORTED, "f", sentence="It was 999.")
        with pytest.raises(NoViableTarget):
            numeric_neighbor(rec, self.make_grid(), 0)


class TestTimeWarpAndContextSwap:
    def test_time_warp_plus_one(self):
        rec = make_record(
            "r", Label.SUPPORTED, "f", query="What was Apple's revenue in 2021?"
        )
        child = time_warp(rec)
        assert child.query == "What was Apple's revenue in 2022?"
        assert child.sentence == rec.sentence
        assert child.context == rec.context
        assert child.sabotage_type is SabotageType.TIME_WARP

    def test_time_warp_falls_back_to_minus_one(self):
        rec = make_record(
            "r", Label.SUPPORTED, "f",
            query="Compare revenue in 2021 versus 2022 levels",
        )
        child = time_warp(rec)
        # +1 of 2021 is 2022, already present -> fall back to 2020
        assert "2020" in child.query

    def test_time_warp_no_year(self):
        rec = make_record("r", Label.SUPPORTED, "f", query="What was the margin?")
        with pytest.raises(NoYearToken):
            time_warp(rec)

    def test_context_swap_disjoint(self):
        rec = make_record("r", Label.SUPPORTED, "fam_mine")
        child = context_swap(rec, POOL, rng_seed=5)
        assert set(child.context).isdisjoint(set(rec.context))
        assert child.query == rec.query and child.sentence == rec.sentence
        assert child.sabotage_type is SabotageType.CONTEXT_SWAP
        assert child.injected_value.startswith("swapped_context:")

    def test_context_swap_excludes_own_family(self):
        rec = make_record("r", Label.SUPPORTED, "fam_other_1")
        child = context_swap(rec, POOL, rng_seed=5)
        own_texts = {text for fam, text in POOL if fam == "fam_other_1"}
        assert not own_texts & set(child.context)

    def test_context_swap_empty_pool(self):
        rec = make_record("r", Label.SUPPORTED, "fam_other_1")
        with pytest.raises(EmptyDistractorPool):
            context_swap(rec, [("fam_other_1", "same family text")])


class TestDrift:
    def test_scale_inversion_millions_to_billions(self):
        rec = make_record(
            "r", Label.SUPPORTED, "f", sentence="revenue of $4.2 millions grew"
        )
        ontology = DriftOntology(scale_map={"million": ("billion",)})
        child = semantic_scale_drift(rec, ontology, 0)
        assert child.sentence == "revenue of $4.2 billions grew"
        assert child.sabotage_type is SabotageType.SCALE_DRIFT
        assert child.injected_value == "billions"

    def test_entity_swap_uses_disjoint_pool(self):
        rec = make_record(
            "r", Label.SUPPORTED, "f",
            sentence="Acme Corp reported record results.",
            context=("Acme Corp operates in many regions.",),
        )
        ontology = DriftOntology(entity_pool=("Globex Industries", "Acme Corp"))
        child = semantic_scale_drift(rec, ontology, 1)
        # "Acme Corp" appears in the record text, so only Globex is usable
        assert "Globex Industries" in child.sentence
        assert child.sabotage_type is SabotageType.SEMANTIC_DRIFT

    def test_single_span_diff(self):
        rec = make_record(
            "r", Label.SUPPORTED, "f",
            sentence="costs of 3 million and 4 billion moved",
        )
        child = semantic_scale_drift(rec, DriftOntology(), 2)
        # diff oracle: token lists differ in exactly one position
        parent_tokens = rec.sentence.split()
        child_tokens = child.sentence.split()
        assert len(parent_tokens) == len(child_tokens)
        diffs = [
            (a, b) for a, b in zip(parent_tokens, child_tokens) if a != b
        ]
        assert len(diffs) == 1

    def test_no_mutable_span(self):
        rec = make_record(
            "r", Label.SUPPORTED, "f", sentence="margins improved modestly"
        )
        with pytest.raises(NoMutableSpan):
            semantic_scale_drift(rec, DriftOntology(), 0)

    def test_case_preserved(self):
        rec = make_record(
            "r", Label.SUPPORTED, "f", sentence="Millions were spent."
        )
        ontology = DriftOntology(scale_map={"million": ("billion",)})
        child = semantic_scale_drift(rec, ontology, 0)
        assert child.sentence == "Billions were spent."


class TestDualPathValidate:
    def make_child(self, golden_record):
        return logic_code_lie(golden_record, 42)

    def test_effect_match(self, golden_record):
        child = self.make_child(golden_record)
        verdict = AuditorVerdict(
            error_span=f"the value {child.injected_value}", reasoning="unrelated"
        )
        assert token_set_ratio(child.injected_value, verdict.error_span) >= 0.8
        assert dual_path_validate(child, verdict)

    def test_cause_match(self, golden_record):
        child = self.make_child(golden_record)
        verdict = AuditorVerdict(
            error_span="the answer 70",
            reasoning=f"the trace uses {child.injected_value} which is not in context",
        )
        assert dual_path_validate(child, verdict)

    def test_neither_path_rejects(self, golden_record):
        child = self.make_child(golden_record)
        verdict = AuditorVerdict(error_span="the answer 70", reasoning="no idea")
        assert not dual_path_validate(child, verdict)

    def test_fixture_auditor_accepts_own_children(self, golden_record):
        child = self.make_child(golden_record)
        assert dual_path_validate(child, FixtureAuditor().audit(child))


class TestAxiomaticNoise:
    def test_context_length_one_to_three(self, axiom_record):
        lengths = set()
        for seed in range(12):
            injected = axiomatic_noise_inject(axiom_record, POOL, seed)
            lengths.add(len(injected.context))
            assert 1 <= len(injected.context) <= 3
        assert len(lengths) > 1  # seeded count actually varies

    def test_label_unchanged(self, axiom_record):
        injected = axiomatic_noise_inject(axiom_record, POOL, 0)
        assert injected.label is Label.GENERAL
        assert injected.record_id == axiom_record.record_id

    def test_distractors_from_other_families(self, axiom_record):
        rec = dataclasses.replace(axiom_record, family_id="fam_other_2")
        injected = axiomatic_noise_inject(rec, POOL, 3)
        own = {text for fam, text in POOL if fam == "fam_other_2"}
        assert not own & set(injected.context)

    def test_requires_general_and_empty_context(self, golden_record, axiom_record):
        with pytest.raises(ValueError):
            axiomatic_noise_inject(golden_record, POOL, 0)
        filled = dataclasses.replace(axiom_record, context=("already has context",))
        with pytest.raises(ValueError):
            axiomatic_noise_inject(filled, POOL, 0)

    def test_empty_pool(self, axiom_record):
        with pytest.raises(EmptyDistractorPool):
            axiomatic_noise_inject(axiom_record, [], 0)


class TestRecordSchema:
    def test_json_round_trip(self, golden_record):
        child = logic_code_lie(golden_record, 1)
        payload = json.loads(json.dumps(child.to_json_dict()))
        assert DatasetRecord.from_json_dict(payload) == child

    def test_programmatic_child_requires_metadata(self):
        with pytest.raises(ValueError):
            DatasetRecord(
                record_id="bad", query="q", context=(), trace=None,
                sentence="s", label=Label.UNFOUNDED, family_id="f",
                parent_id="parent", sabotage_type=None, injected_value=None,
            )

    def test_build_distractor_pool_dedupes(self, golden_record):
        pool = build_distractor_pool([golden_record, golden_record])
        assert len(pool) == len(golden_record.context)
        assert all(fam == golden_record.family_id for fam, _ in pool)
