from __future__ import annotations

import pytest

from finledger.saboteur import DatasetRecord, Label


@pytest.fixture
def golden_record() -> DatasetRecord:
    """A FinQA-style golden record with a trace and a table in context."""
    table = (
        "| Metric | 2022 | 2023 |\n"
        "| --- | --- | --- |\n"
        "| Revenue | 100 | 150 |\n"
        "| Expenses | 80 | 95 |\n"
    )
    return DatasetRecord(
        record_id="golden_1",
        query="What was the profit in 2022?",
        context=(
            "In 2022 revenue was $100M, while operating expenses were $80M. "
            "The prior-year adjustment added 150 to reserves.",
            table,
        ),
        trace="step_1 = 100 - 80",
        sentence="Profit was 20.",
        label=Label.SUPPORTED,
        family_id="fam_golden_1",
    )


@pytest.fixture
def axiom_record() -> DatasetRecord:
    return DatasetRecord(
        record_id="axiom_1",
        query="Can revenue exceed total assets in a single period?",
        context=(),
        trace=None,
        sentence="Revenue recognized in a period cannot exceed total assets plus flows.",
        label=Label.GENERAL,
        family_id="fam_axiom_1",
    )


def make_record(
    record_id: str,
    label: Label,
    family_id: str,
    query: str = "What was the metric in 2022?",
    sentence: str = "The metric was 45.5.",
    context: tuple[str, ...] = ("The metric was 45.5 in 2022.",),
    **kwargs,
) -> DatasetRecord:
    return DatasetRecord(
        record_id=record_id,
        query=query,
        context=context,
        trace=kwargs.pop("trace", None),
        sentence=sentence,
        label=label,
        family_id=family_id,
        **kwargs,
    )
