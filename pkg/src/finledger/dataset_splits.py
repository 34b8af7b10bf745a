"""Family-level dataset splitting and the paired flip-rate metric.

Records are partitioned by lineage family, never individually: a golden
parent and its sabotaged clones share a context, so letting them straddle
train and eval splits would leak memorized contexts into evaluation.
Families are stratified across four semantic buckets before assignment.
"""

from __future__ import annotations

import math
import random
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .errors import UndefinedMetric
from .saboteur import DatasetRecord, Label

VAL_FRACTION = 0.10
TEST_FRACTION = 0.10


class Bucket(str, Enum):
    SABOTAGE_PAIRS = "SABOTAGE_PAIRS"
    NATURAL_FAILURES = "NATURAL_FAILURES"
    NATURAL_SUPPORTED = "NATURAL_SUPPORTED"
    AXIOMS = "AXIOMS"


@dataclass(frozen=True)
class Family:
    family_id: str
    members: tuple[DatasetRecord, ...]
    bucket: Bucket


def classify_bucket(members: Sequence[DatasetRecord]) -> Bucket:
    """Bucket derived from member labels.

    All-GENERAL families are axioms; otherwise the SUPPORTED / UNFOUNDED mix
    decides (GENERAL members in a mixed family do not change the outcome).
    """
    labels = {m.label for m in members}
    if labels == {Label.GENERAL}:
        return Bucket.AXIOMS
    has_supported = Label.SUPPORTED in labels
    has_unfounded = Label.UNFOUNDED in labels
    if has_supported and has_unfounded:
        return Bucket.SABOTAGE_PAIRS
    if has_unfounded:
        return Bucket.NATURAL_FAILURES
    return Bucket.NATURAL_SUPPORTED


def group_families(records: Iterable[DatasetRecord]) -> list[Family]:
    by_family: dict[str, list[DatasetRecord]] = defaultdict(list)
    for rec in records:
        by_family[rec.family_id].append(rec)
    return [
        Family(
            family_id=family_id,
            members=tuple(members),
            bucket=classify_bucket(members),
        )
        for family_id, members in sorted(by_family.items())
    ]


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass
class SplitResult:
    train: list[DatasetRecord]
    val: list[DatasetRecord]
    test: list[DatasetRecord]
    assignment: dict[str, str]  # family_id -> split name
    bucket_counts: dict[str, dict[str, int]]  # bucket -> split -> family count


def split_families(
    families: Sequence[Family],
    val_frac: float = VAL_FRACTION,
    test_frac: float = TEST_FRACTION,
    rng_seed: int | str = 0,
) -> SplitResult:
    """Stratified family assignment; no family ever spans two splits.

    Within each bucket the families are shuffled with a seeded generator,
    then round-half-up of the requested fraction goes to val and to test;
    the remainder trains. Buckets too small to round to a single eval family
    contribute to train only.
    """
    result = SplitResult(train=[], val=[], test=[], assignment={}, bucket_counts={})
    for bucket in Bucket:
        bucket_families = sorted(
            (f for f in families if f.bucket is bucket), key=lambda f: f.family_id
        )
        if not bucket_families:
            continue
        rng = random.Random(f"{rng_seed}:{bucket.value}")
        rng.shuffle(bucket_families)
        n_val = _round_half_up(val_frac * len(bucket_families))
        n_test = _round_half_up(test_frac * len(bucket_families))
        counts = {"train": 0, "val": 0, "test": 0}
        for index, family in enumerate(bucket_families):
            if index < n_val:
                split_name = "val"
                result.val.extend(family.members)
            elif index < n_val + n_test:
                split_name = "test"
                result.test.extend(family.members)
            else:
                split_name = "train"
                result.train.extend(family.members)
            result.assignment[family.family_id] = split_name
            counts[split_name] += 1
        result.bucket_counts[bucket.value] = counts
    return result


PredPair = tuple  # (parent_pred, child_pred, parent_label, child_label)


def flip_rate(pairs: Sequence[PredPair]) -> float:
    """Fraction of parent/child pairs where both predictions are correct.

    Strict by construction: a model that nails every golden parent but never
    flips on the sabotaged child scores zero.
    """
    if not pairs:
        raise UndefinedMetric("flip rate over an empty pair list")
    hits = 0
    for parent_pred, child_pred, parent_label, child_label in pairs:
        if Label(parent_label) is not Label.SUPPORTED or Label(child_label) is not Label.UNFOUNDED:
            raise ValueError("flip-rate pairs must be (SUPPORTED parent, UNFOUNDED child)")
        if parent_pred == parent_label and child_pred == child_label:
            hits += 1
    return hits / len(pairs)
