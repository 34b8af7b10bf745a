"""Verdict-model mathematics: weighted chunked loss, scores, prompt builder.

The training loss problem: with a label-first completion (one verdict token,
then ~150 reasoning tokens), uniform cross-entropy dilutes the verdict's
gradient below 1%. Restoring it needs a large differential weight on the
label token, and materializing an unreduced (T, V) loss tensor at that point
blows past memory. The fix is micro-chunking: slice the flattened shifted
sequence into fixed-size pieces, accumulate the weighted clamped loss and the
weight mass per piece, and divide once at the end. The result is exactly the
full weighted loss, with transient memory bounded by chunk_size x vocab.

Everything here is plain array math; there is no model, no gradient, and no
optimizer in this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContextOverflow, DegenerateEmbedding, UndefinedLoss

DEFAULT_LABELS = ("Found", "Fake", "General")
DEFAULT_CLASS_WEIGHTS: Mapping[str, float] = {"Found": 50.0, "Fake": 50.0, "General": 10.0}
DEFAULT_CHUNK_SIZE = 512
DEFAULT_CLAMP_MULTIPLIER = 5.0
IGNORE_INDEX = -100
LOGIT_GAP_THRESHOLD = 0.15
UNCERTAIN = "Uncertain"
PROMPT_TOKEN_BUDGET = 4096


@dataclass(frozen=True)
class LabelSet:
    """The three verdict tokens, optionally with their embedding vectors."""

    labels: tuple[str, str, str] = DEFAULT_LABELS
    embeddings: Mapping[str, np.ndarray] | None = None

    def __post_init__(self) -> None:
        if len(self.labels) != 3 or len(set(self.labels)) != 3:
            raise ValueError("a label set holds exactly three distinct labels")
        if self.embeddings is not None:
            dims = {np.asarray(self.embeddings[lbl]).shape for lbl in self.labels}
            if len(dims) != 1:
                raise ValueError("label embeddings must share one dimension")


def pairwise_cosine(labels: LabelSet) -> float:
    """Maximum cosine similarity over unordered label pairs.

    Lower is better: near-orthogonal verdict tokens give the classification
    head separable directions at the first decoding step.
    """
    if labels.embeddings is None:
        raise ValueError("pairwise_cosine requires embeddings")
    vectors = {}
    for label in labels.labels:
        v = np.asarray(labels.embeddings[label], dtype=np.float64)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise DegenerateEmbedding(f"label '{label}' has a zero-norm embedding")
        vectors[label] = v / norm
    best = -1.0
    names = list(labels.labels)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            best = max(best, float(vectors[names[i]] @ vectors[names[j]]))
    return best


@dataclass(frozen=True)
class LossSpec:
    """Weighting and clamping parameters for the verdict loss.

    ``label_token_ids`` maps each class label to its vocabulary index; every
    other vocabulary position carries ``non_label_weight``. The clamp cap is
    ``clamp_multiplier x max(all weights)``, applied per token before
    accumulation.
    """

    class_weights: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_CLASS_WEIGHTS)
    )
    non_label_weight: float = 1.0
    clamp_multiplier: float = DEFAULT_CLAMP_MULTIPLIER
    chunk_size: int = DEFAULT_CHUNK_SIZE
    ignore_index: int = IGNORE_INDEX
    label_token_ids: Mapping[str, int] | None = None

    def __post_init__(self) -> None:
        if any(w <= 0 for w in self.class_weights.values()) or self.non_label_weight <= 0:
            raise ValueError("all loss weights must be positive")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be at least 1")

    @property
    def clamp_cap(self) -> float:
        return self.clamp_multiplier * max(
            list(self.class_weights.values()) + [self.non_label_weight]
        )

    def weight_vector(self, vocab_size: int) -> np.ndarray:
        weights = np.full(vocab_size, self.non_label_weight, dtype=np.float64)
        for label, token_id in (self.label_token_ids or {}).items():
            weights[token_id] = self.class_weights[label]
        return weights


def full_weighted_ce(
    logits: np.ndarray, labels: Sequence[int], spec: LossSpec
) -> float:
    """Reference weighted clamped cross-entropy, computed token by token.

    No chunking, no shifting: sum of min(w_i * CE_i, cap) over active tokens
    divided by the sum of their weights. This is the ground truth the chunked
    implementation is checked against.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    weights = spec.weight_vector(logits.shape[1])
    cap = spec.clamp_cap
    numerator = 0.0
    denominator = 0.0
    active = 0
    for t in range(logits.shape[0]):
        y = labels[t]
        if y == spec.ignore_index:
            continue
        row = logits[t]
        m = row.max()
        log_z = m + math.log(np.exp(row - m).sum())
        ce = log_z - row[y]
        w = weights[y]
        numerator += min(w * ce, cap)
        denominator += w
        active += 1
    if active == 0:
        raise UndefinedLoss("every token is masked")
    return float(numerator / denominator)


def micro_chunked_ce(
    logits: np.ndarray, labels: Sequence[int], spec: LossSpec
) -> float:
    """Weighted clamped cross-entropy over fixed-size slices.

    Applies the causal shift (positions 0..T-2 predict labels 1..T-1), then
    walks the flattened sequence in ``spec.chunk_size`` pieces, accumulating
    the clamped weighted loss and the weight mass. The transient working set
    is proportional to chunk_size x vocab, never sequence x vocab, while the
    result matches the unchunked reference exactly.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    shift_logits = logits[:-1]
    shift_labels = labels[1:]
    total = shift_labels.shape[0]
    weights = spec.weight_vector(logits.shape[1])
    cap = spec.clamp_cap

    loss_total = 0.0
    weight_total = 0.0
    saw_active = False
    for start in range(0, total, spec.chunk_size):
        chunk_labels = shift_labels[start : start + spec.chunk_size]
        chunk_logits = shift_logits[start : start + spec.chunk_size]
        mask = chunk_labels != spec.ignore_index
        if not mask.any():
            continue
        safe_labels = np.where(mask, chunk_labels, 0)
        row_max = chunk_logits.max(axis=1)
        log_z = row_max + np.log(np.exp(chunk_logits - row_max[:, None]).sum(axis=1))
        raw = log_z - chunk_logits[np.arange(chunk_labels.shape[0]), safe_labels]
        chunk_weights = weights[safe_labels]
        clamped = np.minimum(raw * chunk_weights, cap)
        loss_total += float(clamped[mask].sum())
        weight_total += float(chunk_weights[mask].sum())
        saw_active = True
    if not saw_active:
        raise UndefinedLoss("every shifted token is masked")
    return loss_total / max(weight_total, 1e-9)


def jeffreys_rate(successes: int, trials: int) -> float:
    """Posterior mean of a success rate under a Beta(1/2, 1/2) prior."""
    return (successes + 0.5) / (trials + 1.0)


def composite_score(
    fr_global: tuple[int, int],
    recall_nat: tuple[int, int],
    tpr_clean: tuple[int, int],
    acc_axiom: tuple[int, int],
) -> float:
    """Square root of the product of the four smoothed auditing pillars.

    Multiplicative on purpose: collapsing any single capability (paired flip
    rate, natural recall, clean-claim acceptance, axiom retention) drags the
    whole score toward zero no matter how strong the others are.
    """
    product = 1.0
    for successes, trials in (fr_global, recall_nat, tpr_clean, acc_axiom):
        product *= jeffreys_rate(successes, trials)
    return math.sqrt(product)


@dataclass(frozen=True)
class VerdictDistribution:
    """Normalized verdict probabilities for one audited claim."""

    probabilities: Mapping[str, float]

    def __post_init__(self) -> None:
        values = list(self.probabilities.values())
        if any(p < 0 for p in values):
            raise ValueError("probabilities must be non-negative")
        if abs(sum(values) - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.probabilities.items(), key=lambda kv: (-kv[1], kv[0]))

    @property
    def gap(self) -> float:
        ranked = self.ranked()
        top = ranked[0][1]
        second = ranked[1][1] if len(ranked) > 1 else 0.0
        # rounded at 1e-12 so decimal-specified probabilities hit the
        # strict-< boundary exactly; real softmax noise sits far above this
        return round(top - second, 12)


def logit_gap_gate(
    dist: VerdictDistribution, threshold: float = LOGIT_GAP_THRESHOLD
) -> str:
    """Top label, unless the top-1/top-2 gap is strictly below threshold.

    A sub-threshold gap means the semantic entropy is too high to trust the
    argmax; the verdict is overridden to Uncertain so the caller can route
    the claim to a human auditor or a heavier model.
    """
    if dist.gap < threshold:
        return UNCERTAIN
    return dist.ranked()[0][0]


_PROMPT_TEMPLATE = (
    "<|im_start|>user\n"
    "### TASK:\n"
    "Verify if the CLAIMED_ANSWER given the AGENT_TRACE is [Found, Fake, General].\n"
    "\n"
    "### VERIFICATION TARGET:\n"
    "**Query:** {query}\n"
    "**AGENT TRACE:** {trace}\n"
    "**Claimed Answer:** {statement}\n"
    "\n"
    "### EVIDENCE (Source Document):\n"
    "{context}\n"
    "\n"
    "### VERIFICATION TARGET Recap:\n"
    "**Query:** {query}\n"
    "**AGENT TRACE:** {trace}\n"
    "**Claimed Answer:** {statement}\n"
    "\n"
    "### AUDIT ALGORITHM (CRITICAL):\n"
    "Do NOT recalculate the math. Assume the arithmetic evaluates to the Claimed\n"
    "Answer. You must verify the EXTRACTION and LOGIC. Output your label first.\n"
    "<|im_end|><|im_start|>assistant\n"
    "Label: "
)


def estimate_tokens(text: str) -> int:
    """Default budget estimator: four characters per token, rounded up."""
    return (len(text) + 3) // 4


def build_prompt(
    query: str,
    trace: str,
    statement: str,
    context_chunks: Sequence[str] | str,
    token_budget: int = PROMPT_TOKEN_BUDGET,
    token_estimator: Callable[[str], int] | None = None,
) -> str:
    """Five-zone audit prompt with the verification target bookended.

    Task header, verification target, evidence, a byte-identical recap of the
    target, and the audit algorithm, ending with the literal assistant prefix
    "Label: " so a single forward pass reads the verdict logits. The recap
    counters attention decay over long evidence blocks.
    """
    if not query or not trace or not statement:
        raise ValueError("query, trace, and statement must be non-empty")
    if isinstance(context_chunks, str):
        context = context_chunks
    else:
        context = "\n".join(context_chunks)
    if not context:
        raise ValueError("context must be non-empty")
    prompt = _PROMPT_TEMPLATE.format(
        query=query, trace=trace, statement=statement, context=context
    )
    estimator = token_estimator or estimate_tokens
    tokens = estimator(prompt)
    if tokens > token_budget:
        over = tokens - token_budget
        raise ContextOverflow(tokens_over=over, chars_to_trim=over * 4)
    return prompt


def expected_calibration_error(
    confidences: Iterable[float], correct: Iterable[bool], n_bins: int = 10
) -> float:
    """ECE with equal-width confidence bins."""
    conf = np.asarray(list(confidences), dtype=np.float64)
    hits = np.asarray(list(correct), dtype=np.float64)
    if conf.shape[0] == 0:
        raise UndefinedLoss("calibration over an empty prediction set")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    ece = 0.0
    for b in range(n_bins):
        lo, hi = edges[b], edges[b + 1]
        in_bin = (conf > lo) & (conf <= hi) if b > 0 else (conf >= lo) & (conf <= hi)
        if not in_bin.any():
            continue
        bin_conf = conf[in_bin].mean()
        bin_acc = hits[in_bin].mean()
        ece += (in_bin.sum() / conf.shape[0]) * abs(bin_acc - bin_conf)
    return float(ece)
