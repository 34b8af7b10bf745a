"""Pipeline wiring: config parsing, stage runners, manifests.

A pipeline is a declared list of stages over a working directory. Every stage
reads and writes JSONL artifacts; with the fixture gateway backend, reruns of
the same config produce byte-identical artifacts. The manifest records
counts, skips, and timings per stage (timings are the one intentionally
non-reproducible field, which is why they live in the manifest and never in
an artifact).
"""

from __future__ import annotations

import dataclasses
import json
import time
from collections import Counter
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from . import grounding, retrieval
from .errors import ConfigError, FinledgerError, SabotageSkip, StageFailure, VacuousMetric
from .gateway import FixtureBackend, GatewayRequest, HttpBackend, Role, call_gateway
from .ingest import (
    DEFAULT_CHUNK_CHARS,
    DEFAULT_TAIL_CHARS,
    Chunk,
    chunk_text,
    find_table_block,
    parse_table,
    read_chunks_jsonl,
    strip_prefix,
    write_chunks_jsonl,
)
from .dataset_splits import flip_rate, group_families, split_families
from .retrieval import (
    CONTEXT_TOP_K,
    LEXICAL_GATE_THRESHOLD,
    PIVOT_GATE_THRESHOLD,
    ChunkStore,
    FixtureVectorBackend,
    RetrievalPlan,
    assemble_context,
    execute_plan,
)
from .saboteur import (
    DatasetRecord,
    DriftOntology,
    FixtureAuditor,
    Label,
    build_distractor_pool,
    axiomatic_noise_inject,
    context_swap,
    dual_path_validate,
    logic_code_lie,
    numeric_neighbor,
    semantic_scale_drift,
    time_warp,
)
from .sentinel_math import (
    DEFAULT_CHUNK_SIZE,
    DEFAULT_CLAMP_MULTIPLIER,
    LOGIT_GAP_THRESHOLD,
    LossSpec,
    VerdictDistribution,
    composite_score,
    full_weighted_ce,
    jeffreys_rate,
    logit_gap_gate,
    micro_chunked_ce,
)
from .textutils import DOMAIN_STOP_WORDS, tokenize
from .ufl_ledger import AlignmentStatus, FactCandidate, Ledger, offload_candidate

# Verdict tokens emitted by the audit model vs the dataset label space.
VERDICT_TO_LABEL = {"Found": "SUPPORTED", "Fake": "UNFOUNDED", "General": "GENERAL"}

# Published default thresholds, each overridable through the config file.
DEFAULTS: Mapping[str, float | int] = {
    "tau": DEFAULT_CHUNK_CHARS,
    "k": DEFAULT_TAIL_CHARS,
    "tier3_recall": grounding.TIER3_RECALL_THRESHOLD,
    "tau_sem": grounding.SEMANTIC_GATE_THRESHOLD,
    "tau_lex": LEXICAL_GATE_THRESHOLD,
    "tau_lex_pivot": PIVOT_GATE_THRESHOLD,
    "top_k": CONTEXT_TOP_K,
    "chunk_size": DEFAULT_CHUNK_SIZE,
    "weight_found": 50.0,
    "weight_fake": 50.0,
    "weight_general": 10.0,
    "clamp_multiplier": DEFAULT_CLAMP_MULTIPLIER,
    "logit_gap": LOGIT_GAP_THRESHOLD,
}


class PipelineConfig:
    """Flat key = value configuration with typed accessors."""

    def __init__(self, values: Mapping[str, str], base_dir: Path):
        self.values = dict(values)
        self.base_dir = base_dir

    @classmethod
    def parse(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        values: dict[str, str] = {}
        for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        return cls(values, path.parent)

    def get_str(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def get_float(self, key: str, default: float) -> float:
        raw = self.values.get(key)
        if raw is None:
            return float(default)
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"config key '{key}' is not a number: {raw!r}") from exc

    def get_int(self, key: str, default: int) -> int:
        return int(self.get_float(key, default))

    def get_bool(self, key: str, default: bool) -> bool:
        raw = self.values.get(key)
        if raw is None:
            return default
        return raw.strip().lower() in {"1", "true", "yes", "on"}

    def get_list(self, key: str) -> list[str]:
        raw = self.values.get(key, "")
        return [item.strip() for item in raw.split(",") if item.strip()]

    def resolve(self, key: str, default: str | None = None) -> Path | None:
        raw = self.get_str(key, default)
        if raw is None:
            return None
        path = Path(raw)
        return path if path.is_absolute() else self.base_dir / path

    def workdir(self) -> Path:
        wd = self.resolve("workdir", "out")
        wd.mkdir(parents=True, exist_ok=True)
        return wd


def write_jsonl(path: Path, objects: Iterable[dict]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objects:
            fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False))
            fh.write("\n")
            count += 1
    return count


def read_jsonl(path: Path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_json(path: Path, obj: dict) -> None:
    path.write_text(
        json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def load_records(path: Path) -> list[DatasetRecord]:
    return [DatasetRecord.from_json_dict(obj) for obj in read_jsonl(path)]


def write_records(path: Path, records: Iterable[DatasetRecord]) -> int:
    return write_jsonl(path, (r.to_json_dict() for r in records))


def loss_spec_from_config(cfg: PipelineConfig) -> LossSpec:
    """LossSpec with every knob drawn from config, falling back to defaults."""
    return LossSpec(
        class_weights={
            "Found": cfg.get_float("weight_found", DEFAULTS["weight_found"]),
            "Fake": cfg.get_float("weight_fake", DEFAULTS["weight_fake"]),
            "General": cfg.get_float("weight_general", DEFAULTS["weight_general"]),
        },
        non_label_weight=cfg.get_float("non_label_weight", 1.0),
        clamp_multiplier=cfg.get_float("clamp_multiplier", DEFAULTS["clamp_multiplier"]),
        chunk_size=cfg.get_int("chunk_size", DEFAULTS["chunk_size"]),
    )


def make_backend(cfg: PipelineConfig):
    kind = (cfg.get_str("backend", "none") or "none").lower()
    if kind == "fixture":
        fixture = cfg.resolve("fixture_file")
        if fixture is None:
            raise ConfigError("backend=fixture requires fixture_file")
        return FixtureBackend.from_jsonl(fixture)
    if kind == "http":
        url = cfg.get_str("http_url")
        if not url:
            raise ConfigError("backend=http requires http_url")
        return HttpBackend(
            url=url,
            model=cfg.get_str("http_model", "default") or "default",
            timeout_s=cfg.get_float("http_timeout_s", 30.0),
        )
    if kind == "none":
        return None
    raise ConfigError(f"unknown backend '{kind}'")


def extraction_prompt(chunk: Chunk) -> str:
    """Deterministic extraction prompt so fixture recordings stay stable."""
    return (
        "Extract financial fact candidates from the chunk below as a JSON "
        "array of objects with fields metric_name, raw_value, grounding_quote, "
        "fact_type (ACTUAL|LIMIT|FORMULA), unit, scale, period_end, "
        "period_type, entity, nuance.\n\n"
        f"[chunk {chunk.chunk_id}]\n{chunk.rendered()}"
    )


# --- stages ---------------------------------------------------------------


def _input_paths(cfg: PipelineConfig, key: str) -> list[Path]:
    paths = [Path(p) for p in cfg.get_list(key)]
    return [p if p.is_absolute() else cfg.base_dir / p for p in paths]


def run_ingest(cfg: PipelineConfig, workdir: Path) -> dict:
    tau = cfg.get_int("tau", DEFAULTS["tau"])
    k = cfg.get_int("k", DEFAULTS["k"])
    entity = cfg.get_str("entity", "") or ""
    chunks: list[Chunk] = []
    candidates: list[FactCandidate] = []
    skips: list[str] = []

    text_inputs = _input_paths(cfg, "text_inputs")
    table_inputs = _input_paths(cfg, "table_inputs")
    if not text_inputs and not table_inputs:
        raise ConfigError("ingest stage needs text_inputs and/or table_inputs")

    for path in text_inputs:
        source = path.read_text(encoding="utf-8")
        chunks.extend(chunk_text(source, tau=tau, k=k, source_doc=path.stem))

    for path in table_inputs:
        source = path.read_text(encoding="utf-8")
        doc_chunks = chunk_text(source, tau=tau, k=k, source_doc=path.stem)
        chunks.extend(doc_chunks)
        _grid, table_candidates = parse_table(
            source, entity=entity, source_chunk_id=doc_chunks[0].chunk_id
        )
        candidates.extend(table_candidates)

    backend = make_backend(cfg)
    extracted = 0
    if cfg.get_bool("extract_facts", False):
        if backend is None:
            skips.append("extract_facts requested without a backend")
        else:
            for chunk in chunks:
                req = GatewayRequest(
                    role=Role.EXTRACTOR,
                    prompt=extraction_prompt(chunk),
                    response_schema_id="fact_candidates",
                )
                try:
                    response = call_gateway(req, backend)
                except FinledgerError as exc:
                    skips.append(f"{chunk.chunk_id}: {exc}")
                    continue
                for obj in json.loads(response.body):
                    obj.setdefault("source_chunk_id", chunk.chunk_id)
                    obj.setdefault("entity", entity)
                    candidates.append(FactCandidate.from_json_dict(obj))
                    extracted += 1

    chunks_path = workdir / "chunks.jsonl"
    candidates_path = workdir / "candidates.jsonl"
    write_chunks_jsonl(chunks, chunks_path)
    write_jsonl(candidates_path, (c.to_json_dict() for c in candidates))
    return {
        "chunks": len(chunks),
        "candidates": len(candidates),
        "extracted_via_gateway": extracted,
        "skips": skips,
        "artifacts": [chunks_path.name, candidates_path.name],
    }


def run_ground(cfg: PipelineConfig, workdir: Path) -> dict:
    tau_sem = cfg.get_float("tau_sem", DEFAULTS["tau_sem"])
    tier3_recall = cfg.get_float("tier3_recall", DEFAULTS["tier3_recall"])
    chunks_path = cfg.resolve("chunks_file") or workdir / "chunks.jsonl"
    candidates_path = cfg.resolve("candidates_file") or workdir / "candidates.jsonl"
    chunks = {c.chunk_id: c for c in read_chunks_jsonl(chunks_path)}
    candidates = [FactCandidate.from_json_dict(obj) for obj in read_jsonl(candidates_path)]

    rows = []
    tier_counts: Counter = Counter()
    rejected = {"unaligned": 0, "semantic": 0, "vacuous_metric": 0, "missing_chunk": 0}
    confidences: list[float] = []
    for candidate in candidates:
        chunk = chunks.get(candidate.source_chunk_id)
        if chunk is None:
            rejected["missing_chunk"] += 1
            continue
        body = strip_prefix(chunk)
        alignment = grounding.align_quote(
            candidate.grounding_quote, body, recall_threshold=tier3_recall
        )
        if alignment.status is AlignmentStatus.UNALIGNED:
            rejected["unaligned"] += 1
            continue
        try:
            _score, passed = grounding.semantic_gate(candidate.metric_name, body, tau_sem)
        except VacuousMetric:
            rejected["vacuous_metric"] += 1
            continue
        if not passed:
            rejected["semantic"] += 1
            continue
        row = offload_candidate(candidate, alignment)
        rows.append(row)
        tier_counts[alignment.status.value] += 1
        confidences.append(alignment.confidence)

    ufl_path = workdir / "ufl.jsonl"
    ledger = Ledger(rows).seal()
    ledger.save_jsonl(ufl_path)

    stats = {}
    if confidences:
        ordered = sorted(confidences)
        stats = {
            "mean": sum(ordered) / len(ordered),
            "median": ordered[len(ordered) // 2],
            "p75": ordered[int(0.75 * (len(ordered) - 1))],
            "min": ordered[0],
            "max": ordered[-1],
        }
    report = {
        "candidates": len(candidates),
        "accepted": len(rows),
        "rejected": rejected,
        "tier_counts": dict(tier_counts),
        "confidence": stats,
    }
    write_json(workdir / "ground_report.json", report)
    report["artifacts"] = [ufl_path.name, "ground_report.json"]
    return report


def run_retrieve(cfg: PipelineConfig, workdir: Path) -> dict:
    tau_lex = cfg.get_float("tau_lex", DEFAULTS["tau_lex"])
    tau_lex_pivot = cfg.get_float("tau_lex_pivot", DEFAULTS["tau_lex_pivot"])
    top_k = cfg.get_int("top_k", DEFAULTS["top_k"])

    ledger_path = cfg.resolve("ufl_file") or workdir / "ufl.jsonl"
    chunks_path = cfg.resolve("chunks_file") or workdir / "chunks.jsonl"
    ledger = Ledger.load_jsonl(ledger_path).seal()
    store = ChunkStore(read_chunks_jsonl(chunks_path))

    plan_path = cfg.resolve("plan_file")
    if plan_path is not None:
        with open(plan_path, "r", encoding="utf-8") as fh:
            plan = RetrievalPlan.from_json_dict(json.load(fh))
    else:
        query = cfg.get_str("query")
        if not query:
            raise ConfigError("retrieve stage needs plan_file or query")
        aliases = {}
        for pair in cfg.get_list("entity_aliases"):
            if ":" in pair:
                alias, canonical = pair.split(":", 1)
                aliases[alias.strip()] = canonical.strip()
        plan = retrieval.rule_based_plan(query, aliases)

    fixture_path = cfg.resolve("vector_fixture")
    backend = (
        FixtureVectorBackend.from_json(fixture_path)
        if fixture_path is not None
        else FixtureVectorBackend({})
    )

    result = execute_plan(
        plan, ledger, store, backend, tau_lex=tau_lex, tau_lex_pivot=tau_lex_pivot
    )
    keywords = [
        t for t in tokenize(plan.vector_hypothesis) if t not in DOMAIN_STOP_WORDS
    ] or list(plan.structured_filter.metric_keywords)
    context = assemble_context(
        result.rows, (g.chunk for g in result.chunks), keywords, k=top_k
    )

    context_json = workdir / "context.json"
    write_json(context_json, context.to_json_dict())
    context_md = workdir / "context.md"
    context_md.write_text(context.rendered, encoding="utf-8")
    return {
        "rows": len(result.rows),
        "gated_chunks": len(result.chunks),
        "kept_chunks": len(context.chunks),
        "artifacts": [context_json.name, context_md.name],
    }


_VECTOR_ORDER = (
    "logic_code_lie",
    "numeric_neighbor",
    "time_warp",
    "context_swap",
    "semantic_scale_drift",
)


def run_sabotage(cfg: PipelineConfig, workdir: Path) -> dict:
    seed = cfg.get_int("seed", 0)
    golden_path = cfg.resolve("golden_file") or workdir / "golden.jsonl"
    records = load_records(golden_path)
    vectors = cfg.get_list("vectors") or list(_VECTOR_ORDER)
    unknown = [v for v in vectors if v not in _VECTOR_ORDER]
    if unknown:
        raise ConfigError(f"unknown sabotage vectors: {unknown}")

    pool = build_distractor_pool(records)
    ontology = DriftOntology(entity_pool=tuple(cfg.get_list("drift_entities")))
    auditor = FixtureAuditor()
    validate = cfg.get_bool("dual_path_validate", True)

    produced: Counter = Counter()
    skips: list[str] = []
    rejected_validation = 0
    output: list[DatasetRecord] = []

    for rec in records:
        parent_out = rec
        if (
            cfg.get_bool("inject_axiom_noise", True)
            and rec.label is Label.GENERAL
            and not rec.context
        ):
            try:
                parent_out = axiomatic_noise_inject(rec, pool, seed)
                produced["axiom_noise"] += 1
            except SabotageSkip as exc:
                skips.append(f"{rec.record_id}/axiom_noise: {exc}")
        output.append(parent_out)

        if rec.label is not Label.SUPPORTED:
            continue
        children = []
        for vector in vectors:
            try:
                if vector == "logic_code_lie":
                    child = logic_code_lie(rec, seed)
                elif vector == "numeric_neighbor":
                    grid = None
                    for text in rec.context:
                        block = find_table_block(text)
                        if block:
                            grid, _ = parse_table(block)
                            break
                    if grid is None:
                        raise SabotageSkip("no markdown table in context")
                    child = numeric_neighbor(rec, grid, seed)
                elif vector == "time_warp":
                    child = time_warp(rec, seed)
                elif vector == "context_swap":
                    child = context_swap(rec, pool, seed)
                else:
                    child = semantic_scale_drift(rec, ontology, seed)
            except SabotageSkip as exc:
                skips.append(f"{rec.record_id}/{vector}: {exc}")
                continue
            if validate and not dual_path_validate(child, auditor.audit(child)):
                rejected_validation += 1
                skips.append(f"{rec.record_id}/{vector}: rejected by dual-path validation")
                continue
            children.append(child)
            produced[vector] += 1
        output.extend(sorted(children, key=lambda c: c.record_id))

    out_path = workdir / "sabotaged.jsonl"
    write_records(out_path, output)
    manifest = {
        "records_in": len(records),
        "records_out": len(output),
        "produced": dict(produced),
        "rejected_by_validation": rejected_validation,
        "skips": skips,
    }
    write_json(workdir / "sabotage_manifest.json", manifest)
    manifest["artifacts"] = [out_path.name, "sabotage_manifest.json"]
    return manifest


def run_split(cfg: PipelineConfig, workdir: Path) -> dict:
    seed = cfg.get_int("seed", 0)
    val_frac = cfg.get_float("val_frac", 0.10)
    test_frac = cfg.get_float("test_frac", 0.10)
    records_path = cfg.resolve("records_file") or workdir / "sabotaged.jsonl"
    records = load_records(records_path)
    families = group_families(records)
    result = split_families(families, val_frac=val_frac, test_frac=test_frac, rng_seed=seed)

    artifacts = []
    for name, recs in (("train", result.train), ("val", result.val), ("test", result.test)):
        path = workdir / f"{name}.jsonl"
        write_records(path, recs)
        artifacts.append(path.name)

    def label_counts(recs):
        counts = Counter(r.label.value for r in recs)
        return {label.value: counts.get(label.value, 0) for label in Label}

    manifest = {
        "families": len(families),
        "bucket_counts": result.bucket_counts,
        "records": {
            "train": len(result.train),
            "val": len(result.val),
            "test": len(result.test),
        },
        "labels": {
            "train": label_counts(result.train),
            "val": label_counts(result.val),
            "test": label_counts(result.test),
        },
    }
    write_json(workdir / "split_manifest.json", manifest)
    manifest["artifacts"] = artifacts + ["split_manifest.json"]
    return manifest


def compute_metrics(
    gold: list[DatasetRecord], predictions: Mapping[str, str]
) -> dict:
    """Flip rate, per-typology detection, TPR/FPR, and the composite score."""
    by_id = {r.record_id: r for r in gold}

    pairs = []
    for rec in gold:
        if rec.parent_id and rec.label is Label.UNFOUNDED:
            parent = by_id.get(rec.parent_id)
            if parent is not None and parent.label is Label.SUPPORTED:
                pairs.append(
                    (
                        predictions.get(parent.record_id),
                        predictions.get(rec.record_id),
                        parent.label.value,
                        rec.label.value,
                    )
                )
    fr_hits = sum(1 for pp, cp, pl, cl in pairs if pp == pl and cp == cl)
    fr = flip_rate(pairs) if pairs else None

    typology: dict[str, dict] = {}
    for rec in gold:
        if rec.sabotage_type is None or rec.label is not Label.UNFOUNDED:
            continue
        slot = typology.setdefault(rec.sabotage_type.value, {"detected": 0, "total": 0})
        slot["total"] += 1
        if predictions.get(rec.record_id) == Label.UNFOUNDED.value:
            slot["detected"] += 1
    for slot in typology.values():
        slot["rate"] = slot["detected"] / slot["total"]

    supported = [r for r in gold if r.label is Label.SUPPORTED]
    tpr_hits = sum(
        1 for r in supported if predictions.get(r.record_id) == Label.SUPPORTED.value
    )
    natural = [
        r for r in gold if r.label is Label.UNFOUNDED and r.parent_id is None
    ]
    nat_hits = sum(
        1 for r in natural if predictions.get(r.record_id) == Label.UNFOUNDED.value
    )
    axioms = [r for r in gold if r.label is Label.GENERAL]
    axiom_hits = sum(
        1 for r in axioms if predictions.get(r.record_id) == Label.GENERAL.value
    )

    pillars = {
        "flip_rate": (fr_hits, len(pairs)),
        "recall_natural": (nat_hits, len(natural)),
        "tpr_clean": (tpr_hits, len(supported)),
        "acc_axiom": (axiom_hits, len(axioms)),
    }
    composite = composite_score(*pillars.values())

    return {
        "pairs": len(pairs),
        "flip_rate": fr,
        "per_typology": typology,
        "tpr_clean": tpr_hits / len(supported) if supported else None,
        "fpr_clean": 1.0 - tpr_hits / len(supported) if supported else None,
        "recall_natural": nat_hits / len(natural) if natural else None,
        "acc_axiom": axiom_hits / len(axioms) if axioms else None,
        "pillar_counts": {k: list(v) for k, v in pillars.items()},
        "pillar_smoothed": {k: jeffreys_rate(*v) for k, v in pillars.items()},
        "composite_score": composite,
    }


def run_score(cfg: PipelineConfig, workdir: Path) -> dict:
    gold_path = cfg.resolve("gold_file") or workdir / "test.jsonl"
    predictions_path = cfg.resolve("predictions_file")
    if predictions_path is None:
        raise ConfigError("score stage needs predictions_file")
    gold = load_records(gold_path)
    gap_threshold = cfg.get_float("logit_gap", DEFAULTS["logit_gap"])
    predictions: dict[str, str] = {}
    for obj in read_jsonl(predictions_path):
        if "probabilities" in obj:
            # verdict-token probabilities: gate them, then map the verdict
            # token onto the dataset label space (Uncertain matches nothing)
            dist = VerdictDistribution(obj["probabilities"])
            verdict = logit_gap_gate(dist, gap_threshold)
            predictions[obj["record_id"]] = VERDICT_TO_LABEL.get(verdict, verdict)
        else:
            predictions[obj["record_id"]] = obj["predicted_label"]
    metrics = compute_metrics(gold, predictions)
    write_json(workdir / "metrics.json", metrics)
    metrics["artifacts"] = ["metrics.json"]
    return metrics


def run_loss_check(
    instances: int = 1000,
    seed: int = 0,
    max_positions: int = 64,
    max_vocab: int = 32,
    chunk_sizes: tuple[int, ...] = (1, 2, 7, 64, 512),
    base_spec: LossSpec | None = None,
) -> dict:
    """Random-instance equivalence sweep of the chunked loss vs the reference.

    With ``base_spec`` provided (e.g. from a config file), its weights, clamp
    multiplier, and chunk size are held fixed across the sweep; otherwise
    every knob is randomized per instance. Label token ids are always drawn
    fresh to fit the instance's vocabulary.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        t = int(rng.integers(2, max_positions + 1))
        v = int(rng.integers(2, max_vocab + 1))
        logits = rng.normal(0.0, 4.0, size=(t, v))
        labels = rng.integers(0, v, size=t)
        mask = rng.random(t) < 0.3
        labels = np.where(mask, -100, labels)
        if (labels[1:] == -100).all():
            labels[-1] = int(rng.integers(0, v))
        label_ids = {
            "Found": int(rng.integers(0, v)),
            "Fake": int(rng.integers(0, v)),
            "General": int(rng.integers(0, v)),
        }
        if base_spec is not None:
            spec = dataclasses.replace(base_spec, label_token_ids=label_ids)
        else:
            spec = LossSpec(
                class_weights={
                    "Found": float(rng.uniform(1, 80)),
                    "Fake": float(rng.uniform(1, 80)),
                    "General": float(rng.uniform(1, 80)),
                },
                non_label_weight=float(rng.uniform(0.5, 2.0)),
                clamp_multiplier=float(rng.uniform(1.0, 8.0)),
                chunk_size=int(rng.choice(chunk_sizes)),
                label_token_ids=label_ids,
            )
        chunked = micro_chunked_ce(logits, labels, spec)
        reference = full_weighted_ce(logits[:-1], labels[1:], spec)
        scale = max(abs(reference), 1e-12)
        worst = max(worst, float(abs(chunked - reference) / scale))
    return {"instances": instances, "max_relative_error": worst}


STAGE_RUNNERS: Mapping[str, Callable[[PipelineConfig, Path], dict]] = {
    "ingest": run_ingest,
    "ground": run_ground,
    "retrieve": run_retrieve,
    "sabotage": run_sabotage,
    "split": run_split,
    "score": run_score,
}


def run_pipeline(config_path: str | Path) -> dict:
    """Run the configured stages in order; halt on the first failure."""
    cfg = PipelineConfig.parse(config_path)
    stages = cfg.get_list("stages")
    if not stages:
        raise ConfigError("config declares no stages")
    unknown = [s for s in stages if s not in STAGE_RUNNERS]
    if unknown:
        raise ConfigError(f"unknown stages: {unknown}")

    workdir = cfg.workdir()
    manifest: dict = {"config": str(config_path), "workdir": str(workdir), "stages": []}
    for stage in stages:
        started = time.monotonic()
        try:
            entry = STAGE_RUNNERS[stage](cfg, workdir)
        except FinledgerError as exc:
            manifest["failed_stage"] = stage
            write_json(workdir / "manifest.json", manifest)
            raise StageFailure(stage, exc) from exc
        entry = dict(entry)
        entry["stage"] = stage
        entry["seconds"] = round(time.monotonic() - started, 6)
        manifest["stages"].append(entry)
    write_json(workdir / "manifest.json", manifest)
    return manifest
