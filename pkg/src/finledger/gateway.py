"""Pluggable model gateway: every LLM interaction goes through here.

Pipelines never talk to a model directly; they issue typed requests against
a configured backend. The fixture backend replays recorded bodies keyed by a
request hash, which makes every pipeline stage runnable and byte-reproducible
offline. The HTTP backend speaks a chat-completions-style JSON protocol.
Responses are validated against a declared schema before anyone consumes
them, and each failure mode (miss, timeout, bad body) surfaces as its own
exception so pipelines can skip-and-log.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping

from .errors import BackendUnavailable, GatewayTimeout, SchemaViolation

DEFAULT_API_KEY_ENV = "FINLEDGER_GATEWAY_TOKEN"


class Role(str, Enum):
    NAVIGATOR = "NAVIGATOR"
    EXTRACTOR = "EXTRACTOR"
    AUDITOR = "AUDITOR"
    ARCHITECT = "ARCHITECT"


@dataclass(frozen=True)
class GatewayRequest:
    role: Role
    prompt: str
    response_schema_id: str


@dataclass(frozen=True)
class GatewayResponse:
    body: str
    latency_ms: int


def request_hash(req: GatewayRequest) -> str:
    payload = f"{req.role.value}\n{req.response_schema_id}\n{req.prompt}"
    return hashlib.md5(payload.encode("utf-8")).hexdigest()


def _check_retrieval_plan(obj) -> list[str]:
    errors = []
    if not isinstance(obj, dict):
        return ["body must be a JSON object"]
    if not isinstance(obj.get("structured_filter"), dict):
        errors.append("structured_filter must be an object")
    if not isinstance(obj.get("vector_hypothesis"), str):
        errors.append("vector_hypothesis must be a string")
    return errors


def _check_fact_candidates(obj) -> list[str]:
    if not isinstance(obj, list):
        return ["body must be a JSON array"]
    errors = []
    for i, item in enumerate(obj):
        if not isinstance(item, dict):
            errors.append(f"item {i} must be an object")
            continue
        for key in ("metric_name", "grounding_quote", "fact_type"):
            if not isinstance(item.get(key), str):
                errors.append(f"item {i} missing string field '{key}'")
        if item.get("fact_type") not in {"ACTUAL", "LIMIT", "FORMULA", None}:
            errors.append(f"item {i} has unknown fact_type {item.get('fact_type')!r}")
    return errors


def _check_auditor_verdict(obj) -> list[str]:
    errors = []
    if not isinstance(obj, dict):
        return ["body must be a JSON object"]
    for key in ("error_span", "reasoning"):
        if not isinstance(obj.get(key), str):
            errors.append(f"missing string field '{key}'")
    return errors


def _check_json_object(obj) -> list[str]:
    return [] if isinstance(obj, dict) else ["body must be a JSON object"]


SCHEMA_VALIDATORS: Mapping[str, Callable[[object], list[str]]] = {
    "retrieval_plan": _check_retrieval_plan,
    "fact_candidates": _check_fact_candidates,
    "auditor_verdict": _check_auditor_verdict,
    "json_object": _check_json_object,
}


class FixtureBackend:
    """Replays recorded response bodies keyed by request hash."""

    def __init__(self, recordings: Mapping[str, str] | None = None):
        self._recordings = dict(recordings or {})

    def record(self, req: GatewayRequest, body: str) -> None:
        self._recordings[request_hash(req)] = body

    def complete(self, req: GatewayRequest) -> str:
        key = request_hash(req)
        if key not in self._recordings:
            raise BackendUnavailable(
                f"no recording for {req.role.value}/{req.response_schema_id} "
                f"request {key[:12]}"
            )
        return self._recordings[key]

    def save_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key in sorted(self._recordings):
                fh.write(
                    json.dumps(
                        {"hash": key, "body": self._recordings[key]},
                        sort_keys=True,
                        ensure_ascii=False,
                    )
                )
                fh.write("\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "FixtureBackend":
        recordings = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                recordings[obj["hash"]] = obj["body"]
        return cls(recordings)


class HttpBackend:
    """Chat-completions-style JSON backend.

    The credential is read from an environment variable, never from config
    files or code.
    """

    def __init__(
        self,
        url: str,
        model: str = "default",
        timeout_s: float = 30.0,
        api_key_env: str = DEFAULT_API_KEY_ENV,
    ):
        self.url = url
        self.model = model
        self.timeout_s = timeout_s
        self.api_key_env = api_key_env

    def complete(self, req: GatewayRequest) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": req.prompt}],
        }
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.api_key_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        request = urllib.request.Request(
            self.url,
            data=json.dumps(payload).encode("utf-8"),
            headers=headers,
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_s) as response:
                raw = response.read().decode("utf-8")
        except TimeoutError as exc:
            raise GatewayTimeout(f"backend timed out after {self.timeout_s}s") from exc
        except urllib.error.URLError as exc:
            if isinstance(getattr(exc, "reason", None), TimeoutError):
                raise GatewayTimeout(f"backend timed out after {self.timeout_s}s") from exc
            raise BackendUnavailable(str(exc)) from exc
        try:
            envelope = json.loads(raw)
            return envelope["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise SchemaViolation(f"unparseable completion envelope: {exc}") from exc


def call_gateway(req: GatewayRequest, backend) -> GatewayResponse:
    """Run a request against a backend and schema-validate the body."""
    validator = SCHEMA_VALIDATORS.get(req.response_schema_id)
    if validator is None:
        raise SchemaViolation(f"unknown response schema '{req.response_schema_id}'")
    started = time.monotonic()
    body = backend.complete(req)
    latency_ms = int((time.monotonic() - started) * 1000)
    try:
        parsed = json.loads(body)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"response body is not valid JSON: {exc}") from exc
    problems = validator(parsed)
    if problems:
        raise SchemaViolation("; ".join(problems))
    return GatewayResponse(body=body, latency_ms=latency_ms)
