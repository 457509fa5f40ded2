"""Chat-completion client with schema-checked structured output, retries and an audit trail."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import jsonschema

log = logging.getLogger(__name__)


class ProviderError(RuntimeError):
    """Base class for every remote-provider failure."""


class ProviderConfigError(ProviderError):
    pass


class TransportError(ProviderError):
    """Connection-level failure; safe to retry."""


class ProviderTimeout(TransportError):
    pass


class SchemaValidationError(ProviderError):
    """Model output did not satisfy the requested schema."""

    def __init__(self, message: str, raw_text: str, errors: Optional[list[str]] = None):
        super().__init__(message)
        self.raw_text = raw_text
        self.errors = errors or []


@dataclass(frozen=True)
class ProviderEndpoint:
    base_url: str
    model_name: str
    auth_env_var: Optional[str] = None
    timeout_s: float = 30.0
    max_retries: int = 2
    backoff_base_ms: float = 250.0

    def __post_init__(self):
        if not self.timeout_s > 0:
            raise ProviderConfigError("timeout_s must be > 0")
        if self.max_retries < 0:
            raise ProviderConfigError("max_retries must be >= 0")

    def token(self) -> Optional[str]:
        if not self.auth_env_var:
            return None
        value = os.environ.get(self.auth_env_var)
        if not value:
            raise ProviderConfigError(f"environment variable {self.auth_env_var} is not set")
        return value

    @classmethod
    def from_dict(cls, data: dict) -> "ProviderEndpoint":
        if "token" in data or "api_key" in data:
            raise ProviderConfigError("tokens must come from the environment; use auth_env_var")
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "base_url": self.base_url,
            "model_name": self.model_name,
            "auth_env_var": self.auth_env_var,
            "timeout_s": self.timeout_s,
            "max_retries": self.max_retries,
            "backoff_base_ms": self.backoff_base_ms,
        }


@dataclass(frozen=True)
class ExchangeRecord:
    request_digest: str
    raw_response: str
    parse_outcome: str
    latency_ms: float
    retry_count: int

    def to_dict(self) -> dict:
        return {
            "request_digest": self.request_digest,
            "raw_response": self.raw_response,
            "parse_outcome": self.parse_outcome,
            "latency_ms": self.latency_ms,
            "retry_count": self.retry_count,
        }


class AuditLog:
    """Append-only exchange log; optionally mirrored to a newline-delimited JSON file."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.records: list[ExchangeRecord] = []
        self._lock = threading.Lock()

    def append(self, record: ExchangeRecord) -> None:
        with self._lock:
            self.records.append(record)
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class TargetSchema:
    """A JSON schema plus an optional converter applied after validation."""

    name: str
    json_schema: dict
    convert: Optional[Callable[[Any], Any]] = None


_REGISTRY: dict[str, TargetSchema] = {}


def register_schema(schema: TargetSchema) -> TargetSchema:
    _REGISTRY[schema.name] = schema
    return schema


def get_schema(name: str) -> TargetSchema:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ProviderConfigError(f"schema {name!r} is not registered") from None


Transport = Callable[[ProviderEndpoint, dict], dict]


def http_transport(endpoint: ProviderEndpoint, payload: dict) -> dict:
    """POST a chat-completion payload with httpx."""
    import httpx

    headers = {"Content-Type": "application/json"}
    token = endpoint.token()
    if token:
        headers["Authorization"] = f"Bearer {token}"
    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    try:
        resp = httpx.post(url, json=payload, headers=headers, timeout=endpoint.timeout_s)
    except httpx.TimeoutException as exc:
        raise ProviderTimeout(str(exc)) from exc
    except httpx.TransportError as exc:
        raise TransportError(str(exc)) from exc
    if resp.status_code >= 500 or resp.status_code == 429:
        raise TransportError(f"HTTP {resp.status_code}")
    if resp.status_code >= 400:
        raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
    return resp.json()


def build_request(endpoint: ProviderEndpoint, prompt: str, schema: TargetSchema, images: Optional[list[str]] = None, errors: Optional[list[str]] = None) -> dict:
    instruction = (
        "Answer with a single JSON object and nothing else. It must validate against this JSON schema:\n"
        + json.dumps(schema.json_schema, sort_keys=True)
    )
    text = prompt
    if errors:
        text += "\n\nYour previous answer was rejected:\n- " + "\n- ".join(errors) + "\nReturn corrected JSON only."
    content: Any = text
    if images:
        content = [{"type": "text", "text": text}] + [{"type": "image_url", "image_url": {"url": url}} for url in images]
    return {
        "model": endpoint.model_name,
        "messages": [
            {"role": "system", "content": instruction},
            {"role": "user", "content": content},
        ],
        "temperature": 0,
    }


def response_text(response: dict) -> str:
    try:
        content = response["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        return json.dumps(response, sort_keys=True) if not isinstance(response, str) else response
    if isinstance(content, list):
        return "".join(part.get("text", "") for part in content if isinstance(part, dict))
    return content or ""


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_json(text: str) -> Any:
    """Parse the first JSON object found in model text (bare, fenced, or embedded)."""
    candidates = [text.strip()]
    candidates += [m.strip() for m in _FENCE.findall(text)]
    start, end = text.find("{"), text.rfind("}")
    if 0 <= start < end:
        candidates.append(text[start : end + 1])
    for candidate in candidates:
        try:
            return json.loads(candidate)
        except (json.JSONDecodeError, ValueError):
            continue
    raise ValueError("no JSON object found in response")


def _validate(text: str, schema: TargetSchema) -> Any:
    try:
        data = extract_json(text)
    except ValueError as exc:
        raise SchemaValidationError(str(exc), text, [str(exc)]) from None
    validator = jsonschema.Draft202012Validator(schema.json_schema)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.path))
    if errors:
        msgs = [f"{'/'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors]
        raise SchemaValidationError("response does not match schema", text, msgs)
    if schema.convert is None:
        return data
    try:
        return schema.convert(data)
    except Exception as exc:  # converter rejections are schema failures
        raise SchemaValidationError(f"response rejected: {exc}", text, [str(exc)]) from exc


def _digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


@dataclass
class StructuredResult:
    value: Any
    record: ExchangeRecord
    records: list[ExchangeRecord] = field(default_factory=list)


def complete_structured(
    endpoint: ProviderEndpoint,
    prompt: str,
    target_schema: TargetSchema | str,
    *,
    transport: Transport = http_transport,
    images: Optional[list[str]] = None,
    audit: Optional[AuditLog] = None,
    sleep: Callable[[float], None] = time.sleep,
    clock: Callable[[], float] = time.perf_counter,
) -> StructuredResult:
    """Ask the model for JSON matching ``target_schema`` and return the validated value.

    Transport failures are retried with doubling backoff. A schema failure
    gets one re-prompt carrying the validation errors; a second schema failure
    is raised with the raw text. All retries share the ``max_retries`` budget.
    """
    schema = get_schema(target_schema) if isinstance(target_schema, str) else target_schema
    audit = audit if audit is not None else AuditLog()
    records: list[ExchangeRecord] = []
    errors: Optional[list[str]] = None
    reformat_used = False
    transport_failures = 0
    attempt = 0
    while True:
        payload = build_request(endpoint, prompt, schema, images, errors)
        digest = _digest(payload)
        t0 = clock()
        try:
            raw = response_text(transport(endpoint, payload))
        except TransportError as exc:
            rec = ExchangeRecord(digest, "", f"transport_error: {exc}", (clock() - t0) * 1000.0, attempt)
            audit.append(rec)
            records.append(rec)
            transport_failures += 1
            if attempt >= endpoint.max_retries:
                raise
            delay = endpoint.backoff_base_ms * (2 ** (transport_failures - 1)) / 1000.0
            log.info("transport failure (%s); retrying in %.3fs", exc, delay)
            sleep(delay)
            attempt += 1
            continue
        latency = (clock() - t0) * 1000.0
        try:
            value = _validate(raw, schema)
        except SchemaValidationError as exc:
            rec = ExchangeRecord(digest, raw, "schema_invalid: " + "; ".join(exc.errors)[:500], latency, attempt)
            audit.append(rec)
            records.append(rec)
            if reformat_used or attempt >= endpoint.max_retries:
                raise
            reformat_used = True
            errors = exc.errors
            attempt += 1
            continue
        rec = ExchangeRecord(digest, raw, "ok", latency, attempt)
        audit.append(rec)
        records.append(rec)
        return StructuredResult(value, rec, records)
