from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from assistplan.providers import (
    AuditLog,
    ProviderConfigError,
    ProviderEndpoint,
    ProviderTimeout,
    SchemaValidationError,
    TargetSchema,
    TransportError,
    complete_structured,
    extract_json,
)

SCHEMA = TargetSchema("pair", {"type": "object", "required": ["a", "b"], "properties": {"a": {"type": "integer"}, "b": {"type": "string"}}})
ENDPOINT = ProviderEndpoint("http://localhost:9", "stub-model")
VALID = '{"a": 1, "b": "x"}'


def _reply(text):
    return {"choices": [{"message": {"content": text}}]}


class Scripted:
    """Transport that plays back a fixed list of replies or exceptions."""

    def __init__(self, script):
        self.script = list(script)
        self.payloads = []

    def __call__(self, endpoint, payload):
        self.payloads.append(payload)
        step = self.script[min(len(self.payloads) - 1, len(self.script) - 1)]
        if isinstance(step, Exception):
            raise step
        return _reply(step)


def _run(script, endpoint=ENDPOINT):
    transport, audit, delays = Scripted(script), AuditLog(), []
    try:
        result = complete_structured(endpoint, "give a pair", SCHEMA, transport=transport, audit=audit, sleep=delays.append)
    except Exception as exc:  # returned for inspection
        result = exc
    return result, transport, audit, delays


def test_valid_first_answer():
    result, transport, audit, _ = _run([VALID])
    assert result.value == {"a": 1, "b": "x"}
    assert result.record.retry_count == 0 and len(audit) == 1


def test_prose_then_valid_uses_one_reformat_retry():
    result, transport, audit, delays = _run(["Sure! Here you go.", VALID])
    assert result.value["a"] == 1
    assert result.record.retry_count == 1
    assert "previous answer was rejected" in transport.payloads[1]["messages"][1]["content"]
    assert delays == []


def test_persistent_prose_fails_with_raw_text():
    result, transport, audit, _ = _run(["no json here"])
    assert isinstance(result, SchemaValidationError)
    assert result.raw_text == "no json here"
    assert len(transport.payloads) == 2  # original plus one reformat


def test_transport_failures_exhaust_budget():
    result, transport, audit, delays = _run([TransportError("down")])
    assert isinstance(result, TransportError)
    assert len(transport.payloads) == ENDPOINT.max_retries + 1
    assert delays == [0.25, 0.5]


def test_token_in_config_is_rejected():
    with pytest.raises(ProviderConfigError):
        ProviderEndpoint.from_dict({"base_url": "http://x", "model_name": "m", "token": "secret"})
    with pytest.raises(ProviderConfigError):
        ProviderEndpoint.from_dict({"base_url": "http://x", "model_name": "m", "api_key": "secret"})


def test_missing_token_env_var_is_a_config_error(monkeypatch):
    monkeypatch.delenv("ASSISTPLAN_TEST_TOKEN", raising=False)
    with pytest.raises(ProviderConfigError):
        ProviderEndpoint("http://x", "m", auth_env_var="ASSISTPLAN_TEST_TOKEN").token()


def test_audit_log_mirrors_to_file(tmp_path):
    path = tmp_path / "audit.jsonl"
    audit = AuditLog(str(path))
    complete_structured(ENDPOINT, "p", SCHEMA, transport=Scripted([VALID]), audit=audit)
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(lines) == 1 and lines[0]["parse_outcome"] == "ok"


@pytest.mark.parametrize(
    "text, expected",
    [(VALID, {"a": 1, "b": "x"}), ("```json\n" + VALID + "\n```", {"a": 1, "b": "x"}), ("Answer: " + VALID + " done", {"a": 1, "b": "x"})],
)
def test_extract_json_variants(text, expected):
    assert extract_json(text) == expected


# --- properties ----------------------------------------------------------------------------------

step = st.sampled_from(["timeout", "transport", "prose", "valid"])


@given(st.lists(step, min_size=1, max_size=6), st.integers(0, 4))
def test_retry_contract(kinds, max_retries):
    endpoint = ProviderEndpoint("http://localhost:9", "stub-model", max_retries=max_retries)
    mapping = {"timeout": ProviderTimeout("t"), "transport": TransportError("x"), "prose": "nope", "valid": VALID}
    result, transport, audit, delays = _run([mapping[k] for k in kinds], endpoint)
    # every call is audited and no record exceeds the budget
    assert len(audit) == len(transport.payloads)
    assert all(r.retry_count <= max_retries for r in audit.records)
    assert [r.retry_count for r in audit.records] == list(range(len(audit)))
    assert delays == sorted(delays)
    reformats = sum(1 for r in audit.records if r.parse_outcome.startswith("schema_invalid"))
    assert reformats <= 2
    if not isinstance(result, Exception):
        assert result.value == {"a": 1, "b": "x"}
