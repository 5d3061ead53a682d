"""Single choke point for model calls.

Every agent call goes through a Gateway: prompt in, structured document out,
with bounded repair retries on malformed output and one usage-ledger entry per
underlying provider call. Providers are pluggable; the ScriptedProvider makes
whole-pipeline runs deterministic and offline.
"""

from __future__ import annotations

import asyncio
import json
import math
import os
import re
import time
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Protocol

import httpx

from .errors import ParseExhausted, ProviderError

DEFAULT_REPAIR_ATTEMPTS = 2
DEFAULT_MAX_IN_FLIGHT = 8
DEFAULT_CALL_TIMEOUT = 60.0


class AgentKind(str, Enum):
    CONTEXT_GENERATOR = "CONTEXT_GENERATOR"
    RELEVANCY = "RELEVANCY"
    LAYOUT = "LAYOUT"
    SOURCE_SCRUTINY = "SOURCE_SCRUTINY"
    FACT_CHECK = "FACT_CHECK"
    REMEDIATION_ANALYST = "REMEDIATION_ANALYST"
    FACT_LOOKUP_EXTRACT = "FACT_LOOKUP_EXTRACT"
    REMEDIATION_AUDIT = "REMEDIATION_AUDIT"
    DISCOVERY = "DISCOVERY"
    INTEGRITY = "INTEGRITY"
    MONOLITH = "MONOLITH"


@dataclass(frozen=True)
class CallUsage:
    prompt_tokens: int
    completion_tokens: int
    wall_time: float
    model_id: str

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0 or self.wall_time < 0:
            raise ValueError("usage counts must be non-negative")


@dataclass(frozen=True)
class LedgerEntry:
    kind: AgentKind
    key: str
    usage: CallUsage

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "key": self.key,
            "model_id": self.usage.model_id,
            "prompt_tokens": self.usage.prompt_tokens,
            "completion_tokens": self.usage.completion_tokens,
            "wall_time": self.usage.wall_time,
        }


class UsageLedger:
    """Append-only record of every model call in a run."""

    def __init__(self):
        self._entries: list[LedgerEntry] = []

    def record(self, kind: AgentKind, key: str, usage: CallUsage) -> None:
        self._entries.append(LedgerEntry(kind, key, usage))

    @property
    def entries(self) -> list[LedgerEntry]:
        return list(self._entries)

    def count(self, kind: AgentKind | None = None) -> int:
        if kind is None:
            return len(self._entries)
        return sum(1 for e in self._entries if e.kind == kind)

    def usages(self) -> list[CallUsage]:
        return [e.usage for e in self._entries]


class PricingTable:
    """Per-model input/output rates in currency per 1k tokens."""

    def __init__(self, rates: dict[str, dict] | None = None):
        self.rates: dict[str, tuple[Decimal, Decimal]] = {}
        for model_id, rate in (rates or {}).items():
            inp = Decimal(str(rate["input_cost_per_1k"]))
            out = Decimal(str(rate["output_cost_per_1k"]))
            if inp < 0 or out < 0:
                raise ValueError(f"negative rate for {model_id}")
            self.rates[model_id] = (inp, out)

    @classmethod
    def from_file(cls, path) -> "PricingTable":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def cost_of(self, usage: CallUsage) -> Decimal | None:
        """Cost of one call, or None when the model is not priced."""
        rate = self.rates.get(usage.model_id)
        if rate is None:
            return None
        inp, out = rate
        return (
            Decimal(usage.prompt_tokens) / 1000 * inp
            + Decimal(usage.completion_tokens) / 1000 * out
        )


def estimate_cost(usages: list[CallUsage], pricing: PricingTable) -> Decimal:
    """Exact-decimal total cost; unpriced models contribute zero."""
    total = Decimal("0")
    for usage in usages:
        total += pricing.cost_of(usage) or Decimal("0")
    return total


def unknown_models(usages: list[CallUsage], pricing: PricingTable) -> list[str]:
    return sorted({u.model_id for u in usages if u.model_id not in pricing.rates})


class ShapeMismatch(ValueError):
    """Parsed output does not satisfy the declared response shape."""


_KIND_CHECKS = {
    "boolean": lambda v: isinstance(v, bool),
    "text": lambda v: isinstance(v, str),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "list": lambda v: isinstance(v, list),
}


@dataclass(frozen=True)
class ShapeField:
    name: str
    kind: str  # boolean | text | number | list
    required: bool = True
    allow_empty: bool = True  # text fields only

    def __post_init__(self):
        if self.kind not in _KIND_CHECKS:
            raise ValueError(f"unknown shape kind {self.kind!r}")


class ResponseShape:
    def __init__(self, *fields: ShapeField):
        self.fields = fields

    def validate(self, doc) -> dict:
        if not isinstance(doc, dict):
            raise ShapeMismatch(f"expected a JSON object, got {type(doc).__name__}")
        out = {}
        for f in self.fields:
            if f.name not in doc or doc[f.name] is None:
                if f.required:
                    raise ShapeMismatch(f"missing required field {f.name!r}")
                out[f.name] = None
                continue
            value = doc[f.name]
            if not _KIND_CHECKS[f.kind](value):
                raise ShapeMismatch(f"field {f.name!r} must be a {f.kind}")
            if f.kind == "text" and not f.allow_empty and not value.strip():
                raise ShapeMismatch(f"field {f.name!r} must not be empty")
            out[f.name] = value
        return out

    def describe(self) -> str:
        parts = []
        for f in self.fields:
            opt = "" if f.required else " (optional)"
            parts.append(f'"{f.name}": {f.kind}{opt}')
        return "{" + ", ".join(parts) + "}"


_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL | re.IGNORECASE)


def extract_json_object(text: str) -> dict:
    """First well-formed JSON object in the completion wins.

    Tries fenced blocks, then the whole text, then the first balanced-brace
    region. Raises ShapeMismatch when nothing parses.
    """
    candidates = [m.group(1) for m in _FENCE_RE.finditer(text)]
    candidates.append(text.strip())
    start = text.find("{")
    if start != -1:
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    candidates.append(text[start : i + 1])
                    break
    for candidate in candidates:
        try:
            doc = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict):
            return doc
    raise ShapeMismatch("no JSON object found in model output")


class Provider(Protocol):
    model_id: str

    async def complete(self, kind: AgentKind, key: str, prompt: str) -> tuple[str, CallUsage]:
        ...


def _synthetic_usage(prompt: str, completion: str, model_id: str) -> CallUsage:
    return CallUsage(
        prompt_tokens=math.ceil(len(prompt) / 4),
        completion_tokens=math.ceil(len(completion) / 4),
        wall_time=0.0,
        model_id=model_id,
    )


class ScriptedProvider:
    """Deterministic fixture-backed provider for offline runs and tests.

    Fixture keys are ``KIND/key``; ``KIND/*`` is a per-kind default and ``*``
    a global one. A list value is consumed one element per call (the last
    element repeats), which lets tests script malformed-then-valid sequences.
    """

    model_id = "scripted"

    def __init__(self, fixture: dict, default: str | None = None):
        self.fixture = dict(fixture)
        self.default = self.fixture.pop("*", default)
        self._cursors: dict[str, int] = {}

    @classmethod
    def from_file(cls, path) -> "ScriptedProvider":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def _lookup(self, kind: AgentKind, key: str):
        for candidate in (f"{kind.value}/{key}", f"{kind.value}/*"):
            if candidate in self.fixture:
                return candidate, self.fixture[candidate]
        if self.default is not None:
            return "*", self.default
        raise ProviderError(f"no scripted response for {kind.value}/{key}")

    async def complete(self, kind: AgentKind, key: str, prompt: str) -> tuple[str, CallUsage]:
        fixture_key, value = self._lookup(kind, key)
        if isinstance(value, list):
            cursor = self._cursors.get(fixture_key, 0)
            self._cursors[fixture_key] = cursor + 1
            value = value[min(cursor, len(value) - 1)]
        text = value if isinstance(value, str) else json.dumps(value)
        return text, _synthetic_usage(prompt, text, self.model_id)


class HttpProvider:
    """Generic chat-completions endpoint with a bearer credential.

    ``endpoint`` is the full completions URL. The credential is read from the
    environment (``credential_env``) unless an explicit api_key is supplied
    per run; it is never written to disk.
    """

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        credential_env: str = "PROVIDER_API_KEY",
        api_key: str | None = None,
        timeout: float = DEFAULT_CALL_TIMEOUT,
        transport: httpx.AsyncBaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.model_id = model_id
        self._api_key = api_key or os.environ.get(credential_env, "")
        self._client = httpx.AsyncClient(timeout=timeout, transport=transport)

    async def complete(self, kind: AgentKind, key: str, prompt: str) -> tuple[str, CallUsage]:
        headers = {}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        body = {
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        started = time.monotonic()
        try:
            response = await self._client.post(self.endpoint, json=body, headers=headers)
            response.raise_for_status()
            doc = response.json()
            text = doc["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"provider call failed: {exc}") from exc
        elapsed = time.monotonic() - started
        usage = doc.get("usage") or {}
        return text, CallUsage(
            prompt_tokens=int(usage.get("prompt_tokens", math.ceil(len(prompt) / 4))),
            completion_tokens=int(usage.get("completion_tokens", math.ceil(len(text) / 4))),
            wall_time=elapsed,
            model_id=self.model_id,
        )

    async def aclose(self):
        await self._client.aclose()


_REPAIR_NOTE = (
    "\n\nYour previous reply could not be used: {error}.\n"
    "Reply again with exactly one fenced JSON block containing the fields {shape}."
)


class Gateway:
    """Provider wrapper adding structured parsing, repair retries and accounting."""

    def __init__(
        self,
        provider: Provider,
        ledger: UsageLedger | None = None,
        repair_attempts: int = DEFAULT_REPAIR_ATTEMPTS,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
    ):
        self.provider = provider
        self.ledger = ledger if ledger is not None else UsageLedger()
        self.repair_attempts = repair_attempts
        self._gate = asyncio.Semaphore(max_in_flight)

    async def _call(self, kind: AgentKind, key: str, prompt: str) -> tuple[str, CallUsage]:
        async with self._gate:
            text, usage = await self.provider.complete(kind, key, prompt)
        self.ledger.record(kind, key, usage)
        return text, usage

    async def complete_structured(
        self, kind: AgentKind, key: str, prompt: str, shape: ResponseShape
    ) -> tuple[dict, CallUsage]:
        """One structured agent call; usage aggregates across repair attempts."""
        totals = [0, 0, 0.0]
        attempt_prompt = prompt
        error = None
        for _ in range(self.repair_attempts + 1):
            text, usage = await self._call(kind, key, attempt_prompt)
            totals[0] += usage.prompt_tokens
            totals[1] += usage.completion_tokens
            totals[2] += usage.wall_time
            try:
                doc = shape.validate(extract_json_object(text))
            except ShapeMismatch as exc:
                error = exc
                attempt_prompt = prompt + _REPAIR_NOTE.format(error=exc, shape=shape.describe())
                continue
            return doc, CallUsage(totals[0], totals[1], totals[2], usage.model_id)
        raise ParseExhausted(f"{kind.value}/{key}: {error}")
