"""Core validation agents and the deterministic Arbiter.

The Arbiter is the only decision-maker: it is a pure function over the
fact-check and source-scrutiny reports, exhaustively testable. The model-backed
steps around it fail in fixed directions - fact-checking fails closed (an
unparseable response can never yield ACCEPT), source scrutiny fails open to
MEDIUM because it is advisory reputation, not evidence.
"""

from __future__ import annotations

import asyncio
import json
import logging
from dataclasses import dataclass
from enum import Enum

from .context import OperationalContext, render_context
from .errors import ParseExhausted, UnparseableDate
from .gateway import AgentKind, Gateway, ResponseShape, ShapeField
from .prompting import load_text, render
from .retrieval import registrable_domain
from .schema import DataPoint, DateValue, SchemaSpec, normalize_date

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RelevancyVerdict:
    is_relevant: bool
    reason: str


class Reliability(str, Enum):
    VERY_LOW = "VERY_LOW"
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"
    VERY_HIGH = "VERY_HIGH"


@dataclass(frozen=True)
class SourceAssessment:
    source_type: str
    reliability: Reliability
    notes: str


@dataclass(frozen=True)
class FactCheckReport:
    has_meaningful_content: bool
    supports_claims: bool
    extracted_date: DateValue | None
    notes: str


class RejectReason(str, Enum):
    NOT_RELEVANT = "NOT_RELEVANT"
    NO_MEANINGFUL_CONTENT = "NO_MEANINGFUL_CONTENT"
    CLAIMS_UNSUPPORTED = "CLAIMS_UNSUPPORTED"
    UNRELIABLE_SOURCE = "UNRELIABLE_SOURCE"
    FETCH_FAILED = "FETCH_FAILED"
    UNCOERCIBLE = "UNCOERCIBLE"


class Decision(str, Enum):
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"


@dataclass(frozen=True)
class Verdict:
    decision: Decision
    reasons: tuple[RejectReason, ...] = ()
    notes: str = ""

    def __post_init__(self):
        if (self.decision == Decision.REJECT) != bool(self.reasons):
            raise ValueError("REJECT verdicts carry reasons; ACCEPT carries none")


def format_row_values(dp: DataPoint, schema: SchemaSpec) -> str:
    doc = {name: dp.values.get(name, "") for name in schema.field_names}
    return json.dumps(doc, ensure_ascii=False, default=str)


_RELEVANCY_SHAPE = ResponseShape(
    ShapeField("is_relevant", "boolean"),
    ShapeField("reason", "text"),
)


async def assess_relevancy(
    gateway: Gateway, dp: DataPoint, schema: SchemaSpec
) -> RelevancyVerdict:
    """Low-cost screen over row values and dataset description only; runs
    before any fetching. Unparseable output fails closed (not relevant)."""
    prompt = render(
        "relevancy",
        context_fragment=render_context(None, AgentKind.RELEVANCY, schema),
        row_values=format_row_values(dp, schema),
    )
    try:
        doc, _ = await gateway.complete_structured(
            AgentKind.RELEVANCY, dp.row_id, prompt, _RELEVANCY_SHAPE
        )
    except ParseExhausted:
        return RelevancyVerdict(False, "unparseable relevancy response")
    reason = doc["reason"].strip()
    if not doc["is_relevant"] and not reason:
        reason = "not relevant (no reason given)"
    return RelevancyVerdict(doc["is_relevant"], reason)


_SCRUTINY_SHAPE = ResponseShape(
    ShapeField("source_type", "text", allow_empty=False),
    ShapeField("reliability", "text"),
    ShapeField("notes", "text"),
)


class SourceScrutinizer:
    """URL-only reputation assessment, cached per registrable domain."""

    def __init__(self, gateway: Gateway):
        self.gateway = gateway
        self._cache: dict[str, SourceAssessment] = {}
        self._inflight: dict[str, asyncio.Future] = {}
        self._lock = asyncio.Lock()

    async def scrutinize(self, url: str) -> SourceAssessment:
        domain = registrable_domain(url)
        async with self._lock:
            cached = self._cache.get(domain)
            if cached is not None:
                return cached
            pending = self._inflight.get(domain)
            if pending is None:
                pending = asyncio.get_running_loop().create_future()
                self._inflight[domain] = pending
                owner = True
            else:
                owner = False
        if not owner:
            return await asyncio.shield(pending)
        try:
            assessment = await self._assess(domain, url)
        except asyncio.CancelledError:
            async with self._lock:
                self._inflight.pop(domain, None)
            pending.cancel()
            raise
        async with self._lock:
            self._cache[domain] = assessment
            self._inflight.pop(domain, None)
        pending.set_result(assessment)
        return assessment

    async def _assess(self, domain: str, url: str) -> SourceAssessment:
        prompt = render("source_scrutiny", url=url)
        try:
            doc, _ = await self.gateway.complete_structured(
                AgentKind.SOURCE_SCRUTINY, domain, prompt, _SCRUTINY_SHAPE
            )
        except ParseExhausted:
            # Fail open: reputation is advisory, the fact-checker still gates.
            return SourceAssessment("unknown", Reliability.MEDIUM, "scrutiny unparseable")
        label = doc["reliability"].strip().upper().replace(" ", "_")
        try:
            reliability = Reliability(label)
            notes = doc["notes"]
        except ValueError:
            reliability = Reliability.MEDIUM
            notes = f"{doc['notes']} (unrecognized reliability {doc['reliability']!r})"
        return SourceAssessment(doc["source_type"].strip(), reliability, notes)


_FACT_CHECK_SHAPE = ResponseShape(
    ShapeField("has_meaningful_content", "boolean"),
    ShapeField("supports_claims", "boolean"),
    ShapeField("extracted_date", "text", required=False),
    ShapeField("notes", "text", allow_empty=False),
)

_FAIL_CLOSED = FactCheckReport(
    has_meaningful_content=False,
    supports_claims=False,
    extracted_date=None,
    notes="unparseable fact-check response",
)


async def fact_check(
    gateway: Gateway,
    dp: DataPoint,
    schema: SchemaSpec,
    page_markdown: str,
    hint: str,
    ctx: OperationalContext | None,
    include_examples: bool = True,
    minimal: bool = False,
) -> FactCheckReport:
    """Semantic verification of one row against its page.

    The prompt is assembled in fixed order: row, analysis hint, context
    fragment, audit principles, page text. ``minimal`` strips the audit
    section and context fragment. Fails closed on unparseable output.
    """
    if minimal:
        ctx_fragment, audit = "", ""
    else:
        ctx_fragment = render_context(ctx, AgentKind.FACT_CHECK, schema, include_examples)
        audit = load_text("semantic_audit")
    prompt = render(
        "fact_check",
        row_values=format_row_values(dp, schema),
        analysis_hint=hint,
        context_fragment=ctx_fragment,
        audit_section=audit,
        page_markdown=page_markdown,
    )
    try:
        doc, _ = await gateway.complete_structured(
            AgentKind.FACT_CHECK, dp.row_id, prompt, _FACT_CHECK_SHAPE
        )
    except ParseExhausted:
        return _FAIL_CLOSED
    extracted = None
    notes = doc["notes"]
    if doc.get("extracted_date"):
        try:
            extracted = normalize_date(doc["extracted_date"])
        except UnparseableDate:
            notes += f" (reported date {doc['extracted_date']!r} was unparseable)"
    return FactCheckReport(
        has_meaningful_content=doc["has_meaningful_content"],
        supports_claims=doc["supports_claims"],
        extracted_date=extracted,
        notes=notes,
    )


_REJECTING_RELIABILITY = frozenset({Reliability.LOW, Reliability.VERY_LOW})


def arbitrate(fc: FactCheckReport, src: SourceAssessment) -> Verdict:
    """Deterministic rule engine; no model call, no other inputs.

    REJECT iff the page lacks meaningful content, the claims are unsupported,
    or the source reliability is LOW/VERY_LOW; reasons accumulate.
    """
    reasons = []
    if not fc.has_meaningful_content:
        reasons.append(RejectReason.NO_MEANINGFUL_CONTENT)
    if not fc.supports_claims:
        reasons.append(RejectReason.CLAIMS_UNSUPPORTED)
    if src.reliability in _REJECTING_RELIABILITY:
        reasons.append(RejectReason.UNRELIABLE_SOURCE)
    if reasons:
        notes = "; ".join(r.value for r in reasons)
        return Verdict(Decision.REJECT, tuple(reasons), notes)
    return Verdict(Decision.ACCEPT, (), "all checks passed")
