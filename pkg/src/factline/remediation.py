"""Structured self-correction for rejected rows, plus page-level discovery.

The loop is strictly bounded: one plan, at most K lookups with K page fetches
each, one apply, one audit. Any failure along the way is a permanent
rejection - there is no retry ladder. Formulas are arithmetic only; no code
execution.
"""

from __future__ import annotations

import ast
import logging
import math
import os
from dataclasses import dataclass
from decimal import Decimal, DivisionByZero, InvalidOperation, ROUND_HALF_UP
from enum import Enum
from typing import Protocol
from urllib.parse import quote

import httpx

from .context import OperationalContext, render_context
from .errors import ApplyFailed, LookupFailed, ParseExhausted, PlanRejected, UncoercibleValue
from .gateway import AgentKind, Gateway, ResponseShape, ShapeField
from .prompting import render
from .retrieval import Fetcher, PageContent, truncate_markdown, url_key
from .schema import (
    DataPoint,
    FieldType,
    Origin,
    SchemaSpec,
    canonical_string,
    coerce_record,
    validate_record,
)
from .validators import Verdict, format_row_values

logger = logging.getLogger(__name__)

DEFAULT_LOOKUP_BREADTH = 3


class Strategy(str, Enum):
    DIRECT_REPLACEMENT = "DIRECT_REPLACEMENT"
    CALCULATION = "CALCULATION"


@dataclass(frozen=True)
class LookupSpec:
    operand_name: str
    query: str


@dataclass(frozen=True)
class RemediationPlan:
    strategy: Strategy
    target_fields: tuple[str, ...]
    replacements: dict
    formula: str
    lookups: tuple[LookupSpec, ...]
    justification: str


@dataclass(frozen=True)
class FactLookupResult:
    operand_name: str
    value: float
    source_url: str
    excerpt: str


@dataclass(frozen=True)
class AuditVerdict:
    approved: bool
    notes: str


# -- formula handling -------------------------------------------------------

_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div)


def _walk_formula(node: ast.AST, names: set[str]):
    if isinstance(node, ast.Expression):
        _walk_formula(node.body, names)
    elif isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
        _walk_formula(node.left, names)
        _walk_formula(node.right, names)
    elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        _walk_formula(node.operand, names)
    elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        pass
    elif isinstance(node, ast.Name):
        names.add(node.id)
    else:
        raise ValueError(f"disallowed construct {type(node).__name__}")


def formula_operands(formula: str) -> set[str]:
    """Operand names referenced by an arithmetic formula; raises ValueError
    for anything outside + - * / parentheses, numeric literals and names."""
    try:
        tree = ast.parse(formula, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"unparseable formula: {exc}")
    names: set[str] = set()
    _walk_formula(tree, names)
    return names


def _eval_node(node: ast.AST, operands: dict) -> Decimal:
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, operands)
    if isinstance(node, ast.BinOp):
        left = _eval_node(node.left, operands)
        right = _eval_node(node.right, operands)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        return left / right
    if isinstance(node, ast.UnaryOp):
        value = _eval_node(node.operand, operands)
        return -value if isinstance(node.op, ast.USub) else value
    if isinstance(node, ast.Constant):
        return Decimal(str(node.value))
    return operands[node.id]  # ast.Name; presence checked at parse time


def eval_formula(formula: str, operands: dict) -> Decimal:
    """Exact decimal evaluation; raises ApplyFailed on division by zero."""
    tree = ast.parse(formula, mode="eval")
    try:
        return _eval_node(tree, {k: Decimal(str(v)) for k, v in operands.items()})
    except (DivisionByZero, InvalidOperation) as exc:
        raise ApplyFailed(f"formula evaluation failed: {exc}")


# -- planning ----------------------------------------------------------------

_PLAN_SHAPE = ResponseShape(
    ShapeField("strategy", "text"),
    ShapeField("target_fields", "list"),
    ShapeField("replacements", "list", required=False),
    ShapeField("formula", "text", required=False),
    ShapeField("lookups", "list", required=False),
    ShapeField("justification", "text"),
)

_NUMERIC_TYPES = (FieldType.INTEGER, FieldType.FLOAT)


def parse_plan(doc: dict, schema: SchemaSpec) -> RemediationPlan:
    """Validate an analyst response against the plan invariants."""
    try:
        strategy = Strategy(str(doc["strategy"]).strip().upper())
    except ValueError:
        raise PlanRejected(f"unknown strategy {doc['strategy']!r}")

    target_fields = tuple(str(t) for t in doc["target_fields"])
    for name in target_fields:
        if name not in schema.field_names:
            raise PlanRejected(f"target field {name!r} is not in the schema")

    replacements = {}
    for item in doc.get("replacements") or []:
        if not isinstance(item, dict) or "field" not in item or "value" not in item:
            raise PlanRejected("replacements entries need field and value")
        if item["field"] not in schema.field_names:
            raise PlanRejected(f"replacement field {item['field']!r} is not in the schema")
        replacements[item["field"]] = item["value"]

    lookups = []
    seen_operands = set()
    for item in doc.get("lookups") or []:
        if not isinstance(item, dict):
            raise PlanRejected("lookups entries must be objects")
        operand = str(item.get("operand_name") or "").strip()
        query = str(item.get("query") or "").strip()
        if not operand or not query:
            raise PlanRejected("lookups entries need operand_name and query")
        if operand in seen_operands:
            raise PlanRejected(f"duplicate lookup operand {operand!r}")
        seen_operands.add(operand)
        lookups.append(LookupSpec(operand, query))

    formula = str(doc.get("formula") or "").strip()
    justification = str(doc.get("justification") or "").strip()

    if strategy == Strategy.DIRECT_REPLACEMENT:
        if not replacements:
            raise PlanRejected("direct replacement plan has no replacements")
        if lookups:
            raise PlanRejected("direct replacement plans cannot use lookups")
        formula = ""
    else:
        if len(target_fields) != 1:
            raise PlanRejected("calculation plans target exactly one field")
        target = schema.field(target_fields[0])
        if target.field_type not in _NUMERIC_TYPES:
            raise PlanRejected(f"calculation target {target.name!r} is not numeric")
        if not formula:
            raise PlanRejected("calculation plan has no formula")
        try:
            referenced = formula_operands(formula)
        except ValueError as exc:
            raise PlanRejected(str(exc))
        undefined = referenced - seen_operands
        if undefined:
            raise PlanRejected(f"formula references undefined operands {sorted(undefined)}")
        replacements = {}

    return RemediationPlan(
        strategy=strategy,
        target_fields=target_fields,
        replacements=replacements,
        formula=formula,
        lookups=tuple(lookups),
        justification=justification,
    )


async def plan_remediation(
    gateway: Gateway,
    dp: DataPoint,
    verdict: Verdict,
    page: PageContent,
    schema: SchemaSpec,
    ctx: OperationalContext | None,
    page_char_budget: int,
    include_examples: bool = True,
) -> RemediationPlan:
    markdown, _ = truncate_markdown(page.markdown, page_char_budget)
    prompt = render(
        "remediation_analyst",
        row_values=format_row_values(dp, schema),
        reject_reasons=", ".join(r.value for r in verdict.reasons) or "(none given)",
        verdict_notes=verdict.notes,
        context_fragment=render_context(ctx, AgentKind.REMEDIATION_ANALYST, schema, include_examples),
        page_markdown=markdown,
    )
    doc, _ = await gateway.complete_structured(
        AgentKind.REMEDIATION_ANALYST, dp.row_id, prompt, _PLAN_SHAPE
    )
    return parse_plan(doc, schema)


# -- fact lookup --------------------------------------------------------------

class SearchAdapter(Protocol):
    async def search(self, query: str) -> list[str]:
        ...


class FixtureSearchAdapter:
    """File- or dict-backed search results for offline runs."""

    def __init__(self, mapping: dict | None = None, default: list[str] | None = None):
        self.mapping = dict(mapping or {})
        self.default = list(default or [])

    @classmethod
    def from_file(cls, path) -> "FixtureSearchAdapter":
        import json

        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(doc, doc.get("*"))

    async def search(self, query: str) -> list[str]:
        return list(self.mapping.get(query, self.default))


class HttpSearchAdapter:
    """Generic web-search endpoint: a URL template with a {query} slot.

    The response may be a JSON list of URL strings, a list of objects with a
    ``url`` key, or an object with a ``results`` list of either.
    """

    def __init__(
        self,
        url_template: str,
        credential_env: str = "SEARCH_API_KEY",
        timeout: float = 30.0,
        transport: httpx.AsyncBaseTransport | None = None,
    ):
        self.url_template = url_template
        self._api_key = os.environ.get(credential_env, "")
        self._client = httpx.AsyncClient(timeout=timeout, transport=transport)

    async def search(self, query: str) -> list[str]:
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else {}
        url = self.url_template.format(query=quote(query))
        try:
            response = await self._client.get(url, headers=headers)
            response.raise_for_status()
            doc = response.json()
        except (httpx.HTTPError, ValueError) as exc:
            logger.warning("search failed for %r: %s", query, exc)
            return []
        items = doc.get("results", doc) if isinstance(doc, dict) else doc
        urls = []
        for item in items if isinstance(items, list) else []:
            if isinstance(item, str):
                urls.append(item)
            elif isinstance(item, dict) and isinstance(item.get("url"), str):
                urls.append(item["url"])
        return urls


_LOOKUP_SHAPE = ResponseShape(
    ShapeField("found", "boolean"),
    ShapeField("value", "number", required=False),
    ShapeField("excerpt", "text", required=False),
)


async def lookup_fact(
    gateway: Gateway,
    fetcher: Fetcher,
    search: SearchAdapter,
    operand_name: str,
    query: str,
    breadth: int = DEFAULT_LOOKUP_BREADTH,
    page_char_budget: int = 40_000,
) -> FactLookupResult:
    """Search, fetch up to ``breadth`` result pages and extract one number."""
    urls = (await search.search(query))[:breadth]
    for url in urls:
        page = await fetcher.fetch(url)
        if not page.markdown:
            continue
        markdown, _ = truncate_markdown(page.markdown, page_char_budget)
        prompt = render("fact_lookup_extract", query=query, page_markdown=markdown)
        try:
            doc, _ = await gateway.complete_structured(
                AgentKind.FACT_LOOKUP_EXTRACT, url_key(url), prompt, _LOOKUP_SHAPE
            )
        except ParseExhausted:
            continue
        value = doc.get("value")
        excerpt = (doc.get("excerpt") or "").strip()
        if doc["found"] and value is not None and math.isfinite(value) and excerpt:
            return FactLookupResult(operand_name, float(value), url, excerpt)
    raise LookupFailed(f"no page yielded a value for {query!r}")


# -- applying and auditing -----------------------------------------------------

def apply_plan(
    dp: DataPoint,
    plan: RemediationPlan,
    lookups: dict,
    schema: SchemaSpec,
) -> DataPoint:
    """Execute a validated plan; the result always passes validate_record."""
    if plan.strategy == Strategy.DIRECT_REPLACEMENT:
        values = {**dp.values, **plan.replacements}
    else:
        operands = {}
        for spec in plan.lookups:
            result = lookups.get(spec.operand_name)
            if result is None:
                raise ApplyFailed(f"unresolved operand {spec.operand_name!r}")
            operands[spec.operand_name] = result.value
        amount = eval_formula(plan.formula, operands)
        target = schema.field(plan.target_fields[0])
        if target.field_type == FieldType.INTEGER:
            new_value = int(amount.quantize(Decimal("1"), rounding=ROUND_HALF_UP))
        else:
            new_value = float(amount)
        values = {**dp.values, target.name: new_value}
    candidate = dp.replaced(values=values, origin=Origin.REMEDIATED)
    try:
        coerced = coerce_record(candidate, schema)
    except UncoercibleValue as exc:
        raise ApplyFailed(str(exc))
    if validate_record(coerced, schema):
        raise ApplyFailed("corrected record still fails validation")
    return coerced


_AUDIT_SHAPE = ResponseShape(
    ShapeField("approved", "boolean"),
    ShapeField("notes", "text"),
)


async def audit_remediation(
    gateway: Gateway,
    original: DataPoint,
    corrected: DataPoint,
    plan: RemediationPlan,
    lookups: dict,
    page: PageContent,
    schema: SchemaSpec,
    page_char_budget: int,
) -> AuditVerdict:
    """Independent check of the correction logic; fails closed."""
    lookup_lines = [
        f"Lookup {name} = {res.value} (from {res.source_url}): \"{res.excerpt}\""
        for name, res in sorted(lookups.items())
    ]
    if plan.formula:
        lookup_lines.insert(0, f"Formula: {plan.formula}")
    markdown, _ = truncate_markdown(page.markdown, page_char_budget)
    prompt = render(
        "remediation_audit",
        original_values=format_row_values(original, schema),
        corrected_values=format_row_values(corrected, schema),
        strategy=plan.strategy.value,
        justification=plan.justification,
        lookup_notes="\n".join(lookup_lines),
        page_markdown=markdown,
    )
    try:
        doc, _ = await gateway.complete_structured(
            AgentKind.REMEDIATION_AUDIT, original.row_id, prompt, _AUDIT_SHAPE
        )
    except ParseExhausted:
        return AuditVerdict(False, "audit unparseable")
    notes = doc["notes"].strip()
    if not doc["approved"] and not notes:
        notes = "audit rejected the correction (no notes given)"
    return AuditVerdict(doc["approved"], notes)


# -- discovery -----------------------------------------------------------------

_DISCOVERY_SHAPE = ResponseShape(ShapeField("records", "list"))


def _record_key(dp: DataPoint, schema: SchemaSpec) -> tuple:
    return tuple(canonical_string(dp.values.get(f.name), f) for f in schema.fields)


async def discover(
    gateway: Gateway,
    page: PageContent,
    schema: SchemaSpec,
    ctx: OperationalContext | None,
    known: list[DataPoint],
    page_char_budget: int,
    include_examples: bool = True,
) -> list[DataPoint]:
    """Extract schema-shaped records the page states beyond the known ones.

    Best-effort: unparseable output yields an empty list. Candidates that fail
    validation after coercion, or that equal a known record on every field,
    are dropped.
    """
    markdown, _ = truncate_markdown(page.markdown, page_char_budget)
    field_list = "\n".join(f"- {f.name} ({f.field_type.value.lower()})" for f in schema.fields)
    prompt = render(
        "discovery",
        field_list=field_list,
        context_fragment=render_context(ctx, AgentKind.DISCOVERY, schema, include_examples),
        page_markdown=markdown,
    )
    try:
        doc, _ = await gateway.complete_structured(
            AgentKind.DISCOVERY, url_key(page.url), prompt, _DISCOVERY_SHAPE
        )
    except ParseExhausted:
        return []

    seen = set()
    for dp in known:
        try:
            seen.add(_record_key(coerce_record(dp, schema), schema))
        except UncoercibleValue:
            continue

    slug = url_key(page.url).rstrip("/").replace("/", "-") or "-root"
    found = []
    for position, item in enumerate(doc["records"], start=1):
        if not isinstance(item, dict):
            continue
        candidate = DataPoint(
            row_id=f"disc{slug}-{position}",
            values={name: item.get(name, "") for name in schema.field_names},
            source_url=page.url,
            origin=Origin.DISCOVERED,
        )
        try:
            coerced = coerce_record(candidate, schema)
        except UncoercibleValue as exc:
            logger.info("discovery candidate dropped (%s): %s", candidate.row_id, exc)
            continue
        if validate_record(coerced, schema):
            logger.info("discovery candidate dropped (%s): fails validation", candidate.row_id)
            continue
        key = _record_key(coerced, schema)
        if key in seen:
            continue
        seen.add(key)
        found.append(coerced)
    return found
