"""Run orchestration: drives every data point through the agent pipeline.

Three modes share one finalization path so comparisons stay fair: the full
committee, the single-call monolith baseline, and the no-model rules baseline.
Row workers run under bounded parallelism; the context build and finalization
are global barriers. Under a scripted provider the final records, terminal
statuses and cost totals are independent of the worker count.
"""

from __future__ import annotations

import asyncio
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum

from .context import OperationalContext, build_context
from .errors import (
    ApplyFailed,
    LookupFailed,
    ParseExhausted,
    PlanRejected,
    ProviderError,
    RunAborted,
    UncoercibleValue,
)
from .finalize import Dropped, DropReason, IntegrityFinding, dedup, integrity_check
from .gateway import (
    AgentKind,
    CallUsage,
    Gateway,
    LedgerEntry,
    PricingTable,
    ResponseShape,
    ScriptedProvider,
    ShapeField,
    UsageLedger,
    estimate_cost,
    unknown_models,
)
from .prompting import render
from .remediation import (
    FixtureSearchAdapter,
    HttpSearchAdapter,
    SearchAdapter,
    apply_plan,
    audit_remediation,
    discover,
    lookup_fact,
    plan_remediation,
)
from .retrieval import (
    Fetcher,
    LayoutClass,
    PageContent,
    RetrievalConfig,
    analysis_hint,
    classify_layout,
    truncate_markdown,
    url_key,
)
from .rulepack import Rulepack
from .schema import (
    DataPoint,
    Origin,
    SchemaSpec,
    coerce_record,
    generate_schema,
    is_absolute_url,
)
from .validators import (
    Decision,
    FactCheckReport,
    Reliability,
    RejectReason,
    SourceAssessment,
    SourceScrutinizer,
    Verdict,
    arbitrate,
    assess_relevancy,
    fact_check,
    format_row_values,
)

logger = logging.getLogger(__name__)


class RowStatus(str, Enum):
    PROCESSING = "PROCESSING"
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"
    REMEDIATED = "REMEDIATED"
    DISCOVERED = "DISCOVERED"


TERMINAL_STATUSES = (
    RowStatus.ACCEPT,
    RowStatus.REJECT,
    RowStatus.REMEDIATED,
    RowStatus.DISCOVERED,
)

STAGES = (
    "ingest",
    "relevancy",
    "fetch",
    "layout",
    "source_scrutiny",
    "fact_check",
    "arbiter",
    "formatter",
    "remediation_plan",
    "fact_lookup",
    "remediation_apply",
    "remediation_audit",
    "discovery",
    "finalize",
    "monolith",
    "rules",
    "pipeline",
)


@dataclass(frozen=True)
class RowEvent:
    row_id: str
    stage: str
    status: RowStatus
    reason: str | None
    timestamp: float
    usage: CallUsage | None = None

    def to_dict(self) -> dict:
        doc = {
            "row_id": self.row_id,
            "stage": self.stage,
            "status": self.status.value,
            "reason": self.reason,
            "timestamp": self.timestamp,
        }
        if self.usage is not None:
            doc["usage"] = {
                "prompt_tokens": self.usage.prompt_tokens,
                "completion_tokens": self.usage.completion_tokens,
                "model_id": self.usage.model_id,
            }
        return doc


class Mode(str, Enum):
    COMMITTEE = "COMMITTEE"
    MONOLITH = "MONOLITH"
    RULES = "RULES"


@dataclass
class Toggles:
    relevancy: bool = True
    layout: bool = True
    source_scrutiny: bool = True
    fact_check: bool = True
    context: bool = True
    context_examples: bool = True
    remediation: bool = True
    discovery: bool = True
    integrity: bool = True
    formatter: bool = True

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "Toggles":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown toggles: {sorted(unknown)}")
        return cls(**{k: bool(v) for k, v in doc.items()})


# Named ablation presets. COMMITTEE mode honors the resulting toggles.
ABLATIONS = {
    "none": {},
    "no_fact_check": {"fact_check": False},
    "no_context": {"context": False},
    "no_ctx_examples": {"context_examples": False},
    "no_ctx_learning": {"_context_zero_shot": True},
    "no_relevancy": {"relevancy": False},
    "no_layout": {"layout": False},
    "no_src_scrutiny": {"source_scrutiny": False},
    "no_remediation": {"remediation": False},
    "no_integrity": {"integrity": False},
    "no_formatter": {"formatter": False},
    "discovery_only": {"remediation": False},
    "rem_only": {"discovery": False},
    "min_fact_check": {"_fact_check_minimal": True},
}


@dataclass
class RunConfig:
    schema_annotation: str
    dataset_description: str
    url_column: str = "source_url"
    provider: dict = field(default_factory=lambda: {"type": "scripted", "fixtures": {}})
    search: dict = field(default_factory=lambda: {"type": "fixture", "results": {}})
    pricing: dict = field(default_factory=dict)
    rulepack: dict = field(default_factory=dict)
    seed: int = 0
    parallelism: int = 4
    mode: Mode = Mode.COMMITTEE
    toggles: Toggles = field(default_factory=Toggles)
    fact_check_minimal: bool = False
    context_zero_shot: bool = False
    lookup_breadth: int = 3
    page_char_budget: int = 40_000
    per_host_interval: float = 1.0
    request_timeout: float = 30.0
    max_in_flight: int = 8
    repair_attempts: int = 2
    replay_snapshots: str | None = None

    def apply_ablation(self, name: str) -> "RunConfig":
        if name not in ABLATIONS:
            raise ValueError(f"unknown ablation {name!r} (choose from {sorted(ABLATIONS)})")
        changes = ABLATIONS[name]
        toggles = dataclasses.replace(self.toggles)
        out = dataclasses.replace(self, toggles=toggles)
        for key, value in changes.items():
            if key == "_fact_check_minimal":
                out.fact_check_minimal = value
            elif key == "_context_zero_shot":
                out.context_zero_shot = value
            else:
                setattr(out.toggles, key, value)
        return out

    def to_dict(self) -> dict:
        provider = {k: v for k, v in self.provider.items() if k != "api_key"}
        doc = dataclasses.asdict(self)
        doc["provider"] = provider
        doc["mode"] = self.mode.value
        doc["toggles"] = self.toggles.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        data = dict(doc)
        if "mode" in data:
            data["mode"] = Mode(str(data["mode"]).upper())
        if "toggles" in data:
            data["toggles"] = Toggles.from_dict(data["toggles"] or {})
        if "schema_annotation" not in data or "dataset_description" not in data:
            raise ValueError("config requires schema_annotation and dataset_description")
        return cls(**data)


@dataclass
class Services:
    gateway: Gateway
    fetcher: Fetcher
    scrutinizer: SourceScrutinizer
    search: SearchAdapter

    async def aclose(self):
        await self.fetcher.aclose()


def build_services(
    config: RunConfig,
    snapshot_dir=None,
    provider=None,
    transport=None,
    ledger: UsageLedger | None = None,
) -> Services:
    """Assemble provider, fetcher, scrutinizer and search from a RunConfig."""
    if provider is None:
        kind = config.provider.get("type", "scripted")
        if kind == "scripted":
            if "path" in config.provider:
                provider = ScriptedProvider.from_file(config.provider["path"])
            else:
                provider = ScriptedProvider(config.provider.get("fixtures", {}))
        elif kind == "http":
            from .gateway import HttpProvider

            provider = HttpProvider(
                endpoint=config.provider["endpoint"],
                model_id=config.provider.get("model", "unknown"),
                credential_env=config.provider.get("credential_env", "PROVIDER_API_KEY"),
                api_key=config.provider.get("api_key"),
                timeout=config.provider.get("timeout", 60.0),
            )
        else:
            raise ValueError(f"unknown provider type {kind!r}")
    gateway = Gateway(
        provider,
        ledger=ledger,
        repair_attempts=config.repair_attempts,
        max_in_flight=config.max_in_flight,
    )
    retrieval_config = RetrievalConfig(
        per_host_interval=config.per_host_interval,
        timeout=config.request_timeout,
    )
    if config.replay_snapshots:
        fetcher = Fetcher(retrieval_config, snapshot_dir=config.replay_snapshots, replay=True)
    else:
        fetcher = Fetcher(retrieval_config, snapshot_dir=snapshot_dir, transport=transport)
    search_kind = config.search.get("type", "fixture")
    if search_kind == "fixture":
        if "path" in config.search:
            search = FixtureSearchAdapter.from_file(config.search["path"])
        else:
            search = FixtureSearchAdapter(config.search.get("results", {}))
    elif search_kind == "http":
        search = HttpSearchAdapter(
            config.search["url_template"],
            credential_env=config.search.get("credential_env", "SEARCH_API_KEY"),
        )
    else:
        raise ValueError(f"unknown search type {search_kind!r}")
    return Services(
        gateway=gateway,
        fetcher=fetcher,
        scrutinizer=SourceScrutinizer(gateway),
        search=search,
    )


@dataclass
class RunReport:
    config: dict
    schema: SchemaSpec
    events: list[RowEvent]
    ledger_entries: list[LedgerEntry]
    fetches: list
    outcomes: dict
    final_records: list[DataPoint]
    dropped: list[Dropped]
    integrity_findings: list[IntegrityFinding]
    warnings: list[str]
    passthrough_columns: tuple[str, ...]
    time_total: float
    latency_mean: float
    cost_total: Decimal
    cost_warnings: list[str]
    processing_failures: int
    context_markdown: str | None = None

    @property
    def status_counts(self) -> dict:
        counts: dict[str, int] = {}
        for outcome in self.outcomes.values():
            counts[outcome["status"]] = counts.get(outcome["status"], 0) + 1
        return counts

    def to_dict(self) -> dict:
        usage_by_kind: dict[str, int] = {}
        prompt_tokens = completion_tokens = 0
        for entry in self.ledger_entries:
            usage_by_kind[entry.kind.value] = usage_by_kind.get(entry.kind.value, 0) + 1
            prompt_tokens += entry.usage.prompt_tokens
            completion_tokens += entry.usage.completion_tokens
        return {
            "config": self.config,
            "schema": self.schema.to_dict(),
            "totals": {
                "rows": len(self.outcomes),
                "final_records": len(self.final_records),
                "time_total_s": round(self.time_total, 3),
                "latency_mean_s": round(self.latency_mean, 3),
                "cost_total": str(self.cost_total),
                "cost_warnings": self.cost_warnings,
                "processing_failures": self.processing_failures,
            },
            "status_counts": self.status_counts,
            "outcomes": self.outcomes,
            "usage": {
                "calls": len(self.ledger_entries),
                "prompt_tokens": prompt_tokens,
                "completion_tokens": completion_tokens,
                "by_kind": usage_by_kind,
                "entries": [e.to_dict() for e in self.ledger_entries],
            },
            "fetches": [dataclasses.asdict(f) for f in self.fetches],
            "dropped": [
                {
                    "row_id": d.record.row_id,
                    "reason": d.reason.value,
                    "detail": d.detail,
                }
                for d in self.dropped
            ],
            "integrity_findings": [dataclasses.asdict(f) for f in self.integrity_findings],
            "warnings": self.warnings,
        }


def prepare_dataset(
    headers: list[str], raw_rows: list[dict], config: RunConfig
) -> tuple[SchemaSpec, list[DataPoint], tuple[str, ...]]:
    """Generate the schema and split raw CSV rows into DataPoints.

    Dataset-level failures (missing URL column, duplicate row ids) raise
    RunAborted before any model call.
    """
    schema = generate_schema(
        config.schema_annotation, raw_rows, config.dataset_description
    )
    if raw_rows and config.url_column not in headers:
        raise RunAborted(f"input has no {config.url_column!r} column")
    reserved = set(schema.field_names) | {config.url_column, "row_id"}
    passthrough_columns = tuple(h for h in headers if h not in reserved)
    rows = []
    seen_ids = set()
    for index, raw in enumerate(raw_rows):
        row_id = str(raw.get("row_id") or f"r{index + 1}")
        if row_id in seen_ids:
            raise RunAborted(f"duplicate row_id {row_id!r}")
        seen_ids.add(row_id)
        rows.append(
            DataPoint(
                row_id=row_id,
                values={name: raw.get(name, "") for name in schema.field_names},
                source_url=str(raw.get(config.url_column, "")).strip(),
                origin=Origin.INITIAL,
                passthrough={col: raw.get(col, "") for col in passthrough_columns},
            )
        )
    return schema, rows, passthrough_columns


_MONOLITH_SHAPE = ResponseShape(
    ShapeField("verdict", "text"),
    ShapeField("corrections", "list", required=False),
    ShapeField("notes", "text", required=False),
)

_SCRUTINY_DISABLED = SourceAssessment("unknown", Reliability.MEDIUM, "scrutiny disabled")
_FACT_CHECK_DISABLED = FactCheckReport(True, True, None, "fact check disabled")


class PipelineRun:
    """State for one run: event stream, staging area, per-URL caches."""

    def __init__(
        self,
        schema: SchemaSpec,
        rows: list[DataPoint],
        config: RunConfig,
        services: Services,
        sink=None,
    ):
        self.schema = schema
        self.rows = rows
        self.config = config
        self.services = services
        self.sink = sink
        self.events: list[RowEvent] = []
        self.outcomes: dict[str, dict] = {}
        self.warnings: list[str] = []
        self.processing_failures = 0
        self.ctx: OperationalContext | None = None
        self._staged: list[tuple[tuple, DataPoint]] = []
        self._layout_cache: dict[str, tuple[LayoutClass, str]] = {}
        self._layout_locks: dict[str, asyncio.Lock] = {}
        self._discovery_started: set[str] = set()
        self._discovery_lock = asyncio.Lock()

    # -- event plumbing ----------------------------------------------------

    def emit(self, row_id: str, stage: str, status: RowStatus, reason: str | None = None):
        event = RowEvent(row_id, stage, status, reason, time.time())
        self.events.append(event)
        if self.sink is not None:
            self.sink(event)

    def _finish(self, row_id: str, stage: str, status: RowStatus, reason: str | None = None):
        self.emit(row_id, stage, status, reason)
        self.outcomes[row_id] = {"status": status.value, "reason": reason}

    def _stage_record(self, sort_key: tuple, record: DataPoint):
        self._staged.append((sort_key, record))

    # -- shared helpers ------------------------------------------------------

    async def _layout_for(self, page: PageContent) -> tuple[LayoutClass, str]:
        """Layout classification cached per URL (single-flight)."""
        url = page.url
        lock = self._layout_locks.setdefault(url, asyncio.Lock())
        async with lock:
            if url in self._layout_cache:
                return self._layout_cache[url]
            if not self.config.toggles.layout:
                failed = page.http_status >= 400 or page.http_status == 0 or not page.markdown
                result = (
                    (LayoutClass.ERROR_PAGE, "fetch failed or page has no content")
                    if failed
                    else (LayoutClass.OTHER, "layout analysis disabled")
                )
            else:
                result = await classify_layout(
                    self.services.gateway, page, self.config.page_char_budget
                )
            self._layout_cache[url] = result
            return result

    async def _scrutiny_for(self, url: str) -> SourceAssessment:
        if not self.config.toggles.source_scrutiny:
            return _SCRUTINY_DISABLED
        return await self.services.scrutinizer.scrutinize(url)

    async def _fact_check(self, dp: DataPoint, page: PageContent, layout: LayoutClass) -> FactCheckReport:
        if not self.config.toggles.fact_check:
            return _FACT_CHECK_DISABLED
        markdown, truncated = truncate_markdown(page.markdown, self.config.page_char_budget)
        if truncated:
            self.warnings.append(f"page markdown truncated for {dp.row_id} ({page.url})")
        return await fact_check(
            self.services.gateway,
            dp,
            self.schema,
            markdown,
            analysis_hint(layout),
            self.ctx,
            include_examples=self.config.toggles.context_examples,
            minimal=self.config.fact_check_minimal,
        )

    def _format(self, dp: DataPoint) -> DataPoint:
        if not self.config.toggles.formatter:
            return dp
        return coerce_record(dp, self.schema)

    # -- committee row flow ---------------------------------------------------

    async def process_datapoint(self, dp: DataPoint, index: int):
        self.emit(dp.row_id, "ingest", RowStatus.PROCESSING)
        try:
            await self._process_inner(dp, index)
        except ProviderError as exc:
            self.processing_failures += 1
            self._finish(dp.row_id, "pipeline", RowStatus.REJECT, f"processing failure: {exc}")

    async def _process_inner(self, dp: DataPoint, index: int):
        config = self.config
        if not is_absolute_url(dp.source_url):
            self._finish(dp.row_id, "ingest", RowStatus.REJECT, "invalid source URL")
            return

        if config.toggles.relevancy:
            self.emit(dp.row_id, "relevancy", RowStatus.PROCESSING)
            relevancy = await assess_relevancy(self.services.gateway, dp, self.schema)
            if not relevancy.is_relevant:
                self._finish(
                    dp.row_id,
                    "relevancy",
                    RowStatus.REJECT,
                    f"{RejectReason.NOT_RELEVANT.value}: {relevancy.reason}",
                )
                return

        async def fetch_and_layout():
            self.emit(dp.row_id, "fetch", RowStatus.PROCESSING)
            page = await self.services.fetcher.fetch(dp.source_url)
            self.emit(dp.row_id, "layout", RowStatus.PROCESSING)
            layout, _ = await self._layout_for(page)
            return page, layout

        # Source scrutiny runs concurrently with content retrieval.
        if config.toggles.source_scrutiny:
            self.emit(dp.row_id, "source_scrutiny", RowStatus.PROCESSING)
        (page, layout), src = await asyncio.gather(
            fetch_and_layout(), self._scrutiny_for(dp.source_url)
        )

        if layout == LayoutClass.ERROR_PAGE:
            verdict = Verdict(
                Decision.REJECT,
                (RejectReason.FETCH_FAILED,),
                f"page could not be retrieved (status {page.http_status})",
            )
        else:
            self.emit(dp.row_id, "fact_check", RowStatus.PROCESSING)
            fc = await self._fact_check(dp, page, layout)
            self.emit(dp.row_id, "arbiter", RowStatus.PROCESSING)
            verdict = arbitrate(fc, src)

        # Validation is complete: the URL's first finisher triggers discovery.
        if config.toggles.discovery and layout != LayoutClass.ERROR_PAGE and page.markdown:
            await self._maybe_discover(page, layout)

        if verdict.decision == Decision.ACCEPT:
            self.emit(dp.row_id, "formatter", RowStatus.PROCESSING)
            try:
                staged = self._format(dp)
            except UncoercibleValue as exc:
                verdict = Verdict(
                    Decision.REJECT, (RejectReason.UNCOERCIBLE,), str(exc)
                )
            else:
                self._stage_record((0, index), staged)
                self._finish(dp.row_id, "formatter", RowStatus.ACCEPT)
                return

        await self._remediate(dp, index, verdict, page)

    async def _remediate(self, dp: DataPoint, index: int, verdict: Verdict, page: PageContent):
        reason = "; ".join(r.value for r in verdict.reasons)
        if verdict.notes:
            reason = f"{reason}: {verdict.notes}"
        if not self.config.toggles.remediation:
            self._finish(dp.row_id, "arbiter", RowStatus.REJECT, reason)
            return

        self.emit(dp.row_id, "remediation_plan", RowStatus.PROCESSING)
        try:
            plan = await plan_remediation(
                self.services.gateway,
                dp,
                verdict,
                page,
                self.schema,
                self.ctx,
                self.config.page_char_budget,
                include_examples=self.config.toggles.context_examples,
            )
        except (PlanRejected, ParseExhausted) as exc:
            self._finish(
                dp.row_id, "remediation_plan", RowStatus.REJECT, f"{reason}; no viable plan: {exc}"
            )
            return

        lookups = {}
        for spec in plan.lookups:
            self.emit(dp.row_id, "fact_lookup", RowStatus.PROCESSING, spec.query)
            try:
                lookups[spec.operand_name] = await lookup_fact(
                    self.services.gateway,
                    self.services.fetcher,
                    self.services.search,
                    spec.operand_name,
                    spec.query,
                    breadth=self.config.lookup_breadth,
                    page_char_budget=self.config.page_char_budget,
                )
            except LookupFailed as exc:
                self._finish(dp.row_id, "fact_lookup", RowStatus.REJECT, f"{reason}; {exc}")
                return

        self.emit(dp.row_id, "remediation_apply", RowStatus.PROCESSING)
        try:
            corrected = apply_plan(dp, plan, lookups, self.schema)
        except ApplyFailed as exc:
            self._finish(dp.row_id, "remediation_apply", RowStatus.REJECT, f"{reason}; {exc}")
            return

        self.emit(dp.row_id, "remediation_audit", RowStatus.PROCESSING)
        audit = await audit_remediation(
            self.services.gateway,
            dp,
            corrected,
            plan,
            lookups,
            page,
            self.schema,
            self.config.page_char_budget,
        )
        if not audit.approved:
            self._finish(
                dp.row_id, "remediation_audit", RowStatus.REJECT,
                f"{reason}; audit rejected: {audit.notes}",
            )
            return
        self._stage_record((0, index), corrected)
        self._finish(dp.row_id, "remediation_audit", RowStatus.REMEDIATED, audit.notes)

    # -- discovery --------------------------------------------------------------

    async def _maybe_discover(self, page: PageContent, layout: LayoutClass):
        async with self._discovery_lock:
            if page.url in self._discovery_started:
                return
            self._discovery_started.add(page.url)
        candidates = await discover(
            self.services.gateway,
            page,
            self.schema,
            self.ctx,
            known=self.rows,
            page_char_budget=self.config.page_char_budget,
            include_examples=self.config.toggles.context_examples,
        )
        for position, candidate in enumerate(candidates):
            self.emit(
                candidate.row_id, "discovery", RowStatus.PROCESSING, f"found on {page.url}"
            )
            await self._validate_discovered(candidate, position, page, layout)

    async def _validate_discovered(
        self, dp: DataPoint, position: int, page: PageContent, layout: LayoutClass
    ):
        try:
            src = await self._scrutiny_for(dp.source_url)
            self.emit(dp.row_id, "fact_check", RowStatus.PROCESSING)
            fc = await self._fact_check(dp, page, layout)
            self.emit(dp.row_id, "arbiter", RowStatus.PROCESSING)
            verdict = arbitrate(fc, src)
            if verdict.decision != Decision.ACCEPT:
                reason = "; ".join(r.value for r in verdict.reasons)
                self._finish(dp.row_id, "arbiter", RowStatus.REJECT, reason)
                return
            self.emit(dp.row_id, "formatter", RowStatus.PROCESSING)
            try:
                staged = self._format(dp)
            except UncoercibleValue as exc:
                self._finish(dp.row_id, "formatter", RowStatus.REJECT, str(exc))
                return
            self._stage_record((1, url_key(page.url), position), staged)
            self._finish(dp.row_id, "formatter", RowStatus.DISCOVERED)
        except ProviderError as exc:
            self.processing_failures += 1
            self._finish(dp.row_id, "pipeline", RowStatus.REJECT, f"processing failure: {exc}")

    # -- monolith row flow ---------------------------------------------------------

    async def process_monolith(self, dp: DataPoint, index: int):
        self.emit(dp.row_id, "ingest", RowStatus.PROCESSING)
        try:
            await self._monolith_inner(dp, index)
        except ProviderError as exc:
            self.processing_failures += 1
            self._finish(dp.row_id, "pipeline", RowStatus.REJECT, f"processing failure: {exc}")

    async def _monolith_inner(self, dp: DataPoint, index: int):
        if not is_absolute_url(dp.source_url):
            self._finish(dp.row_id, "ingest", RowStatus.REJECT, "invalid source URL")
            return
        self.emit(dp.row_id, "fetch", RowStatus.PROCESSING)
        page = await self.services.fetcher.fetch(dp.source_url)
        markdown, _ = truncate_markdown(page.markdown, self.config.page_char_budget)
        field_list = "\n".join(
            f"- {f.name} ({f.field_type.value.lower()})" for f in self.schema.fields
        )
        prompt = render(
            "monolith",
            dataset_description=self.schema.dataset_description,
            field_list=field_list,
            row_values=format_row_values(dp, self.schema),
            page_markdown=markdown,
        )
        self.emit(dp.row_id, "monolith", RowStatus.PROCESSING)
        try:
            doc, _ = await self.services.gateway.complete_structured(
                AgentKind.MONOLITH, dp.row_id, prompt, _MONOLITH_SHAPE
            )
        except ParseExhausted:
            self._finish(dp.row_id, "monolith", RowStatus.REJECT, "unparseable monolith response")
            return
        if str(doc["verdict"]).strip().upper() != "ACCEPT":
            self._finish(dp.row_id, "monolith", RowStatus.REJECT, doc.get("notes") or "rejected")
            return
        values = dict(dp.values)
        for item in doc.get("corrections") or []:
            if isinstance(item, dict) and item.get("field") in self.schema.field_names:
                values[item["field"]] = item.get("value")
        candidate = dp.replaced(values=values)
        try:
            staged = coerce_record(candidate, self.schema)
        except UncoercibleValue as exc:
            self._finish(dp.row_id, "monolith", RowStatus.REJECT, str(exc))
            return
        self._stage_record((0, index), staged)
        self._finish(dp.row_id, "monolith", RowStatus.ACCEPT)

    # -- rules row flow ---------------------------------------------------------------

    def process_rules(self, dp: DataPoint, index: int, rulepack: Rulepack):
        self.emit(dp.row_id, "ingest", RowStatus.PROCESSING)
        self.emit(dp.row_id, "rules", RowStatus.PROCESSING)
        problems = rulepack.check(dp, self.schema)
        if problems:
            self._finish(dp.row_id, "rules", RowStatus.REJECT, "; ".join(problems))
            return
        try:
            staged = coerce_record(dp, self.schema)
        except UncoercibleValue as exc:
            self._finish(dp.row_id, "rules", RowStatus.REJECT, str(exc))
            return
        self._stage_record((0, index), staged)
        self._finish(dp.row_id, "rules", RowStatus.ACCEPT)

    # -- finalization ----------------------------------------------------------------

    async def finalize(self) -> tuple[list[DataPoint], list[Dropped], list[IntegrityFinding]]:
        staged = [record for _, record in sorted(self._staged, key=lambda pair: pair[0])]
        kept, dropped = dedup(staged, self.schema)
        findings: list[IntegrityFinding] = []
        if self.config.mode == Mode.COMMITTEE and self.config.toggles.integrity:
            accepted, findings, warnings = await integrity_check(
                self.services.gateway, kept, self.schema, self.ctx
            )
            self.warnings.extend(warnings)
            accepted_ids = {dp.row_id for dp in accepted}
            by_row = {}
            for finding in findings:
                by_row.setdefault(finding.row_id, []).append(finding)
            for record in kept:
                if record.row_id not in accepted_ids:
                    details = "; ".join(
                        f"{f.rule.value}({f.field}): {f.explanation}"
                        for f in by_row.get(record.row_id, [])
                    )
                    dropped.append(Dropped(record, DropReason.INTEGRITY_FAILED, details))
            kept = accepted
        return kept, dropped, findings


def _latency_mean(events: list[RowEvent]) -> float:
    first: dict[str, float] = {}
    last: dict[str, float] = {}
    terminal: set[str] = set()
    for event in events:
        first.setdefault(event.row_id, event.timestamp)
        last[event.row_id] = event.timestamp
        if event.status in TERMINAL_STATUSES:
            terminal.add(event.row_id)
    if not terminal:
        return 0.0
    return sum(last[r] - first[r] for r in terminal) / len(terminal)


async def execute_run(
    headers: list[str],
    raw_rows: list[dict],
    config: RunConfig,
    services: Services | None = None,
    sink=None,
    snapshot_dir=None,
) -> RunReport:
    """Full lifecycle: schema, context barrier, rows, finalization, report."""
    started = time.time()
    schema, rows, passthrough_columns = prepare_dataset(headers, raw_rows, config)
    own_services = services is None
    if services is None:
        services = build_services(config, snapshot_dir=snapshot_dir)
    run = PipelineRun(schema, rows, config, services, sink=sink)
    try:
        if config.mode == Mode.COMMITTEE and config.toggles.context and rows:
            run.ctx = await build_context(
                services.gateway,
                rows,
                schema,
                config.seed,
                include_samples=not config.context_zero_shot,
            )

        gate = asyncio.Semaphore(max(config.parallelism, 1))

        if config.mode == Mode.RULES:
            rulepack = Rulepack.from_doc(config.rulepack, schema)
            for index, dp in enumerate(rows):
                run.process_rules(dp, index, rulepack)
        else:
            process = (
                run.process_monolith if config.mode == Mode.MONOLITH else run.process_datapoint
            )

            async def worker(index: int, dp: DataPoint):
                async with gate:
                    await process(dp, index)

            await asyncio.gather(*(worker(i, dp) for i, dp in enumerate(rows)))

        final_records, dropped, findings = await run.finalize()
    finally:
        if own_services:
            await services.aclose()

    pricing = PricingTable(config.pricing)
    usages = services.gateway.ledger.usages()
    return RunReport(
        config=config.to_dict(),
        schema=schema,
        events=run.events,
        ledger_entries=services.gateway.ledger.entries,
        fetches=list(services.fetcher.fetch_log),
        outcomes=run.outcomes,
        final_records=final_records,
        dropped=dropped,
        integrity_findings=findings,
        warnings=run.warnings,
        passthrough_columns=passthrough_columns,
        time_total=time.time() - started,
        latency_mean=_latency_mean(run.events),
        cost_total=estimate_cost(usages, pricing),
        cost_warnings=unknown_models(usages, pricing),
        processing_failures=run.processing_failures,
        context_markdown=run.ctx.to_markdown() if run.ctx else None,
    )
