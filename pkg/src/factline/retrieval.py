"""Source-page retrieval and layout analysis.

One network fetch per unique URL per run: concurrent requests for the same
URL coalesce into a single in-flight fetch, and results are cached for the
rest of the run. Failures never raise - they are encoded in PageContent so
downstream classification can force ERROR_PAGE deterministically.
"""

from __future__ import annotations

import asyncio
import hashlib
import ipaddress
import json
import logging
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from urllib.parse import urlsplit

import httpx

from .errors import ParseExhausted
from .gateway import AgentKind, Gateway, ResponseShape, ShapeField
from .htmlmd import html_to_markdown
from .prompting import render

logger = logging.getLogger(__name__)

DEFAULT_MAX_BODY_BYTES = 2_000_000
DEFAULT_PAGE_CHAR_BUDGET = 40_000


@dataclass(frozen=True)
class RetrievalConfig:
    user_agent: str = "factline/0.1 (dataset validation)"
    per_host_interval: float = 1.0
    max_redirects: int = 5
    max_body_bytes: int = DEFAULT_MAX_BODY_BYTES
    timeout: float = 30.0


@dataclass(frozen=True)
class PageContent:
    url: str
    final_url: str
    http_status: int  # 0 = transport failure
    markdown: str
    fetched_at: float
    truncated: bool = False


@dataclass(frozen=True)
class FetchRecord:
    url: str
    final_url: str
    http_status: int


def url_key(url: str) -> str:
    """Stable per-URL key for scripted fixtures and discovered-row ids."""
    return urlsplit(url).path or "/"


def registrable_domain(url: str) -> str:
    """Heuristic registrable domain: last two labels, or the host itself
    for IPs and single-label hosts."""
    host = (urlsplit(url).hostname or "").lower()
    if not host:
        return ""
    try:
        ipaddress.ip_address(host)
        return host
    except ValueError:
        pass
    labels = host.split(".")
    return host if len(labels) <= 2 else ".".join(labels[-2:])


def truncate_markdown(markdown: str, budget: int) -> tuple[str, bool]:
    """Head-biased cap on page text fed to prompts."""
    if len(markdown) <= budget:
        return markdown, False
    return markdown[:budget], True


class Fetcher:
    """Shared page fetcher with per-run cache, politeness and snapshots.

    When ``snapshot_dir`` is set, raw HTML and converted markdown are written
    per URL for audit; with ``replay=True`` those snapshots are served instead
    of the network.
    """

    def __init__(
        self,
        config: RetrievalConfig | None = None,
        snapshot_dir: Path | str | None = None,
        replay: bool = False,
        transport: httpx.AsyncBaseTransport | None = None,
    ):
        self.config = config or RetrievalConfig()
        self.snapshot_dir = Path(snapshot_dir) if snapshot_dir else None
        self.replay = replay
        self.fetch_log: list[FetchRecord] = []
        self._cache: dict[str, PageContent] = {}
        self._inflight: dict[str, asyncio.Future] = {}
        self._map_lock = asyncio.Lock()
        self._host_locks: dict[str, asyncio.Lock] = {}
        self._last_request: dict[str, float] = {}
        self._snapshot_index: dict[str, dict] = {}
        # trust_env=False: fetches must not silently route through proxies.
        self._client = httpx.AsyncClient(
            follow_redirects=True,
            max_redirects=self.config.max_redirects,
            timeout=self.config.timeout,
            headers={"User-Agent": self.config.user_agent},
            transport=transport,
            trust_env=False,
        )
        if self.snapshot_dir:
            self.snapshot_dir.mkdir(parents=True, exist_ok=True)
            index_path = self.snapshot_dir / "index.json"
            if index_path.exists():
                self._snapshot_index = json.loads(index_path.read_text(encoding="utf-8"))

    async def aclose(self):
        await self._client.aclose()

    async def fetch(self, url: str) -> PageContent:
        """Fetch a page once per run; concurrent callers share one request."""
        async with self._map_lock:
            cached = self._cache.get(url)
            if cached is not None:
                return cached
            pending = self._inflight.get(url)
            if pending is None:
                pending = asyncio.get_running_loop().create_future()
                self._inflight[url] = pending
                owner = True
            else:
                owner = False
        if not owner:
            return await asyncio.shield(pending)
        try:
            page = await self._fetch_uncached(url)
        except asyncio.CancelledError:
            async with self._map_lock:
                self._inflight.pop(url, None)
            pending.cancel()
            raise
        async with self._map_lock:
            self._cache[url] = page
            self._cache.setdefault(page.final_url, page)
            self._inflight.pop(url, None)
        pending.set_result(page)
        return page

    async def _polite_wait(self, host: str):
        interval = self.config.per_host_interval
        if interval <= 0:
            return
        lock = self._host_locks.setdefault(host, asyncio.Lock())
        async with lock:
            loop = asyncio.get_running_loop()
            last = self._last_request.get(host)
            if last is not None:
                delay = last + interval - loop.time()
                if delay > 0:
                    await asyncio.sleep(delay)
            self._last_request[host] = loop.time()

    async def _fetch_uncached(self, url: str) -> PageContent:
        # Must never raise (except cancellation): failures become status-0
        # pages so the single-flight future always resolves for all waiters.
        try:
            return await self._fetch_inner(url)
        except asyncio.CancelledError:
            raise
        except Exception:
            logger.exception("unexpected fetch failure for %s", url)
            page = PageContent(url, url, 0, "", time.time())
            self.fetch_log.append(FetchRecord(url, url, 0))
            return page

    async def _fetch_inner(self, url: str) -> PageContent:
        if self.replay:
            return self._load_snapshot(url)
        host = urlsplit(url).hostname or ""
        await self._polite_wait(host)
        fetched_at = time.time()
        try:
            response = await self._client.get(url)
        except httpx.HTTPError as exc:
            logger.warning("fetch failed for %s: %s", url, exc)
            page = PageContent(url, url, 0, "", fetched_at)
            self.fetch_log.append(FetchRecord(url, url, 0))
            self._write_snapshot(url, page, b"")
            return page
        body = response.content
        truncated = len(body) > self.config.max_body_bytes
        if truncated:
            body = body[: self.config.max_body_bytes]
        markdown = ""
        if response.status_code < 400 and body and self._looks_like_html(response, body):
            markdown = html_to_markdown(body.decode(response.encoding or "utf-8", "replace"))
        page = PageContent(
            url=url,
            final_url=str(response.url),
            http_status=response.status_code,
            markdown=markdown,
            fetched_at=fetched_at,
            truncated=truncated,
        )
        self.fetch_log.append(FetchRecord(url, page.final_url, page.http_status))
        self._write_snapshot(url, page, body)
        return page

    @staticmethod
    def _looks_like_html(response: httpx.Response, body: bytes) -> bool:
        content_type = response.headers.get("content-type", "")
        if content_type:
            return "text/html" in content_type or "application/xhtml" in content_type
        return body.lstrip()[:1] == b"<"

    # -- snapshots ----------------------------------------------------------

    def _digest(self, url: str) -> str:
        return hashlib.sha256(url.encode("utf-8")).hexdigest()[:16]

    def _write_snapshot(self, url: str, page: PageContent, body: bytes):
        if not self.snapshot_dir or self.replay:
            return
        digest = self._digest(url)
        (self.snapshot_dir / f"{digest}.html").write_bytes(body)
        (self.snapshot_dir / f"{digest}.md").write_text(page.markdown, encoding="utf-8")
        self._snapshot_index[url] = {
            "digest": digest,
            "final_url": page.final_url,
            "http_status": page.http_status,
            "truncated": page.truncated,
        }
        (self.snapshot_dir / "index.json").write_text(
            json.dumps(self._snapshot_index, indent=2, sort_keys=True), encoding="utf-8"
        )

    def _load_snapshot(self, url: str) -> PageContent:
        entry = self._snapshot_index.get(url)
        if not self.snapshot_dir or entry is None:
            logger.warning("replay miss for %s", url)
            return PageContent(url, url, 0, "", time.time())
        markdown = (self.snapshot_dir / f"{entry['digest']}.md").read_text(encoding="utf-8")
        return PageContent(
            url=url,
            final_url=entry["final_url"],
            http_status=entry["http_status"],
            markdown=markdown,
            fetched_at=time.time(),
            truncated=entry.get("truncated", False),
        )


class LayoutClass(str, Enum):
    ARTICLE = "ARTICLE"
    DIRECTORY_LISTING = "DIRECTORY_LISTING"
    SEARCH_RESULTS = "SEARCH_RESULTS"
    HOMEPAGE = "HOMEPAGE"
    ERROR_PAGE = "ERROR_PAGE"
    OTHER = "OTHER"


_LAYOUT_SHAPE = ResponseShape(
    ShapeField("layout", "text"),
    ShapeField("rationale", "text"),
)


async def classify_layout(
    gateway: Gateway,
    page: PageContent,
    char_budget: int = DEFAULT_PAGE_CHAR_BUDGET,
) -> tuple[LayoutClass, str]:
    """Classify page structure; unfetchable pages short-circuit to ERROR_PAGE
    without spending a model call."""
    if page.http_status >= 400 or page.http_status == 0 or not page.markdown:
        return LayoutClass.ERROR_PAGE, "fetch failed or page has no content"
    snippet, _ = truncate_markdown(page.markdown, char_budget)
    prompt = render("layout", page_markdown=snippet)
    try:
        doc, _ = await gateway.complete_structured(
            AgentKind.LAYOUT, url_key(page.url), prompt, _LAYOUT_SHAPE
        )
    except ParseExhausted:
        return LayoutClass.OTHER, "unparseable classification"
    label = doc["layout"].strip().upper().replace(" ", "_")
    try:
        return LayoutClass(label), doc["rationale"]
    except ValueError:
        return LayoutClass.OTHER, f"unrecognized label {doc['layout']!r}"


_HINTS = {
    LayoutClass.ARTICLE: (
        "This is an article. Read the prose in full: facts may be asserted, "
        "qualified or corrected anywhere in the text, not just in the lead."
    ),
    LayoutClass.DIRECTORY_LISTING: (
        "This is a directory-style listing. Do not dismiss the page as purely "
        "navigational: treat the text within each list item as a potential "
        "data point, including entries that are only link text."
    ),
    LayoutClass.SEARCH_RESULTS: (
        "This is a search-results page. Result snippets may assert facts, but "
        "verify that a snippet is about the same entity and event as the row "
        "before treating it as support."
    ),
    LayoutClass.HOMEPAGE: (
        "This is a site homepage or landing page. Substantive facts, if any, "
        "are usually in teasers and headline blocks; absence of detail here "
        "does not mean the site lacks it."
    ),
    LayoutClass.ERROR_PAGE: (
        "The page could not be retrieved or has no usable content; there is "
        "nothing to verify against."
    ),
    LayoutClass.OTHER: (
        "Page structure is unclassified. Read all text blocks with equal "
        "weight and rely on meaning rather than position."
    ),
}


def analysis_hint(layout: LayoutClass) -> str:
    """Fixed reading instruction per layout class, injected into fact-check."""
    return _HINTS[layout]
