"""Deterministic HTML to markdown conversion.

Same HTML bytes always yield the same markdown: headings, paragraphs, lists,
tables and link text are preserved; scripts, styles and head material are
dropped. This is intentionally a converter, not a renderer - CSS, JavaScript
and layout are ignored.
"""

from __future__ import annotations

import re
from html.parser import HTMLParser

_SKIP_TAGS = {"script", "style", "noscript", "template", "head", "svg", "iframe"}
_HEADINGS = {"h1": 1, "h2": 2, "h3": 3, "h4": 4, "h5": 5, "h6": 6}
_BLOCK_TAGS = {
    "p", "div", "section", "article", "main", "aside", "header",
    "footer", "nav", "figure", "figcaption", "blockquote", "pre",
}
_WS_RE = re.compile(r"\s+")


def _collapse(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


class _Converter(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.blocks: list[str] = []
        self._inline: list[str] = []
        self._prefix = ""
        self._skip_depth = 0
        self._heading: int | None = None
        self._list_stack: list[dict] = []
        self._link_stack: list[tuple[int, str]] = []
        # table state
        self._table_rows: list[list[str]] | None = None
        self._row: list[str] | None = None
        self._cell_mark: int | None = None

    # -- block management -------------------------------------------------

    def _flush(self):
        text = _collapse("".join(self._inline))
        self._inline = []
        if not text:
            self._prefix = ""
            self._heading = None
            return
        if self._heading:
            self.blocks.append("#" * self._heading + " " + text)
        else:
            self.blocks.append(self._prefix + text)
        self._prefix = ""
        self._heading = None

    def _indent(self) -> str:
        return "  " * max(len(self._list_stack) - 1, 0)

    # -- parser hooks ------------------------------------------------------

    def handle_starttag(self, tag, attrs):
        if tag in _SKIP_TAGS:
            self._skip_depth += 1
            return
        if self._skip_depth:
            return
        attrs = dict(attrs)
        if self._table_rows is not None:
            if tag == "tr":
                self._row = []
            elif tag in ("td", "th"):
                self._cell_mark = len(self._inline)
            elif tag == "br":
                self._inline.append(" ")
            return
        if tag in _HEADINGS:
            self._flush()
            self._heading = _HEADINGS[tag]
        elif tag in ("ul", "ol"):
            self._flush()
            self._list_stack.append({"ordered": tag == "ol", "index": 0})
        elif tag == "li":
            self._flush()
            if self._list_stack:
                frame = self._list_stack[-1]
                frame["index"] += 1
                marker = f"{frame['index']}." if frame["ordered"] else "-"
                self._prefix = f"{self._indent()}{marker} "
            else:
                self._prefix = "- "
        elif tag == "table":
            self._flush()
            self._table_rows = []
        elif tag == "a":
            self._link_stack.append((len(self._inline), attrs.get("href") or ""))
        elif tag in ("strong", "b"):
            self._inline.append("**")
        elif tag in ("em", "i"):
            self._inline.append("*")
        elif tag == "br":
            self._flush()
        elif tag == "img":
            alt = _collapse(attrs.get("alt") or "")
            if alt:
                self._inline.append(alt)
        elif tag in _BLOCK_TAGS:
            self._flush()

    def handle_endtag(self, tag):
        if tag in _SKIP_TAGS:
            self._skip_depth = max(self._skip_depth - 1, 0)
            return
        if self._skip_depth:
            return
        if self._table_rows is not None:
            if tag in ("td", "th") and self._row is not None and self._cell_mark is not None:
                cell = _collapse("".join(self._inline[self._cell_mark:]))
                del self._inline[self._cell_mark:]
                self._row.append(cell.replace("|", "\\|"))
                self._cell_mark = None
            elif tag == "tr" and self._row is not None:
                if any(self._row):
                    self._table_rows.append(self._row)
                self._row = None
            elif tag == "table":
                self._emit_table()
            return
        if tag in _HEADINGS or tag == "li" or tag in _BLOCK_TAGS:
            self._flush()
        elif tag in ("ul", "ol"):
            self._flush()
            if self._list_stack:
                self._list_stack.pop()
        elif tag == "a" and self._link_stack:
            mark, href = self._link_stack.pop()
            text = _collapse("".join(self._inline[mark:]))
            del self._inline[mark:]
            if text and href:
                self._inline.append(f"[{text}]({href})")
            elif text:
                self._inline.append(text)
        elif tag in ("strong", "b"):
            self._inline.append("**")
        elif tag in ("em", "i"):
            self._inline.append("*")

    def handle_data(self, data):
        if self._skip_depth:
            return
        if data:
            self._inline.append(data)

    # -- table rendering ---------------------------------------------------

    def _emit_table(self):
        rows = self._table_rows or []
        self._table_rows = None
        self._row = None
        self._cell_mark = None
        self._inline = []
        if not rows:
            return
        width = max(len(r) for r in rows)
        rows = [r + [""] * (width - len(r)) for r in rows]
        lines = ["| " + " | ".join(rows[0]) + " |"]
        lines.append("|" + " --- |" * width)
        for row in rows[1:]:
            lines.append("| " + " | ".join(row) + " |")
        self.blocks.append("\n".join(lines))

    def result(self) -> str:
        self._flush()
        if self._table_rows is not None:
            self._emit_table()
        return "\n\n".join(self.blocks).strip()


def html_to_markdown(html: str) -> str:
    converter = _Converter()
    try:
        converter.feed(html)
        converter.close()
    except Exception:
        # Tolerate pathological markup; whatever was structured survives.
        pass
    return converter.result()
