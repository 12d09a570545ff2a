"""Positioned Dafny source text, span-safe edits, and lexical declaration scanning.

Positions are 1-based (line, col) to match verifier output; character offsets
into the text are the internal source of truth. No Dafny parser is involved:
declaration discovery is keyword scanning plus brace matching that skips
string literals and comments, which is enough for placement anchors.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace

from .errors import OverlappingEdits, SpanOutOfRange, StaleBase

MARKER_PREFIX = "// VERIFIER_ERROR "
MARKER_SUFFIX = " //"
_MARKER_LINE = re.compile(r"^[ \t]*// VERIFIER_ERROR .* //[ \t]*$")

DECL_KEYWORDS = {
    "method", "lemma", "function", "predicate", "datatype", "codatatype",
    "class", "trait", "module", "const", "type", "newtype", "iterator",
    "import", "export",
}
_MODIFIERS = {"ghost", "static", "abstract", "twostate", "opaque", "least", "greatest"}
_SPEC_CLAUSES = {"requires", "ensures", "decreases", "reads", "modifies"}


def _kind_of(keyword: str, modifiers: list[str]) -> str:
    if keyword == "function" and "ghost" in modifiers:
        return "ghost-function"
    if keyword == "predicate" and "ghost" in modifiers:
        return "ghost-predicate"
    if keyword in ("method", "lemma", "function", "predicate", "datatype"):
        return keyword
    return "other"


@dataclass(frozen=True)
class Span:
    """Region of text; 1-based line/col endpoints plus character offsets.

    Offsets may be None for spans parsed from verifier output, where only
    line/col are known; `resolve` fills them in against a SourceText.
    """

    start_line: int
    start_col: int
    end_line: int
    end_col: int
    start_off: int | None = None
    end_off: int | None = None

    def __post_init__(self):
        if (self.start_line, self.start_col) > (self.end_line, self.end_col):
            raise ValueError(f"span start after end: {self}")

    @classmethod
    def point(cls, line: int, col: int) -> "Span":
        return cls(line, col, line, col)

    def resolve(self, text: "SourceText") -> "Span":
        return replace(
            self,
            start_off=text.offset_of(self.start_line, self.start_col),
            end_off=text.offset_of(self.end_line, self.end_col),
        )

    def contains(self, other: "Span") -> bool:
        return (self.start_line, self.start_col) <= (other.start_line, other.start_col) and \
            (other.end_line, other.end_col) <= (self.end_line, self.end_col)


@dataclass(frozen=True)
class SourceText:
    """Immutable source file content with a line index and a stable hash."""

    path: str
    content: str
    newline_style: str = "\n"
    line_index: tuple[int, ...] = field(init=False)
    content_hash: str = field(init=False)

    def __post_init__(self):
        starts = [0]
        for i, ch in enumerate(self.content):
            if ch == "\n":
                starts.append(i + 1)
        object.__setattr__(self, "line_index", tuple(starts))
        digest = hashlib.sha256(self.content.encode("utf-8")).hexdigest()
        object.__setattr__(self, "content_hash", digest)

    @classmethod
    def from_file(cls, path: str) -> "SourceText":
        with open(path, "r", encoding="utf-8", newline="") as f:
            raw = f.read()
        crlf = raw.count("\r\n")
        lf = raw.count("\n") - crlf
        style = "\r\n" if crlf > lf else "\n"
        return cls(path=str(path), content=raw.replace("\r\n", "\n"), newline_style=style)

    def write_to(self, path: str) -> None:
        data = self.content
        if self.newline_style != "\n":
            data = data.replace("\n", self.newline_style)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(data)

    def with_content(self, content: str) -> "SourceText":
        return SourceText(path=self.path, content=content, newline_style=self.newline_style)

    @property
    def lines(self) -> list[str]:
        return self.content.splitlines()

    def line_text(self, line: int) -> str:
        if not 1 <= line <= len(self.line_index):
            raise SpanOutOfRange(f"line {line} outside 1..{len(self.line_index)}")
        start = self.line_index[line - 1]
        end = self.line_index[line] - 1 if line < len(self.line_index) else len(self.content)
        return self.content[start:end]

    def offset_of(self, line: int, col: int) -> int:
        """Offset of 1-based (line, col); col may point one past line end."""
        if not 1 <= line <= len(self.line_index):
            raise SpanOutOfRange(f"line {line} outside 1..{len(self.line_index)}")
        off = self.line_index[line - 1] + (col - 1)
        if col < 1 or off > len(self.content):
            raise SpanOutOfRange(f"col {col} outside line {line}")
        return off

    def position_of(self, offset: int) -> tuple[int, int]:
        """1-based (line, col) of a character offset."""
        if not 0 <= offset <= len(self.content):
            raise SpanOutOfRange(f"offset {offset} outside 0..{len(self.content)}")
        import bisect
        line = bisect.bisect_right(self.line_index, offset)
        return line, offset - self.line_index[line - 1] + 1

    def span_of_offsets(self, start_off: int, end_off: int) -> Span:
        sl, sc = self.position_of(start_off)
        el, ec = self.position_of(end_off)
        return Span(sl, sc, el, ec, start_off, end_off)


@dataclass(frozen=True)
class Edit:
    span: Span
    replacement: str

    def offsets(self, text: SourceText) -> tuple[int, int]:
        s = self.span.start_off
        e = self.span.end_off
        if s is None or e is None:
            resolved = self.span.resolve(text)
            s, e = resolved.start_off, resolved.end_off
        assert s is not None and e is not None
        if e > len(text.content):
            raise SpanOutOfRange(f"edit end {e} beyond text length {len(text.content)}")
        return s, e


@dataclass(frozen=True)
class Patch:
    """Ordered, non-overlapping edits against a specific base text."""

    base_hash: str
    edits: tuple[Edit, ...]

    @classmethod
    def of(cls, base: SourceText, edits: list[Edit]) -> "Patch":
        return cls(base_hash=base.content_hash, edits=tuple(edits))

    @property
    def is_empty(self) -> bool:
        return not self.edits

    def size_bytes(self, base: SourceText) -> int:
        total = 0
        for e in self.edits:
            s, t = e.offsets(base)
            total += len(base.content[s:t].encode("utf-8")) + len(e.replacement.encode("utf-8"))
        return total


def apply_patch(text: SourceText, patch: Patch) -> SourceText:
    """Splice every edit into the text; bytes outside edit spans are untouched."""
    if patch.base_hash != text.content_hash:
        raise StaleBase(patch.base_hash, text.content_hash)
    resolved = sorted((e.offsets(text), e) for e in patch.edits)
    prev_end = 0
    pieces: list[str] = []
    last = 0
    for (start, end), edit in resolved:
        if start < prev_end:
            raise OverlappingEdits(f"edit at offset {start} overlaps previous edit ending {prev_end}")
        pieces.append(text.content[last:start])
        pieces.append(edit.replacement)
        prev_end = end
        last = end
    pieces.append(text.content[last:])
    return text.with_content("".join(pieces))


def flatten_message(message: str) -> str:
    """Multi-line verifier messages become one line so the marker stays one comment."""
    return "; ".join(part.strip() for part in message.splitlines() if part.strip())


def insert_error_marker(text: SourceText, span: Span, message: str) -> SourceText:
    """Insert `// VERIFIER_ERROR <message> //` on its own line above the span's start line."""
    line = span.start_line
    if not 1 <= line <= len(text.line_index):
        raise SpanOutOfRange(f"diagnostic line {line} outside file")
    target = text.line_text(line)
    indent = target[: len(target) - len(target.lstrip(" \t"))]
    marker = f"{indent}{MARKER_PREFIX}{flatten_message(message)}{MARKER_SUFFIX}\n"
    off = text.line_index[line - 1]
    return text.with_content(text.content[:off] + marker + text.content[off:])


def strip_error_markers(text: SourceText) -> SourceText:
    kept = [ln for ln in text.content.split("\n") if not _MARKER_LINE.match(ln)]
    return text.with_content("\n".join(kept))


def marker_lines(text: SourceText) -> list[int]:
    """1-based line numbers of all marker lines."""
    return [i + 1 for i, ln in enumerate(text.content.split("\n")) if _MARKER_LINE.match(ln)]


@dataclass(frozen=True)
class DeclarationInfo:
    kind: str
    name: str
    extent: Span
    header_extent: Span
    has_body: bool
    body_extent: Span | None = None


class _Scanner:
    """Single pass over the text, emitting code tokens with offsets.

    Skips // line comments, nested /* */ block comments, "..." strings
    (backslash escapes), @"..." verbatim strings ("" escapes), and '...'
    char literals, so braces inside them never affect matching.
    """

    _ident = re.compile(r"[A-Za-z_'][A-Za-z0-9_'?]*")

    def __init__(self, content: str):
        self.content = content

    def tokens(self):
        s = self.content
        i, n = 0, len(s)
        while i < n:
            ch = s[i]
            if ch in " \t\r\n":
                i += 1
                continue
            if s.startswith("//", i):
                j = s.find("\n", i)
                i = n if j == -1 else j + 1
                continue
            if s.startswith("/*", i):
                depth, j = 1, i + 2
                while j < n and depth:
                    if s.startswith("/*", j):
                        depth, j = depth + 1, j + 2
                    elif s.startswith("*/", j):
                        depth, j = depth - 1, j + 2
                    else:
                        j += 1
                i = j
                continue
            if s.startswith('@"', i):
                j = i + 2
                while j < n:
                    if s[j] == '"':
                        if j + 1 < n and s[j + 1] == '"':
                            j += 2
                            continue
                        j += 1
                        break
                    j += 1
                i = j
                continue
            if ch == '"':
                j = i + 1
                while j < n and s[j] != '"':
                    j += 2 if s[j] == "\\" else 1
                i = j + 1
                continue
            if ch == "'" and i + 1 < n and (s[i + 1] == "\\" or (i + 2 < n and s[i + 2] == "'")):
                j = i + 2 if s[i + 1] != "\\" else i + 3
                i = min(j + 1, n)
                continue
            m = self._ident.match(s, i)
            if m:
                yield ("ident", m.group(0), i, m.end())
                i = m.end()
                continue
            if s.startswith("{:", i):
                yield ("attr_open", "{:", i, i + 2)
                i += 2
                continue
            yield ("punct", ch, i, i + 1)
            i += 1


def scan_declarations(text: SourceText) -> list[DeclarationInfo]:
    """Top-level declarations found by keyword scanning + brace matching.

    Bodyless declarations (e.g. lemmas without a body) extend to just before
    the next top-level declaration (or EOF), trailing whitespace excluded.
    """
    toks = list(_Scanner(text.content).tokens())
    decls: list[DeclarationInfo] = []
    depth = 0
    i = 0
    while i < len(toks):
        kind_tok, val, start, end = toks[i]
        if kind_tok == "punct" and val == "{":
            depth += 1
            i += 1
            continue
        if kind_tok == "attr_open":
            depth += 1
            i += 1
            continue
        if kind_tok == "punct" and val == "}":
            depth -= 1
            i += 1
            continue
        if depth == 0 and kind_tok == "ident" and val in DECL_KEYWORDS:
            decl, i = _read_declaration(text, toks, i)
            if decl is not None:
                decls.append(decl)
            continue
        i += 1
    return decls


def _read_declaration(text: SourceText, toks, i: int):
    # swallow modifiers written before the keyword (ghost lemma, static method, ...)
    start_idx = i
    j = i
    while j > 0 and toks[j - 1][0] == "ident" and toks[j - 1][1] in _MODIFIERS:
        j -= 1
    start_idx = j
    modifiers = [toks[k][1] for k in range(start_idx, i)]
    keyword = toks[i][1]
    decl_start = toks[start_idx][2]

    # `function method` (legacy) keeps kind "function"
    k = i + 1
    if k < len(toks) and toks[k][0] == "ident" and toks[k][1] == "method" and keyword == "function":
        k += 1
    # skip attributes between keyword and name
    while k < len(toks) and toks[k][0] == "attr_open":
        depth = 1
        k += 1
        while k < len(toks) and depth:
            if toks[k][0] in ("attr_open",) or toks[k][1] == "{":
                depth += 1
            elif toks[k][1] == "}":
                depth -= 1
            k += 1
    name = ""
    name_end = toks[i][3]
    if k < len(toks) and toks[k][0] == "ident":
        name = toks[k][1]
        name_end = toks[k][3]
        k += 1

    # walk forward: a `{` at paren-depth 0 that is not an attribute opens the
    # body; a new top-level declaration keyword (at spec-clause position) ends
    # a bodyless declaration.
    paren = 0
    body_open = None
    body_close = None
    header_end = name_end
    stop = len(toks)
    m = k
    while m < len(toks):
        t, v, s, e = toks[m]
        if t == "punct" and v in "([":
            paren += 1
        elif t == "punct" and v in ")]":
            paren = max(0, paren - 1)
        elif t == "attr_open":
            depth = 1
            m += 1
            while m < len(toks) and depth:
                if toks[m][0] == "attr_open" or toks[m][1] == "{":
                    depth += 1
                elif toks[m][1] == "}":
                    depth -= 1
                m += 1
            continue
        elif t == "punct" and v == "{" and paren == 0:
            body_open = s
            depth = 1
            m += 1
            while m < len(toks) and depth:
                if toks[m][0] == "attr_open" or toks[m][1] == "{":
                    depth += 1
                elif toks[m][1] == "}":
                    depth -= 1
                    if depth == 0:
                        body_close = toks[m][3]
                m += 1
            stop = m
            break
        elif t == "ident" and paren == 0 and v in DECL_KEYWORDS and v not in _SPEC_CLAUSES:
            # next declaration begins (possibly with modifiers directly before it)
            back = m
            while back > k and toks[back - 1][0] == "ident" and toks[back - 1][1] in _MODIFIERS:
                back -= 1
            stop = back
            break
        if paren == 0 and t == "ident" and v in _SPEC_CLAUSES and header_end == name_end:
            header_end = s
        m += 1
    else:
        stop = len(toks)

    if body_open is not None and header_end == name_end:
        header_end = body_open

    if body_close is not None:
        decl_end = body_close
    else:
        decl_end = toks[stop - 1][3] if stop - 1 >= start_idx else name_end

    # header runs to just before the first spec clause / body; fall back to
    # the end of the signature tokens
    if header_end == name_end:
        header_end = decl_end if body_open is None else body_open
    header_text_end = _rstrip_offset(text.content, header_end)
    decl_text_end = _rstrip_offset(text.content, decl_end)

    info = DeclarationInfo(
        kind=_kind_of(keyword, modifiers),
        name=name,
        extent=text.span_of_offsets(decl_start, decl_text_end),
        header_extent=text.span_of_offsets(decl_start, header_text_end),
        has_body=body_open is not None,
        body_extent=(
            text.span_of_offsets(body_open, body_close)
            if body_open is not None and body_close is not None
            else None
        ),
    )
    return info, max(stop, k)


def _rstrip_offset(content: str, end: int) -> int:
    while end > 0 and content[end - 1] in " \t\r\n":
        end -= 1
    return end


def find_enclosing_declaration(text: SourceText, span: Span) -> DeclarationInfo | None:
    """Innermost top-level declaration whose extent contains the span, if any."""
    span = span if span.start_off is not None else span.resolve(text)
    for decl in scan_declarations(text):
        if decl.extent.contains(span):
            return decl
    return None


def find_declaration(text: SourceText, name: str, kind: str | None = None) -> DeclarationInfo | None:
    for decl in scan_declarations(text):
        if decl.name == name and (kind is None or decl.kind == kind):
            return decl
    return None


def unified_diff(original: SourceText, final: SourceText) -> str:
    """Standard patch-compatible unified diff between two texts."""
    import difflib

    lines = difflib.unified_diff(
        original.content.splitlines(keepends=True),
        final.content.splitlines(keepends=True),
        fromfile=f"a/{original.path}",
        tofile=f"b/{original.path}",
    )
    return "".join(lines)
