"""Validate and place code suggested by the model: classified candidate edits,
the parse/resolve precheck, and the lemma axiomatization fallback."""

from __future__ import annotations

import difflib
import re
from dataclasses import dataclass, field

from .errors import NoCodeFound, NoSuchLemma, UnplaceableSnippet
from .llm import CompletionResponse, extract_code_blocks
from .source import (
    DeclarationInfo,
    Edit,
    Patch,
    SourceText,
    apply_patch,
    find_declaration,
    scan_declarations,
    strip_error_markers,
)
from .verifier import Category, Diagnostic, VerificationResult, Verifier

REWRITE_LINE_OVERLAP = 0.8  # share of original non-blank lines a full-file response must keep


class CandidateKind:
    FULL_FILE_REWRITE = "FullFileRewrite"
    NEW_LEMMA_DECLARATION = "NewLemmaDeclaration"
    LEMMA_CALL_INSERTION = "LemmaCallInsertion"
    PROOF_BODY = "ProofBody"
    GENERIC_PATCH = "GenericPatch"


@dataclass
class Precheck:
    state: str = "unchecked"  # "unchecked" | "passed" | "failed"
    diagnostics: tuple[Diagnostic, ...] = ()


@dataclass
class Candidate:
    kind: str
    patch: Patch
    display_code: str
    provenance: str
    round: int = 1
    precheck: Precheck = field(default_factory=Precheck)


def _line_starts(content: str) -> list[int]:
    starts = [0]
    for i, ch in enumerate(content):
        if ch == "\n":
            starts.append(i + 1)
    return starts


def line_diff_patch(base: SourceText, new_content: str) -> Patch:
    """Minimal line-based diff as span edits; equal regions produce no edit."""
    old_lines = base.content.splitlines(keepends=True)
    new_lines = new_content.splitlines(keepends=True)
    # a missing trailing newline still belongs to the final line
    matcher = difflib.SequenceMatcher(a=old_lines, b=new_lines, autojunk=False)
    starts = _line_starts(base.content)
    edits: list[Edit] = []
    for tag, i1, i2, j1, j2 in matcher.get_opcodes():
        if tag == "equal":
            continue
        start_off = starts[i1] if i1 < len(starts) else len(base.content)
        end_off = starts[i2] if i2 < len(starts) else len(base.content)
        if i2 >= len(old_lines):
            end_off = len(base.content)
        replacement = "".join(new_lines[j1:j2])
        if base.content[start_off:end_off] == replacement:
            continue
        edits.append(Edit(base.span_of_offsets(start_off, end_off), replacement))
    return Patch.of(base, edits)


def _overlap_ratio(original: SourceText, snippet: str) -> float:
    orig = [ln.strip() for ln in original.content.split("\n") if ln.strip()]
    cand = [ln.strip() for ln in snippet.split("\n") if ln.strip()]
    if not orig:
        return 1.0
    matcher = difflib.SequenceMatcher(a=orig, b=cand, autojunk=False)
    matched = sum(size for _, _, size in matcher.get_matching_blocks())
    return matched / len(orig)


_LEMMA_HEAD = re.compile(r"^\s*(?:ghost\s+)?lemma\b(?:\s*\{:[^}]*\})?\s+([A-Za-z_][A-Za-z0-9_']*)")
_CALL_STMT = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_']*)\s*\(.*\)\s*;\s*$")


def _lemma_names(text: SourceText) -> set[str]:
    return {d.name for d in scan_declarations(text) if d.kind == "lemma"}


def _decl_by_name(text: SourceText, name: str) -> DeclarationInfo | None:
    for d in scan_declarations(text):
        if d.name == name:
            return d
    return None


def candidates_from_response(
    session_text: SourceText,
    response: CompletionResponse,
    target: Diagnostic | None = None,
    rewrite_threshold: float = REWRITE_LINE_OVERLAP,
) -> list[Candidate]:
    """Classify each extracted snippet and resolve it to a concrete patch.

    A snippet that carries most of the original file becomes one
    FullFileRewrite (diffed, never trusted wholesale); everything else is
    placed by its kind-specific anchor.
    """
    snippets = extract_code_blocks(response.text)
    if not snippets:
        raise NoCodeFound("response contained no code")

    candidates: list[Candidate] = []
    failures: list[str] = []
    for snippet in snippets:
        cleaned = strip_error_markers(session_text.with_content(snippet)).content
        if _overlap_ratio(session_text, cleaned) >= rewrite_threshold:
            if not cleaned.endswith("\n") and session_text.content.endswith("\n"):
                cleaned += "\n"
            patch = line_diff_patch(session_text, cleaned)
            if patch.is_empty:
                continue  # response identical to the input file
            display = "".join(e.replacement for e in patch.edits)
            candidates.append(
                Candidate(
                    kind=CandidateKind.FULL_FILE_REWRITE,
                    patch=patch,
                    display_code=display,
                    provenance=response.provenance,
                    round=response.round,
                )
            )
            continue
        try:
            candidates.append(_place_snippet(session_text, cleaned, response, target))
        except UnplaceableSnippet as exc:
            failures.append(str(exc))
    if not candidates and failures:
        raise UnplaceableSnippet("; ".join(failures))
    return candidates


def _place_snippet(
    base: SourceText,
    snippet: str,
    response: CompletionResponse,
    target: Diagnostic | None,
) -> Candidate:
    stripped = snippet.strip()
    lemma_m = _LEMMA_HEAD.match(stripped)
    known_lemmas = _lemma_names(base)

    if lemma_m:
        name = lemma_m.group(1)
        if name in known_lemmas:
            return _proof_body_candidate(base, name, snippet, response)
        return _new_lemma_candidate(base, snippet, response)

    call_m = _CALL_STMT.match(stripped.splitlines()[-1]) if stripped else None
    only_call = call_m and all(
        _CALL_STMT.match(ln) or ln.lstrip().startswith("//") or ln.lstrip().startswith("/*") or not ln.strip()
        for ln in stripped.splitlines()
    )
    if only_call and call_m.group(1) in known_lemmas:
        return _call_insertion_candidate(base, snippet, response, target)

    if stripped.startswith("calc") or stripped.startswith("assert"):
        if target is None:
            raise UnplaceableSnippet("bare proof block but no target lemma")
        from .source import find_enclosing_declaration

        decl = find_enclosing_declaration(base, target.span)
        if decl is None or decl.kind != "lemma":
            raise UnplaceableSnippet("bare proof block outside any lemma")
        body = "{\n" + snippet.rstrip() + "\n}"
        return _replace_body(base, decl, body, CandidateKind.PROOF_BODY, response)

    # last resort: a full declaration that rewrites an existing one
    decls = scan_declarations(base.with_content(snippet))
    if decls and decls[0].name:
        existing = _decl_by_name(base, decls[0].name)
        if existing is not None:
            edit = Edit(existing.extent, snippet.strip("\n"))
            return Candidate(
                kind=CandidateKind.GENERIC_PATCH,
                patch=Patch.of(base, [edit]),
                display_code=snippet.strip("\n"),
                provenance=response.provenance,
                round=response.round,
            )
    raise UnplaceableSnippet(f"cannot anchor snippet starting {stripped[:40]!r}")


def _new_lemma_candidate(base: SourceText, snippet: str, response: CompletionResponse) -> Candidate:
    decls = scan_declarations(base)
    insert_at = decls[0].extent.start_off if decls else 0
    assert insert_at is not None
    block = snippet.strip("\n") + "\n\n"
    edit = Edit(base.span_of_offsets(insert_at, insert_at), block)
    return Candidate(
        kind=CandidateKind.NEW_LEMMA_DECLARATION,
        patch=Patch.of(base, [edit]),
        display_code=snippet.strip("\n"),
        provenance=response.provenance,
        round=response.round,
    )


def _call_insertion_candidate(
    base: SourceText,
    snippet: str,
    response: CompletionResponse,
    target: Diagnostic | None,
) -> Candidate:
    anchor = _named_branch_anchor(base, response.text)
    if anchor is None:
        if target is None:
            raise UnplaceableSnippet("call insertion without branch name or target diagnostic")
        anchor = _statement_after_line(base, target.span.start_line)
        if anchor is None:
            raise UnplaceableSnippet("no statement found after the marked diagnostic")
    line, _ = base.position_of(anchor)
    line_text = base.line_text(line)
    indent = line_text[: len(line_text) - len(line_text.lstrip(" \t"))]
    body = "".join(indent + ln.strip() + "\n" for ln in snippet.strip().splitlines())
    insert_at = base.line_index[line - 1]
    edit = Edit(base.span_of_offsets(insert_at, insert_at), body)
    return Candidate(
        kind=CandidateKind.LEMMA_CALL_INSERTION,
        patch=Patch.of(base, [edit]),
        display_code=snippet.strip("\n"),
        provenance=response.provenance,
        round=response.round,
    )


def _named_branch_anchor(base: SourceText, response_text: str) -> int | None:
    """Anchor at the first statement of a case branch the model names in prose."""
    for m in re.finditer(r"case\s+([^\n=]{1,60}?)\s*=>", base.content):
        label = m.group(1).strip()
        if label and f"case {label}" in response_text:
            stmt = _statement_at_or_after(base, m.end())
            if stmt is not None:
                return stmt
    return None


def _statement_at_or_after(base: SourceText, offset: int) -> int | None:
    line, _ = base.position_of(offset)
    return _statement_after_line(base, line - 1)


def _statement_after_line(base: SourceText, line: int) -> int | None:
    """Offset of the first statement-looking line strictly after `line`."""
    lines = base.content.split("\n")
    for idx in range(line, len(lines)):
        text = lines[idx].strip()
        if not text or text.startswith("//"):
            continue
        if text.endswith(";") or ":=" in text:
            return base.line_index[idx]
        if text.split()[0] in ("while", "if", "match", "calc", "return", "assert", "var"):
            return base.line_index[idx]
    return None


def _proof_body_candidate(
    base: SourceText, name: str, snippet: str, response: CompletionResponse
) -> Candidate:
    decl = find_declaration(base, name, kind="lemma")
    assert decl is not None
    snippet_text = base.with_content(snippet)
    snippet_decls = scan_declarations(snippet_text)
    body = None
    for d in snippet_decls:
        if d.name == name and d.body_extent is not None:
            s, e = d.body_extent.start_off, d.body_extent.end_off
            body = snippet[s:e]
            break
    if body is None:
        raise UnplaceableSnippet(f"snippet redeclares lemma {name} but carries no body")
    return _replace_body(base, decl, body, CandidateKind.PROOF_BODY, response)


def _replace_body(
    base: SourceText,
    decl: DeclarationInfo,
    body: str,
    kind: str,
    response: CompletionResponse,
) -> Candidate:
    if decl.body_extent is not None:
        span = decl.body_extent
        replacement = body
    else:
        end = decl.extent.end_off
        assert end is not None
        span = base.span_of_offsets(end, end)
        replacement = "\n" + body
    edit = Edit(span, replacement)
    return Candidate(
        kind=kind,
        patch=Patch.of(base, [edit]),
        display_code=body,
        provenance=response.provenance,
        round=response.round,
    )


def syntax_precheck(verifier: Verifier, text_after_patch: SourceText) -> tuple[Precheck, VerificationResult]:
    """Parse/resolve-only verifier pass; passes iff no front-end errors."""
    result = verifier.verify(text_after_patch, resolve_only=True)
    bad = tuple(
        d
        for d in result.diagnostics
        if d.severity == "error" and d.category is Category.SYNTAX_OR_RESOLUTION
    )
    if bad or result.status.value == "CrashedOrUnparsable":
        return Precheck(state="failed", diagnostics=bad or result.errors), result
    return Precheck(state="passed"), result


_AXIOM_ATTR = "{:axiom}"


def axiomatize(text: SourceText, lemma_name: str) -> SourceText:
    """Mark the named lemma {:axiom} and drop its body; idempotent."""
    decl = find_declaration(text, lemma_name, kind="lemma")
    if decl is None:
        raise NoSuchLemma(f"no lemma named {lemma_name}")
    header_s, header_e = decl.header_extent.start_off, decl.header_extent.end_off
    assert header_s is not None and header_e is not None
    header = text.content[header_s:header_e]
    already_axiom = _AXIOM_ATTR in header
    if already_axiom and not decl.has_body:
        return text

    edits: list[Edit] = []
    if not already_axiom:
        m = re.search(r"\blemma\b", header)
        assert m is not None
        at = header_s + m.end()
        edits.append(Edit(text.span_of_offsets(at, at), " " + _AXIOM_ATTR))
    if decl.has_body and decl.body_extent is not None:
        body_s = decl.body_extent.start_off
        assert body_s is not None
        cut = body_s
        while cut > 0 and text.content[cut - 1] in " \t\r\n":
            cut -= 1
        end = decl.extent.end_off
        assert end is not None
        edits.append(Edit(text.span_of_offsets(cut, end), ""))
    if not edits:
        return text
    return apply_patch(text, Patch.of(text, edits))


def bodyless_lemmas_without_axiom(text: SourceText) -> list[str]:
    """Lemma names that are bodyless and not yet marked {:axiom}."""
    out = []
    for d in scan_declarations(text):
        if d.kind != "lemma" or d.has_body:
            continue
        s, e = d.header_extent.start_off, d.header_extent.end_off
        if s is None or e is None:
            continue
        if _AXIOM_ATTR not in text.content[s:e]:
            out.append(d.name)
    return out
