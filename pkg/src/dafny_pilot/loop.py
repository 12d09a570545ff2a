"""The verify -> prompt -> candidate -> precheck -> apply -> re-verify loop.

One loop runs sequentially (verifier feedback is inherently serial). On a
failing verification the enabled repair heuristics run in a fixed order:
hint commenting and witness rewriting are semantics-preserving; lemma
axiomatization weakens soundness, so it runs last and only when opted in.
Every step lands in a machine-readable run log.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    BudgetExhausted,
    CannotFit,
    NoCodeFound,
    PrecheckFailed,
    UnplaceableSnippet,
)
from .llm import LlmClient, ProviderConfig, extract_code_blocks
from .prompts import (
    PromptTemplate,
    TaskKind,
    fit_to_budget,
    load_template,
    render_diagnostics_block,
    render_prompt,
)
from .source import (
    DeclarationInfo,
    Edit,
    Patch,
    SourceText,
    _Scanner,
    apply_patch,
    find_enclosing_declaration,
    insert_error_marker,
)
from .suggest import (
    Candidate,
    axiomatize,
    bodyless_lemmas_without_axiom,
    candidates_from_response,
    line_diff_patch,
    syntax_precheck,
)
from .verifier import Diagnostic, VerificationResult, Verifier, VerifierConfig

HEURISTIC_COMMENT_HINTS = "comment_failing_hints"
HEURISTIC_WITNESS_REWRITE = "rewrite_witness_bindings"
HEURISTIC_AXIOMATIZE = "axiomatize"

CODE_TASKS = (TaskKind.LEMMA_INFERENCE, TaskKind.PROOF_INFERENCE, TaskKind.REPAIR)


@dataclass(frozen=True)
class LoopConfig:
    max_rounds: int = 3
    candidates_per_round: int = 1
    allow_axioms: bool = False
    enable_hint_commenting: bool = True
    enable_witness_rewrite: bool = True
    verify_timeout_s: float | None = None  # overrides VerifierConfig.timeout_s when set
    budget_tokens: int = 128_000

    def __post_init__(self):
        if self.max_rounds < 1 or self.candidates_per_round < 1:
            raise ValueError("max_rounds and candidates_per_round must be >= 1")


@dataclass(frozen=True)
class EngineConfig:
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    provider: ProviderConfig = field(default_factory=lambda: ProviderConfig(cassette_dir="cassettes"))
    loop: LoopConfig = field(default_factory=LoopConfig)


@dataclass
class Attempt:
    round: int
    candidate: Candidate | None
    heuristics_applied: list[str]
    result: VerificationResult | None
    residual_errors: int
    axioms_inserted: int
    patch_size_bytes: int
    text: SourceText

    def summary(self) -> dict:
        return {
            "round": self.round,
            "kind": self.candidate.kind if self.candidate else None,
            "heuristics_applied": list(self.heuristics_applied),
            "residual_errors": self.residual_errors,
            "axioms_inserted": self.axioms_inserted,
            "patch_size_bytes": self.patch_size_bytes,
            "verified": bool(self.result and self.result.verified),
        }


@dataclass
class Outcome:
    status: str  # "Success" | "Partial" | "Failure"
    attempts: list[Attempt]
    final_text: SourceText | None = None
    patch: Patch | None = None
    best_attempt: Attempt | None = None
    reason: str = ""
    llm_calls: int = 0
    verifier_calls: int = 0

    @property
    def success(self) -> bool:
        return self.status == "Success"


class RunLog:
    """Append-only event log; optionally mirrored to a JSON-lines file."""

    def __init__(self, path: str | Path | None = None):
        self.records: list[dict] = []
        self.path = Path(path) if path else None
        self._seq = 0

    def emit(self, action: str, round: int = 0, **fields) -> dict:
        self._seq += 1
        record = {"seq": self._seq, "round": round, "action": action, **fields}
        self.records.append(record)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record) + "\n")
        return record

    def count(self, action: str) -> int:
        return sum(1 for r in self.records if r["action"] == action)


# --- deterministic repair heuristics ---


def _calc_blocks(text: SourceText) -> list[dict]:
    """Calc blocks with their hint groups, via the comment/string-aware scanner."""
    toks = list(_Scanner(text.content).tokens())
    blocks: list[dict] = []
    i = 0
    while i < len(toks):
        t, v, s, e = toks[i]
        if t == "ident" and v == "calc":
            j = i + 1
            while j < len(toks) and not (toks[j][0] == "punct" and toks[j][1] == "{"):
                j += 1
            if j == len(toks):
                break
            depth = 0
            block_start = toks[j][2]
            hints: list[tuple[int, int]] = []
            k = j
            while k < len(toks):
                tt, vv, ss, ee = toks[k]
                if (tt == "punct" and vv == "{") or tt == "attr_open":
                    depth += 1
                    if depth == 2 and tt == "punct":
                        # a nested group directly inside the calc body is a hint
                        close = _match_brace(toks, k)
                        if close is not None:
                            hints.append((ss, toks[close][3]))
                            k = close
                            depth -= 1
                elif tt == "punct" and vv == "}":
                    depth -= 1
                    if depth == 0:
                        blocks.append(
                            {
                                "start": block_start,
                                "end": ee,
                                "start_line": text.position_of(block_start)[0],
                                "end_line": text.position_of(ee)[0],
                                "hints": hints,
                            }
                        )
                        break
                k += 1
            i = k + 1
            continue
        i += 1
    return blocks


def _match_brace(toks, open_idx: int) -> int | None:
    depth = 0
    for k in range(open_idx, len(toks)):
        tt, vv, _, _ = toks[k]
        if (tt == "punct" and vv == "{") or tt == "attr_open":
            depth += 1
        elif tt == "punct" and vv == "}":
            depth -= 1
            if depth == 0:
                return k
    return None


def comment_failing_hints(
    text: SourceText, diags: tuple[Diagnostic, ...] | list[Diagnostic]
) -> tuple[SourceText, bool]:
    """Wrap hint groups of failing calc steps in block comments.

    A failing step's hint is the `{ ... }` group covering the diagnostic's
    line; when the failing step cannot be attributed to a specific hint,
    every hint in that block is commented. Step operators stay intact.
    """
    blocks = _calc_blocks(text)
    if not blocks:
        return text, False
    marked: set[tuple[int, int]] = set()
    for block in blocks:
        failing = [
            d
            for d in diags
            if d.severity == "error" and block["start_line"] <= d.span.start_line <= block["end_line"]
        ]
        if not failing or not block["hints"]:
            continue
        hint_ranges = [
            (s, e, text.position_of(s)[0], text.position_of(e)[0]) for s, e in block["hints"]
        ]
        matched_any = False
        for d in failing:
            for s, e, ls, le in hint_ranges:
                if ls <= d.span.start_line <= le:
                    marked.add((s, e))
                    matched_any = True
        if not matched_any:
            marked.update((s, e) for s, e, _, _ in hint_ranges)
    if not marked:
        return text, False
    edits: list[Edit] = []
    for s, e in sorted(marked):
        edits.append(Edit(text.span_of_offsets(s, s), "/* "))
        edits.append(Edit(text.span_of_offsets(e, e), " */"))
    return apply_patch(text, Patch.of(text, edits)), True


_EXISTS_REQUIRES = re.compile(
    r"requires\s+exists\s+([A-Za-z_][\w']*)\s*(?::\s*[A-Za-z_][\w<>, ]*?)?\s*::\s*([^\n]+)"
)


def rewrite_witness_bindings(
    text: SourceText, lemma: DeclarationInfo
) -> tuple[SourceText, bool]:
    """Turn `var v := <expr>;` into the such-that form `var v :| E;` for every
    local binding whose name matches an existential `requires exists v :: E`."""
    ext_s, ext_e = lemma.extent.start_off, lemma.extent.end_off
    if ext_s is None or ext_e is None or lemma.body_extent is None:
        return text, False
    decl_text = text.content[ext_s:ext_e]
    bindings: dict[str, str] = {}
    for m in _EXISTS_REQUIRES.finditer(decl_text):
        name, expr = m.group(1), m.group(2).strip()
        # expression runs to end of line; drop a trailing line comment
        expr = re.sub(r"\s*//.*$", "", expr).rstrip()
        bindings[name] = expr
    if not bindings:
        return text, False

    body_s, body_e = lemma.body_extent.start_off, lemma.body_extent.end_off
    assert body_s is not None and body_e is not None
    body = text.content[body_s:body_e]
    changed = False
    for name, expr in bindings.items():
        pattern = re.compile(
            rf"\bvar\s+{re.escape(name)}(?:\s*:\s*[A-Za-z_][\w<>, ]*?)?\s*:=\s*[^;\n]*;"
        )
        new_body, n = pattern.subn(f"var {name} :| {expr};", body)
        if n:
            body = new_body
            changed = True
    if not changed:
        return text, False
    edit = Edit(text.span_of_offsets(body_s, body_e), body)
    return apply_patch(text, Patch.of(text, [edit])), True


def _axiomatize_candidates(text: SourceText, diags) -> list[str]:
    """Lemmas worth axiomatizing: bodyless ones plus those with errors inside."""
    names = list(bodyless_lemmas_without_axiom(text))
    for d in diags:
        if d.severity != "error":
            continue
        decl = find_enclosing_declaration(text, d.span)
        if decl is not None and decl.kind == "lemma" and decl.name not in names:
            names.append(decl.name)
    return names


def score_attempts(attempts: list[Attempt]) -> Attempt:
    """Lexicographic minimum of (residual_errors, axioms_inserted,
    patch_size_bytes, round); earliest attempt wins ties."""
    if not attempts:
        raise ValueError("score_attempts needs at least one attempt")
    return min(
        enumerate(attempts),
        key=lambda pair: (
            pair[1].residual_errors,
            pair[1].axioms_inserted,
            pair[1].patch_size_bytes,
            pair[1].round,
            pair[0],
        ),
    )[1]


# --- candidate evaluation (shared by run_task and the HTTP service) ---


def evaluate_candidate(
    base: SourceText,
    candidate: Candidate,
    verifier: Verifier,
    loop: LoopConfig,
    log: RunLog,
    round: int,
) -> Attempt:
    """Apply, precheck, verify, then walk the enabled heuristics in order."""
    current = apply_patch(base, candidate.patch)
    log.emit("apply", round=round, kind=candidate.kind, text_hash=current.content_hash)

    precheck, pre_result = syntax_precheck(verifier, current)
    candidate.precheck = precheck
    log.emit(
        "precheck",
        round=round,
        state=precheck.state,
        errors=[d.message for d in precheck.diagnostics],
    )

    axioms = 0
    heuristics: list[str] = []
    if precheck.state == "failed":
        result: VerificationResult | None = None
        diags: tuple[Diagnostic, ...] = precheck.diagnostics
    else:
        result = verifier.verify(current)
        log.emit(
            "verify",
            round=round,
            status=result.status.value,
            errors=len(result.errors),
            text_hash=current.content_hash,
        )
        diags = result.errors

    failing = (result is None) or (not result.verified)
    if failing:
        steps: list[tuple[str, bool]] = [
            (HEURISTIC_COMMENT_HINTS, loop.enable_hint_commenting),
            (HEURISTIC_WITNESS_REWRITE, loop.enable_witness_rewrite),
            (HEURISTIC_AXIOMATIZE, loop.allow_axioms),
        ]
        for name, enabled in steps:
            if not enabled:
                continue
            new_text, changed, added_axioms = _run_heuristic(name, current, diags)
            if not changed:
                continue
            heuristics.append(name)
            axioms += added_axioms
            current = new_text
            result = verifier.verify(current)
            log.emit(
                "heuristic",
                round=round,
                name=name,
                status=result.status.value,
                errors=len(result.errors),
                text_hash=current.content_hash,
            )
            diags = result.errors
            if result.verified:
                break

    residual = len(result.errors) if result is not None else len(precheck.diagnostics)
    return Attempt(
        round=round,
        candidate=candidate,
        heuristics_applied=heuristics,
        result=result,
        residual_errors=residual,
        axioms_inserted=axioms,
        patch_size_bytes=line_diff_patch(base, current.content).size_bytes(base),
        text=current,
    )


def _run_heuristic(name: str, text: SourceText, diags) -> tuple[SourceText, bool, int]:
    if name == HEURISTIC_COMMENT_HINTS:
        new_text, changed = comment_failing_hints(text, diags)
        return new_text, changed, 0
    if name == HEURISTIC_WITNESS_REWRITE:
        lemma = None
        for d in diags:
            decl = find_enclosing_declaration(text, d.span)
            if decl is not None and decl.kind == "lemma":
                lemma = decl
                break
        if lemma is None:
            return text, False, 0
        new_text, changed = rewrite_witness_bindings(text, lemma)
        return new_text, changed, 0
    if name == HEURISTIC_AXIOMATIZE:
        names = _axiomatize_candidates(text, diags)
        count = 0
        for lemma_name in names:
            new_text = axiomatize(text, lemma_name)
            if new_text.content != text.content:
                text = new_text
                count += 1
        return text, count > 0, count
    raise ValueError(f"unknown heuristic {name}")


# --- feedback rendering ---


def insert_error_markers(text: SourceText, diags) -> SourceText:
    """Insert one marker per error diagnostic, bottom-up so lines stay valid."""
    ordered = sorted(
        (d for d in diags if d.severity == "error"),
        key=lambda d: d.span.start_line,
        reverse=True,
    )
    for d in ordered:
        text = insert_error_marker(text, d.span, d.message)
    return text


def render_feedback(attempt: Attempt) -> str:
    diags = (
        attempt.result.errors if attempt.result is not None else attempt.candidate.precheck.diagnostics
        if attempt.candidate
        else ()
    )
    marked = insert_error_markers(attempt.text, diags)
    return (
        "The previous suggestion did not verify. "
        "Here is the attempted program with the new verifier errors marked inline:\n\n"
        f"```dafny\n{marked.content}\n```\n"
    )


# --- the loop ---


_TASK_OF = {
    TaskKind.LEMMA_INFERENCE: TaskKind.LEMMA_INFERENCE,
    TaskKind.PROOF_INFERENCE: TaskKind.PROOF_INFERENCE,
    TaskKind.REPAIR: TaskKind.REPAIR,
}


def _pick_target(diags) -> Diagnostic:
    errors = [d for d in diags if d.severity == "error"]
    return min(errors, key=lambda d: (d.span.start_line, d.span.start_col))


def _make_success(
    original: SourceText,
    final_text: SourceText,
    attempts: list[Attempt],
    last_result: VerificationResult | None,
    verifier: Verifier,
    log: RunLog,
) -> Outcome:
    # refuse to declare success unless a verification of exactly this text passed
    if (
        last_result is None
        or not last_result.verified
        or last_result.verified_hash != final_text.content_hash
    ):
        last_result = verifier.verify(final_text)
        if not last_result.verified:
            raise RuntimeError("refusing to build Success: final text does not verify")
    patch = line_diff_patch(original, final_text.content)
    log.emit("outcome", status="Success", text_hash=final_text.content_hash)
    return Outcome(
        status="Success",
        attempts=attempts,
        final_text=final_text,
        patch=patch,
        best_attempt=attempts[-1] if attempts else None,
    )


def run_task(
    task: TaskKind,
    text: SourceText,
    cfg: EngineConfig,
    target: Diagnostic | None = None,
    target_pos: tuple[int, int] | None = None,
    template: PromptTemplate | None = None,
    log: RunLog | None = None,
    verifier: Verifier | None = None,
    client: LlmClient | None = None,
) -> Outcome:
    """Drive one file through the feedback loop until Verified or give up."""
    if task not in CODE_TASKS:
        raise ValueError(f"run_task handles code tasks, not {task}; use run_text_task")
    log = log if log is not None else RunLog()
    vcfg = cfg.verifier
    if cfg.loop.verify_timeout_s is not None:
        vcfg = dataclasses.replace(vcfg, timeout_s=cfg.loop.verify_timeout_s)
    verifier = verifier if verifier is not None else Verifier(vcfg)
    client = client if client is not None else LlmClient(cfg.provider)
    loop = cfg.loop

    initial = verifier.verify(text)
    log.emit(
        "verify",
        round=0,
        status=initial.status.value,
        errors=len(initial.errors),
        text_hash=text.content_hash,
    )
    if initial.verified:
        out = _make_success(text, text, [], initial, verifier, log)
        out.llm_calls = client.calls
        out.verifier_calls = verifier.calls
        return out
    if not initial.errors:
        log.emit("outcome", status="Failure", reason=f"verifier status {initial.status.value}")
        return Outcome(
            status="Failure",
            attempts=[],
            reason=f"verification could not run: {initial.status.value}",
            llm_calls=client.calls,
            verifier_calls=verifier.calls,
        )

    if target is None and target_pos is not None:
        line, col = target_pos
        at_pos = [
            d
            for d in initial.errors
            if d.span.start_line == line and (col <= 0 or d.span.start_col == col)
        ]
        target = at_pos[0] if at_pos else None
    target_diag = target or _pick_target(initial.diagnostics)
    log.emit(
        "select_target",
        round=0,
        line=target_diag.span.start_line,
        col=target_diag.span.start_col,
        category=target_diag.category.value,
        message=target_diag.message,
    )
    tmpl = template or load_template(_TASK_OF[task])

    attempts: list[Attempt] = []
    feedback = ""
    failure_reason = ""
    for round_no in range(1, loop.max_rounds + 1):
        annotated = insert_error_marker(text, target_diag.span, target_diag.message)
        try:
            prompt = render_prompt(
                tmpl,
                {"annotated_source": annotated, "feedback": feedback},
                round=round_no,
            )
            prompt = fit_to_budget(prompt, loop.budget_tokens)
        except CannotFit as exc:
            raise BudgetExhausted(str(exc)) from exc
        log.emit(
            "render_prompt",
            round=round_no,
            token_estimate=prompt.token_estimate,
            messages=[m.to_json() for m in prompt.messages],
        )

        round_attempts: list[Attempt] = []
        stop = False
        for _ in range(loop.candidates_per_round):
            response = client.complete(prompt)
            log.emit(
                "llm_call",
                round=round_no,
                provenance=response.provenance,
                chars=len(response.text),
            )
            try:
                candidates = candidates_from_response(text, response, target=target_diag)
            except (NoCodeFound, UnplaceableSnippet) as exc:
                failure_reason = f"{type(exc).__name__}: {exc}"
                log.emit("candidates", round=round_no, count=0, error=failure_reason)
                stop = True
                break
            log.emit(
                "candidates", round=round_no, count=len(candidates),
                kinds=[c.kind for c in candidates],
            )
            if not candidates:
                failure_reason = "response was identical to the current file"
                stop = True
                break
            for cand in candidates:
                attempt = evaluate_candidate(text, cand, verifier, loop, log, round_no)
                attempts.append(attempt)
                round_attempts.append(attempt)
                if attempt.result is not None and attempt.result.verified:
                    out = _make_success(text, attempt.text, attempts, attempt.result, verifier, log)
                    out.llm_calls = client.calls
                    out.verifier_calls = verifier.calls
                    return out
        if stop:
            break
        if round_attempts:
            feedback = render_feedback(score_attempts(round_attempts))

    if attempts:
        best = score_attempts(attempts)
        log.emit("outcome", status="Partial", best_round=best.round)
        return Outcome(
            status="Partial",
            attempts=attempts,
            best_attempt=best,
            reason=failure_reason or "no attempt verified",
            llm_calls=client.calls,
            verifier_calls=verifier.calls,
        )
    log.emit("outcome", status="Failure", reason=failure_reason or "no candidates produced")
    return Outcome(
        status="Failure",
        attempts=[],
        reason=failure_reason or "no candidates produced",
        llm_calls=client.calls,
        verifier_calls=verifier.calls,
    )


def run_text_task(
    task: TaskKind,
    cfg: EngineConfig,
    source: SourceText | None = None,
    diagnostic: Diagnostic | None = None,
    nl_spec: str | None = None,
    log: RunLog | None = None,
) -> str:
    """Explain a diagnostic, or translate a natural-language requirement."""
    log = log if log is not None else RunLog()
    client = LlmClient(cfg.provider)
    if task is TaskKind.EXPLAIN:
        if source is None or diagnostic is None:
            raise ValueError("Explain needs a source file and a diagnostic")
        annotated = insert_error_marker(source, diagnostic.span, diagnostic.message)
        prompt = render_prompt(
            load_template(TaskKind.EXPLAIN),
            {
                "annotated_source": annotated,
                "diagnostics": render_diagnostics_block([diagnostic]),
            },
        )
        prompt = fit_to_budget(prompt, cfg.loop.budget_tokens)
        response = client.complete(prompt)
        log.emit("llm_call", round=1, provenance=response.provenance, chars=len(response.text))
        return response.text
    if task is TaskKind.NL2SPEC:
        if not nl_spec:
            raise ValueError("Nl2Spec needs the natural-language requirement")
        prompt = render_prompt(load_template(TaskKind.NL2SPEC), {"nl_spec": nl_spec})
        prompt = fit_to_budget(prompt, cfg.loop.budget_tokens)
        response = client.complete(prompt)
        log.emit("llm_call", round=1, provenance=response.provenance, chars=len(response.text))
        snippets = extract_code_blocks(response.text)
        if not snippets:
            raise NoCodeFound("model response contained no code")
        verifier = Verifier(cfg.verifier)
        last_diags: tuple = ()
        for snippet in snippets:
            candidate_text = SourceText("nl2spec.dfy", snippet if snippet.endswith("\n") else snippet + "\n")
            precheck, _ = syntax_precheck(verifier, candidate_text)
            if precheck.state == "passed":
                return snippet
            last_diags = precheck.diagnostics
        raise PrecheckFailed("no snippet passed the resolve pass", last_diags)
    raise ValueError(f"run_text_task handles Explain/Nl2Spec, not {task}")
