"""Task prompt construction from templates, annotated source, and exemplars.

Templates are plain text files with a small front-matter header; the five
built-in ones ship as package data. Token counts are the byte heuristic
ceil(bytes / 4), not a model tokenizer, so budgets are headroom, not an
exact bound.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import CannotFit, MissingContextField
from .source import MARKER_PREFIX, SourceText

DEFAULT_BUDGET_TOKENS = 128_000

PLACEHOLDERS = ("ANNOTATED_SOURCE", "DIAGNOSTICS", "EXEMPLARS", "FEEDBACK", "NL_SPEC")


class TaskKind(str, Enum):
    LEMMA_INFERENCE = "LemmaInference"
    PROOF_INFERENCE = "ProofInference"
    REPAIR = "Repair"
    EXPLAIN = "Explain"
    NL2SPEC = "Nl2Spec"


_TEMPLATE_FILES = {
    TaskKind.LEMMA_INFERENCE: "lemma_inference.txt",
    TaskKind.PROOF_INFERENCE: "proof_inference.txt",
    TaskKind.REPAIR: "repair.txt",
    TaskKind.EXPLAIN: "explain.txt",
    TaskKind.NL2SPEC: "nl2spec.txt",
}


@dataclass(frozen=True)
class Exemplar:
    title: str
    text: str
    priority: int  # lower priority is dropped first when over budget


@dataclass(frozen=True)
class PromptTemplate:
    task: TaskKind
    system_text: str
    user_skeleton: str
    exemplars: tuple[Exemplar, ...] = ()

    def __post_init__(self):
        for name in re.findall(r"\{([A-Z_]+)\}", self.user_skeleton):
            if name not in PLACEHOLDERS:
                raise ValueError(f"unknown placeholder {{{name}}} in template {self.task}")

    @property
    def placeholders(self) -> tuple[str, ...]:
        return tuple(p for p in PLACEHOLDERS if "{" + p + "}" in self.user_skeleton)


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def to_json(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class RenderedPrompt:
    messages: tuple[Message, ...]
    token_estimate: int
    task: TaskKind
    round: int = 1
    # rendering recipe, kept so fit_to_budget can re-render smaller variants
    template: PromptTemplate | None = None
    context: dict | None = None
    exemplars_kept: tuple[Exemplar, ...] = ()
    source_window: tuple[int, int] | None = None  # 1-based inclusive line range


def estimate_tokens(messages: tuple[Message, ...]) -> int:
    total = sum(len(m.content.encode("utf-8")) for m in messages)
    return math.ceil(total / 4)


def _parse_template(text: str, base_dir: Path | None, task_hint: TaskKind | None = None) -> PromptTemplate:
    head, sep, rest = text.partition("--- system ---")
    if not sep:
        raise ValueError("template missing '--- system ---' section")
    system_text, sep, user_skeleton = rest.partition("--- user ---")
    if not sep:
        raise ValueError("template missing '--- user ---' section")

    task = task_hint
    exemplars: list[Exemplar] = []
    for line in head.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition(":")
        key = key.strip()
        value = value.strip()
        if key == "task":
            task = TaskKind(value)
        elif key == "exemplar":
            title, path, priority = value.split()
            if base_dir is None:
                raise ValueError("template references exemplar files but has no base dir")
            body = (base_dir / path).read_text("utf-8")
            exemplars.append(Exemplar(title=title, text=body, priority=int(priority)))
        # the "placeholders:" line is documentation; the skeleton is authoritative
    if task is None:
        raise ValueError("template missing task header")
    return PromptTemplate(
        task=task,
        system_text=system_text.strip("\n"),
        user_skeleton=user_skeleton.strip("\n"),
        exemplars=tuple(exemplars),
    )


def load_template(task: TaskKind) -> PromptTemplate:
    root = resources.files("dafny_pilot").joinpath("templates")
    text = root.joinpath(_TEMPLATE_FILES[task]).read_text("utf-8")
    # resources may be zipped in exotic installs; templates ship as real files here
    return _parse_template(text, Path(str(root)), task)


def load_template_file(path: str | Path) -> PromptTemplate:
    p = Path(path)
    return _parse_template(p.read_text("utf-8"), p.parent)


def _expand_exemplars(exemplars: tuple[Exemplar, ...]) -> str:
    if not exemplars:
        return ""
    parts = [f"Example ({e.title}):\n```dafny\n{e.text}\n```\n" for e in exemplars]
    return "\n".join(parts) + "\n"


def _substitute(skeleton: str, values: dict[str, str]) -> str:
    out = skeleton
    for name, value in values.items():
        out = out.replace("{" + name + "}", value)
    return out


def render_prompt(
    template: PromptTemplate,
    ctx: dict,
    round: int = 1,
) -> RenderedPrompt:
    """Substitute context into the template's user skeleton.

    ctx keys: annotated_source (str or SourceText), diagnostics (str),
    feedback (str, optional; empty on round 1), nl_spec (str).
    """
    values: dict[str, str] = {}
    needed = template.placeholders
    ctx_map = {
        "ANNOTATED_SOURCE": "annotated_source",
        "DIAGNOSTICS": "diagnostics",
        "NL_SPEC": "nl_spec",
    }
    for name in needed:
        if name == "EXEMPLARS":
            values[name] = _expand_exemplars(template.exemplars)
        elif name == "FEEDBACK":
            values[name] = ctx.get("feedback") or ""
        else:
            key = ctx_map[name]
            if ctx.get(key) is None:
                raise MissingContextField(f"template {template.task.value} needs ctx[{key!r}]")
            value = ctx[key]
            values[name] = value.content if isinstance(value, SourceText) else str(value)

    user = _substitute(template.user_skeleton, values)
    messages = (
        Message("system", template.system_text),
        Message("user", user),
    )
    return RenderedPrompt(
        messages=messages,
        token_estimate=estimate_tokens(messages),
        task=template.task,
        round=round,
        template=template,
        context=dict(ctx),
        exemplars_kept=template.exemplars,
    )


def _window_source(source: str, center_line: int, window: int) -> tuple[str, tuple[int, int]]:
    lines = source.split("\n")
    n = len(lines)
    center = max(1, min(center_line, n))
    half = max(window // 2, 1)
    lo = max(1, center - half)
    hi = min(n, lo + window - 1)
    lo = max(1, hi - window + 1)
    return "\n".join(lines[lo - 1:hi]), (lo, hi)


def _marked_line(source: str) -> int:
    """Line of the first verifier-error marker, else line 1."""
    for i, line in enumerate(source.split("\n"), start=1):
        if MARKER_PREFIX.strip() in line:
            return i
    return 1


def _re_render(p: RenderedPrompt, exemplars: tuple[Exemplar, ...], window: tuple[int, int] | None) -> RenderedPrompt:
    assert p.template is not None and p.context is not None
    tmpl = replace(p.template, exemplars=exemplars)
    ctx = dict(p.context)
    if window is not None:
        src = ctx.get("annotated_source")
        content = src.content if isinstance(src, SourceText) else str(src)
        lo, hi = window
        ctx["annotated_source"] = "\n".join(content.split("\n")[lo - 1:hi])
    rendered = render_prompt(tmpl, ctx, round=p.round)
    return replace(rendered, template=p.template, exemplars_kept=exemplars, source_window=window)


def fit_to_budget(p: RenderedPrompt, budget_tokens: int = DEFAULT_BUDGET_TOKENS) -> RenderedPrompt:
    """Drop exemplars (lowest priority first), then window the source.

    Surviving exemplars keep their original order; the system message and the
    marked diagnostic line are never touched.
    """
    if budget_tokens <= 0:
        raise ValueError("budget_tokens must be positive")
    if p.token_estimate <= budget_tokens:
        return p
    if p.template is None or p.context is None:
        raise CannotFit("prompt exceeds budget and carries no re-render recipe")

    kept = list(p.exemplars_kept or p.template.exemplars)
    current = p
    while current.token_estimate > budget_tokens and kept:
        drop = min(kept, key=lambda e: e.priority)
        kept.remove(drop)
        current = _re_render(p, tuple(kept), None)
    if current.token_estimate <= budget_tokens:
        return current

    src = p.context.get("annotated_source")
    content = src.content if isinstance(src, SourceText) else str(src or "")
    total_lines = content.count("\n") + 1
    center = _marked_line(content)
    window = total_lines
    while window >= 2:
        window //= 2
        if window < 2:
            break
        _, rng = _window_source(content, center, window)
        current = _re_render(p, tuple(kept), rng)
        if current.token_estimate <= budget_tokens:
            return current
    raise CannotFit(
        f"even the minimal prompt ({current.token_estimate} tokens) exceeds budget {budget_tokens}"
    )


def render_diagnostics_block(diags) -> str:
    """Plain-text diagnostic list for {DIAGNOSTICS} in Explain prompts."""
    lines = []
    for d in diags:
        lines.append(f"({d.span.start_line},{d.span.start_col}): {d.severity}: {d.message}")
        for span, msg in d.related:
            lines.append(f"  related ({span.start_line},{span.start_col}): {msg}")
    return "\n".join(lines)
