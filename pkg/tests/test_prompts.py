from __future__ import annotations

import math

import pytest

from dafny_pilot.errors import CannotFit, MissingContextField
from dafny_pilot.prompts import (
    Exemplar,
    PromptTemplate,
    TaskKind,
    estimate_tokens,
    fit_to_budget,
    load_template,
    render_prompt,
)
from dafny_pilot.source import SourceText, insert_error_marker, Span

FIG_1B_SYSTEM = (
    "You are a software expert specializing in formal methods using the Dafny "
    "programming language. You receive the following program where a loop "
    "invariant could not be proven. The verifier error message is inside "
    "// VERIFIER ERROR ... //. Your task is to create lemmas and insert them "
    "into the code to facilitate verification."
)


class TestTemplates:
    def test_every_task_has_exactly_one_template(self):
        seen = set()
        for task in TaskKind:
            template = load_template(task)
            assert template.task is task
            assert template.task not in seen
            seen.add(template.task)

    def test_lemma_inference_system_text_is_frozen(self):
        template = load_template(TaskKind.LEMMA_INFERENCE)
        assert template.system_text == FIG_1B_SYSTEM

    def test_unknown_placeholder_rejected(self):
        with pytest.raises(ValueError):
            PromptTemplate(
                task=TaskKind.REPAIR, system_text="s", user_skeleton="{BOGUS}"
            )

    def test_proof_template_carries_calc_exemplar(self):
        template = load_template(TaskKind.PROOF_INFERENCE)
        assert len(template.exemplars) == 1
        assert "calc" in template.exemplars[0].text


class TestRender:
    def test_lemma_prompt_over_annotated_source(self, coincidence):
        _, text = coincidence
        annotated = insert_error_marker(text, Span.point(10, 5), "boom")
        prompt = render_prompt(
            load_template(TaskKind.LEMMA_INFERENCE),
            {"annotated_source": annotated},
        )
        assert prompt.messages[0].role == "system"
        assert prompt.messages[0].content == FIG_1B_SYSTEM
        assert annotated.content in prompt.messages[1].content
        assert prompt.token_estimate > 0

    def test_zero_exemplars_means_two_messages(self):
        template = PromptTemplate(
            task=TaskKind.REPAIR,
            system_text="sys",
            user_skeleton="{EXEMPLARS}{ANNOTATED_SOURCE}",
        )
        prompt = render_prompt(template, {"annotated_source": "method M() {}"})
        assert len(prompt.messages) == 2
        assert prompt.messages[1].content == "method M() {}"

    def test_proof_prompt_contains_exemplar_and_lemma(self, factor0):
        _, text = factor0
        prompt = render_prompt(
            load_template(TaskKind.PROOF_INFERENCE),
            {"annotated_source": text},
        )
        user = prompt.messages[1].content
        assert "SumFormula" in user  # from the shipped calc exemplar
        assert "lemma Factor0" in user

    def test_missing_context_field(self):
        with pytest.raises(MissingContextField):
            render_prompt(load_template(TaskKind.LEMMA_INFERENCE), {})

    def test_rendering_is_deterministic(self, coincidence):
        _, text = coincidence
        template = load_template(TaskKind.LEMMA_INFERENCE)
        a = render_prompt(template, {"annotated_source": text, "feedback": "fb"})
        b = render_prompt(template, {"annotated_source": text, "feedback": "fb"})
        assert a.messages == b.messages

    def test_feedback_defaults_to_empty(self):
        template = load_template(TaskKind.REPAIR)
        prompt = render_prompt(template, {"annotated_source": "method M() {}"})
        assert "{FEEDBACK}" not in prompt.messages[1].content


def _template_with_exemplars() -> PromptTemplate:
    return PromptTemplate(
        task=TaskKind.REPAIR,
        system_text="system text stays put",
        user_skeleton="{EXEMPLARS}code:\n{ANNOTATED_SOURCE}",
        exemplars=(
            Exemplar("first", "AAAA " * 200, priority=30),
            Exemplar("second", "BBBB " * 200, priority=10),
            Exemplar("third", "CCCC " * 200, priority=20),
        ),
    )


class TestBudget:
    def test_under_budget_unchanged(self, coincidence):
        _, text = coincidence
        prompt = render_prompt(
            load_template(TaskKind.LEMMA_INFERENCE), {"annotated_source": text}
        )
        assert prompt.token_estimate < 128_000
        assert fit_to_budget(prompt, 128_000) is prompt

    def test_exemplars_dropped_lowest_priority_first(self):
        template = _template_with_exemplars()
        source = "method M() {\n// VERIFIER_ERROR x //\n}"
        prompt = render_prompt(template, {"annotated_source": source})
        budget = prompt.token_estimate - 100  # force dropping some exemplars
        fitted = fit_to_budget(prompt, budget)
        # the independent estimate rule is ceil(total bytes / 4)
        total = sum(len(m.content.encode()) for m in fitted.messages)
        assert fitted.token_estimate == math.ceil(total / 4)
        assert fitted.token_estimate <= budget
        kept = [e.title for e in fitted.exemplars_kept]
        assert kept == ["first", "third"]  # "second" had the lowest priority
        user = fitted.messages[1].content
        assert user.index("AAAA") < user.index("CCCC")  # original order preserved
        assert fitted.messages[0].content == "system text stays put"

    def test_source_window_keeps_marked_line(self):
        filler_top = "\n".join(f"// filler {i}" for i in range(200))
        filler_bottom = "\n".join(f"// more {i}" for i in range(200))
        source = filler_top + "\n// VERIFIER_ERROR the failing line //\n" + filler_bottom
        template = PromptTemplate(
            task=TaskKind.REPAIR, system_text="s", user_skeleton="{ANNOTATED_SOURCE}"
        )
        prompt = render_prompt(template, {"annotated_source": source})
        fitted = fit_to_budget(prompt, prompt.token_estimate // 4)
        assert fitted.token_estimate <= prompt.token_estimate // 4
        assert "// VERIFIER_ERROR the failing line //" in fitted.messages[1].content

    def test_budget_one_cannot_fit(self, coincidence):
        _, text = coincidence
        prompt = render_prompt(
            load_template(TaskKind.LEMMA_INFERENCE), {"annotated_source": text}
        )
        with pytest.raises(CannotFit):
            fit_to_budget(prompt, 1)

    def test_estimate_is_byte_heuristic(self):
        template = PromptTemplate(
            task=TaskKind.REPAIR, system_text="abcd", user_skeleton="{ANNOTATED_SOURCE}"
        )
        prompt = render_prompt(template, {"annotated_source": "xyz"})
        assert prompt.token_estimate == math.ceil((4 + 3) / 4)
        assert estimate_tokens(prompt.messages) == prompt.token_estimate
