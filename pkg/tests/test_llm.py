from __future__ import annotations

import json

import pytest

from dafny_pilot.errors import AuthMissing, NetworkError, ProviderError, ReplayMiss
from dafny_pilot.llm import (
    CassetteStore,
    LlmClient,
    ProviderConfig,
    cassette_key,
    extract_code_blocks,
)
from dafny_pilot.prompts import Message, RenderedPrompt, TaskKind
from dafny_pilot.source import SourceText
from dafny_pilot.suggest import syntax_precheck
from dafny_pilot.verifier import Verifier, VerifierConfig, write_fixture

RESOLVE_OK = "\nDafny program verifier did not attempt verification\n"


def prompt_of(*contents: str) -> RenderedPrompt:
    messages = [Message("system", contents[0])]
    messages += [Message("user", c) for c in contents[1:]]
    return RenderedPrompt(
        messages=tuple(messages), token_estimate=1, task=TaskKind.REPAIR
    )


def ok_transport(text: str):
    def transport(url, payload, headers):
        return 200, {
            "id": "req-1",
            "choices": [{"message": {"content": text}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 5},
        }

    return transport


def refusing_transport(*_args, **_kwargs):
    raise AssertionError("network was touched in replay mode")


class TestCassettes:
    def test_record_then_replay_is_byte_identical(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TEST_LLM_KEY", "secret-value")
        record_cfg = ProviderConfig(
            mode="record", cassette_dir=str(tmp_path), api_key_env="TEST_LLM_KEY"
        )
        prompt = prompt_of("sys", "user says hi")
        recorded = LlmClient(record_cfg, transport=ok_transport("lemma Out() ensures true")).complete(prompt)

        replay_cfg = ProviderConfig(mode="replay", cassette_dir=str(tmp_path))
        replayed = LlmClient(replay_cfg, transport=refusing_transport).complete(prompt)
        assert replayed.text == recorded.text
        assert replayed.finish_reason == "stop"

    def test_replay_makes_no_network_calls(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TEST_LLM_KEY", "k")
        prompt = prompt_of("s", "u")
        LlmClient(
            ProviderConfig(mode="record", cassette_dir=str(tmp_path), api_key_env="TEST_LLM_KEY"),
            transport=ok_transport("out"),
        ).complete(prompt)
        client = LlmClient(
            ProviderConfig(mode="replay", cassette_dir=str(tmp_path)),
            transport=refusing_transport,
        )
        assert client.complete(prompt).text == "out"

    def test_replay_miss(self, tmp_path):
        client = LlmClient(ProviderConfig(mode="replay", cassette_dir=str(tmp_path)))
        with pytest.raises(ReplayMiss):
            client.complete(prompt_of("s", "never recorded"))

    def test_cursor_steps_through_responses(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TEST_LLM_KEY", "k")
        prompt = prompt_of("s", "same prompt")
        record = LlmClient(
            ProviderConfig(mode="record", cassette_dir=str(tmp_path), api_key_env="TEST_LLM_KEY"),
            transport=ok_transport("first"),
        )
        record.complete(prompt)
        record._transport = ok_transport("second")
        record.complete(prompt)

        replay = LlmClient(ProviderConfig(mode="replay", cassette_dir=str(tmp_path)))
        assert replay.complete(prompt).text == "first"
        assert replay.complete(prompt).text == "second"
        with pytest.raises(ReplayMiss):
            replay.complete(prompt)

    def test_key_recomputable_from_snapshot(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TEST_LLM_KEY", "k")
        prompt = prompt_of("sys", "body")
        cfg = ProviderConfig(mode="record", cassette_dir=str(tmp_path), api_key_env="TEST_LLM_KEY")
        LlmClient(cfg, transport=ok_transport("x")).complete(prompt)
        (path,) = tmp_path.glob("*.json")
        data = json.loads(path.read_text())
        snapshot = tuple(Message(m["role"], m["content"]) for m in data["request_snapshot"])
        assert cassette_key(data["model_id"], data["temperature"], snapshot) == data["key"]
        assert path.stem == data["key"]

    def test_key_invariant_under_reserialization(self):
        messages = (Message("system", "a"), Message("user", "b"))
        again = tuple(Message(m.role, str(m.content)) for m in messages)
        assert cassette_key("m", 0.0, messages) == cassette_key("m", 0.0, again)
        assert cassette_key("m", 0.0, messages) != cassette_key("m2", 0.0, messages)
        assert cassette_key("m", 0.0, messages) != cassette_key("m", 0.5, messages)

    def test_secret_never_written_to_cassette(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TEST_LLM_KEY", "hunter2-super-secret")
        cfg = ProviderConfig(mode="record", cassette_dir=str(tmp_path), api_key_env="TEST_LLM_KEY")
        LlmClient(cfg, transport=ok_transport("x")).complete(prompt_of("s", "u"))
        (path,) = tmp_path.glob("*.json")
        assert "hunter2-super-secret" not in path.read_text()


class TestLive:
    def test_auth_missing(self, tmp_path, monkeypatch):
        monkeypatch.delenv("NO_SUCH_KEY", raising=False)
        cfg = ProviderConfig(mode="live", api_key_env="NO_SUCH_KEY")
        with pytest.raises(AuthMissing):
            LlmClient(cfg, transport=ok_transport("x")).complete(prompt_of("s", "u"))

    def test_transient_failures_are_retried(self, monkeypatch):
        monkeypatch.setenv("TEST_LLM_KEY", "k")
        attempts = []

        def flaky(url, payload, headers):
            attempts.append(1)
            if len(attempts) < 3:
                raise ConnectionError("boom")
            return ok_transport("recovered")(url, payload, headers)

        cfg = ProviderConfig(mode="live", api_key_env="TEST_LLM_KEY", backoff_s=0.0)
        out = LlmClient(cfg, transport=flaky).complete(prompt_of("s", "u"))
        assert out.text == "recovered"
        assert len(attempts) == 3

    def test_network_error_after_retries(self, monkeypatch):
        monkeypatch.setenv("TEST_LLM_KEY", "k")

        def dead(url, payload, headers):
            raise ConnectionError("down")

        cfg = ProviderConfig(mode="live", api_key_env="TEST_LLM_KEY", backoff_s=0.0)
        with pytest.raises(NetworkError):
            LlmClient(cfg, transport=dead).complete(prompt_of("s", "u"))

    def test_client_error_not_retried(self, monkeypatch):
        monkeypatch.setenv("TEST_LLM_KEY", "k")
        calls = []

        def forbidden(url, payload, headers):
            calls.append(1)
            return 403, {"error": "nope"}

        cfg = ProviderConfig(mode="live", api_key_env="TEST_LLM_KEY", backoff_s=0.0)
        with pytest.raises(ProviderError):
            LlmClient(cfg, transport=forbidden).complete(prompt_of("s", "u"))
        assert len(calls) == 1

    def test_bearer_header_and_payload_shape(self, monkeypatch):
        monkeypatch.setenv("TEST_LLM_KEY", "tok123")
        seen = {}

        def capture(url, payload, headers):
            seen.update(url=url, payload=payload, headers=headers)
            return ok_transport("ok")(url, payload, headers)

        cfg = ProviderConfig(
            mode="live", api_key_env="TEST_LLM_KEY", model_id="gpt-4-1106-preview"
        )
        LlmClient(cfg, transport=capture).complete(prompt_of("sys", "usr"))
        assert seen["headers"]["Authorization"] == "Bearer tok123"
        assert seen["payload"]["model"] == "gpt-4-1106-preview"
        assert seen["payload"]["temperature"] == 0.0
        assert seen["payload"]["messages"][0] == {"role": "system", "content": "sys"}


class TestExtractCodeBlocks:
    def test_fenced_blocks_in_order(self):
        text = "intro\n```dafny\nblock A\n```\nmiddle\n```\nblock B\n```\nend\n"
        assert extract_code_blocks(text) == ["block A", "block B"]

    def test_unfenced_lemma_resolves(self, tmp_path):
        prose = (
            "You could state monotonicity explicitly.\n"
            "\n"
            "lemma Mono(x: int, y: int)\n"
            "  requires x <= y\n"
            "  ensures x - 1 <= y\n"
            "\n"
            "That fact is enough for the verifier.\n"
        )
        (snippet,) = extract_code_blocks(prose)
        assert snippet == "lemma Mono(x: int, y: int)\n  requires x <= y\n  ensures x - 1 <= y"
        # oracle: the snippet passes a resolve-only pass (replayed recording)
        text = SourceText("snippet.dfy", snippet + "\n")
        write_fixture(tmp_path, text.content_hash, RESOLVE_OK, resolve_only=True)
        verifier = Verifier(VerifierConfig(mode="replay", fixture_dir=str(tmp_path)))
        precheck, _ = syntax_precheck(verifier, text)
        assert precheck.state == "passed"

    def test_no_code_at_all(self):
        assert extract_code_blocks("no code here at all") == []

    def test_snippets_are_contiguous_substrings(self):
        text = "a\n```dafny\nlemma L()\n  ensures true\n```\nb\n"
        for snippet in extract_code_blocks(text):
            assert snippet in text

    def test_empty_response(self):
        assert extract_code_blocks("") == []
