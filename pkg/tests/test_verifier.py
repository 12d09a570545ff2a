from __future__ import annotations

import dataclasses
import glob
import json
import os
import stat
import tempfile
import time
from pathlib import Path

import pytest

from conftest import make_stub_dafny
from dafny_pilot.errors import ReplayMiss, VerifierNotFound
from dafny_pilot.source import SourceText
from dafny_pilot.verifier import (
    Category,
    Status,
    Verifier,
    VerifierConfig,
    classify_diagnostic,
    parse_diagnostics,
    write_fixture,
)


class TestParseDiagnostics:
    def test_recorded_fixtures_reproduce_expected(self, parsing_fixtures):
        assert len(parsing_fixtures) >= 5
        for fx in parsing_fixtures:
            diags, status = parse_diagnostics(fx["raw_output"])
            assert status.value == fx["expected_status"], fx["name"]
            assert len(diags) == len(fx["expected"]), fx["name"]
            for got, want in zip(diags, fx["expected"]):
                assert got.severity == want["severity"]
                assert got.span.start_line == want["line"], fx["name"]
                assert got.span.start_col == want["col"], fx["name"]
                assert got.message == want["message"]
                assert got.category.value == want["category"], fx["name"]
                assert len(got.related) == len(want["related"])
                for (rspan, rmsg), rwant in zip(got.related, want["related"]):
                    assert (rspan.start_line, rspan.start_col) == (rwant["line"], rwant["col"])
                    assert rmsg == rwant["message"]

    def test_garbage_is_unparsable(self):
        diags, status = parse_diagnostics("}}} segfault ><> no summary here")
        assert status is Status.CRASHED_OR_UNPARSABLE
        assert diags == []

    def test_warning_only_output_verifies(self):
        raw = (
            "W.dfy(1,1): Warning: trigger heuristics may be slow\n\n"
            "Dafny program verifier finished with 1 verified, 0 errors\n"
        )
        diags, status = parse_diagnostics(raw)
        assert status is Status.VERIFIED
        assert [d.severity for d in diags] == ["warning"]

    def test_resolve_only_success_form(self):
        diags, status = parse_diagnostics("\nDafny program verifier did not attempt verification\n")
        assert status is Status.VERIFIED
        assert diags == []


class TestClassify:
    def test_paper_invariant_message(self):
        msg = (
            "loop invariant violation. This invariant could not be proved to be "
            "maintained by the loop"
        )
        assert classify_diagnostic(msg) is Category.INVARIANT_NOT_MAINTAINED

    def test_postcondition_message(self):
        # message recorded in the postcondition parsing fixture
        msg = "a postcondition could not be proved on this return path"
        assert classify_diagnostic(msg) is Category.POSTCONDITION

    def test_unmatched_is_other(self):
        assert classify_diagnostic("xyzzy") is Category.OTHER

    def test_longest_match_wins(self):
        # mentions both an assertion and the calc-step rule; the longer rule decides
        msg = "the calculation step between the previous line and this line might not hold"
        assert classify_diagnostic(msg) is Category.ASSERTION

    def test_total_on_empty(self):
        assert classify_diagnostic("") is Category.OTHER


class TestReplay:
    def test_replay_is_deterministic(self, corpus_cases):
        case = corpus_cases["repair-assert"]
        cfg = VerifierConfig(mode="replay", fixture_dir=str(case.fixture_dir))
        text = SourceText.from_file(str(case.source))
        r1 = Verifier(cfg).verify(text)
        r2 = Verifier(cfg).verify(text)
        assert r1.status is Status.FAILED
        assert r1.raw_output == r2.raw_output
        assert r1.diagnostics == r2.diagnostics
        assert r1.verifier_version == r2.verifier_version

    def test_replay_parse_matches_recorded_diagnostics(self, corpus_cases):
        # the recorded structured diagnostics double as the parser's oracle
        case = corpus_cases["repair-assert"]
        for fx_path in Path(case.fixture_dir).glob("*.verify.json"):
            data = json.loads(fx_path.read_text("utf-8"))
            diags, status = parse_diagnostics(data["raw_output"])
            assert status.value == data["status"]
            assert [d.to_json() for d in diags] == data["diagnostics"]

    def test_replay_miss(self, tmp_path):
        cfg = VerifierConfig(mode="replay", fixture_dir=str(tmp_path))
        with pytest.raises(ReplayMiss):
            Verifier(cfg).verify(SourceText("x.dfy", "method M() {}\n"))

    def test_assert_fixture_categories(self, corpus_cases):
        case = corpus_cases["repair-assert"]
        cfg = VerifierConfig(mode="replay", fixture_dir=str(case.fixture_dir))
        result = Verifier(cfg).verify(SourceText.from_file(str(case.source)))
        assert len(result.errors) == 1
        diag = result.errors[0]
        assert diag.category is Category.ASSERTION
        assert "assert" in diag.message
        assert diag.span.start_line == 2


class TestSubprocess:
    def test_stub_binary_round_trip(self, tmp_path, corpus_cases):
        case = corpus_cases["repair-assert"]
        stub = make_stub_dafny(tmp_path, Path(case.fixture_dir).resolve())
        cfg = VerifierConfig(executable=str(stub), mode="subprocess")
        text = SourceText.from_file(str(case.source))
        result = Verifier(cfg).verify(text)
        assert result.status is Status.FAILED
        assert len(result.errors) == 1
        assert result.errors[0].category is Category.ASSERTION
        assert result.verifier_version == "4.3.0.0"
        assert result.duration_s > 0

    def test_resolve_only_uses_resolve_fixture(self, tmp_path, corpus_cases):
        case = corpus_cases["repair-assert"]
        stub = make_stub_dafny(tmp_path, Path(case.fixture_dir).resolve())
        cfg = VerifierConfig(executable=str(stub), mode="subprocess")
        # the repair candidate text has both verify and resolve recordings
        fixed = SourceText("M.dfy", "method M() {\n  assert 1 + 1 == 2;\n}\n")
        result = Verifier(cfg).verify(fixed, resolve_only=True)
        assert result.status is Status.VERIFIED

    def test_timeout_surfaces_as_status(self, tmp_path):
        sleeper = tmp_path / "sleepy"
        sleeper.write_text("#!/usr/bin/env python3\nimport time\ntime.sleep(10)\n")
        sleeper.chmod(sleeper.stat().st_mode | stat.S_IEXEC)
        cfg = VerifierConfig(executable=str(sleeper), timeout_s=0.3)
        started = time.monotonic()
        result = Verifier(cfg).verify(SourceText("x.dfy", "method M() {}\n"))
        assert result.status is Status.TIMEOUT
        assert time.monotonic() - started < 5

    def test_temp_files_cleaned_up(self, tmp_path, corpus_cases):
        case = corpus_cases["repair-assert"]
        stub = make_stub_dafny(tmp_path, Path(case.fixture_dir).resolve())
        pattern = os.path.join(tempfile.gettempdir(), "dafny-pilot-*")
        before = set(glob.glob(pattern))
        cfg = VerifierConfig(executable=str(stub), mode="subprocess")
        Verifier(cfg).verify(SourceText.from_file(str(case.source)))
        assert set(glob.glob(pattern)) == before

    def test_missing_executable(self):
        cfg = VerifierConfig(executable="/no/such/dafny-binary")
        with pytest.raises(VerifierNotFound):
            Verifier(cfg).verify(SourceText("x.dfy", "method M() {}\n"))

    def test_record_dir_writes_fixture(self, tmp_path, corpus_cases):
        case = corpus_cases["repair-assert"]
        stub = make_stub_dafny(tmp_path, Path(case.fixture_dir).resolve())
        record = tmp_path / "recorded"
        cfg = VerifierConfig(executable=str(stub), record_dir=str(record))
        text = SourceText.from_file(str(case.source))
        live = Verifier(cfg).verify(text)
        replayed = Verifier(
            VerifierConfig(mode="replay", fixture_dir=str(record))
        ).verify(text)
        assert replayed.raw_output == live.raw_output
        assert replayed.diagnostics == live.diagnostics


class TestConfig:
    def test_bad_timeout_rejected(self):
        with pytest.raises(ValueError):
            VerifierConfig(timeout_s=0)

    def test_replay_needs_fixture_dir(self):
        with pytest.raises(ValueError):
            VerifierConfig(mode="replay")

    def test_write_fixture_round_trip(self, tmp_path):
        raw = "X.dfy(1,1): Error: assertion might not hold\n\nDafny program verifier finished with 0 verified, 1 error\n"
        text = SourceText("X.dfy", "method M() { assert false; }\n")
        write_fixture(tmp_path, text.content_hash, raw)
        result = Verifier(VerifierConfig(mode="replay", fixture_dir=str(tmp_path))).verify(text)
        assert result.status is Status.FAILED
        assert result.errors[0].category is Category.ASSERTION
