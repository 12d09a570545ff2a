from __future__ import annotations

import json
import os
import stat
import sys
import textwrap
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parent.parent
CORPUS = REPO / "corpus"
PARSING_DIR = Path(__file__).parent / "data" / "parsing"

from dafny_pilot.llm import ProviderConfig
from dafny_pilot.loop import EngineConfig, LoopConfig
from dafny_pilot.source import SourceText
from dafny_pilot.verifier import VerifierConfig


@pytest.fixture(scope="session")
def corpus_manifest() -> Path:
    path = CORPUS / "manifest.json"
    assert path.exists(), "run scripts/build_corpus.py first"
    return path


@pytest.fixture(scope="session")
def corpus_cases(corpus_manifest):
    from dafny_pilot.bench import load_manifest

    return {c.id: c for c in load_manifest(corpus_manifest)}


def case_config(case, **loop_overrides) -> EngineConfig:
    import dataclasses

    from dafny_pilot.bench import _case_engine_config

    cfg = _case_engine_config(case, EngineConfig())
    if loop_overrides:
        cfg = dataclasses.replace(cfg, loop=dataclasses.replace(cfg.loop, **loop_overrides))
    return cfg


@pytest.fixture
def coincidence(corpus_cases):
    case = corpus_cases["coincidence-lemmas"]
    return case, SourceText.from_file(str(case.source))


@pytest.fixture
def factor0(corpus_cases):
    case = corpus_cases["factor0-proof"]
    return case, SourceText.from_file(str(case.source))


@pytest.fixture(scope="session")
def parsing_fixtures() -> list[dict]:
    out = []
    for path in sorted(PARSING_DIR.glob("*.json")):
        out.append(json.loads(path.read_text("utf-8")))
    return out


SAMPLE = textwrap.dedent(
    """\
    method Sum(a: int, b: int) returns (s: int)
      ensures s == a + b
    {
      s := a + b;
    }

    lemma Obvious(x: int)
      ensures x == x
    {
    }
    """
)


@pytest.fixture
def sample_text() -> SourceText:
    return SourceText("Sample.dfy", SAMPLE)


STUB_DAFNY = """\
#!/usr/bin/env python3
# Stand-in Dafny binary: replays recorded raw output keyed by input hash.
import hashlib, json, pathlib, sys

FIXTURES = pathlib.Path({fixture_dir!r})

args = sys.argv[1:]
if args and args[0] == "--version":
    print("4.3.0.0")
    sys.exit(0)
verb = args[0]
path = pathlib.Path(args[-1])
content = path.read_text()
h = hashlib.sha256(content.encode("utf-8")).hexdigest()
mode = "resolve" if verb == "resolve" else "verify"
fx = FIXTURES / (h + "." + mode + ".json")
if not fx.exists():
    sys.stderr.write("stub dafny: no fixture for " + h + "\\n")
    sys.exit(3)
data = json.loads(fx.read_text())
sys.stdout.write(data["raw_output"])
sys.exit(0 if data["status"] == "Verified" else 1)
"""


def make_stub_dafny(tmp_path: Path, fixture_dir: Path) -> Path:
    stub = tmp_path / "dafny-stub"
    stub.write_text(STUB_DAFNY.format(fixture_dir=str(fixture_dir)))
    stub.chmod(stub.stat().st_mode | stat.S_IEXEC)
    return stub


def replay_provider(cassette_dir) -> ProviderConfig:
    return ProviderConfig(mode="replay", cassette_dir=str(cassette_dir))


def replay_verifier(fixture_dir) -> VerifierConfig:
    return VerifierConfig(mode="replay", fixture_dir=str(fixture_dir))
