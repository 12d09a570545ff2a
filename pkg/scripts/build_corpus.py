#!/usr/bin/env python3
"""Build the shipped mini-corpus: sources, verifier replay fixtures, LLM
cassettes, and the manifest.

The verifier fixtures are authored through a rule oracle that emits
Dafny 4.3.0-style text output for every program state the loop reaches;
cassettes are recorded by running the real loop with scripted model
responses. Re-run this script whenever templates or sources change.
"""

from __future__ import annotations

import json
import os
import shutil
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from dafny_pilot.llm import LlmClient, ProviderConfig
from dafny_pilot.loop import EngineConfig, LoopConfig, RunLog, run_task
from dafny_pilot.prompts import TaskKind
from dafny_pilot.source import SourceText, scan_declarations
from dafny_pilot.verifier import (
    VerificationResult,
    Verifier,
    VerifierConfig,
    parse_diagnostics,
    write_fixture,
)

DAFNY_VERSION = "4.3.0.0"
RECORD_KEY_ENV = "DAFNY_PILOT_RECORDING_KEY"
CORPUS = REPO / "corpus"

NO_BODY_MSG = "this lemma has no body and is not marked with {:axiom}"
INVARIANT_MSG = (
    "loop invariant violation. This invariant could not be proved to be "
    "maintained by the loop"
)
ENTRY_MSG = "this loop invariant could not be proved on entry"
CALC_STEP_MSG = (
    "the calculation step between the previous line and this line could not be proved"
)
ASSERT_MSG = "assertion might not hold"
POST_MSG = "a postcondition could not be proved on this return path"
POST_RELATED = "this is the postcondition that could not be proved"
RESOLVE_OK = "\nDafny program verifier did not attempt verification\n"


def err(path: str, line: int, col: int, msg: str) -> str:
    return f"{path}({line},{col}): Error: {msg}"


def related(path: str, line: int, col: int, msg: str) -> str:
    return f"{path}({line},{col}): Related location: {msg}"


def summary(verified: int, errors: int) -> str:
    word = "error" if errors == 1 else "errors"
    return f"\nDafny program verifier finished with {verified} verified, {errors} {word}\n"


def find_line(content: str, needle: str, nth: int = 1) -> int:
    count = 0
    for i, line in enumerate(content.split("\n"), start=1):
        if needle in line:
            count += 1
            if count == nth:
                return i
    raise AssertionError(f"needle not found: {needle!r}")


def col_of(content: str, line: int, needle: str) -> int:
    text = content.split("\n")[line - 1]
    return text.index(needle) + 1


class OracleVerifier(Verifier):
    """Synthesizes Dafny-style output from a rule oracle and records fixtures."""

    def __init__(self, oracle, fixture_dir: Path):
        super().__init__(VerifierConfig(mode="replay", fixture_dir=str(fixture_dir)))
        self.oracle = oracle
        self.fixture_dir = fixture_dir

    def verify(self, text: SourceText, resolve_only: bool = False) -> VerificationResult:
        if resolve_only:
            self.precheck_calls += 1
        else:
            self.calls += 1
        raw = self.oracle(text.content, resolve_only)
        write_fixture(self.fixture_dir, text.content_hash, raw, resolve_only, DAFNY_VERSION)
        diags, status = parse_diagnostics(raw)
        return VerificationResult(
            status=status,
            diagnostics=tuple(diags),
            duration_s=0.0,
            raw_output=raw,
            verifier_version=DAFNY_VERSION,
            verified_hash=text.content_hash,
        )


def scripted_transport(responses: list[str]):
    queue = list(responses)

    def transport(url, payload, headers):
        if not queue:
            raise AssertionError("scripted transport exhausted")
        return 200, {
            "id": "scripted",
            "choices": [{"message": {"content": queue.pop(0)}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 0, "completion_tokens": 0},
        }

    return transport


# ---------------------------------------------------------------------------
# CoincidenceCount (lemma inference, single-round and feedback variants)
# ---------------------------------------------------------------------------

COINCIDENCE_SOURCE = """\
method CoincidenceCount(a: array<int>, b: array<int>) returns (c: nat)
  requires forall i,j :: 0 <= i < j < a.Length ==> a[i] <= a[j]
  requires forall i,j :: 0 <= i < j < b.Length ==> b[i] <= b[j]
  ensures c == |multiset(a[..]) * multiset(b[..])|
{
  c := 0;
  var m, n := 0, 0;
  while m < a.Length && n < b.Length
    invariant 0 <= m <= a.Length && 0 <= n <= b.Length
    invariant c + |multiset(a[m..]) * multiset(b[n..])| == |multiset(a[..]) * multiset(b[..])|
    decreases a.Length - m + b.Length - n
  {
    if {
      case a[m] == b[n] => {
        c, m, n := c + 1, m + 1, n + 1;
      }
      case a[m] < b[n] => {
        m := m + 1;
      }
      case b[n] < a[m] => {
        n := n + 1;
      }
    }
  }
}
"""

_LEMMA_COMMON = """\
  requires forall i,j :: 0 <= i < j < a.Length ==> a[i] <= a[j]
  requires forall i,j :: 0 <= i < j < b.Length ==> b[i] <= b[j]
"""

COINCIDENCE_LEMMAS_CORRECTED = f"""\
lemma LemmaIntersectionAfterIncrease_m(a: array<int>, b: array<int>, m: nat, n: nat)
  requires 0 <= m < a.Length && 0 <= n <= b.Length
{_LEMMA_COMMON}  ensures |multiset(a[m..]) * multiset(b[n..])| == |multiset(a[m+1..]) * multiset(b[n..])|

lemma LemmaIntersectionAfterIncrease_n(a: array<int>, b: array<int>, m: nat, n: nat)
  requires 0 <= m <= a.Length && 0 <= n < b.Length
{_LEMMA_COMMON}  ensures |multiset(a[m..]) * multiset(b[n..])| == |multiset(a[m..]) * multiset(b[n+1..])|

lemma LemmaIntersectionAfterIncrease_mn(a: array<int>, b: array<int>, m: nat, n: nat)
  requires 0 <= m < a.Length && 0 <= n < b.Length
{_LEMMA_COMMON}  ensures |multiset(a[m..]) * multiset(b[n..])| == |multiset(a[m+1..]) * multiset(b[n+1..])| + 1
"""

COINCIDENCE_LEMMAS_UNCORRECTED = COINCIDENCE_LEMMAS_CORRECTED.replace(
    "== |multiset(a[m+1..]) * multiset(b[n+1..])| + 1",
    "== |multiset(a[m+1..]) * multiset(b[n+1..])|",
)


def _with_calls(body: str) -> str:
    out = body
    out = out.replace(
        "      case a[m] == b[n] => {\n",
        "      case a[m] == b[n] => {\n"
        "        /* Suggested by GPT-4: */\n"
        "        LemmaIntersectionAfterIncrease_mn(a, b, m, n);\n",
    )
    out = out.replace(
        "      case a[m] < b[n] => {\n",
        "      case a[m] < b[n] => {\n"
        "        /* Suggested by GPT-4: */\n"
        "        LemmaIntersectionAfterIncrease_m(a, b, m, n);\n",
    )
    out = out.replace(
        "      case b[n] < a[m] => {\n",
        "      case b[n] < a[m] => {\n"
        "        /* Suggested by GPT-4: */\n"
        "        LemmaIntersectionAfterIncrease_n(a, b, m, n);\n",
    )
    return out


def coincidence_response(corrected: bool) -> str:
    lemmas = COINCIDENCE_LEMMAS_CORRECTED if corrected else COINCIDENCE_LEMMAS_UNCORRECTED
    program = lemmas + "\n" + _with_calls(COINCIDENCE_SOURCE)
    intro = (
        "The failing invariant relates the remaining multiset intersection to the "
        "counter, so each branch needs a lemma describing how the intersection "
        "changes when an index advances. I added three lemmas and a call in each "
        "branch:\n\n"
    )
    return intro + "```dafny\n" + program + "```\n"


def _bodyless_plain_lemmas(content: str):
    text = SourceText("oracle.dfy", content)
    out = []
    for d in scan_declarations(text):
        if d.kind != "lemma" or d.has_body:
            continue
        s, e = d.header_extent.start_off, d.header_extent.end_off
        if "{:axiom}" not in content[s:e]:
            out.append((d.name, d.extent.start_line))
    return out


def coincidence_oracle(content: str, resolve_only: bool) -> str:
    path = "CoincidenceCount.dfy"
    if resolve_only:
        return RESOLVE_OK
    lines: list[str] = []
    for _, line in _bodyless_plain_lemmas(content):
        lines.append(err(path, line, 7, NO_BODY_MSG))
    has_mn_call = "LemmaIntersectionAfterIncrease_mn(a, b, m, n);" in content
    corrected = "* multiset(b[n+1..])| + 1" in content
    if not has_mn_call or not corrected:
        inv_line = find_line(content, "invariant c + |multiset(")
        lines.append(err(path, inv_line, col_of(content, inv_line, "invariant") + 10, INVARIANT_MSG))
    n_err = len(lines)
    decls = len(scan_declarations(SourceText("o.dfy", content)))
    return "\n".join(lines) + summary(max(decls - n_err, 0), n_err)


# ---------------------------------------------------------------------------
# Factor0 (proof inference: calc hints + witness bindings)
# ---------------------------------------------------------------------------

FACTOR0_SOURCE = """\
type pos = x | 1 <= x witness 1

ghost predicate IsFactor(p: pos, x: pos) {
  exists q :: p * q == x
}

ghost function Factors(x: pos): set<pos> {
  set p: pos | p <= x && IsFactor(p, x)
}

lemma Factor0(p: pos, y: pos, x: pos)
  requires exists a :: x == p*a
  requires exists b :: y == p*b
  ensures IsFactor(p, y + x)
"""

FACTOR0_PROOF = """\
lemma Factor0(p: pos, y: pos, x: pos)
  requires exists a :: x == p*a
  requires exists b :: y == p*b
  ensures IsFactor(p, y + x)
{
  /* Proof Suggested by GPT-4: */
  var a: pos := x / p; // Witness for x == p*a
  var b: pos := y / p; // Witness for y == p*b

  calc {
    p * (a + b);
    == { arithmetic }
    p * a + p * b;
    == { definition of a and b }
    x + y;
  }
}
"""

FACTOR0_RESPONSE = (
    "This is the linear-combination property: any witness for the two "
    "divisibility assumptions gives a witness for the sum. A calculational "
    "proof works:\n\n```dafny\n" + FACTOR0_PROOF + "```\n"
)


def factor0_oracle(content: str, resolve_only: bool) -> str:
    path = "Factor0.dfy"
    raw_hints = "== { arithmetic }" in content or "== { definition of a and b }" in content
    if resolve_only:
        if raw_hints:
            lines = []
            if "== { arithmetic }" in content:
                line = find_line(content, "== { arithmetic }")
                lines.append(err(path, line, col_of(content, line, "arithmetic"), "invalid UpdateStmt"))
            if "== { definition of a and b }" in content:
                line = find_line(content, "== { definition of a and b }")
                lines.append(err(path, line, col_of(content, line, "definition"), "invalid UpdateStmt"))
            return "\n".join(lines) + f"\n{len(lines)} parse errors detected in {path}\n"
        return RESOLVE_OK
    bodyless = _bodyless_plain_lemmas(content)
    if any(name == "Factor0" for name, _ in bodyless):
        line = dict(bodyless)["Factor0"]
        return err(path, line, 7, NO_BODY_MSG) + summary(3, 1)
    if raw_hints:
        lines = []
        if "== { arithmetic }" in content:
            line = find_line(content, "== { arithmetic }")
            lines.append(err(path, line, col_of(content, line, "arithmetic"), "invalid UpdateStmt"))
        if "== { definition of a and b }" in content:
            line = find_line(content, "== { definition of a and b }")
            lines.append(err(path, line, col_of(content, line, "definition"), "invalid UpdateStmt"))
        return "\n".join(lines) + f"\n{len(lines)} parse errors detected in {path}\n"
    if "var a :| x == p*a;" not in content or "var b :| y == p*b;" not in content:
        line = find_line(content, "x + y;")
        return err(path, line, col_of(content, line, "x + y;"), CALC_STEP_MSG) + summary(3, 1)
    return summary(4, 0)


# ---------------------------------------------------------------------------
# Small cases: already-verified files, repairs, failure modes
# ---------------------------------------------------------------------------

VERIFIED_MAX = """\
method Max(a: int, b: int) returns (m: int)
  ensures m >= a && m >= b
  ensures m == a || m == b
{
  if a >= b { m := a; } else { m := b; }
}
"""

VERIFIED_LEMMA = """\
lemma TrueIsTrue()
  ensures true
{
}
"""

VERIFIED_CALC = """\
lemma TwoPlusTwo()
  ensures 2 + 2 == 4
{
  calc {
    2 + 2;
    ==
    4;
  }
}
"""


def always_verified_oracle(n_decls: int):
    def oracle(content: str, resolve_only: bool) -> str:
        if resolve_only:
            return RESOLVE_OK
        return summary(n_decls, 0)

    return oracle


REPAIR_ASSERT_SOURCE = """\
method M() {
  assert 1 == 2;
}
"""

REPAIR_ASSERT_RESPONSE = (
    "The asserted equality is false as written; `1 + 1 == 2` is what the "
    "surrounding code needs:\n\n```dafny\nmethod M() {\n  assert 1 + 1 == 2;\n}\n```\n"
)


def repair_assert_oracle(content: str, resolve_only: bool) -> str:
    if resolve_only:
        return RESOLVE_OK
    if "assert 1 == 2;" in content:
        line = find_line(content, "assert 1 == 2;")
        return err("M.dfy", line, col_of(content, line, "assert"), ASSERT_MSG) + summary(0, 1)
    return summary(1, 0)


REPAIR_POST_SOURCE = """\
method Double(x: int) returns (y: int)
  ensures y == x + x
{
  y := x + 1;
}
"""

REPAIR_POST_RESPONSE = (
    "The body adds 1 instead of x, so the postcondition fails for any x != 1. "
    "Fix the implementation:\n\n```dafny\nmethod Double(x: int) returns (y: int)\n"
    "  ensures y == x + x\n{\n  y := x + x;\n}\n```\n"
)


def repair_post_oracle(content: str, resolve_only: bool) -> str:
    path = "Double.dfy"
    if resolve_only:
        return RESOLVE_OK
    if "y := x + 1;" in content:
        brace = find_line(content, "}", nth=1)
        ens = find_line(content, "ensures")
        return (
            err(path, brace, 1, POST_MSG)
            + "\n"
            + related(path, ens, col_of(content, ens, "y =="), POST_RELATED)
            + summary(0, 1)
        )
    return summary(1, 0)


NOCODE_SOURCE = """\
method Bad() {
  assert false;
}
"""

NOCODE_RESPONSE = (
    "No helper fact can make this program verify: the assertion is literally "
    "false, so the proof obligation is unsatisfiable. The implementation "
    "itself has to change before verification can go through."
)


def nocode_oracle(content: str, resolve_only: bool) -> str:
    if resolve_only:
        return RESOLVE_OK
    line = find_line(content, "assert false;")
    return err("Bad.dfy", line, col_of(content, line, "assert"), ASSERT_MSG) + summary(0, 1)


PARTIAL_SOURCE = """\
method Count(n: nat) returns (c: nat)
  ensures c == n
{
  c := 0;
  var i := 0;
  while i < n
    invariant c == i + 1
  {
    c, i := c + 1, i + 1;
  }
}
"""

PARTIAL_RESPONSE = (
    "The invariant is off by one; try anchoring it differently:\n\n```dafny\n"
    + PARTIAL_SOURCE.replace("invariant c == i + 1", "invariant c == i + 2")
    + "```\n"
)


def partial_oracle(content: str, resolve_only: bool) -> str:
    path = "Count.dfy"
    if resolve_only:
        return RESOLVE_OK
    if "invariant c == i + 1" in content or "invariant c == i + 2" in content:
        line = find_line(content, "invariant c ==")
        return err(path, line, col_of(content, line, "invariant"), ENTRY_MSG) + summary(0, 1)
    return summary(1, 0)


# ---------------------------------------------------------------------------
# Case runner
# ---------------------------------------------------------------------------

CASES = [
    {
        "id": "coincidence-lemmas",
        "file": "CoincidenceCount.dfy",
        "source": COINCIDENCE_SOURCE,
        "task": TaskKind.LEMMA_INFERENCE,
        "oracle": coincidence_oracle,
        "responses": [coincidence_response(corrected=True)],
        "options": {"allow_axioms": True},
        "expected": "Success",
        "tags": ["coincidence-count", "lemma-inference"],
    },
    {
        "id": "coincidence-feedback",
        "file": "CoincidenceCount.dfy",
        "source": COINCIDENCE_SOURCE,
        "task": TaskKind.LEMMA_INFERENCE,
        "oracle": coincidence_oracle,
        "responses": [coincidence_response(corrected=False), coincidence_response(corrected=True)],
        "options": {"allow_axioms": True},
        "expected": "Success",
        "tags": ["feedback-loop", "lemma-inference"],
    },
    {
        "id": "factor0-proof",
        "file": "Factor0.dfy",
        "source": FACTOR0_SOURCE,
        "task": TaskKind.PROOF_INFERENCE,
        "oracle": factor0_oracle,
        "responses": [FACTOR0_RESPONSE],
        "options": {},
        "expected": "Success",
        "tags": ["factor0", "proof-inference"],
    },
    {
        "id": "verified-max",
        "file": "Max.dfy",
        "source": VERIFIED_MAX,
        "task": TaskKind.LEMMA_INFERENCE,
        "oracle": always_verified_oracle(1),
        "responses": [],
        "options": {},
        "expected": "Success",
        "tags": ["no-op"],
    },
    {
        "id": "verified-lemma",
        "file": "TrueIsTrue.dfy",
        "source": VERIFIED_LEMMA,
        "task": TaskKind.PROOF_INFERENCE,
        "oracle": always_verified_oracle(1),
        "responses": [],
        "options": {},
        "expected": "Success",
        "tags": ["no-op"],
    },
    {
        "id": "verified-calc",
        "file": "TwoPlusTwo.dfy",
        "source": VERIFIED_CALC,
        "task": TaskKind.REPAIR,
        "oracle": always_verified_oracle(1),
        "responses": [],
        "options": {},
        "expected": "Success",
        "tags": ["no-op"],
    },
    {
        "id": "repair-assert",
        "file": "M.dfy",
        "source": REPAIR_ASSERT_SOURCE,
        "task": TaskKind.REPAIR,
        "oracle": repair_assert_oracle,
        "responses": [REPAIR_ASSERT_RESPONSE],
        "options": {},
        "expected": "Success",
        "tags": ["repair"],
    },
    {
        "id": "repair-postcondition",
        "file": "Double.dfy",
        "source": REPAIR_POST_SOURCE,
        "task": TaskKind.REPAIR,
        "oracle": repair_post_oracle,
        "responses": [REPAIR_POST_RESPONSE],
        "options": {},
        "expected": "Success",
        "tags": ["repair"],
    },
    {
        "id": "nocode-assert-false",
        "file": "Bad.dfy",
        "source": NOCODE_SOURCE,
        "task": TaskKind.LEMMA_INFERENCE,
        "oracle": nocode_oracle,
        "responses": [NOCODE_RESPONSE],
        "options": {},
        "expected": "Failure",
        "tags": ["failure-mode"],
    },
    {
        "id": "partial-invariant",
        "file": "Count.dfy",
        "source": PARTIAL_SOURCE,
        "task": TaskKind.REPAIR,
        "oracle": partial_oracle,
        "responses": [PARTIAL_RESPONSE],
        "options": {"max_rounds": 1},
        "expected": "Partial",
        "tags": ["failure-mode"],
    },
]


def build_case(case: dict) -> dict:
    case_dir = CORPUS / "cases" / case["id"]
    if case_dir.exists():
        shutil.rmtree(case_dir)
    cassette_dir = case_dir / "cassettes"
    fixture_dir = case_dir / "fixtures"
    cassette_dir.mkdir(parents=True)
    fixture_dir.mkdir(parents=True)

    source_path = case_dir / case["file"]
    source_path.write_text(case["source"], "utf-8")
    text = SourceText.from_file(str(source_path))

    verifier = OracleVerifier(case["oracle"], fixture_dir)
    provider = ProviderConfig(
        mode="record", cassette_dir=str(cassette_dir), api_key_env=RECORD_KEY_ENV
    )
    client = LlmClient(provider, transport=scripted_transport(case["responses"]))
    cfg = EngineConfig(
        verifier=verifier.cfg,
        provider=provider,
        loop=LoopConfig(**case["options"]),
    )
    log = RunLog()
    outcome = run_task(case["task"], text, cfg, log=log, verifier=verifier, client=client)
    if outcome.status != case["expected"]:
        raise AssertionError(
            f"case {case['id']}: expected {case['expected']}, recorded {outcome.status}"
        )
    if not any(cassette_dir.iterdir()):
        (cassette_dir / ".gitkeep").write_text("")
    print(
        f"  {case['id']}: {outcome.status} "
        f"(llm_calls={outcome.llm_calls}, verifier_calls={outcome.verifier_calls})"
    )
    return {
        "id": case["id"],
        "source": f"cases/{case['id']}/{case['file']}",
        "task": case["task"].value,
        "expected": case["expected"],
        "cassettes": f"cases/{case['id']}/cassettes",
        "fixtures": f"cases/{case['id']}/fixtures",
        "tags": case["tags"],
        **({"options": case["options"]} if case["options"] else {}),
    }


def main() -> None:
    os.environ.setdefault(RECORD_KEY_ENV, "recording-placeholder")
    CORPUS.mkdir(exist_ok=True)
    entries = []
    print(f"building corpus under {CORPUS}")
    for case in CASES:
        entries.append(build_case(case))
    manifest = {
        "name": "dafny-pilot mini corpus",
        "model_id": "gpt-4-1106-preview",
        "verifier_version": DAFNY_VERSION,
        "cases": entries,
    }
    (CORPUS / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", "utf-8")
    print(f"wrote manifest with {len(entries)} cases")


if __name__ == "__main__":
    main()
