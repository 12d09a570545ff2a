"""Run the Dafny verifier (subprocess or replay fixtures) and parse its output.

Replay fixtures are JSON files keyed by the content hash of the exact text
verified plus the run mode (full verify vs parse/resolve only), so the same
text can have both kinds of recording.
"""

from __future__ import annotations

import json
import os
import re
import subprocess
import tempfile
import time
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import ReplayMiss, VerifierNotFound
from .source import SourceText, Span

DEFAULT_TIMEOUT_S = 60.0
DEFAULT_EXPECTED_VERSION = "4.3.0"


class Category(str, Enum):
    INVARIANT_NOT_MAINTAINED = "InvariantNotMaintained"
    INVARIANT_ON_ENTRY = "InvariantOnEntry"
    POSTCONDITION = "PostconditionViolation"
    PRECONDITION = "PreconditionViolation"
    ASSERTION = "AssertionViolation"
    TERMINATION = "TerminationFailure"
    SYNTAX_OR_RESOLUTION = "SyntaxOrResolution"
    OTHER = "Other"


class Status(str, Enum):
    VERIFIED = "Verified"
    FAILED = "Failed"
    TIMEOUT = "Timeout"
    CRASHED_OR_UNPARSABLE = "CrashedOrUnparsable"


def _load_rules() -> list[tuple[str, Category]]:
    raw = resources.files("dafny_pilot").joinpath("data/diagnostic_rules.json").read_text("utf-8")
    table = json.loads(raw)
    return [(r["contains"], Category(r["category"])) for r in table["rules"]]


_RULES = _load_rules()


def classify_diagnostic(message: str) -> Category:
    """Longest matching rule substring wins; unmatched messages are Other."""
    best: Category | None = None
    best_len = -1
    for needle, category in _RULES:
        if needle in message and len(needle) > best_len:
            best, best_len = category, len(needle)
    return best if best is not None else Category.OTHER


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    span: Span
    message: str
    category: Category
    related: tuple[tuple[Span, str], ...] = ()

    def to_json(self) -> dict:
        return {
            "severity": self.severity,
            "line": self.span.start_line,
            "col": self.span.start_col,
            "end_line": self.span.end_line,
            "end_col": self.span.end_col,
            "message": self.message,
            "category": self.category.value,
            "related": [
                {"line": s.start_line, "col": s.start_col, "message": m} for s, m in self.related
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Diagnostic":
        return cls(
            severity=d["severity"],
            span=Span(d["line"], d["col"], d.get("end_line", d["line"]), d.get("end_col", d["col"])),
            message=d["message"],
            category=Category(d["category"]),
            related=tuple(
                (Span.point(r["line"], r["col"]), r["message"]) for r in d.get("related", ())
            ),
        )


@dataclass(frozen=True)
class VerificationResult:
    status: Status
    diagnostics: tuple[Diagnostic, ...]
    duration_s: float
    raw_output: str
    verifier_version: str = ""
    verified_hash: str = ""  # content hash of the text this result belongs to

    @property
    def errors(self) -> tuple[Diagnostic, ...]:
        return tuple(d for d in self.diagnostics if d.severity == "error")

    @property
    def verified(self) -> bool:
        return self.status is Status.VERIFIED

    def to_json(self) -> dict:
        return {
            "status": self.status.value,
            "diagnostics": [d.to_json() for d in self.diagnostics],
            "duration_s": self.duration_s,
            "raw_output": self.raw_output,
            "verifier_version": self.verifier_version,
        }


@dataclass(frozen=True)
class VerifierConfig:
    executable: str = "dafny"
    extra_args: tuple[str, ...] = ()
    timeout_s: float = DEFAULT_TIMEOUT_S
    mode: str = "subprocess"  # "subprocess" | "replay"
    fixture_dir: str | None = None
    record_dir: str | None = None  # subprocess mode: also save fixtures here
    expected_version: str = DEFAULT_EXPECTED_VERSION

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.mode == "replay" and not self.fixture_dir:
            raise ValueError("replay mode requires fixture_dir")


_DIAG_LINE = re.compile(
    r"^(?P<path>[^\s(][^(]*)\((?P<line>\d+),(?P<col>\d+)\):\s*"
    r"(?P<sev>Error|Warning|Related location):\s*(?P<msg>.*)$"
)
_SUMMARY = re.compile(
    r"Dafny program verifier finished with (?P<ver>\d+) verified, (?P<err>\d+) error"
)
_PARSE_SUMMARY = re.compile(r"(?P<n>\d+) parse errors detected in")
_RESOLVE_SUMMARY = re.compile(r"(?P<n>\d+) resolution/type errors detected in")
_NOT_ATTEMPTED = "did not attempt verification"


def parse_diagnostics(raw: str) -> tuple[list[Diagnostic], Status]:
    """Structure the verifier's text output.

    Never raises: output with no recognizable summary comes back as
    CrashedOrUnparsable with whatever diagnostics were readable.
    """
    diags: list[Diagnostic] = []
    saw_summary = False
    saw_front_end_errors = False
    summary_errors = 0
    for line in raw.splitlines():
        m = _DIAG_LINE.match(line.strip())
        if m:
            sev = m.group("sev")
            span = Span.point(int(m.group("line")), int(m.group("col")))
            msg = m.group("msg").strip()
            if sev == "Related location":
                if diags:
                    prev = diags[-1]
                    diags[-1] = Diagnostic(
                        severity=prev.severity,
                        span=prev.span,
                        message=prev.message,
                        category=prev.category,
                        related=prev.related + ((span, msg),),
                    )
                continue
            diags.append(
                Diagnostic(
                    severity=sev.lower(),
                    span=span,
                    message=msg,
                    category=classify_diagnostic(msg),
                )
            )
            continue
        if _SUMMARY.search(line):
            saw_summary = True
            summary_errors = int(_SUMMARY.search(line).group("err"))
        elif _PARSE_SUMMARY.search(line) or _RESOLVE_SUMMARY.search(line):
            saw_summary = True
            saw_front_end_errors = True
        elif _NOT_ATTEMPTED in line:
            saw_summary = True

    if saw_front_end_errors:
        # everything reported before a parse/resolution summary is a front-end error
        diags = [
            Diagnostic(d.severity, d.span, d.message, Category.SYNTAX_OR_RESOLUTION, d.related)
            if d.severity == "error"
            else d
            for d in diags
        ]

    if not saw_summary:
        return diags, Status.CRASHED_OR_UNPARSABLE
    has_errors = any(d.severity == "error" for d in diags) or summary_errors > 0
    return diags, Status.FAILED if has_errors else Status.VERIFIED


def _fixture_name(content_hash: str, resolve_only: bool) -> str:
    return f"{content_hash}.{'resolve' if resolve_only else 'verify'}.json"


class Verifier:
    """verify() entry point over either a real subprocess or replay fixtures."""

    def __init__(self, cfg: VerifierConfig):
        self.cfg = cfg
        self._version_cache: str | None = None
        self.calls = 0  # full verifications
        self.precheck_calls = 0  # parse/resolve-only runs

    def verify(self, text: SourceText, resolve_only: bool = False) -> VerificationResult:
        if resolve_only:
            self.precheck_calls += 1
        else:
            self.calls += 1
        if self.cfg.mode == "replay":
            return self._replay(text, resolve_only)
        return self._subprocess(text, resolve_only)

    # --- replay ---

    def _replay(self, text: SourceText, resolve_only: bool) -> VerificationResult:
        assert self.cfg.fixture_dir is not None
        path = Path(self.cfg.fixture_dir) / _fixture_name(text.content_hash, resolve_only)
        if not path.exists():
            raise ReplayMiss(text.content_hash, str(self.cfg.fixture_dir))
        data = json.loads(path.read_text("utf-8"))
        return VerificationResult(
            status=Status(data["status"]),
            diagnostics=tuple(Diagnostic.from_json(d) for d in data["diagnostics"]),
            duration_s=float(data.get("duration_s", 0.0)),
            raw_output=data["raw_output"],
            verifier_version=data.get("verifier_version", ""),
            verified_hash=text.content_hash,
        )

    # --- subprocess ---

    def _subprocess(self, text: SourceText, resolve_only: bool) -> VerificationResult:
        import shutil

        exe = self.cfg.executable
        if os.path.sep not in exe and shutil.which(exe) is None:
            raise VerifierNotFound(f"verifier executable not found: {exe}")
        if os.path.sep in exe and not os.path.exists(exe):
            raise VerifierNotFound(f"verifier executable not found: {exe}")

        action = "resolve" if resolve_only else "verify"
        started = time.monotonic()
        with tempfile.TemporaryDirectory(prefix="dafny-pilot-") as tmp:
            target = os.path.join(tmp, "input.dfy")
            text.write_to(target)
            cmd = [exe, action, *self.cfg.extra_args, target]
            try:
                proc = subprocess.run(
                    cmd, capture_output=True, text=True, timeout=self.cfg.timeout_s
                )
            except subprocess.TimeoutExpired as exc:
                raw = (exc.stdout or b"")
                raw = raw.decode("utf-8", "replace") if isinstance(raw, bytes) else raw
                return VerificationResult(
                    status=Status.TIMEOUT,
                    diagnostics=(),
                    duration_s=time.monotonic() - started,
                    raw_output=raw,
                    verifier_version=self._version_cache or "",
                    verified_hash=text.content_hash,
                )
        raw = proc.stdout + (("\n" + proc.stderr) if proc.stderr.strip() else "")
        diags, status = parse_diagnostics(raw)
        result = VerificationResult(
            status=status,
            diagnostics=tuple(diags),
            duration_s=time.monotonic() - started,
            raw_output=raw,
            verifier_version=self.version(),
            verified_hash=text.content_hash,
        )
        if self.cfg.record_dir:
            self._record(text, resolve_only, result)
        return result

    def version(self) -> str:
        if self._version_cache is not None:
            return self._version_cache
        try:
            proc = subprocess.run(
                [self.cfg.executable, "--version"], capture_output=True, text=True, timeout=10
            )
            banner = proc.stdout.strip() or proc.stderr.strip()
        except (OSError, subprocess.TimeoutExpired):
            banner = ""
        self._version_cache = banner
        return banner

    def _record(self, text: SourceText, resolve_only: bool, result: VerificationResult) -> None:
        assert self.cfg.record_dir is not None
        out = Path(self.cfg.record_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = {
            "content_hash": text.content_hash,
            "mode": "resolve" if resolve_only else "verify",
            **result.to_json(),
        }
        (out / _fixture_name(text.content_hash, resolve_only)).write_text(
            json.dumps(payload, indent=2) + "\n", "utf-8"
        )


def write_fixture(
    fixture_dir: str | os.PathLike,
    text_hash: str,
    raw_output: str,
    resolve_only: bool = False,
    verifier_version: str = DEFAULT_EXPECTED_VERSION,
    duration_s: float = 0.0,
) -> Path:
    """Author a replay fixture from captured verifier output."""
    diags, status = parse_diagnostics(raw_output)
    payload = {
        "content_hash": text_hash,
        "mode": "resolve" if resolve_only else "verify",
        "status": status.value,
        "diagnostics": [d.to_json() for d in diags],
        "duration_s": duration_s,
        "raw_output": raw_output,
        "verifier_version": verifier_version,
    }
    out = Path(fixture_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / _fixture_name(text_hash, resolve_only)
    path.write_text(json.dumps(payload, indent=2) + "\n", "utf-8")
    return path
