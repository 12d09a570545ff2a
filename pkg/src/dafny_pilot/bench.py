"""Run the loop over a manifest of corpus cases and report success metrics.

The manifest is one JSON file; each case directory holds the source, its
cassettes, and its verifier fixtures, so a corpus is self-contained and
replays byte-identically (timing fields aside).
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__ as engine_version
from .errors import DuplicateId, ManifestError, MissingFile
from .loop import EngineConfig, LoopConfig, RunLog, run_task
from .prompts import TaskKind
from .source import SourceText

DEFAULT_PARALLELISM_CAP = 4

_LOOP_OPTION_KEYS = {f.name for f in dataclasses.fields(LoopConfig)}


@dataclass(frozen=True)
class CorpusCase:
    id: str
    source: Path
    task: TaskKind
    expected: str  # "Success" | "Partial" | "Failure"
    cassette_dir: Path
    fixture_dir: Path
    target: tuple[int, int] | None = None
    tags: tuple[str, ...] = ()
    options: dict = field(default_factory=dict)


def load_manifest(path: str | Path) -> list[CorpusCase]:
    manifest_path = Path(path)
    if not manifest_path.exists():
        raise MissingFile(f"manifest not found: {manifest_path}")
    try:
        data = json.loads(manifest_path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(data, dict) or "cases" not in data:
        raise ManifestError("manifest must be an object with a 'cases' list")

    root = manifest_path.parent
    cases: list[CorpusCase] = []
    seen: set[str] = set()
    for raw in data["cases"]:
        try:
            case_id = raw["id"]
            source = root / raw["source"]
            task = TaskKind(raw["task"])
            expected = raw["expected"]
        except (KeyError, ValueError) as exc:
            raise ManifestError(f"malformed case entry {raw.get('id', '?')!r}: {exc}") from exc
        if case_id in seen:
            raise DuplicateId(f"duplicate case id {case_id!r}")
        seen.add(case_id)
        if expected not in ("Success", "Partial", "Failure"):
            raise ManifestError(f"case {case_id}: bad expected outcome {expected!r}")
        if not source.exists():
            raise MissingFile(f"case {case_id}: source missing: {source}")
        cassette_dir = root / raw.get("cassettes", f"cases/{case_id}/cassettes")
        fixture_dir = root / raw.get("fixtures", f"cases/{case_id}/fixtures")
        if not fixture_dir.exists():
            raise MissingFile(f"case {case_id}: fixture dir missing: {fixture_dir}")
        options = raw.get("options", {})
        unknown = set(options) - _LOOP_OPTION_KEYS
        if unknown:
            raise ManifestError(f"case {case_id}: unknown loop options {sorted(unknown)}")
        target = tuple(raw["target"]) if raw.get("target") else None
        cases.append(
            CorpusCase(
                id=case_id,
                source=source,
                task=task,
                expected=expected,
                cassette_dir=cassette_dir,
                fixture_dir=fixture_dir,
                target=target,
                tags=tuple(raw.get("tags", ())),
                options=options,
            )
        )
    return cases


@dataclass
class CaseReport:
    id: str
    outcome: str
    expected: str
    rounds_used: int
    axioms_inserted: int
    duration_s: float
    reason: str = ""

    @property
    def as_expected(self) -> bool:
        return self.outcome == self.expected

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "outcome": self.outcome,
            "expected": self.expected,
            "as_expected": self.as_expected,
            "rounds_used": self.rounds_used,
            "axioms_inserted": self.axioms_inserted,
            "duration_s": round(self.duration_s, 4),
            "reason": self.reason,
        }


@dataclass
class BenchReport:
    cases: list[CaseReport]
    model_id: str
    verifier_version: str
    engine_version: str = engine_version

    @property
    def success_rate(self) -> float | None:
        if not self.cases:
            return None
        return sum(1 for c in self.cases if c.outcome == "Success") / len(self.cases)

    @property
    def mean_rounds(self) -> float | None:
        used = [c.rounds_used for c in self.cases if c.rounds_used > 0]
        return sum(used) / len(used) if used else None

    @property
    def all_as_expected(self) -> bool:
        return all(c.as_expected for c in self.cases)

    def to_json(self) -> dict:
        return {
            "aggregate": {
                "cases": len(self.cases),
                "successes": sum(1 for c in self.cases if c.outcome == "Success"),
                "success_rate": self.success_rate,
                "mean_rounds": self.mean_rounds,
                "all_as_expected": self.all_as_expected,
            },
            "environment": {
                "verifier_version": self.verifier_version,
                "model_id": self.model_id,
                "engine_version": self.engine_version,
            },
            "cases": [c.to_json() for c in self.cases],
        }

    def to_markdown(self) -> str:
        rate = "n/a" if self.success_rate is None else f"{self.success_rate:.0%}"
        mean = "n/a" if self.mean_rounds is None else f"{self.mean_rounds:.2f}"
        lines = [
            "# Bench report",
            "",
            f"- cases: {len(self.cases)}",
            f"- success rate: {rate}",
            f"- mean rounds: {mean}",
            f"- verifier: {self.verifier_version or 'replay'}",
            f"- model: {self.model_id}",
            f"- engine: {self.engine_version}",
            "",
            "| case | outcome | expected | ok | rounds | axioms | seconds |",
            "|------|---------|----------|----|--------|--------|---------|",
        ]
        for c in self.cases:
            ok = "yes" if c.as_expected else "NO"
            lines.append(
                f"| {c.id} | {c.outcome} | {c.expected} | {ok} "
                f"| {c.rounds_used} | {c.axioms_inserted} | {c.duration_s:.2f} |"
            )
        return "\n".join(lines) + "\n"


def _case_engine_config(case: CorpusCase, base: EngineConfig) -> EngineConfig:
    loop = dataclasses.replace(base.loop, **case.options) if case.options else base.loop
    verifier = dataclasses.replace(
        base.verifier, mode="replay", fixture_dir=str(case.fixture_dir)
    )
    provider = dataclasses.replace(
        base.provider, mode="replay", cassette_dir=str(case.cassette_dir)
    )
    return EngineConfig(verifier=verifier, provider=provider, loop=loop)


def run_case(case: CorpusCase, base: EngineConfig, log: RunLog | None = None) -> CaseReport:
    started = time.monotonic()
    try:
        text = SourceText.from_file(str(case.source))
        cfg = _case_engine_config(case, base)
        outcome = run_task(
            case.task, text, cfg, target_pos=case.target, log=log
        )
        rounds = max((a.round for a in outcome.attempts), default=0)
        axioms = 0
        if outcome.status == "Success" and outcome.attempts:
            axioms = outcome.attempts[-1].axioms_inserted
        elif outcome.best_attempt is not None:
            axioms = outcome.best_attempt.axioms_inserted
        return CaseReport(
            id=case.id,
            outcome=outcome.status,
            expected=case.expected,
            rounds_used=rounds,
            axioms_inserted=axioms,
            duration_s=time.monotonic() - started,
            reason=outcome.reason,
        )
    except Exception as exc:  # a broken case must not sink the others
        return CaseReport(
            id=case.id,
            outcome="Failure",
            expected=case.expected,
            rounds_used=0,
            axioms_inserted=0,
            duration_s=time.monotonic() - started,
            reason=f"{type(exc).__name__}: {exc}",
        )


def run_bench(
    cases: list[CorpusCase],
    base: EngineConfig | None = None,
    parallelism: int | None = None,
) -> BenchReport:
    base = base or EngineConfig()
    if parallelism is None:
        import os

        parallelism = min(os.cpu_count() or 1, DEFAULT_PARALLELISM_CAP)
    parallelism = max(1, parallelism)

    if cases:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            reports = list(pool.map(lambda c: run_case(c, base), cases))
    else:
        reports = []

    verifier_version = ""
    for case in cases:
        for fx in sorted(Path(case.fixture_dir).glob("*.json")):
            try:
                verifier_version = json.loads(fx.read_text("utf-8")).get("verifier_version", "")
            except (OSError, json.JSONDecodeError):
                continue
            if verifier_version:
                break
        if verifier_version:
            break

    return BenchReport(
        cases=reports,
        model_id=base.provider.model_id,
        verifier_version=verifier_version,
    )


def write_report(report: BenchReport, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    md_path = out / "report.md"
    json_path.write_text(json.dumps(report.to_json(), indent=2) + "\n", "utf-8")
    md_path.write_text(report.to_markdown(), "utf-8")
    return json_path, md_path
