"""Command-line entry point.

Exit codes: 0 Success, 2 Partial, 3 Failure, 64 usage error, 70 internal
error. stdout carries only the requested artifact (diff, JSON, or text);
everything else goes to stderr. Configuration precedence is
flags > dafny-pilot.toml in the working directory > environment > defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from .bench import load_manifest, run_bench, write_report
from .errors import DafnyPilotError
from .llm import DEFAULT_MODEL, ProviderConfig
from .loop import EngineConfig, LoopConfig, RunLog, run_task, run_text_task
from .prompts import TaskKind
from .source import SourceText, unified_diff
from .verifier import Verifier, VerifierConfig

EXIT_SUCCESS = 0
EXIT_PARTIAL = 2
EXIT_FAILURE = 3
EXIT_USAGE = 64
EXIT_INTERNAL = 70

CONFIG_FILE = "dafny-pilot.toml"
ENV_PREFIX = "DAFNY_PILOT_"

_COMMAND_TASKS = {
    "fix": TaskKind.REPAIR,
    "lemmas": TaskKind.LEMMA_INFERENCE,
    "prove": TaskKind.PROOF_INFERENCE,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _read_config_file(path: Path) -> dict[str, str]:
    """dafny-pilot.toml is a flat key = value file; quotes are optional."""
    values: dict[str, str] = {}
    if not path.exists():
        return values
    for raw in path.read_text("utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip().strip('"').strip("'")
    return values


class Settings:
    """Layered lookup: CLI flag, then config file, then environment, then default."""

    def __init__(self, ns: argparse.Namespace, cwd: Path | None = None):
        self.ns = ns
        self.file = _read_config_file((cwd or Path.cwd()) / CONFIG_FILE)

    def get(self, name: str, default=None, cast=str):
        flag = getattr(self.ns, name, None)
        if flag is not None:
            return flag
        if name in self.file:
            return _cast(self.file[name], cast)
        env = os.environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            return _cast(env, cast)
        return default


def _cast(value: str, cast):
    if cast is bool:
        return value.lower() in ("1", "true", "yes", "on")
    return cast(value)


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dafny", help="path to the Dafny executable (subprocess mode)")
    p.add_argument("--verifier-arg", action="append", dest="verifier_args", default=None,
                   metavar="ARG", help="extra argument passed to the verifier (repeatable)")
    p.add_argument("--fixtures", help="verifier replay fixture directory (enables replay mode)")
    p.add_argument("--record-fixtures", help="record verifier fixtures into this directory")
    p.add_argument("--timeout-s", type=float, help="verifier timeout per attempt (default 60)")
    p.add_argument("--llm", help="LLM mode: live, record:DIR, or replay:DIR")
    p.add_argument("--model", help=f"model id (default {DEFAULT_MODEL})")
    p.add_argument("--endpoint", help="chat-completions endpoint URL")
    p.add_argument("--temperature", type=float, help="sampling temperature (default 0.0)")
    p.add_argument("--api-key-env", dest="api_key_env",
                   help="name of the environment variable holding the API key")
    p.add_argument("--max-rounds", type=int, help="feedback rounds (default 3)")
    p.add_argument("--candidates-per-round", type=int, help="model calls per round (default 1)")
    p.add_argument("--allow-axioms", action="store_true", default=None,
                   help="permit marking unproved lemmas {:axiom}")
    p.add_argument("--no-hint-commenting", action="store_true", default=None,
                   help="disable the calc-hint commenting heuristic")
    p.add_argument("--no-witness-rewrite", action="store_true", default=None,
                   help="disable the such-that witness rewrite heuristic")
    p.add_argument("--budget-tokens", type=int, help="prompt token budget (default 128000)")
    p.add_argument("--log", help="write the run log (JSON lines) to this file")


def _add_task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("file", help="Dafny source file")
    p.add_argument("--target-line", type=int, help="line of the diagnostic to work on")
    p.add_argument("--target-col", type=int, default=0, help="column of the target diagnostic")
    p.add_argument("--format", choices=("patch", "json", "text"), default="patch",
                   help="stdout artifact (default patch)")
    p.add_argument("--write", action="store_true", help="apply the result to the file in place")
    _add_engine_flags(p)


def build_parser() -> _Parser:
    parser = _Parser(prog="dafny-pilot",
                     description="LLM-assisted lemma inference, proof inference, and repair for Dafny.")
    sub = parser.add_subparsers(dest="command", required=True)

    for cmd, help_text in (
        ("fix", "repair a file that fails to verify"),
        ("lemmas", "suggest and place missing lemmas"),
        ("prove", "generate a proof for a failing or bodyless lemma"),
    ):
        _add_task_flags(sub.add_parser(cmd, help=help_text))

    p_explain = sub.add_parser("explain", help="explain a verifier diagnostic in plain language")
    p_explain.add_argument("file")
    p_explain.add_argument("--target-line", type=int)
    p_explain.add_argument("--target-col", type=int, default=0)
    _add_engine_flags(p_explain)

    p_translate = sub.add_parser("translate", help="turn a natural-language requirement into Dafny")
    p_translate.add_argument("requirement", help="the requirement text, or @FILE to read it")
    _add_engine_flags(p_translate)

    p_bench = sub.add_parser("bench", help="run a corpus manifest and write a report")
    p_bench.add_argument("manifest")
    p_bench.add_argument("--out", default="bench-report", help="report directory")
    p_bench.add_argument("--parallelism", type=int)
    p_bench.add_argument("--replay", action="store_true", default=None,
                         help="force replay mode (the corpus layout implies it)")
    _add_engine_flags(p_bench)

    p_serve = sub.add_parser("serve", help="start the local HTTP session service")
    p_serve.add_argument("--bind", default="127.0.0.1:7333", help="host:port (loopback by default)")
    p_serve.add_argument("--ui-dir", help="static directory served at /ui/")
    _add_engine_flags(p_serve)

    return parser


def build_engine_config(settings: Settings) -> EngineConfig:
    llm = settings.get("llm", default="replay:cassettes")
    mode, _, cassette_dir = llm.partition(":")
    if mode not in ("live", "record", "replay"):
        raise DafnyPilotError(f"bad --llm value {llm!r}; use live, record:DIR, or replay:DIR")
    if mode != "live" and not cassette_dir:
        raise DafnyPilotError(f"--llm {mode} needs a cassette directory: {mode}:DIR")

    fixtures = settings.get("fixtures")
    extra_args = settings.get("verifier_args", default=())
    if isinstance(extra_args, str):  # config file / env: whitespace-separated
        extra_args = extra_args.split()
    verifier = VerifierConfig(
        executable=settings.get("dafny", default="dafny"),
        extra_args=tuple(extra_args or ()),
        timeout_s=settings.get("timeout_s", default=60.0, cast=float),
        mode="replay" if fixtures else "subprocess",
        fixture_dir=fixtures,
        record_dir=settings.get("record_fixtures"),
    )
    provider = ProviderConfig(
        endpoint_url=settings.get(
            "endpoint", default="https://api.openai.com/v1/chat/completions"
        ),
        model_id=settings.get("model", default=DEFAULT_MODEL),
        temperature=settings.get("temperature", default=0.0, cast=float),
        api_key_env=settings.get("api_key_env", default="OPENAI_API_KEY"),
        mode=mode,
        cassette_dir=cassette_dir or None,
    )
    loop = LoopConfig(
        max_rounds=settings.get("max_rounds", default=3, cast=int),
        candidates_per_round=settings.get("candidates_per_round", default=1, cast=int),
        allow_axioms=bool(settings.get("allow_axioms", default=False, cast=bool)),
        enable_hint_commenting=not settings.get("no_hint_commenting", default=False, cast=bool),
        enable_witness_rewrite=not settings.get("no_witness_rewrite", default=False, cast=bool),
        budget_tokens=settings.get("budget_tokens", default=128_000, cast=int),
    )
    return EngineConfig(verifier=verifier, provider=provider, loop=loop)


def _atomic_write(text: SourceText, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        os.close(fd)
        text.write_to(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _outcome_json(outcome, original: SourceText) -> dict:
    final = outcome.final_text
    return {
        "status": outcome.status,
        "reason": outcome.reason,
        "llm_calls": outcome.llm_calls,
        "verifier_calls": outcome.verifier_calls,
        "attempts": [a.summary() for a in outcome.attempts],
        "diff": unified_diff(original, final) if final is not None else "",
    }


def _run_code_task(ns: argparse.Namespace) -> int:
    settings = Settings(ns)
    cfg = build_engine_config(settings)
    text = SourceText.from_file(ns.file)
    log = RunLog(ns.log) if ns.log else RunLog()
    target_pos = (ns.target_line, ns.target_col) if ns.target_line else None
    outcome = run_task(_COMMAND_TASKS[ns.command], text, cfg, target_pos=target_pos, log=log)

    show_text = outcome.final_text
    if show_text is None and outcome.best_attempt is not None:
        show_text = outcome.best_attempt.text
    if ns.format == "patch":
        if show_text is not None:
            sys.stdout.write(unified_diff(text, show_text))
    elif ns.format == "json":
        json.dump(_outcome_json(outcome, text), sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        print(f"{outcome.status}: {ns.file}"
              + (f" ({outcome.reason})" if outcome.reason else ""))
        for a in outcome.attempts:
            print(f"  round {a.round}: {a.candidate.kind if a.candidate else '-'}"
                  f" residual={a.residual_errors} heuristics={','.join(a.heuristics_applied) or '-'}")

    if outcome.status == "Success":
        if ns.write and outcome.final_text is not None and not outcome.patch.is_empty:
            _atomic_write(outcome.final_text, ns.file)
        return EXIT_SUCCESS
    print(f"{outcome.status}: {outcome.reason or 'no attempt verified'}", file=sys.stderr)
    return EXIT_PARTIAL if outcome.status == "Partial" else EXIT_FAILURE


def _run_explain(ns: argparse.Namespace) -> int:
    settings = Settings(ns)
    cfg = build_engine_config(settings)
    text = SourceText.from_file(ns.file)
    verifier = Verifier(cfg.verifier)
    result = verifier.verify(text)
    if not result.errors:
        print("nothing to explain: the file verifies", file=sys.stderr)
        return EXIT_SUCCESS
    diag = result.errors[0]
    if ns.target_line:
        matches = [d for d in result.errors if d.span.start_line == ns.target_line]
        if matches:
            diag = matches[0]
    explanation = run_text_task(TaskKind.EXPLAIN, cfg, source=text, diagnostic=diag)
    sys.stdout.write(explanation)
    if not explanation.endswith("\n"):
        sys.stdout.write("\n")
    return EXIT_SUCCESS


def _run_translate(ns: argparse.Namespace) -> int:
    settings = Settings(ns)
    cfg = build_engine_config(settings)
    requirement = ns.requirement
    if requirement.startswith("@"):
        requirement = Path(requirement[1:]).read_text("utf-8")
    snippet = run_text_task(TaskKind.NL2SPEC, cfg, nl_spec=requirement)
    sys.stdout.write(snippet)
    if not snippet.endswith("\n"):
        sys.stdout.write("\n")
    return EXIT_SUCCESS


def _run_bench(ns: argparse.Namespace) -> int:
    settings = Settings(ns)
    cfg = build_engine_config(settings)
    cases = load_manifest(ns.manifest)
    report = run_bench(cases, cfg, parallelism=ns.parallelism)
    json_path, md_path = write_report(report, ns.out)
    rate = "n/a" if report.success_rate is None else f"{report.success_rate:.0%}"
    print(f"bench: {len(report.cases)} cases, success rate {rate}", file=sys.stderr)
    print(f"report: {json_path} {md_path}", file=sys.stderr)
    return EXIT_SUCCESS if report.all_as_expected else EXIT_FAILURE


def _run_serve(ns: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    settings = Settings(ns)
    cfg = build_engine_config(settings)
    host, _, port = ns.bind.partition(":")
    app = create_app(cfg, ui_dir=ns.ui_dir)
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 7333), log_level="warning")
    return EXIT_SUCCESS


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if ns.command in _COMMAND_TASKS:
            return _run_code_task(ns)
        if ns.command == "explain":
            return _run_explain(ns)
        if ns.command == "translate":
            return _run_translate(ns)
        if ns.command == "bench":
            return _run_bench(ns)
        if ns.command == "serve":
            return _run_serve(ns)
        parser.error(f"unknown command {ns.command}")
        return EXIT_USAGE
    except DafnyPilotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # anything else is a bug, still mapped per contract
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
