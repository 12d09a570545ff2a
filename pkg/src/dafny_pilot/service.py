"""Local HTTP+JSON service exposing interactive sessions over the loop.

Human-in-the-loop by construction: the service never applies a candidate on
its own; accept/reject is always an explicit request. Binds loopback by
default and has no authentication, so it must not be exposed beyond the
local machine.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .errors import DafnyPilotError, NoCodeFound, UnplaceableSnippet
from .llm import LlmClient
from .loop import EngineConfig, RunLog, evaluate_candidate, insert_error_markers
from .prompts import TaskKind, fit_to_budget, load_template, render_prompt
from .source import SourceText, apply_patch, insert_error_marker, unified_diff
from .suggest import Candidate, candidates_from_response
from .verifier import Diagnostic, Verifier


class CreateSessionBody(BaseModel):
    source: str
    task: str = "LemmaInference"
    path: str = "session.dfy"


@dataclass
class Session:
    id: str
    task: TaskKind
    original: SourceText
    current: SourceText
    verifier: Verifier
    client: LlmClient
    cfg: EngineConfig
    log: RunLog = field(default_factory=RunLog)
    diagnostics: list[Diagnostic] = field(default_factory=list)
    candidates: list[Candidate] = field(default_factory=list)
    rejected: list[int] = field(default_factory=list)
    stale_candidates: bool = False
    feedback: str = ""
    round: int = 1
    lock: threading.Lock = field(default_factory=threading.Lock)

    def target(self) -> Diagnostic | None:
        errors = [d for d in self.diagnostics if d.severity == "error"]
        if not errors:
            return None
        return min(errors, key=lambda d: (d.span.start_line, d.span.start_col))


def _diag_list(diags) -> list[dict]:
    return [d.to_json() for d in diags]


def create_app(cfg: EngineConfig, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="dafny-pilot engine service", version=__version__)
    sessions: dict[str, Session] = {}
    app.state.sessions = sessions

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return session

    class _held:
        """Non-blocking per-session mutation guard; contention is a 409."""

        def __init__(self, session: Session):
            self.session = session

        def __enter__(self):
            if not self.session.lock.acquire(blocking=False):
                raise HTTPException(status_code=409, detail="session is busy")
            return self.session

        def __exit__(self, *exc):
            self.session.lock.release()

    @app.exception_handler(DafnyPilotError)
    async def engine_error(request: Request, exc: DafnyPilotError):
        return JSONResponse(status_code=500, content={"detail": f"{type(exc).__name__}: {exc}"})

    @app.get("/v1/health")
    def health():
        return {
            "name": "dafny-pilot",
            "engine_version": __version__,
            "verifier_mode": cfg.verifier.mode,
            "llm_mode": cfg.provider.mode,
        }

    @app.post("/v1/sessions")
    def create_session(body: CreateSessionBody):
        try:
            task = TaskKind(body.task)
        except ValueError:
            raise HTTPException(status_code=422, detail=f"unknown task {body.task!r}")
        text = SourceText(path=body.path, content=body.source)
        session = Session(
            id=uuid.uuid4().hex[:12],
            task=task,
            original=text,
            current=text,
            verifier=Verifier(cfg.verifier),
            client=LlmClient(cfg.provider),
            cfg=cfg,
        )
        result = session.verifier.verify(text)
        session.diagnostics = list(result.diagnostics)
        session.log.emit(
            "session_created", round=0, status=result.status.value, errors=len(result.errors)
        )
        sessions[session.id] = session
        return {"id": session.id, "diagnostics": _diag_list(session.diagnostics)}

    @app.post("/v1/sessions/{session_id}/suggest")
    def suggest(session_id: str):
        with _held(get_session(session_id)) as session:
            target = session.target()
            if target is None:
                session.log.emit("suggest", round=session.round, count=0)
                return {"candidates": [], "round": session.round}
            annotated = insert_error_marker(session.current, target.span, target.message)
            template = load_template(session.task)
            prompt = render_prompt(
                template,
                {"annotated_source": annotated, "feedback": session.feedback},
                round=session.round,
            )
            prompt = fit_to_budget(prompt, session.cfg.loop.budget_tokens)
            response = session.client.complete(prompt)
            session.log.emit(
                "llm_call", round=session.round, provenance=response.provenance,
                chars=len(response.text),
            )
            try:
                candidates = candidates_from_response(session.current, response, target=target)
            except (NoCodeFound, UnplaceableSnippet) as exc:
                session.log.emit("suggest", round=session.round, count=0, error=str(exc))
                return {"candidates": [], "round": session.round, "note": str(exc)}
            session.candidates = candidates
            session.stale_candidates = False
            session.rejected = []
            cards = []
            for i, cand in enumerate(candidates):
                applied = apply_patch(session.current, cand.patch)
                cards.append(
                    {
                        "index": i,
                        "kind": cand.kind,
                        "display_code": cand.display_code,
                        "diff": unified_diff(session.current, applied),
                    }
                )
            session.log.emit(
                "suggest", round=session.round, count=len(cards),
                kinds=[c.kind for c in candidates],
            )
            used_round = session.round
            return {"candidates": cards, "round": used_round}

    def _candidate(session: Session, index: int) -> Candidate:
        if 0 <= index < len(session.candidates):
            if index in session.rejected:
                raise HTTPException(status_code=409, detail="candidate was rejected")
            return session.candidates[index]
        if session.stale_candidates:
            raise HTTPException(status_code=409, detail="candidates are stale after a mutation")
        raise HTTPException(status_code=404, detail="unknown candidate")

    @app.post("/v1/sessions/{session_id}/candidates/{index}/accept")
    def accept(session_id: str, index: int):
        with _held(get_session(session_id)) as session:
            cand = _candidate(session, index)
            attempt = evaluate_candidate(
                session.current, cand, session.verifier, session.cfg.loop,
                session.log, session.round,
            )
            session.current = attempt.text
            if attempt.result is not None:
                session.diagnostics = list(attempt.result.diagnostics)
            else:
                session.diagnostics = list(cand.precheck.diagnostics)
            session.candidates = []
            session.stale_candidates = True
            session.feedback = ""
            session.round += 1
            session.log.emit(
                "accept", round=attempt.round, kind=cand.kind,
                verified=bool(attempt.result and attempt.result.verified),
                heuristics=attempt.heuristics_applied,
            )
            return {
                "diagnostics": _diag_list(session.diagnostics),
                "verified": bool(attempt.result and attempt.result.verified),
                "heuristics_applied": attempt.heuristics_applied,
                "axioms_inserted": attempt.axioms_inserted,
            }

    @app.post("/v1/sessions/{session_id}/candidates/{index}/reject")
    def reject(session_id: str, index: int):
        with _held(get_session(session_id)) as session:
            cand = _candidate(session, index)
            applied = apply_patch(session.current, cand.patch)
            marked = insert_error_markers(applied, session.diagnostics)
            session.feedback = (
                "The developer rejected the previous suggestion. Here it is, applied "
                "to the program, with the still-unresolved verifier errors marked "
                f"inline:\n\n```dafny\n{marked.content}\n```\n"
                "Propose a different solution.\n"
            )
            session.rejected.append(index)
            session.round += 1
            session.log.emit("reject", round=session.round - 1, kind=cand.kind)
            return {"ok": True, "next_round": session.round}

    @app.post("/v1/sessions/{session_id}/verify")
    def verify(session_id: str):
        with _held(get_session(session_id)) as session:
            result = session.verifier.verify(session.current)
            session.diagnostics = list(result.diagnostics)
            session.log.emit(
                "verify", round=session.round, status=result.status.value,
                errors=len(result.errors),
            )
            return result.to_json()

    @app.get("/v1/sessions/{session_id}/events")
    def events(session_id: str, since: int = 0):
        session = get_session(session_id)
        return {"events": [r for r in session.log.records if r["seq"] > since]}

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
