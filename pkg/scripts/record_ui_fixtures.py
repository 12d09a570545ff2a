#!/usr/bin/env python3
"""Record engine-service HTTP responses for the companion UI's tests.

Each flow is an ordered list of (method, path, response) steps captured from
the real service running over the shipped replay corpus, mirroring the exact
request sequence the panel makes (every action is followed by an incremental
events poll). The UI test suite replays them through a mocked fetch, so the
panel is exercised against genuine service payloads without a live server.
"""

from __future__ import annotations

import json
import os
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from fastapi.testclient import TestClient

import dafny_pilot.service as service_mod
from dafny_pilot.bench import load_manifest
from dafny_pilot.llm import LlmClient, ProviderConfig
from dafny_pilot.loop import EngineConfig, LoopConfig
from dafny_pilot.service import create_app
from dafny_pilot.verifier import VerifierConfig

OUT = REPO / "frontend" / "tests" / "fixtures"


class Recorder:
    def __init__(self, client: TestClient):
        self.client = client
        self.steps: list[dict] = []
        self.session_id = ""
        self.last_seq = 0

    def _record(self, method: str, path: str, response) -> dict:
        body = response.json()
        self.steps.append(
            {"method": method, "path": path, "status": response.status_code, "body": body}
        )
        return body

    def _pull_events(self) -> None:
        path = f"/v1/sessions/{self.session_id}/events?since={self.last_seq}"
        body = self._record("GET", path, self.client.get(path))
        for event in body["events"]:
            self.last_seq = max(self.last_seq, event["seq"])

    def create(self, source: str, task: str, path: str) -> None:
        body = self._record(
            "POST",
            "/v1/sessions",
            self.client.post("/v1/sessions", json={"source": source, "task": task, "path": path}),
        )
        self.session_id = body["id"]
        self._pull_events()

    def action(self, suffix: str) -> dict:
        path = f"/v1/sessions/{self.session_id}/{suffix}"
        body = self._record("POST", path, self.client.post(path))
        self._pull_events()
        return body

    def dump(self, flow: str, source: str, task: str, name: str) -> None:
        payload = {"flow": flow, "source": source, "task": task, "steps": self.steps}
        (OUT / name).write_text(json.dumps(payload, indent=2) + "\n", "utf-8")
        print(f"{flow} flow: {len(self.steps)} steps")


def engine_cfg(case, **loop_kwargs) -> EngineConfig:
    return EngineConfig(
        verifier=VerifierConfig(mode="replay", fixture_dir=str(case.fixture_dir)),
        provider=ProviderConfig(mode="replay", cassette_dir=str(case.cassette_dir)),
        loop=LoopConfig(**loop_kwargs),
    )


def record_accept_flow(cases) -> None:
    case = cases["coincidence-lemmas"]
    source = Path(case.source).read_text("utf-8")
    rec = Recorder(TestClient(create_app(engine_cfg(case, allow_axioms=True))))
    rec.create(source, "LemmaInference", "CoincidenceCount.dfy")
    rec.action("suggest")
    rec.action("candidates/0/accept")
    rec.dump("accept", source, "LemmaInference", "accept_flow.json")


def record_noop_flow(cases) -> None:
    case = cases["verified-max"]
    source = Path(case.source).read_text("utf-8")
    rec = Recorder(TestClient(create_app(engine_cfg(case))))
    rec.create(source, "LemmaInference", "Max.dfy")
    rec.action("suggest")
    rec.dump("noop", source, "LemmaInference", "noop_flow.json")


def record_reject_flow(cases, tmp_cassettes: Path) -> None:
    case = cases["repair-assert"]
    responses = [
        "```dafny\nmethod M() {\n  assert 2 == 2;\n}\n```\n",
        "```dafny\nmethod M() {\n  assert 1 + 1 == 2;\n}\n```\n",
    ]
    queue = list(responses)

    def transport(url, payload, headers):
        return 200, {
            "id": "scripted",
            "choices": [{"message": {"content": queue.pop(0)}, "finish_reason": "stop"}],
        }

    os.environ.setdefault("DAFNY_PILOT_RECORDING_KEY", "recording-placeholder")
    cfg = EngineConfig(
        verifier=VerifierConfig(mode="replay", fixture_dir=str(case.fixture_dir)),
        provider=ProviderConfig(
            mode="record",
            cassette_dir=str(tmp_cassettes),
            api_key_env="DAFNY_PILOT_RECORDING_KEY",
        ),
        loop=LoopConfig(),
    )
    real_client = LlmClient
    service_mod.LlmClient = lambda provider_cfg: real_client(provider_cfg, transport=transport)
    try:
        source = Path(case.source).read_text("utf-8")
        rec = Recorder(TestClient(create_app(cfg)))
        rec.create(source, "Repair", "M.dfy")
        rec.action("suggest")
        rec.action("candidates/0/reject")
        rec.action("suggest")
        rec.dump("reject", source, "Repair", "reject_flow.json")
    finally:
        service_mod.LlmClient = real_client


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    cases = {c.id: c for c in load_manifest(REPO / "corpus" / "manifest.json")}
    record_accept_flow(cases)
    with tempfile.TemporaryDirectory() as tmp:
        record_reject_flow(cases, Path(tmp))
    record_noop_flow(cases)
    print(f"fixtures written to {OUT}")


if __name__ == "__main__":
    main()
