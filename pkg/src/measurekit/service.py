"""Local HTTP service exposing the sequential engine to the console.

One writer per session: every mutation goes through a per-session record,
an append-only JSONL file, and the in-memory state is always reproducible
by replaying it (undo replays all but the last surviving outcome).  Bodies
are JSON; errors carry a machine-readable code.  Loopback-only by default;
restarting the process recovers every session from its record.
"""
from __future__ import annotations

import json
import threading
import uuid
from dataclasses import replace
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import modelspec
from .modelspec import ModelValidationError
from .sequential import (
    ExperimentConfig,
    ExperimentState,
    choose_placement,
    posterior_entropy,
    update,
)

ERROR_STATUS = {
    "unknown_session": 404,
    "validation_error": 400,
    "invalid_placement": 400,
    "invalid_outcome": 400,
    "session_terminated": 409,
    "nothing_to_undo": 409,
}


class ServiceError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


class SessionStore:
    """Append-only records plus replayed in-memory states."""

    def __init__(self, state_dir: Path):
        self.state_dir = Path(state_dir)
        self.state_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._sessions: dict[str, dict] = {}

    def _record_path(self, session_id: str) -> Path:
        return self.state_dir / f"{session_id}.jsonl"

    def _append(self, session_id: str, event: dict) -> None:
        with self._record_path(session_id).open("a") as fh:
            fh.write(json.dumps(event) + "\n")

    def _events(self, session_id: str) -> list[dict]:
        path = self._record_path(session_id)
        if not path.exists():
            raise ServiceError("unknown_session", f"no session {session_id}")
        return [json.loads(line) for line in path.read_text().splitlines() if line]

    @staticmethod
    def effective_trials(events: list[dict]) -> list[dict]:
        trials: list[dict] = []
        for ev in events:
            if ev["type"] == "outcome":
                trials.append(ev)
            elif ev["type"] == "undo":
                if trials:
                    trials.pop()
        return trials

    def _replay(self, session_id: str) -> dict:
        events = self._events(session_id)
        created = events[0]
        config = modelspec.parse_experiment(created["config"])
        state = ExperimentState.initial(config)
        for ev in self.effective_trials(events[1:]):
            state = update(config, state, ev["placement"], ev["outcome"])
        return {"config": config, "config_doc": created["config"],
                "state": state, "seq": len(events)}

    def load(self, session_id: str) -> dict:
        with self._lock:
            if session_id not in self._sessions:
                self._sessions[session_id] = self._replay(session_id)
            return self._sessions[session_id]

    def create(self, config_doc: dict) -> str:
        try:
            modelspec.validate_document(config_doc)
            if config_doc.get("kind") != "experiment":
                raise ModelValidationError("the service takes experiment models")
            config = modelspec.parse_experiment(config_doc)
        except (ModelValidationError, ValueError) as e:
            raise ServiceError("validation_error", str(e)) from e
        session_id = uuid.uuid4().hex[:12]
        with self._lock:
            self._append(session_id, {"type": "created", "config": config_doc})
            self._sessions[session_id] = {
                "config": config, "config_doc": config_doc,
                "state": ExperimentState.initial(config), "seq": 1}
        return session_id

    def record_outcome(self, session_id: str, placement: str, outcome: str) -> dict:
        with self._lock:
            if session_id not in self._sessions:
                self._sessions[session_id] = self._replay(session_id)
            session = self._sessions[session_id]
            config: ExperimentConfig = session["config"]
            state: ExperimentState = session["state"]
            if state.terminated:
                raise ServiceError("session_terminated",
                                   f"session ended: {state.reason}")
            try:
                p = config.placement(placement)
            except KeyError:
                raise ServiceError("invalid_placement",
                                   f"unknown placement {placement!r}") from None
            if outcome not in p.outcomes:
                raise ServiceError("invalid_outcome",
                                   f"{outcome!r} not an outcome of {placement!r}")
            new_state = update(config, state, placement, outcome)
            if new_state.flag:
                raise ServiceError("invalid_outcome", new_state.flag)
            self._append(session_id, {"type": "outcome", "placement": placement,
                                      "outcome": outcome})
            session["state"] = new_state
            session["seq"] += 1
            return session

    def undo(self, session_id: str) -> dict:
        with self._lock:
            if session_id not in self._sessions:
                self._sessions[session_id] = self._replay(session_id)
            session = self._sessions[session_id]
            events = self._events(session_id)
            if not self.effective_trials(events[1:]):
                raise ServiceError("nothing_to_undo", "no trials to undo")
            self._append(session_id, {"type": "undo"})
            self._sessions[session_id] = self._replay(session_id)
            return self._sessions[session_id]

    def export(self, session_id: str) -> dict:
        with self._lock:
            events = self._events(session_id)
            if session_id not in self._sessions:
                self._sessions[session_id] = self._replay(session_id)
            session = self._sessions[session_id]
        config = session["config"]
        state = ExperimentState.initial(config)
        snapshots = [state_view(session, state=state, seq=0)]
        for i, ev in enumerate(self.effective_trials(events[1:])):
            state = update(config, state, ev["placement"], ev["outcome"])
            snapshots.append(state_view(session, state=state, seq=i + 1))
        return {"session_id": session_id, "events": events,
                "snapshots": snapshots}


def state_view(session: dict, state: ExperimentState | None = None,
               seq: int | None = None) -> dict:
    state = session["state"] if state is None else state
    post = state.posterior
    return {
        "posterior": {
            "atoms": [{"key": modelspec._key_doc(k), "weight": w}
                      for k, w in post.atom_weights.items()],
            "cells": [{"cell": modelspec._cell_doc(c), "value": v}
                      for c, v in zip(post.density.cells, post.density.values)],
        },
        "entropy_nats": posterior_entropy(post),
        "history": [{"trial": r.trial, "placement": r.placement,
                     "outcome": r.outcome, "expected_gain_nats": r.expected_gain,
                     "posterior_entropy_nats": r.posterior_entropy}
                    for r in state.history],
        "terminated": state.terminated,
        "reason": state.reason,
        "seq": session["seq"] if seq is None else seq,
    }


def create_app(state_dir: Path) -> FastAPI:
    app = FastAPI(title="sequential-estimation service")
    from fastapi.middleware.cors import CORSMiddleware

    # the console is served from another local port
    app.add_middleware(CORSMiddleware,
                       allow_origin_regex=r"http://(localhost|127\.0\.0\.1)(:\d+)?",
                       allow_methods=["*"], allow_headers=["*"])
    store = SessionStore(state_dir)
    app.state.store = store

    @app.exception_handler(ServiceError)
    async def _service_error(_request: Request, exc: ServiceError):
        return JSONResponse(
            status_code=ERROR_STATUS.get(exc.code, 400),
            content={"error": {"code": exc.code, "message": exc.message}})

    @app.post("/sessions")
    async def create_session(request: Request):
        body = await request.json()
        config_doc = body.get("config", body)
        session_id = store.create(config_doc)
        session = store.load(session_id)
        return {"session_id": session_id, "state": state_view(session)}

    @app.get("/sessions/{session_id}")
    async def get_state(session_id: str):
        return {"session_id": session_id,
                "state": state_view(store.load(session_id))}

    @app.get("/sessions/{session_id}/propose")
    async def propose(session_id: str):
        session = store.load(session_id)
        decision = choose_placement(session["config"], session["state"])
        return {"session_id": session_id,
                "recommended": decision.placement,
                "terminate": decision.placement is None,
                "reason": decision.reason,
                "gains_nats": dict(decision.gains),
                "seq": session["seq"]}

    @app.post("/sessions/{session_id}/outcomes")
    async def record_outcome(session_id: str, request: Request):
        body = await request.json()
        for field in ("placement", "outcome"):
            if field not in body:
                raise ServiceError("validation_error", f"missing field {field!r}")
        session = store.record_outcome(session_id, body["placement"],
                                       body["outcome"])
        return {"session_id": session_id, "state": state_view(session)}

    @app.post("/sessions/{session_id}/undo")
    async def undo(session_id: str):
        session = store.undo(session_id)
        return {"session_id": session_id, "state": state_view(session)}

    @app.get("/sessions/{session_id}/export")
    async def export(session_id: str):
        return store.export(session_id)

    return app
