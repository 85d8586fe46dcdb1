"""Long-running session service speaking a line-of-JSON message protocol
over a WebSocket, with one transcript file per session.

See PROTOCOL.md at the repository root for the frozen wire format. The
short version: a client opens ``/ws``, sends ``CreateSession`` and then
``UserTurn`` messages (each with a strictly increasing per-session ``seq``),
and receives ``SessionCreated``, one or more ``SystemTurn`` messages per
user turn, exactly one ``Trace`` per system turn, and ``Error`` for anything
rejected. Server messages carry their own per-session ``seq``; a client that
reconnects sends ``resume`` + ``last_seq`` and missed messages are replayed
from the persisted log.

Sessions are deterministic given (pack, seed, user turns), which is also how
a restarted service restores a live session: it re-runs the persisted user
turns through a fresh engine and continues from the recorded sequence
number.
"""

from __future__ import annotations

import asyncio
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse

from .pack import PersonaPack, load_pack
from .session import Session, SessionClosed, TurnRecord

PROTOCOL_VERSION = 1


@dataclass
class ServiceConfig:
    pack_path: str
    persist_dir: str
    host: str = "127.0.0.1"
    port: int = 8140
    token: Optional[str] = None
    idle_timeout: float = 3600.0
    seed: int = 0
    tick: Optional[float] = None


class _SessionBox:
    """One live session plus its wire bookkeeping."""

    def __init__(self, session: Session, persist_dir: Path):
        self.session = session
        self.lock = asyncio.Lock()
        self.server_seq = 0
        self.client_seq = 0
        self.last_active = 0.0
        self.persist_dir = persist_dir

    @property
    def sid(self) -> str:
        return self.session.session_id

    def turns_path(self) -> Path:
        return self.persist_dir / f"{self.sid}.turns.jsonl"

    def msgs_path(self) -> Path:
        return self.persist_dir / f"{self.sid}.msgs.jsonl"

    def meta_path(self) -> Path:
        return self.persist_dir / f"{self.sid}.meta.json"

    def next_seq(self) -> int:
        self.server_seq += 1
        return self.server_seq

    def persist_turn(self, record: TurnRecord) -> None:
        with self.turns_path().open("a") as f:
            f.write(record.to_json() + "\n")

    def persist_msg(self, msg: dict) -> None:
        with self.msgs_path().open("a") as f:
            f.write(json.dumps(msg, sort_keys=True) + "\n")

    def persist_meta(self) -> None:
        self.meta_path().write_text(
            json.dumps(
                {
                    "session": self.sid,
                    "client_seq": self.client_seq,
                    "server_seq": self.server_seq,
                    "closed": self.session.closed,
                },
                sort_keys=True,
            )
        )


class SessionService:
    def __init__(self, config: ServiceConfig, pack: Optional[PersonaPack] = None):
        self.config = config
        self.pack = pack if pack is not None else load_pack(config.pack_path)
        self.persist_dir = Path(config.persist_dir)
        self.persist_dir.mkdir(parents=True, exist_ok=True)
        self.boxes: dict[str, _SessionBox] = {}
        self._session_counter = 0
        self._clock = 0.0  # logical time for idle eviction

    # ------------------------------------------------------------------

    def _new_sid(self) -> str:
        self._session_counter += 1
        existing = {p.stem.split(".")[0] for p in self.persist_dir.glob("*.turns.jsonl")}
        while f"s{self._session_counter:04d}" in existing:
            self._session_counter += 1
        return f"s{self._session_counter:04d}"

    def touch(self, box: _SessionBox) -> None:
        self._clock += 1.0
        box.last_active = self._clock

    def evict_idle(self) -> None:
        cutoff = self._clock - self.config.idle_timeout
        for sid in [s for s, b in self.boxes.items() if b.last_active < cutoff]:
            del self.boxes[sid]

    def create(self) -> tuple[_SessionBox, list[TurnRecord]]:
        sid = self._new_sid()
        session = Session(
            self.pack, session_id=sid, seed=self.config.seed, tick=self.config.tick
        )
        box = _SessionBox(session, self.persist_dir)
        self.boxes[sid] = box
        self.touch(box)
        opening = session.open_turns()
        return box, opening

    def restore(self, sid: str) -> Optional[_SessionBox]:
        """Rebuild a session from its persisted user turns (deterministic
        replay), trusting the recorded sequence counters."""
        box = self.boxes.get(sid)
        if box is not None:
            return box
        turns_path = self.persist_dir / f"{sid}.turns.jsonl"
        meta_path = self.persist_dir / f"{sid}.meta.json"
        if not turns_path.is_file() or not meta_path.is_file():
            return None
        meta = json.loads(meta_path.read_text())
        session = Session(
            self.pack, session_id=sid, seed=self.config.seed, tick=self.config.tick
        )
        session.open_turns()
        for line in turns_path.read_text().splitlines():
            record = json.loads(line)
            if record.get("speaker") == "user":
                try:
                    session.run_turn(record["text"])
                except SessionClosed:
                    break
        box = _SessionBox(session, self.persist_dir)
        box.server_seq = int(meta.get("server_seq", 0))
        box.client_seq = int(meta.get("client_seq", 0))
        self.boxes[sid] = box
        self.touch(box)
        return box

    def replay_msgs(self, sid: str, after_seq: int) -> list[dict]:
        path = self.persist_dir / f"{sid}.msgs.jsonl"
        if not path.is_file():
            return []
        out = []
        for line in path.read_text().splitlines():
            msg = json.loads(line)
            if int(msg.get("seq", 0)) > after_seq:
                out.append(msg)
        return out

    def export_transcript(self, sid: str) -> Optional[str]:
        box = self.boxes.get(sid)
        if box is not None:
            return "".join(r.to_json() + "\n" for r in box.session.history)
        path = self.persist_dir / f"{sid}.turns.jsonl"
        if path.is_file():
            return path.read_text()
        return None


def _msg(kind: str, seq: int, session: Optional[str] = None, **payload) -> dict:
    out = {"v": PROTOCOL_VERSION, "kind": kind, "seq": seq, "session": session}
    out.update(payload)
    return out


def _turn_messages(box: _SessionBox, records: list[TurnRecord]) -> list[dict]:
    """SystemTurn plus exactly one Trace per system record."""
    msgs = []
    for record in records:
        d = record.to_dict()
        trace = d.pop("trace", {})
        msgs.append(
            _msg("SystemTurn", box.next_seq(), box.sid, turn=d, text=record.text)
        )
        msgs.append(
            _msg("Trace", box.next_seq(), box.sid, turn_index=record.index, trace=trace)
        )
    return msgs


def create_app(config: ServiceConfig, pack: Optional[PersonaPack] = None) -> FastAPI:
    from fastapi.middleware.cors import CORSMiddleware

    service = SessionService(config, pack=pack)
    app = FastAPI(title="parley session service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["GET"], allow_headers=["*"]
    )
    app.state.service = service

    @app.get("/health")
    async def health():
        return {"ok": True, "pack": service.pack.name}

    @app.get("/sessions/{sid}/transcript")
    async def transcript(sid: str):
        text = service.export_transcript(sid)
        if text is None:
            return JSONResponse({"error": "UnknownSession"}, status_code=404)
        return PlainTextResponse(text, media_type="application/x-ndjson")

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        try:
            while True:
                raw = await ws.receive_text()
                for msg in _handle_client_message(service, raw):
                    await ws.send_text(json.dumps(msg, sort_keys=True))
        except WebSocketDisconnect:
            return

    return app


def _handle_client_message(service: SessionService, raw: str) -> list[dict]:
    try:
        msg = json.loads(raw)
    except json.JSONDecodeError:
        return [_msg("Error", 0, None, code="BadMessage", message="not valid JSON")]
    kind = msg.get("kind")
    if kind == "CreateSession":
        return _handle_create(service, msg)
    if kind == "UserTurn":
        return _handle_user_turn(service, msg)
    if kind == "EndSession":
        return _handle_end(service, msg)
    return [
        _msg("Error", 0, msg.get("session"), code="UnknownKind", message=f"unknown kind {kind!r}")
    ]


def _check_token(service: SessionService, msg: dict) -> Optional[dict]:
    want = service.config.token
    if want and msg.get("token") != want:
        return _msg("Error", 0, None, code="BadToken", message="missing or wrong token")
    return None


def _handle_create(service: SessionService, msg: dict) -> list[dict]:
    bad = _check_token(service, msg)
    if bad:
        return [bad]
    service.evict_idle()
    resume_sid = msg.get("resume")
    if resume_sid:
        box = service.restore(resume_sid)
        if box is None:
            return [
                _msg("Error", 0, resume_sid, code="UnknownSession", message=f"no session {resume_sid}")
            ]
        service.touch(box)
        created = _msg("SessionCreated", box.server_seq, box.sid, resumed=True)
        replay = service.replay_msgs(box.sid, int(msg.get("last_seq", 0)))
        return [created] + replay
    box, opening = service.create()
    out = [_msg("SessionCreated", box.next_seq(), box.sid)]
    for record in opening:
        box.persist_turn(record)
    out.extend(_turn_messages(box, opening))
    for m in out:
        box.persist_msg(m)
    box.persist_meta()
    return out


def _handle_user_turn(service: SessionService, msg: dict) -> list[dict]:
    bad = _check_token(service, msg)
    if bad:
        return [bad]
    sid = msg.get("session")
    box = service.boxes.get(sid) if sid else None
    if box is None:
        return [_msg("Error", 0, sid, code="UnknownSession", message=f"no session {sid!r}")]
    seq = int(msg.get("seq", 0))
    if seq <= box.client_seq:
        return [
            _msg(
                "Error",
                0,
                sid,
                code="ReplayRejected",
                message=f"client seq {seq} not above {box.client_seq}",
            )
        ]
    box.client_seq = seq
    service.touch(box)
    text = str(msg.get("text", ""))
    try:
        records = box.session.run_turn(text)
    except SessionClosed:
        box.persist_meta()
        return [_msg("Error", 0, sid, code="SessionClosed", message="session has ended")]
    user_record = box.session.history[-1 - len(records)]
    box.persist_turn(user_record)
    for record in records:
        box.persist_turn(record)
    out = _turn_messages(box, records)
    for m in out:
        box.persist_msg(m)
    box.persist_meta()
    return out


def _handle_end(service: SessionService, msg: dict) -> list[dict]:
    sid = msg.get("session")
    box = service.boxes.pop(sid, None) if sid else None
    if box is None:
        return [_msg("Error", 0, sid, code="UnknownSession", message=f"no session {sid!r}")]
    box.session.closed = True
    box.persist_meta()
    return []


def serve(config: ServiceConfig) -> None:
    import uvicorn

    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
