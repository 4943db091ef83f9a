"""HTTP service for live human-in-the-loop annotation sessions.

The SessionStore owns all session state and label persistence (crash-safe
JSONL appends); the FastAPI app is a thin JSON layer over it. Sessions
serve proposals strictly in order: no skipping, no double-labelling.
"""

from __future__ import annotations

import io
import json
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as PILImage

from .core import (
    LabelSource,
    LabelledPixel,
    PixelRef,
    decode_entry,
    encode_entry,
)
from .datasets import Dataset

__all__ = [
    "DEFAULT_KEY_SEQUENCE",
    "UnknownSessionError",
    "SessionStateError",
    "BadRequestError",
    "Session",
    "SessionStore",
    "create_app",
]

DEFAULT_KEY_SEQUENCE = "asdfghjkl;qwertyuiopzxcvbnm,./"


class UnknownSessionError(KeyError):
    """No such session (HTTP 404)."""


class SessionStateError(ValueError):
    """Request conflicts with the session's current state (HTTP 409)."""


class BadRequestError(ValueError):
    """Malformed or invalid request payload (HTTP 400)."""


def _group_by_image(refs: Sequence[PixelRef]) -> list[PixelRef]:
    """All of one image's proposals are served consecutively; image order
    follows first appearance, within-image order is preserved."""
    buckets: dict[str, list[PixelRef]] = {}
    for ref in refs:
        buckets.setdefault(ref.image_id, []).append(ref)
    out: list[PixelRef] = []
    for image_id in buckets:
        out.extend(buckets[image_id])
    return out


@dataclass
class Session:
    session_id: str
    mode: str  # "propose" | "human-pick"
    proposals: list[PixelRef]
    round: int = 0
    cursor: int = 0
    collected: list[LabelledPixel] = field(default_factory=list)
    timings_ms: list[float] = field(default_factory=list)
    closed: bool = False
    lock: threading.RLock = field(default_factory=threading.RLock)

    # -- the oracle's session protocol --

    def enqueue(self, proposals: Sequence[PixelRef]) -> None:
        with self.lock:
            if self.closed:
                raise SessionStateError("session is closed")
            self.proposals.extend(_group_by_image(list(proposals)))

    def queue_length(self) -> int:
        with self.lock:
            return len(self.proposals)

    def collected_labels(self) -> tuple[LabelledPixel, ...]:
        with self.lock:
            return tuple(self.collected)

    def is_closed(self) -> bool:
        with self.lock:
            return self.closed


class SessionStore:
    """All annotation sessions over one dataset, persisting to one JSONL file."""

    def __init__(self, dataset: Dataset, labels_path: str | Path):
        self.dataset = dataset
        self.labels_path = Path(labels_path)
        self._sessions: dict[str, Session] = {}
        self._store_lock = threading.RLock()
        self._labelled: set[PixelRef] = set()
        self._existing: list[LabelledPixel] = []
        if self.labels_path.exists():
            for lineno, line in enumerate(
                self.labels_path.read_text(encoding="utf-8").splitlines(), start=1
            ):
                if not line.strip():
                    continue
                try:
                    lp = decode_entry(line)
                except ValueError as exc:
                    raise ValueError(f"{self.labels_path}:{lineno}: {exc}") from exc
                self._existing.append(lp)
                self._labelled.add(lp.pixel)
        self._png_cache: dict[str, bytes] = {}

    # -- validation helpers --

    def _check_ref(self, ref: PixelRef) -> None:
        try:
            img = self.dataset.image_by_id(ref.image_id)
        except KeyError:
            raise BadRequestError(f"unknown image id {ref.image_id!r}") from None
        if not (0 <= ref.row < img.height and 0 <= ref.col < img.width):
            raise BadRequestError(
                f"pixel ({ref.row}, {ref.col}) outside image {ref.image_id!r} "
                f"({img.height}x{img.width})"
            )

    def keymap(self) -> list[dict]:
        c = self.dataset.num_classes
        keys = self.dataset.keys
        if keys is None:
            if c > len(DEFAULT_KEY_SEQUENCE):
                raise BadRequestError(
                    f"{c} classes exceed the default key sequence; "
                    "provide 'keys' in classes.json"
                )
            keys = tuple(DEFAULT_KEY_SEQUENCE[:c])
        return [
            {
                "key": keys[i],
                "class_id": i,
                "name": self.dataset.class_names[i],
                "color": list(self.dataset.palette[i]),
            }
            for i in range(c)
        ]

    # -- session lifecycle --

    def create_session(
        self,
        proposals: Sequence[PixelRef],
        mode: str = "propose",
        round_index: int = 0,
        resume: bool = False,
        session_id: str | None = None,
    ) -> str:
        if mode not in ("propose", "human-pick"):
            raise BadRequestError(f"unknown mode {mode!r}")
        proposals = list(proposals)
        if mode == "propose" and not proposals:
            raise BadRequestError("propose mode requires at least one proposal")
        seen: set[PixelRef] = set()
        for ref in proposals:
            self._check_ref(ref)
            if ref in seen:
                raise BadRequestError(f"duplicate proposal {ref}")
            seen.add(ref)
        ordered = _group_by_image(proposals)
        with self._store_lock:
            sid = session_id or uuid.uuid4().hex[:12]
            if sid in self._sessions:
                raise BadRequestError(f"session id {sid!r} already exists")
            session = Session(session_id=sid, mode=mode, proposals=ordered, round=round_index)
            if resume:
                # Restore cursor and collected labels from the persisted file.
                for lp in self._existing:
                    if session.cursor >= len(ordered):
                        break
                    if lp.pixel == ordered[session.cursor]:
                        session.collected.append(lp)
                        session.cursor += 1
            else:
                already = [ref for ref in ordered if ref in self._labelled]
                if already:
                    raise BadRequestError(f"pixel {already[0]} is already labelled")
            self._sessions[sid] = session
            return sid

    def get(self, session_id: str) -> Session:
        with self._store_lock:
            try:
                return self._sessions[session_id]
            except KeyError:
                raise UnknownSessionError(f"unknown session {session_id!r}") from None

    def close_session(self, session_id: str) -> None:
        session = self.get(session_id)
        with session.lock:
            session.closed = True

    # -- the annotation operations --

    def next_proposal(self, session_id: str) -> dict:
        session = self.get(session_id)
        with session.lock:
            if session.mode == "human-pick":
                return {
                    "done": False,
                    "mode": "human-pick",
                    "images": sorted(self.dataset.ids()),
                    "keymap": self.keymap(),
                    "picked": len(session.collected),
                }
            if session.cursor >= len(session.proposals):
                return {"done": True, "mode": "propose", "total": len(session.proposals)}
            ref = session.proposals[session.cursor]
            return {
                "done": False,
                "mode": "propose",
                "index": session.cursor,
                "total": len(session.proposals),
                "image_id": ref.image_id,
                "image_url": f"/images/{ref.image_id}",
                "row": ref.row,
                "col": ref.col,
                "keymap": self.keymap(),
            }

    def submit_label(
        self, session_id: str, proposal_index: int, class_id: int, elapsed_ms: float
    ) -> dict:
        session = self.get(session_id)
        with session.lock:
            if session.closed:
                raise SessionStateError("session is closed")
            if session.mode != "propose":
                raise SessionStateError("label submission requires a propose-mode session")
            if session.cursor >= len(session.proposals):
                raise SessionStateError("session already complete")
            if proposal_index != session.cursor:
                raise SessionStateError(
                    f"proposal index {proposal_index} is not current (cursor is "
                    f"{session.cursor}); no skipping or re-labelling"
                )
            if not 0 <= class_id < self.dataset.num_classes:
                raise BadRequestError(
                    f"class_id {class_id} outside [0, {self.dataset.num_classes})"
                )
            if elapsed_ms < 0:
                raise BadRequestError("elapsed_ms must be >= 0")
            ref = session.proposals[session.cursor]
            lp = LabelledPixel(ref, class_id, session.round, LabelSource.HUMAN)
            self._append_label(lp)
            session.collected.append(lp)
            session.timings_ms.append(float(elapsed_ms))
            session.cursor += 1
            return {"ok": True, "cursor": session.cursor, "total": len(session.proposals)}

    def pick_pixel(
        self, session_id: str, image_id: str, row: int, col: int, class_id: int
    ) -> dict:
        session = self.get(session_id)
        with session.lock:
            if session.closed:
                raise SessionStateError("session is closed")
            if session.mode != "human-pick":
                raise SessionStateError("free picks require a human-pick session")
            ref = PixelRef(image_id, row, col)
            self._check_ref(ref)
            if not 0 <= class_id < self.dataset.num_classes:
                raise BadRequestError(
                    f"class_id {class_id} outside [0, {self.dataset.num_classes})"
                )
            if ref in self._labelled:
                raise SessionStateError(f"pixel {ref} is already labelled")
            lp = LabelledPixel(ref, class_id, session.round, LabelSource.HUMAN)
            self._append_label(lp)
            session.collected.append(lp)
            return {"ok": True, "picked": len(session.collected)}

    def progress(self, session_id: str) -> dict:
        session = self.get(session_id)
        with session.lock:
            counts: dict[int, int] = {}
            for lp in session.collected:
                counts[lp.class_id] = counts.get(lp.class_id, 0) + 1
            mean_ms = (
                float(np.mean(session.timings_ms)) if session.timings_ms else None
            )
            return {
                "done": session.cursor if session.mode == "propose" else len(session.collected),
                "total": len(session.proposals),
                "mean_ms": mean_ms,
                "per_class_counts": {str(k): v for k, v in sorted(counts.items())},
            }

    def image_png(self, image_id: str) -> bytes:
        if image_id not in self._png_cache:
            try:
                img = self.dataset.image_by_id(image_id)
            except KeyError:
                raise BadRequestError(f"unknown image id {image_id!r}") from None
            arr = np.round(np.asarray(img.pixels, dtype=np.float64) * 255.0).astype(np.uint8)
            buf = io.BytesIO()
            PILImage.fromarray(arr, mode="RGB").save(buf, format="PNG")
            self._png_cache[image_id] = buf.getvalue()
        return self._png_cache[image_id]

    def _append_label(self, lp: LabelledPixel) -> None:
        # File first, memory second: a crash leaves exactly the submitted prefix.
        with self.labels_path.open("a", encoding="utf-8", newline="\n") as fh:
            fh.write(encode_entry(lp) + "\n")
            fh.flush()
        self._labelled.add(lp.pixel)
        self._existing.append(lp)


# --- HTTP layer -----------------------------------------------------------------

def create_app(store: SessionStore, static_dir: str | Path | None = None):
    from fastapi import Body, FastAPI, Request
    from fastapi.responses import JSONResponse, Response
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="pixelpick annotation server")

    def _error(status: int, code: str, detail: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": code, "detail": detail})

    @app.exception_handler(UnknownSessionError)
    async def _unknown(request: Request, exc: UnknownSessionError):
        return _error(404, "unknown_session", str(exc.args[0]) if exc.args else str(exc))

    @app.exception_handler(SessionStateError)
    async def _state(request: Request, exc: SessionStateError):
        return _error(409, "conflict", str(exc))

    @app.exception_handler(BadRequestError)
    async def _bad(request: Request, exc: BadRequestError):
        return _error(400, "bad_request", str(exc))

    @app.post("/sessions")
    def create_session(payload: dict = Body(...)):
        try:
            proposals = [
                PixelRef(p["image"], int(p["row"]), int(p["col"]))
                for p in payload.get("proposals", [])
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise BadRequestError(f"malformed proposals: {exc}") from exc
        mode = payload.get("mode", "propose")
        round_index = int(payload.get("round", 0))
        resume = bool(payload.get("resume", False))
        sid = store.create_session(proposals, mode=mode, round_index=round_index, resume=resume)
        return {"session_id": sid}

    @app.get("/sessions/{session_id}/next")
    def next_proposal(session_id: str):
        return store.next_proposal(session_id)

    @app.post("/sessions/{session_id}/labels")
    def submit_label(session_id: str, payload: dict = Body(...)):
        try:
            index = int(payload["index"])
            class_id = int(payload["class_id"])
            elapsed_ms = float(payload.get("elapsed_ms", 0.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise BadRequestError(f"malformed label payload: {exc}") from exc
        return store.submit_label(session_id, index, class_id, elapsed_ms)

    @app.get("/sessions/{session_id}/progress")
    def progress(session_id: str):
        return store.progress(session_id)

    @app.post("/sessions/{session_id}/picks")
    def pick(session_id: str, payload: dict = Body(...)):
        try:
            image_id = payload["image"]
            row = int(payload["row"])
            col = int(payload["col"])
            class_id = int(payload["class_id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BadRequestError(f"malformed pick payload: {exc}") from exc
        return store.pick_pixel(session_id, image_id, row, col, class_id)

    @app.get("/images/{image_id}")
    def image(image_id: str):
        return Response(content=store.image_png(image_id), media_type="image/png")

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
