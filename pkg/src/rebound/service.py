"""HTTP API serving logs, sensor payloads, projected wireframes and the
edit-session command channel.

One live session per log (single writer); concurrent open attempts on a
locked log get 409. Sessions expire after ``session_ttl`` seconds of
inactivity, releasing the lock. Read endpoints reflect the live session's
working state when one exists, otherwise the on-disk log.
"""
from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import adapters
from .errors import ConversionError, EditRejected, ReboundError, UnknownTarget
from .geometry import Ray, drag_horizontal, drag_vertical, project_box_wireframe, rotate_about_z
from .session import (
    GROUND_TRUTH,
    AddBox,
    AddCategory,
    DeleteBox,
    EditSession,
    FilterSpec,
    ModifyBox,
    Relabel,
)
from .store import box_to_json, load_log, pose_to_json
from .types import Box3D, LogBundle, Quaternion, new_instance_id

MEDIA_TYPES = {".png": "image/png", ".jpg": "image/jpeg", ".jpeg": "image/jpeg"}

DEFAULT_SESSION_TTL = 1800.0  # seconds


# ---------------------------------------------------------------------------
# request payloads

class CreateSessionPayload(BaseModel):
    log: str


class BoxPayload(BaseModel):
    center: list[float]
    size: list[float]
    rotation: list[float]
    category: str
    instance_id: str | None = None
    attributes: dict[str, str] = {}


class CommandPayload(BaseModel):
    type: str
    frame_id: str | None = None
    instance_id: str | None = None
    box: BoxPayload | None = None
    center: list[float] | None = None
    size: list[float] | None = None
    rotation: list[float] | None = None
    category: str | None = None
    label: str | None = None


class FilterPayload(BaseModel):
    visible_categories: list[str] = []
    min_confidence: float = 0.0
    max_range_m: float | None = None
    show_ground_truth: bool = True
    visible_prediction_sets: list[str] | None = None  # None -> all sets


class RayPayload(BaseModel):
    origin: list[float]
    direction: list[float]


class PickPayload(BaseModel):
    frame_id: str
    ray: RayPayload


class DragPayload(BaseModel):
    frame_id: str
    instance_id: str
    grab: RayPayload
    release: RayPayload
    view_dir: list[float] | None = None


class RotatePayload(BaseModel):
    frame_id: str
    instance_id: str
    delta_yaw: float


class ModePayload(BaseModel):
    mode: str


class ExportPayload(BaseModel):
    dataset: str
    output: str


# ---------------------------------------------------------------------------
# payload conversion

def _vec(values: list[float], length: int, what: str) -> tuple[float, ...]:
    if len(values) != length:
        raise EditRejected(f"{what} must have {length} components")
    return tuple(float(v) for v in values)


def _quat(values: list[float], what: str) -> Quaternion:
    if len(values) != 4:
        raise EditRejected(f"{what} must have 4 components (w, x, y, z)")
    return Quaternion(*(float(v) for v in values))


def _ray(payload: RayPayload) -> Ray:
    origin = _vec(payload.origin, 3, "ray origin")
    direction = _vec(payload.direction, 3, "ray direction")
    norm = sum(v * v for v in direction) ** 0.5
    if abs(norm - 1.0) > 1e-6:
        raise EditRejected(f"ray direction norm {norm:.6g} is not unit length")
    return Ray(origin, direction)


def _require(value, what: str):
    if value is None:
        raise EditRejected(f"command payload is missing {what!r}")
    return value


def _to_command(payload: CommandPayload):
    kind = payload.type
    if kind == "add_box":
        frame_id = _require(payload.frame_id, "frame_id")
        box = _require(payload.box, "box")
        return AddBox(
            frame_id,
            Box3D(
                center=_vec(box.center, 3, "box center"),
                size=_vec(box.size, 3, "box size"),
                rotation=_quat(box.rotation, "box rotation"),
                category=box.category,
                instance_id=box.instance_id or new_instance_id(),
                attributes=dict(box.attributes),
            ),
        )
    if kind == "delete_box":
        return DeleteBox(_require(payload.frame_id, "frame_id"), _require(payload.instance_id, "instance_id"))
    if kind == "modify_box":
        if payload.center is None and payload.size is None and payload.rotation is None:
            raise EditRejected("modify_box requires at least one of center/size/rotation")
        return ModifyBox(
            _require(payload.frame_id, "frame_id"),
            _require(payload.instance_id, "instance_id"),
            center=None if payload.center is None else _vec(payload.center, 3, "center"),
            size=None if payload.size is None else _vec(payload.size, 3, "size"),
            rotation=None if payload.rotation is None else _quat(payload.rotation, "rotation"),
        )
    if kind == "relabel":
        return Relabel(
            _require(payload.frame_id, "frame_id"),
            _require(payload.instance_id, "instance_id"),
            _require(payload.category, "category"),
        )
    if kind == "add_category":
        return AddCategory(_require(payload.label, "label"))
    raise EditRejected(f"unknown command type {kind!r}")


# ---------------------------------------------------------------------------
# server state

@dataclass
class ApiSession:
    session_id: str
    log_id: str
    session: EditSession
    last_activity: float
    mutate_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class LogService:
    """Repository of native logs plus the single-writer session table."""

    def __init__(self, data_root: Path, session_ttl: float = DEFAULT_SESSION_TTL):
        self.data_root = Path(data_root)
        self.session_ttl = session_ttl
        self._bundles: dict[str, LogBundle] = {}
        self._roots: dict[str, Path] = {}
        self._sessions: dict[str, ApiSession] = {}
        self._log_locks: dict[str, str] = {}  # log_id -> session_id
        self._guard = threading.Lock()
        self._scan()

    def _scan(self) -> None:
        if not self.data_root.is_dir():
            raise FileNotFoundError(f"data root {self.data_root} is not a directory")
        candidates = [self.data_root, *sorted(p for p in self.data_root.iterdir() if p.is_dir())]
        for root in candidates:
            if not (root / "metadata.json").is_file():
                continue
            bundle = load_log(root)
            if bundle.log_id not in self._roots:
                self._roots[bundle.log_id] = root
                self._bundles[bundle.log_id] = bundle

    # -- logs ---------------------------------------------------------------

    def log_ids(self) -> list[str]:
        return sorted(self._roots)

    def bundle(self, log_id: str) -> LogBundle:
        """Disk bundle, or the live working copy when a session holds the log."""
        live = self.session_for_log(log_id)
        if live is not None:
            return live.session.bundle
        if log_id not in self._bundles:
            raise HTTPException(404, f"unknown log {log_id!r}")
        return self._bundles[log_id]

    def root(self, log_id: str) -> Path:
        if log_id not in self._roots:
            raise HTTPException(404, f"unknown log {log_id!r}")
        return self._roots[log_id]

    # -- sessions -------------------------------------------------------------

    def _expire_locked(self) -> None:
        now = time.monotonic()
        for sid in [s for s, rec in self._sessions.items() if now - rec.last_activity > self.session_ttl]:
            rec = self._sessions.pop(sid)
            if self._log_locks.get(rec.log_id) == sid:
                del self._log_locks[rec.log_id]

    def open_session(self, log_id: str) -> ApiSession:
        if log_id not in self._roots:
            raise HTTPException(404, f"unknown log {log_id!r}")
        with self._guard:
            self._expire_locked()
            if log_id in self._log_locks:
                raise HTTPException(409, f"log {log_id!r} is locked by another session")
            record = ApiSession(
                session_id=secrets.token_hex(8),
                log_id=log_id,
                session=EditSession(self._bundles[log_id]),
                last_activity=time.monotonic(),
            )
            self._sessions[record.session_id] = record
            self._log_locks[log_id] = record.session_id
            return record

    def get_session(self, session_id: str) -> ApiSession:
        with self._guard:
            self._expire_locked()
            record = self._sessions.get(session_id)
            if record is None:
                raise HTTPException(404, f"unknown session {session_id!r}")
            record.last_activity = time.monotonic()
            return record

    def session_for_log(self, log_id: str) -> ApiSession | None:
        with self._guard:
            self._expire_locked()
            sid = self._log_locks.get(log_id)
            return self._sessions.get(sid) if sid else None

    def close_session(self, session_id: str) -> None:
        with self._guard:
            record = self._sessions.pop(session_id, None)
            if record and self._log_locks.get(record.log_id) == record.session_id:
                del self._log_locks[record.log_id]


# ---------------------------------------------------------------------------
# response helpers

def _frame_json(frame) -> dict:
    return {
        "frame_id": frame.frame_id,
        "timestamp": frame.timestamp,
        "ego_pose": pose_to_json(frame.ego_pose),
        "pointcloud_ref": frame.pointcloud_ref,
        "image_refs": dict(sorted(frame.image_refs.items())),
    }


def _camera_json(cam) -> dict:
    return {
        "name": cam.name,
        "extrinsic": pose_to_json(cam.extrinsic),
        "intrinsic": {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy},
        "width": cam.width,
        "height": cam.height,
    }


def _get_frame(bundle: LogBundle, frame_id: str):
    for frame in bundle.frames:
        if frame.frame_id == frame_id:
            return frame
    raise HTTPException(404, f"unknown frame {frame_id!r}")


def _filtered_entries(
    bundle: LogBundle,
    frame_id: str,
    gt: bool,
    sets: str | None,
    min_conf: float,
    max_range: float | None,
) -> list[tuple[str, Box3D]]:
    _get_frame(bundle, frame_id)
    wanted = set(bundle.predictions) if sets is None else {s for s in sets.split(",") if s}
    spec = FilterSpec(
        min_confidence=min_conf,
        max_range_m=max_range,
        show_ground_truth=gt,
        visible_prediction_sets=frozenset(wanted & set(bundle.predictions)),
    )
    out: list[tuple[str, Box3D]] = []
    if spec.show_ground_truth:
        out.extend(
            (GROUND_TRUTH, b) for b in bundle.annotations.get(frame_id, []) if spec.range_passes(b)
        )
    for name in sorted(spec.visible_prediction_sets):
        out.extend(
            (name, b)
            for b in bundle.predictions[name].get(frame_id, [])
            if b.confidence is not None and b.confidence >= spec.min_confidence and spec.range_passes(b)
        )
    return out


def _session_state_json(record: ApiSession) -> dict:
    s = record.session
    return {
        "session_id": record.session_id,
        "log_id": record.log_id,
        "mode": s.mode,
        "selection": None if s.selection is None else {"frame_id": s.selection[0], "instance_id": s.selection[1]},
        "dirty_frames": sorted(s.dirty_frames),
        "undo_depth": len(s.undo_stack),
        "redo_depth": len(s.redo_stack),
        "vocabulary": list(s.bundle.vocabulary),
        "prediction_sets": sorted(s.bundle.predictions),
        "filter": {
            "visible_categories": sorted(s.filter.visible_categories),
            "min_confidence": s.filter.min_confidence,
            "max_range_m": s.filter.max_range_m,
            "show_ground_truth": s.filter.show_ground_truth,
            "visible_prediction_sets": sorted(s.filter.visible_prediction_sets),
        },
    }


# ---------------------------------------------------------------------------
# app factory

def create_app(
    data_root: Path | str,
    *,
    session_ttl: float = DEFAULT_SESSION_TTL,
    frontend_dir: Path | str | None = None,
) -> FastAPI:
    service = LogService(Path(data_root), session_ttl=session_ttl)
    app = FastAPI(title="rebound annotation service")
    app.state.service = service
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(UnknownTarget)
    async def _unknown_target(_, exc):  # noqa: ANN001
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(EditRejected)
    async def _edit_rejected(_, exc):  # noqa: ANN001
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(ConversionError)
    async def _conversion_error(_, exc):  # noqa: ANN001
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    # -- logs ---------------------------------------------------------------

    @app.get("/api/logs")
    def list_logs():
        out = []
        for log_id in service.log_ids():
            bundle = service.bundle(log_id)
            out.append({"log_id": log_id, "frame_count": len(bundle.frames)})
        return {"logs": out}

    @app.get("/api/logs/{log_id}")
    def log_metadata(log_id: str):
        bundle = service.bundle(log_id)
        return {
            "log_id": bundle.log_id,
            "source_dataset": bundle.source_dataset,
            "vocabulary": list(bundle.vocabulary),
            "cameras": [_camera_json(c) for c in bundle.cameras],
            "prediction_sets": sorted(bundle.predictions),
            "frame_count": len(bundle.frames),
        }

    @app.get("/api/logs/{log_id}/frames")
    def list_frames(log_id: str):
        bundle = service.bundle(log_id)
        return {"frames": [_frame_json(f) for f in bundle.frames]}

    @app.get("/api/logs/{log_id}/frames/{frame_id}/pointcloud")
    def get_pointcloud(log_id: str, frame_id: str):
        bundle = service.bundle(log_id)
        frame = _get_frame(bundle, frame_id)
        source = bundle.payload_map.get(frame.pointcloud_ref)
        if source is None or not Path(source).is_file():
            raise HTTPException(404, f"missing point cloud for frame {frame_id!r}")
        return Response(content=Path(source).read_bytes(), media_type="application/octet-stream")

    @app.get("/api/logs/{log_id}/frames/{frame_id}/image/{camera}")
    def get_image(log_id: str, frame_id: str, camera: str):
        bundle = service.bundle(log_id)
        frame = _get_frame(bundle, frame_id)
        ref = frame.image_refs.get(camera)
        if ref is None:
            raise HTTPException(404, f"no image for camera {camera!r} in frame {frame_id!r}")
        source = Path(bundle.payload_map[ref])
        media = MEDIA_TYPES.get(source.suffix.lower(), "application/octet-stream")
        return Response(content=source.read_bytes(), media_type=media)

    @app.get("/api/logs/{log_id}/frames/{frame_id}/boxes")
    def get_boxes(
        log_id: str,
        frame_id: str,
        gt: bool = True,
        sets: str | None = None,
        min_conf: float = 0.0,
        max_range: float | None = None,
    ):
        bundle = service.bundle(log_id)
        entries = _filtered_entries(bundle, frame_id, gt, sets, min_conf, max_range)
        result: dict = {"ground_truth": [], "predictions": {}}
        for source, box in entries:
            if source == GROUND_TRUTH:
                result["ground_truth"].append(box_to_json(box))
            else:
                result["predictions"].setdefault(source, []).append(box_to_json(box))
        return result

    @app.get("/api/logs/{log_id}/frames/{frame_id}/wireframes")
    def get_wireframes(
        log_id: str,
        frame_id: str,
        camera: str,
        gt: bool = True,
        sets: str | None = None,
        min_conf: float = 0.0,
        max_range: float | None = None,
    ):
        bundle = service.bundle(log_id)
        try:
            cam = bundle.camera(camera)
        except KeyError:
            raise HTTPException(404, f"unknown camera {camera!r}") from None
        entries = _filtered_entries(bundle, frame_id, gt, sets, min_conf, max_range)
        boxes = [
            {
                "source": source,
                "instance_id": box.instance_id,
                "category": box.category,
                "segments": [[list(a), list(b)] for a, b in project_box_wireframe(cam, box)],
            }
            for source, box in entries
        ]
        return {"camera": camera, "frame_id": frame_id, "boxes": boxes}

    # -- sessions -------------------------------------------------------------

    @app.post("/api/sessions", status_code=201)
    def open_session(payload: CreateSessionPayload):
        record = service.open_session(payload.log)
        return _session_state_json(record)

    @app.get("/api/sessions/{session_id}")
    def session_state(session_id: str):
        return _session_state_json(service.get_session(session_id))

    @app.delete("/api/sessions/{session_id}")
    def close_session(session_id: str):
        service.get_session(session_id)
        service.close_session(session_id)
        return {"closed": True}

    @app.post("/api/sessions/{session_id}/commands")
    def apply_command(session_id: str, payload: CommandPayload):
        record = service.get_session(session_id)
        command = _to_command(payload)
        with record.mutate_lock:
            record.session.apply(command)
        return {"applied": True, "state": _session_state_json(record)}

    @app.post("/api/sessions/{session_id}/undo")
    def undo(session_id: str):
        record = service.get_session(session_id)
        with record.mutate_lock:
            applied = record.session.undo()
        return {"applied": applied, "state": _session_state_json(record)}

    @app.post("/api/sessions/{session_id}/redo")
    def redo(session_id: str):
        record = service.get_session(session_id)
        with record.mutate_lock:
            applied = record.session.redo()
        return {"applied": applied, "state": _session_state_json(record)}

    @app.put("/api/sessions/{session_id}/filter")
    def set_filter(session_id: str, payload: FilterPayload):
        record = service.get_session(session_id)
        sets = (
            set(record.session.bundle.predictions)
            if payload.visible_prediction_sets is None
            else set(payload.visible_prediction_sets)
        )
        spec = FilterSpec(
            visible_categories=frozenset(payload.visible_categories),
            min_confidence=payload.min_confidence,
            max_range_m=payload.max_range_m,
            show_ground_truth=payload.show_ground_truth,
            visible_prediction_sets=frozenset(sets),
        )
        with record.mutate_lock:
            record.session.set_filter(spec)
        return {"applied": True, "state": _session_state_json(record)}

    @app.put("/api/sessions/{session_id}/mode")
    def set_mode(session_id: str, payload: ModePayload):
        record = service.get_session(session_id)
        with record.mutate_lock:
            record.session.set_mode(payload.mode)
        return {"applied": True, "mode": record.session.mode}

    @app.post("/api/sessions/{session_id}/pick")
    def pick(session_id: str, payload: PickPayload):
        record = service.get_session(session_id)
        ray = _ray(payload.ray)
        with record.mutate_lock:
            hit = record.session.select_at(ray, payload.frame_id)
            if hit is None:
                record.session.set_selection(payload.frame_id, None)
                return {"instance_id": None, "t": None, "selection": None}
            instance_id, t = hit
            record.session.set_selection(payload.frame_id, instance_id)
        return {
            "instance_id": instance_id,
            "t": t,
            "selection": {"frame_id": payload.frame_id, "instance_id": instance_id},
        }

    @app.post("/api/sessions/{session_id}/drag")
    def drag(session_id: str, payload: DragPayload):
        record = service.get_session(session_id)
        session = record.session
        grab = _ray(payload.grab)
        release = _ray(payload.release)
        with record.mutate_lock:
            box = session.get_box(payload.frame_id, payload.instance_id)
            try:
                if session.mode == "horizontal":
                    moved = drag_horizontal(box, grab, release)
                else:
                    if payload.view_dir is None:
                        raise EditRejected("vertical drag requires view_dir")
                    moved = drag_vertical(box, grab, release, _vec(payload.view_dir, 3, "view_dir"))
            except ReboundError as exc:
                # degenerate geometry: no-op, surfaced to the client
                return {"applied": False, "reason": str(exc)}
            session.apply(ModifyBox(payload.frame_id, payload.instance_id, center=moved.center))
        return {
            "applied": True,
            "mode": session.mode,
            "box": box_to_json(session.get_box(payload.frame_id, payload.instance_id)),
        }

    @app.post("/api/sessions/{session_id}/rotate")
    def rotate(session_id: str, payload: RotatePayload):
        record = service.get_session(session_id)
        session = record.session
        with record.mutate_lock:
            if session.mode != "vertical":
                raise EditRejected("rotation requires vertical mode")
            box = session.get_box(payload.frame_id, payload.instance_id)
            turned = rotate_about_z(box, payload.delta_yaw)
            session.apply(ModifyBox(payload.frame_id, payload.instance_id, rotation=turned.rotation))
        return {
            "applied": True,
            "box": box_to_json(session.get_box(payload.frame_id, payload.instance_id)),
        }

    @app.post("/api/sessions/{session_id}/save")
    def save(session_id: str):
        record = service.get_session(session_id)
        with record.mutate_lock:
            written = record.session.save(service.root(record.log_id))
            # disk state changed; refresh the repository copy
            service._bundles[record.log_id] = load_log(service.root(record.log_id))
        return {"written": written}

    @app.post("/api/sessions/{session_id}/export")
    def export(session_id: str, payload: ExportPayload):
        record = service.get_session(session_id)
        adapter = adapters.get(payload.dataset)
        with record.mutate_lock:
            warnings_list = adapter.export_log(record.session.bundle, Path(payload.output))
        return {"dataset": payload.dataset, "output": payload.output, "warnings": warnings_list}

    if frontend_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=str(frontend_dir), html=True), name="frontend")

    return app
