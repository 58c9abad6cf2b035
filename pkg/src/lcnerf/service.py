"""HTTP facade over sessions, renders, edit jobs, and latent swaps.

All endpoints live under ``/api/v1`` and exchange JSON except the PNG
media endpoints. Long-running work (inversion, mask edits) runs on one
worker thread per job and is observed by polling ``/jobs/{id}``. Errors
share a single body shape: ``{code, message, detail}``.
"""

from __future__ import annotations

import base64
import binascii
import io
import itertools
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from starlette.exceptions import HTTPException as StarletteHTTPException

from .data import LabelSchema, mask_png_bytes
from .generators import LatentBank
from .inversion import (EditSession, edit_mask, invert, load_latent_bank,
                        open_session, swap_region_latents)
from .rendering import image_to_uint8

MAX_RENDER_SIZE = 256


class ServiceError(Exception):
    """Maps directly onto the wire error shape."""

    def __init__(self, status: int, code: str, message: str, detail: str = ""):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


@dataclass
class SessionRecord:
    session_id: str
    checkpoint: str
    created: float
    session: EditSession | None
    status: str = "ready"  # ready | initializing | failed
    error: str = ""
    active_job: str | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class JobRecord:
    job_id: str
    kind: str  # "edit" | "invert"
    session_id: str
    budget: int
    status: str = "pending"
    iteration: int = 0
    loss: float | None = None
    first_loss: float | None = None
    error: str = ""
    previews: dict[int, bytes] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def snapshot(self) -> dict:
        with self.lock:
            latest = max(self.previews) if self.previews else None
            preview_url = (
                f"/api/v1/jobs/{self.job_id}/preview?iteration={latest}"
                if latest is not None else None
            )
            return {
                "job_id": self.job_id,
                "kind": self.kind,
                "session_id": self.session_id,
                "status": self.status,
                "iteration": self.iteration,
                "budget": self.budget,
                "loss": self.loss,
                "first_loss": self.first_loss,
                "preview_url": preview_url,
                "error": self.error or None,
            }


class Registry:
    """Process-wide session and job tables plus the render queue lock."""

    def __init__(self, checkpoint_dir: Path, max_render_size: int):
        self.checkpoint_dir = checkpoint_dir
        self.max_render_size = max_render_size
        self.sessions: dict[str, SessionRecord] = {}
        self.jobs: dict[str, JobRecord] = {}
        self.lock = threading.Lock()
        self.render_lock = threading.Lock()
        self._session_counter = itertools.count(1)
        self._job_counter = itertools.count(1)

    def new_session_id(self) -> str:
        return f"s{next(self._session_counter):04d}"

    def new_job_id(self) -> str:
        return f"j{next(self._job_counter):04d}"

    def session(self, session_id: str) -> SessionRecord:
        with self.lock:
            record = self.sessions.get(session_id)
        if record is None:
            raise ServiceError(404, "session_not_found",
                               f"no session {session_id!r}")
        return record

    def ready_session(self, session_id: str) -> SessionRecord:
        record = self.session(session_id)
        if record.status == "initializing":
            raise ServiceError(409, "session_not_ready",
                               f"session {session_id} is still inverting")
        if record.status == "failed":
            raise ServiceError(409, "session_failed",
                               f"session {session_id} failed to initialize",
                               record.error)
        return record

    def job(self, job_id: str) -> JobRecord:
        with self.lock:
            record = self.jobs.get(job_id)
        if record is None:
            raise ServiceError(404, "job_not_found", f"no job {job_id!r}")
        return record

    def checkpoint_path(self, name: str) -> Path:
        path = self.checkpoint_dir / name
        if Path(name).name != name or not path.is_file():
            raise ServiceError(404, "checkpoint_not_found",
                               f"no checkpoint {name!r}",
                               f"looked in {self.checkpoint_dir}")
        return path


# ------------------------------------------------------------- body parsing

def _require(body: dict, key: str, kind=None):
    if key not in body:
        raise ServiceError(422, "missing_field", f"field {key!r} is required")
    value = body[key]
    if kind is not None and not isinstance(value, kind):
        raise ServiceError(422, "invalid_field",
                           f"field {key!r} has the wrong type")
    return value


def _decode_b64(text: str, what: str) -> bytes:
    try:
        return base64.b64decode(text, validate=True)
    except (binascii.Error, ValueError) as err:
        raise ServiceError(422, "invalid_encoding",
                           f"{what} is not valid base64", str(err))


def _decode_image(data: bytes, side: int) -> torch.Tensor:
    from PIL import Image

    try:
        with Image.open(io.BytesIO(data)) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except Exception as err:
        raise ServiceError(422, "invalid_image", "image is not a decodable PNG",
                           str(err))
    if arr.shape[:2] != (side, side):
        raise ServiceError(422, "invalid_image",
                           f"image is {arr.shape[1]}x{arr.shape[0]}, "
                           f"model expects {side}x{side}")
    return torch.from_numpy(arr.copy())


def _decode_mask(data: bytes, side: int, regions: int) -> torch.Tensor:
    from PIL import Image

    try:
        with Image.open(io.BytesIO(data)) as img:
            if img.mode != "P":
                raise ServiceError(422, "invalid_mask",
                                   "mask must be an indexed (palette) PNG",
                                   f"got mode {img.mode!r}")
            labels = torch.from_numpy(
                np.asarray(img, dtype=np.int64))
    except ServiceError:
        raise
    except Exception as err:
        raise ServiceError(422, "invalid_mask", "mask is not a decodable PNG",
                           str(err))
    if labels.shape != (side, side):
        raise ServiceError(422, "invalid_mask",
                           f"mask is {labels.shape[1]}x{labels.shape[0]}, "
                           f"session expects {side}x{side}")
    top = int(labels.max())
    if top >= regions:
        raise ServiceError(422, "invalid_mask",
                           f"mask uses class id {top}, model has "
                           f"{regions} regions")
    return labels


def _parse_angles(azimuth, elevation):
    out = []
    for name, raw in (("azimuth", azimuth), ("elevation", elevation)):
        if raw is None:
            out.append(None)
            continue
        try:
            value = float(raw)
        except (TypeError, ValueError):
            raise ServiceError(400, "bad_angles",
                               f"{name} {raw!r} is not a number")
        if not math.isfinite(value):
            raise ServiceError(400, "bad_angles", f"{name} must be finite")
        limit = math.pi if name == "azimuth" else math.pi / 2
        if abs(value) > limit:
            raise ServiceError(400, "bad_angles",
                               f"{name} {value} outside [-{limit:.4f}, "
                               f"{limit:.4f}]")
        out.append(value)
    return out


def _parse_size(raw, maximum: int):
    if raw is None:
        return None
    try:
        size = int(raw)
    except (TypeError, ValueError):
        raise ServiceError(400, "bad_size", f"size {raw!r} is not an integer")
    if size < 1 or size > maximum:
        raise ServiceError(400, "bad_size",
                           f"size {size} outside [1, {maximum}]")
    return size


def _session_schema(session: EditSession) -> LabelSchema:
    if session.config.data.dataset == "celeba":
        return LabelSchema.celeba()
    return LabelSchema.toy(session.regions)


def _png_response(data: bytes) -> Response:
    return Response(content=data, media_type="image/png")


def _image_png(image: torch.Tensor) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(image_to_uint8(image), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


# --------------------------------------------------------------- app factory

def create_app(checkpoint_dir, max_render_size: int = MAX_RENDER_SIZE,
               default_edit_iterations: int = 500,
               edit_preview_every: int = 50,
               inversion_latent_iterations: int = 300,
               inversion_tuning_iterations: int = 200,
               static_dir=None) -> FastAPI:
    """Build the API around a directory of ``.lcnf`` checkpoints.

    ``static_dir``, when given, is served at ``/`` (after the API routes)
    so the browser editor can be hosted same-origin with no proxy.
    """
    registry = Registry(Path(checkpoint_dir), max_render_size)
    app = FastAPI(title="region-compositional face service", docs_url=None,
                  redoc_url=None)
    app.state.registry = registry

    @app.exception_handler(ServiceError)
    async def service_error(request: Request, err: ServiceError):
        return JSONResponse(status_code=err.status, content={
            "code": err.code, "message": err.message, "detail": err.detail})

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, err: RequestValidationError):
        return JSONResponse(status_code=422, content={
            "code": "invalid_request", "message": "request failed validation",
            "detail": str(err.errors())})

    @app.exception_handler(StarletteHTTPException)
    async def http_error(request: Request, err: StarletteHTTPException):
        return JSONResponse(status_code=err.status_code, content={
            "code": "http_error", "message": str(err.detail), "detail": ""})

    # ------------------------------------------------------------ catalogue

    @app.get("/api/v1/checkpoints")
    def list_checkpoints():
        names = sorted(p.name for p in registry.checkpoint_dir.glob("*.lcnf"))
        return {"checkpoints": names}

    # -------------------------------------------------------------- sessions

    @app.post("/api/v1/sessions")
    async def create_session(request: Request):
        body = await _json_body(request)
        checkpoint = _require(body, "checkpoint", str)
        path = registry.checkpoint_path(checkpoint)
        if "image" in body or "mask" in body:
            return _create_inverted_session(registry, body, path, checkpoint,
                                            inversion_latent_iterations,
                                            inversion_tuning_iterations)
        seed = body.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ServiceError(422, "invalid_field",
                               "field 'seed' must be an integer")
        session = open_session(path, seed=seed)
        record = SessionRecord(session_id=registry.new_session_id(),
                               checkpoint=checkpoint, created=time.time(),
                               session=session)
        with registry.lock:
            registry.sessions[record.session_id] = record
        return {"session_id": record.session_id}

    @app.get("/api/v1/sessions/{session_id}")
    def describe_session(session_id: str):
        record = registry.session(session_id)
        info = {
            "session_id": record.session_id,
            "checkpoint": record.checkpoint,
            "created": record.created,
            "status": record.status,
            "active_job": record.active_job,
        }
        if record.session is not None:
            info.update({
                "regions": record.session.regions,
                "resolution": record.session.camera.resolution[0],
                "history_length": len(record.session.history),
            })
        if record.error:
            info["error"] = record.error
        return info

    @app.get("/api/v1/sessions/{session_id}/schema")
    def session_schema(session_id: str):
        record = registry.ready_session(session_id)
        schema = _session_schema(record.session)
        return {
            "regions": schema.regions,
            "labels": [
                {"id": i, "name": name, "color": list(schema.palette[i])}
                for i, name in enumerate(schema.names)
            ],
        }

    # --------------------------------------------------------------- renders

    @app.get("/api/v1/sessions/{session_id}/render")
    def render_image(session_id: str, azimuth: str | None = None,
                     elevation: str | None = None, size: str | None = None):
        result = _render(registry, session_id, azimuth, elevation, size)
        return _png_response(_image_png(result.image_over()))

    @app.get("/api/v1/sessions/{session_id}/mask")
    def render_mask(session_id: str, azimuth: str | None = None,
                    elevation: str | None = None, size: str | None = None):
        record = registry.ready_session(session_id)
        result = _render(registry, session_id, azimuth, elevation, size)
        schema = _session_schema(record.session)
        return _png_response(mask_png_bytes(result.labels(), schema.palette))

    # ----------------------------------------------------------------- edits

    @app.post("/api/v1/sessions/{session_id}/edits")
    async def submit_edit(session_id: str, request: Request):
        body = await _json_body(request)
        record = registry.ready_session(session_id)
        session = record.session
        labels = _decode_mask(
            _decode_b64(_require(body, "mask_png", str), "mask_png"),
            session.camera.resolution[0], session.regions)
        region_ids = _require(body, "region_ids", list)
        if not region_ids or not all(
                isinstance(r, int) and not isinstance(r, bool)
                for r in region_ids):
            raise ServiceError(422, "invalid_field",
                               "region_ids must be a non-empty integer list")
        if len(set(region_ids)) != len(region_ids):
            raise ServiceError(422, "invalid_field",
                               "region_ids contains duplicates")
        for region in region_ids:
            if not 0 <= region < session.regions:
                raise ServiceError(422, "invalid_field",
                                   f"region id {region} outside "
                                   f"[0, {session.regions})")
        iterations = body.get("iterations", default_edit_iterations)
        if not isinstance(iterations, int) or isinstance(iterations, bool) \
                or iterations < 1:
            raise ServiceError(422, "invalid_field",
                               "iterations must be a positive integer")
        preview_every = body.get("preview_every", edit_preview_every)

        with record.lock:
            if record.active_job is not None:
                raise ServiceError(409, "job_active",
                                   f"job {record.active_job} is already "
                                   f"running on session {session_id}")
            job = JobRecord(job_id=registry.new_job_id(), kind="edit",
                            session_id=session_id, budget=iterations)
            record.active_job = job.job_id
        with registry.lock:
            registry.jobs[job.job_id] = job

        worker = threading.Thread(
            target=_run_edit_job,
            args=(registry, record, job, labels, region_ids, iterations,
                  preview_every),
            daemon=True)
        worker.start()
        return {"job_id": job.job_id}

    @app.get("/api/v1/jobs/{job_id}")
    def job_status(job_id: str):
        return registry.job(job_id).snapshot()

    @app.get("/api/v1/jobs/{job_id}/preview")
    def job_preview(job_id: str, iteration: str | None = None):
        job = registry.job(job_id)
        with job.lock:
            if not job.previews:
                raise ServiceError(404, "preview_not_found",
                                   f"job {job_id} has no previews yet")
            if iteration is None:
                key = max(job.previews)
            else:
                try:
                    key = int(iteration)
                except (TypeError, ValueError):
                    raise ServiceError(400, "bad_iteration",
                                       f"iteration {iteration!r} is not an "
                                       f"integer")
                if key not in job.previews:
                    raise ServiceError(404, "preview_not_found",
                                       f"job {job_id} has no preview for "
                                       f"iteration {key}")
            data = job.previews[key]
        return _png_response(data)

    # ----------------------------------------------------------------- swaps

    @app.post("/api/v1/sessions/{session_id}/latents/swap")
    async def swap_latents(session_id: str, request: Request):
        body = await _json_body(request)
        record = registry.ready_session(session_id)
        session = record.session

        raw_regions = _require(body, "region_id")
        if raw_regions == "all":
            region_ids = list(range(session.regions))
        elif isinstance(raw_regions, int) and not isinstance(raw_regions, bool):
            region_ids = [raw_regions]
        elif isinstance(raw_regions, list) and raw_regions and all(
                isinstance(r, int) and not isinstance(r, bool)
                for r in raw_regions):
            region_ids = raw_regions
        else:
            raise ServiceError(422, "invalid_field",
                               "region_id must be an id, an id list, or "
                               "'all'")
        which = body.get("which", "both")

        if ("donor" in body) == ("donor_file" in body):
            raise ServiceError(422, "invalid_field",
                               "exactly one of donor (session id) or "
                               "donor_file (base64 bank) is required")
        if "donor" in body:
            donor_id = _require(body, "donor", str)
            donor_record = registry.session(donor_id)
            if donor_record.status != "ready":
                raise ServiceError(409, "session_not_ready",
                                   f"donor session {donor_id} is not ready")
            donor = donor_record.session.bank
        else:
            data = _decode_b64(_require(body, "donor_file", str), "donor_file")
            try:
                donor = _bank_from_bytes(data)
            except Exception as err:
                raise ServiceError(422, "invalid_bank",
                                   "donor_file is not a readable latent bank",
                                   str(err))

        with record.lock:
            if record.active_job is not None:
                raise ServiceError(409, "job_active",
                                   f"job {record.active_job} is already "
                                   f"running on session {session_id}")
            try:
                swap_region_latents(session, region_ids, donor, which)
            except ValueError as err:
                raise ServiceError(422, "invalid_swap", str(err))
        return {"history_length": len(session.history)}

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        static_path = Path(static_dir)
        if not static_path.is_dir():
            raise ValueError(f"static_dir is not a directory: {static_path}")
        # Mounted last so every /api/v1 route keeps priority.
        app.mount("/", StaticFiles(directory=static_path, html=True),
                  name="frontend")

    return app


async def _json_body(request: Request) -> dict:
    try:
        body = await request.json()
    except Exception:
        raise ServiceError(422, "invalid_request", "body is not valid JSON")
    if not isinstance(body, dict):
        raise ServiceError(422, "invalid_request", "body must be a JSON object")
    return body


def _bank_from_bytes(data: bytes) -> LatentBank:
    import tempfile

    with tempfile.NamedTemporaryFile(suffix=".lclw") as handle:
        handle.write(data)
        handle.flush()
        return load_latent_bank(handle.name)


def _render(registry: Registry, session_id: str, azimuth, elevation, size):
    record = registry.ready_session(session_id)
    azimuth, elevation = _parse_angles(azimuth, elevation)
    size = _parse_size(size, registry.max_render_size)
    session = record.session
    # Snapshot: an edit job replaces the bank atomically at completion,
    # so a render sees either the pre- or post-edit bank, never a mix.
    bank = session.bank
    with registry.render_lock, torch.no_grad():
        return session.render(azimuth=azimuth, elevation=elevation,
                              size=size, bank=bank)


def _run_edit_job(registry: Registry, record: SessionRecord, job: JobRecord,
                  labels: torch.Tensor, region_ids: list[int],
                  iterations: int, preview_every: int) -> None:
    def sync(live) -> None:
        with job.lock:
            job.iteration = live.iteration
            if live.losses:
                job.loss = live.losses[-1]
                job.first_loss = live.losses[0]
            for key, image in live.previews.items():
                if key not in job.previews:
                    job.previews[key] = _image_png(image)

    try:
        with job.lock:
            job.status = "running"
        result = edit_mask(record.session, labels, region_ids,
                           iterations=iterations, preview_every=preview_every,
                           job_id=job.job_id, on_iteration=sync)
        sync(result)
        with job.lock:
            job.status = result.status
            job.error = result.error
    except Exception as err:
        with job.lock:
            job.status = "failed"
            job.error = str(err)
    finally:
        with record.lock:
            record.active_job = None


def _create_inverted_session(registry: Registry, body: dict, path: Path,
                             checkpoint: str, latent_iterations: int,
                             tuning_iterations: int) -> dict:
    from .training import load_checkpoint

    config = load_checkpoint(path).config
    side = config.resolution
    image = _decode_image(
        _decode_b64(_require(body, "image", str), "image"), side)
    mask = _decode_mask(
        _decode_b64(_require(body, "mask", str), "mask"), side,
        config.model.regions)
    latent_budget = body.get("latent_iterations", latent_iterations)
    tuning_budget = body.get("tuning_iterations", tuning_iterations)
    for name, value in (("latent_iterations", latent_budget),
                        ("tuning_iterations", tuning_budget)):
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ServiceError(422, "invalid_field",
                               f"{name} must be a positive integer")

    record = SessionRecord(session_id=registry.new_session_id(),
                           checkpoint=checkpoint, created=time.time(),
                           session=None, status="initializing")
    job = JobRecord(job_id=registry.new_job_id(), kind="invert",
                    session_id=record.session_id,
                    budget=latent_budget + tuning_budget)
    record.active_job = job.job_id
    with registry.lock:
        registry.sessions[record.session_id] = record
        registry.jobs[job.job_id] = job

    def run() -> None:
        try:
            with job.lock:
                job.status = "running"
            camera = open_session(path).camera
            session = invert(image, mask, camera, path,
                             latent_iterations=latent_budget,
                             tuning_iterations=tuning_budget)
            with job.lock:
                job.iteration = job.budget
                losses = session.inversion_losses
                job.loss = (losses["tuning"] or losses["latent"] or [None])[-1]
                job.status = "done"
            with record.lock:
                record.session = session
                record.status = "ready"
        except Exception as err:
            with job.lock:
                job.status = "failed"
                job.error = str(err)
            with record.lock:
                record.status = "failed"
                record.error = str(err)
        finally:
            with record.lock:
                record.active_job = None

    threading.Thread(target=run, daemon=True).start()
    return {"session_id": record.session_id, "job_id": job.job_id}
