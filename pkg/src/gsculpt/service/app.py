"""HTTP session service for the interactive loop.

State model: each session holds a version stack of (scene, selection) pairs;
every mutating route pushes a version and undo pops one. Mutations are
serialized per session; reads run against the current version. Long
operations (segment, edit) run as jobs on a bounded worker pool.
"""
from __future__ import annotations

import json
import os
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Response
from pydantic import BaseModel, Field

from .. import bench as bench_mod
from ..errors import (
    EmptySelection,
    GsculptError,
    RemoteUnavailable,
    SelectionMismatch,
)
from ..perception import (
    OracleFeatureExtractor,
    OracleSegmenter,
    RemoteFeatureExtractor,
    RemoteSegmenter,
)
from ..render import render, render_selection_mask
from ..scene import (
    Click,
    GaussianScene,
    Mask,
    Selection,
    ViewSet,
    image_png_bytes,
    load_cameras,
    load_scene_ply,
)
from ..toolbox import (
    EditRequest,
    PlacementTransform,
    build_editor,
    colorize,
    combine,
    copy_paste,
    remove_selection,
    scale_selection,
    semantic_edit,
)
from ..voting import SegmentConfig, segment

UNDO_CAP = 32          # versions kept beyond the initial one
OVERLAY_TINT = 0.4
OVERLAY_COLOR = np.array([0.1, 0.6, 1.0])


# ---------------------------------------------------------------------------
# request / response models
# ---------------------------------------------------------------------------

class GenerateSpec(BaseModel):
    seed: int = 0
    n_objects: int = 3
    gaussians_per_object: int = 100
    clutter_count: int = 200
    orbit_views: int = 20
    image_size: int = 128


class SessionConfig(BaseModel):
    threshold: float = 0.8
    mode: str = "blend_weight"
    iim: bool = True
    epipolar: bool = True
    segmenter: str = "oracle"       # "oracle" | "remote:<url>"
    features: str = "oracle"
    patch: int = 2


class CreateSessionRequest(BaseModel):
    scene: str | None = None        # path to scene PLY
    cameras: str | None = None      # path to cameras JSON
    labels: str | None = None       # path to labels JSON (oracle segmenter)
    generate: GenerateSpec | None = None
    config: SessionConfig = Field(default_factory=SessionConfig)


class CreateSessionResponse(BaseModel):
    session_id: str
    n_gaussians: int
    views: list[int]


class ViewInfo(BaseModel):
    id: int
    width: int
    height: int


class ViewsResponse(BaseModel):
    views: list[ViewInfo]


class ClickRequest(BaseModel):
    view_id: int
    x: float
    y: float
    polarity: str = "pos"


class ClicksResponse(BaseModel):
    clicks: list[dict]


class SegmentRequest(BaseModel):
    config: SessionConfig | None = None


class JobResponse(BaseModel):
    job_id: str


class JobStatus(BaseModel):
    state: str                      # queued | running | done | error
    progress: float = 0.0
    error: str | None = None
    result: dict | None = None
    loss_trace: list[float] | None = None


class SelectionResponse(BaseModel):
    scene_hash: str
    indices: list[int]


class OpRequest(BaseModel):
    op: str
    mode: str | None = None
    color: list[float] | None = None
    epsilon: float | None = None
    placement: dict | None = None
    source_scene: str | None = None
    source_selection: str | None = None
    instruction: str | None = None
    steps: int | None = None
    step_size: float | None = None
    annealing: bool | None = None
    editor: str | None = None
    seed: int = 0


# ---------------------------------------------------------------------------
# session and job state
# ---------------------------------------------------------------------------

@dataclass
class SceneVersion:
    scene: GaussianScene
    selection: Selection | None


@dataclass
class Session:
    id: str
    views: ViewSet
    versions: list[SceneVersion]
    config: SessionConfig
    clicks: list[Click] = field(default_factory=list)
    lock: threading.RLock = field(default_factory=threading.RLock)
    _render_cache: dict = field(default_factory=dict)

    @property
    def current(self) -> SceneVersion:
        return self.versions[-1]

    def push(self, scene: GaussianScene, selection: Selection | None) -> None:
        self.versions.append(SceneVersion(scene, selection))
        while len(self.versions) > UNDO_CAP + 1:
            self.versions.pop(0)

    def rendered(self, view_id: int, background=(0.0, 0.0, 0.0)):
        scene = self.current.scene
        key = (scene.content_hash, view_id, background)
        if key not in self._render_cache:
            if len(self._render_cache) > 128:
                self._render_cache.clear()
            cam = self.views.by_id(view_id)
            self._render_cache[key] = render(scene, cam, background=background,
                                             record_weights=True)
        return self._render_cache[key]

    def build_segmenter(self):
        spec = self.config.segmenter
        if spec == "oracle":
            return OracleSegmenter(self.current.scene, self.views)
        if spec.startswith("remote:"):
            return RemoteSegmenter(spec[len("remote:"):])
        raise GsculptError(f"bad segmenter spec {spec!r}")

    def build_features(self):
        spec = self.config.features
        if spec == "oracle":
            return OracleFeatureExtractor(patch=self.config.patch)
        if spec.startswith("remote:"):
            return RemoteFeatureExtractor(spec[len("remote:"):],
                                          patch=self.config.patch)
        raise GsculptError(f"bad features spec {spec!r}")


@dataclass
class Job:
    id: str
    state: str = "queued"
    progress: float = 0.0
    error: str | None = None
    result: dict | None = None
    loss_trace: list[float] | None = None


def create_app(static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="gsculpt", version="0.1.0")
    sessions: dict[str, Session] = {}
    jobs: dict[str, Job] = {}
    workers = int(os.environ.get("GSCULPT_WORKERS", "4"))
    pool = ThreadPoolExecutor(max_workers=workers)

    def get_session(session_id: str) -> Session:
        sess = sessions.get(session_id)
        if sess is None:
            raise HTTPException(404, f"unknown session {session_id}")
        return sess

    def http_error(exc: GsculptError) -> HTTPException:
        if isinstance(exc, (SelectionMismatch, EmptySelection)):
            return HTTPException(409, str(exc))
        if isinstance(exc, RemoteUnavailable):
            return HTTPException(502, str(exc))
        return HTTPException(422, f"{type(exc).__name__}: {exc}")

    @app.post("/session", response_model=CreateSessionResponse)
    def create_session(req: CreateSessionRequest):
        try:
            if req.generate is not None:
                spec = bench_mod.SceneSpec(
                    seed=req.generate.seed, n_objects=req.generate.n_objects,
                    gaussians_per_object=req.generate.gaussians_per_object,
                    clutter_count=req.generate.clutter_count,
                    orbit_views=req.generate.orbit_views,
                    image_size=req.generate.image_size)
                gen = bench_mod.generate_scene(spec)
                scene, views = gen.scene, gen.views
            else:
                if not req.scene or not req.cameras:
                    raise HTTPException(422, "need scene+cameras or generate")
                scene = load_scene_ply(req.scene)
                views = load_cameras(req.cameras)
                labels_path = req.labels
                if labels_path is None:
                    guess = Path(req.scene).with_name("labels.json")
                    labels_path = str(guess) if guess.exists() else None
                if labels_path:
                    with open(labels_path) as fh:
                        scene.labels = np.asarray(json.load(fh)["labels"],
                                                  dtype=np.int64)
            scene.validate()
        except GsculptError as exc:
            raise http_error(exc)
        sid = uuid.uuid4().hex[:12]
        sessions[sid] = Session(id=sid, views=views,
                                versions=[SceneVersion(scene, None)],
                                config=req.config)
        return CreateSessionResponse(session_id=sid, n_gaussians=len(scene),
                                     views=views.ids)

    @app.get("/session/{session_id}/views", response_model=ViewsResponse)
    def list_views(session_id: str):
        sess = get_session(session_id)
        return ViewsResponse(views=[ViewInfo(id=c.id, width=c.width,
                                             height=c.height)
                                    for c in sess.views])

    @app.get("/session/{session_id}/render")
    def render_endpoint(session_id: str, view: int = Query(...),
                        overlay: str = Query("none")):
        sess = get_session(session_id)
        if view not in sess.views.ids:
            raise HTTPException(404, f"unknown view {view}")
        with sess.lock:
            rv = sess.rendered(view)
            color = rv.color
            if overlay == "mask" and sess.current.selection is not None:
                try:
                    mask = render_selection_mask(
                        sess.current.scene, sess.current.selection,
                        sess.views.by_id(view), records=rv.weight_records)
                except GsculptError as exc:
                    raise http_error(exc)
                color = color.copy()
                on = mask.bits.astype(bool)
                color[on] = ((1 - OVERLAY_TINT) * color[on]
                             + OVERLAY_TINT * OVERLAY_COLOR)
        return Response(content=image_png_bytes(color), media_type="image/png")

    @app.get("/session/{session_id}/mask")
    def mask_endpoint(session_id: str, view: int = Query(...)):
        sess = get_session(session_id)
        if view not in sess.views.ids:
            raise HTTPException(404, f"unknown view {view}")
        with sess.lock:
            if sess.current.selection is None:
                raise HTTPException(409, "no selection in session")
            try:
                rv = sess.rendered(view)
                mask = render_selection_mask(
                    sess.current.scene, sess.current.selection,
                    sess.views.by_id(view), records=rv.weight_records)
            except GsculptError as exc:
                raise http_error(exc)
        png = image_png_bytes(np.repeat(mask.bits[:, :, None], 3, axis=2)
                              .astype(np.float64))
        return Response(content=png, media_type="image/png")

    @app.post("/session/{session_id}/click", response_model=ClicksResponse)
    def add_click(session_id: str, req: ClickRequest):
        sess = get_session(session_id)
        if req.view_id not in sess.views.ids:
            raise HTTPException(404, f"unknown view {req.view_id}")
        cam = sess.views.by_id(req.view_id)
        if not (0 <= req.x < cam.width and 0 <= req.y < cam.height):
            raise HTTPException(422, "click outside image")
        if req.polarity not in ("pos", "neg"):
            raise HTTPException(422, "polarity must be pos|neg")
        with sess.lock:
            sess.clicks.append(Click(view_id=req.view_id, x=req.x, y=req.y,
                                     polarity=req.polarity))
            clicks = list(sess.clicks)
        return ClicksResponse(clicks=[c.__dict__ for c in clicks])

    @app.delete("/session/{session_id}/clicks")
    def clear_clicks(session_id: str):
        sess = get_session(session_id)
        with sess.lock:
            sess.clicks.clear()
        return {"clicks": 0}

    @app.post("/session/{session_id}/segment", response_model=JobResponse)
    def segment_endpoint(session_id: str, req: SegmentRequest):
        sess = get_session(session_id)
        if not any(c.polarity == "pos" for c in sess.clicks):
            raise HTTPException(422, "need at least one positive click")
        cfg = req.config or sess.config
        job = Job(id=uuid.uuid4().hex[:12])
        jobs[job.id] = job

        def work():
            job.state = "running"
            try:
                with sess.lock:
                    scene = sess.current.scene
                    clicks = list(sess.clicks)
                    renders = {cam.id: sess.rendered(cam.id)
                               for cam in sess.views}
                config = SegmentConfig(threshold=cfg.threshold, mode=cfg.mode,
                                       iim_on=cfg.iim, epipolar_on=cfg.epipolar)
                result = segment(scene, sess.views, clicks,
                                 sess.build_segmenter(), sess.build_features(),
                                 config=config, renders=renders)
                with sess.lock:
                    if sess.current.scene.content_hash != scene.content_hash:
                        raise SelectionMismatch("scene changed during segment")
                    sess.push(scene, result.selection)
                job.result = {"selected": len(result.selection.indices),
                              "report": result.report}
                job.progress = 1.0
                job.state = "done"
            except Exception as exc:
                job.error = f"{type(exc).__name__}: {exc}"
                job.state = "error"

        pool.submit(work)
        return JobResponse(job_id=job.id)

    @app.get("/session/{session_id}/selection", response_model=SelectionResponse)
    def selection_endpoint(session_id: str):
        sess = get_session(session_id)
        sel = sess.current.selection
        if sel is None:
            raise HTTPException(409, "no selection in session")
        return SelectionResponse(scene_hash=sel.scene_hash,
                                 indices=sel.indices.tolist())

    @app.post("/session/{session_id}/op")
    def op_endpoint(session_id: str, req: OpRequest):
        sess = get_session(session_id)
        with sess.lock:
            scene = sess.current.scene
            sel = sess.current.selection
            if req.op != "combine" and sel is None:
                raise HTTPException(409, "no selection in session")
            try:
                if req.op == "colorize":
                    out = colorize(scene, sel, req.color or [1, 0, 0],
                                   mode=req.mode or "replace")
                    new_sel = Selection(out.content_hash, sel.indices)
                elif req.op == "scale":
                    out = scale_selection(scene, sel, req.epsilon or 1.0)
                    new_sel = Selection(out.content_hash, sel.indices)
                elif req.op == "remove":
                    out, _ = remove_selection(scene, sel)
                    new_sel = None
                elif req.op == "copy_paste":
                    placement = PlacementTransform.from_dict(req.placement or {})
                    out, new_sel = copy_paste(scene, sel, placement)
                elif req.op == "combine":
                    if not req.source_scene or not req.source_selection:
                        raise HTTPException(422,
                                            "combine needs source_scene and "
                                            "source_selection")
                    from ..scene import load_selection
                    src = load_scene_ply(req.source_scene)
                    src_sel = load_selection(req.source_selection)
                    placement = PlacementTransform.from_dict(req.placement or {})
                    out = combine(scene, src, src_sel, placement)
                    new_sel = (None if sel is None
                               else Selection(out.content_hash, sel.indices))
                elif req.op == "edit":
                    return _edit_job(sess, req)
                else:
                    raise HTTPException(422, f"unknown op {req.op!r}")
            except GsculptError as exc:
                raise http_error(exc)
            sess.push(out, new_sel)
        return {"ok": True, "n_gaussians": len(out),
                "versions": len(sess.versions)}

    def _edit_job(sess: Session, req: OpRequest):
        scene = sess.current.scene
        sel = sess.current.selection
        try:
            editor = build_editor(req.editor or "builtin:identity",
                                  req.instruction or "")
            request = EditRequest(instruction=req.instruction or "",
                                  steps=req.steps or 200,
                                  step_size=req.step_size or 0.05,
                                  annealing=bool(req.annealing)
                                  if req.annealing is not None else True,
                                  editor=editor)
        except (GsculptError, ValueError) as exc:
            raise HTTPException(422, str(exc))
        job = Job(id=uuid.uuid4().hex[:12])
        jobs[job.id] = job

        def work():
            job.state = "running"
            try:
                def progress(step, total, loss):
                    job.progress = step / total
                out, trace = semantic_edit(scene, sel, sess.views, request,
                                           seed=req.seed, progress=progress)
                with sess.lock:
                    if sess.current.scene.content_hash != scene.content_hash:
                        raise SelectionMismatch("scene changed during edit")
                    sess.push(out, Selection(out.content_hash, sel.indices))
                job.loss_trace = [round(v, 8) for v in trace]
                job.result = {"final_loss": trace[-1] if trace else None}
                job.state = "done"
            except Exception as exc:
                job.error = f"{type(exc).__name__}: {exc}"
                job.state = "error"

        pool.submit(work)
        return {"job_id": job.id}

    @app.post("/session/{session_id}/undo")
    def undo_endpoint(session_id: str):
        sess = get_session(session_id)
        with sess.lock:
            if len(sess.versions) <= 1:
                raise HTTPException(409, "nothing to undo")
            sess.versions.pop()
            return {"versions": len(sess.versions),
                    "n_gaussians": len(sess.current.scene)}

    @app.get("/job/{job_id}", response_model=JobStatus)
    def job_endpoint(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id}")
        return JobStatus(state=job.state, progress=job.progress,
                         error=job.error, result=job.result,
                         loss_trace=job.loss_trace)

    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=static_dir, html=True),
                  name="ui")

    return app


def main():
    """uvicorn entry point: serve the API plus the built web UI if present."""
    import uvicorn
    root = Path(__file__).resolve().parents[3]
    static = root / "frontend" / "dist"
    uvicorn.run(create_app(str(static) if static.is_dir() else None),
                host="127.0.0.1", port=int(os.environ.get("PORT", "8000")))


if __name__ == "__main__":
    main()
