"""HTTP curation API: browse bundles, inspect mask polygons per modality,
and post approve/reject verdicts that persist through the dataset store.

All mutations funnel through the store's single-writer lock; an optional
``revision`` in the verdict body lets clients detect stale views (409).
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import associate, runio, sync
from .dataset import VERDICTS, DatasetStore
from .errors import LabelNotFoundError


class LabelPayload(BaseModel):
    modality: str
    index: int
    polygon: list[list[float]]
    curation: str
    confidence: float
    provenance: str
    mask_id: str | None = None
    set_id: str | None = None


class FramePayload(BaseModel):
    modality: str
    width: int
    height: int
    split: str
    image_url: str | None = None


class BundleSummary(BaseModel):
    bundle_id: str
    modalities: list[str]
    pending: int
    approved: int
    rejected: int


class BundlePage(BaseModel):
    bundles: list[BundleSummary]
    total: int
    page: int
    size: int


class BundleDetail(BaseModel):
    bundle_id: str
    revision: int
    frames: list[FramePayload]
    labels: list[LabelPayload]


class VerdictRequest(BaseModel):
    verdict: str
    revision: int | None = None


class VerdictResponse(BaseModel):
    ok: bool
    revision: int
    curation: str


class Progress(BaseModel):
    pending: int
    approved: int
    rejected: int


def _image_index(run_dir: Path | None, tolerance: float) -> dict[tuple[str, str], Path]:
    """(bundle_id, modality) -> image path, rebuilt by re-running the sync
    grouping over the recording (deterministic, so ids line up)."""
    if run_dir is None:
        return {}
    run = runio.load_run(run_dir)
    bundles = sync.bundle_streams(run.frames, run.clouds, run.poses, tolerance=tolerance)
    return {
        (b.bundle_id, modality): frame.image_path
        for b in bundles
        for modality, frame in b.frames.items()
    }


def create_app(
    store: DatasetStore,
    run_dir: Path | None = None,
    assoc_dir: Path | None = None,
    frontend_dist: Path | None = None,
    complete_event: threading.Event | None = None,
    sync_tolerance: float = sync.DEFAULT_TOLERANCE,
) -> FastAPI:
    app = FastAPI(title="vinefuse curation", version="0.1.0")
    images = _image_index(Path(run_dir) if run_dir else None, sync_tolerance)

    @app.exception_handler(RequestValidationError)
    async def schema_violation(_request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def bundle_ids() -> list[str]:
        return sorted({b for b, _m in store.manifest.examples})

    def set_lookup(bundle_id: str) -> dict[str, str]:
        if assoc_dir is None:
            return {}
        records = associate.read_associations(assoc_dir, bundle_id)
        return {
            mask_id: rec["set_id"]
            for rec in records
            for mask_id in rec["members"].values()
        }

    @app.get("/api/bundles", response_model=BundlePage)
    def list_bundles(page: int = 1, size: int = 50) -> BundlePage:
        if page < 1 or size < 1:
            raise HTTPException(status_code=400, detail="page and size must be >= 1")
        ids = bundle_ids()
        window = ids[(page - 1) * size : page * size]
        summaries = []
        for bid in window:
            counts = {"pending": 0, "approved": 0, "rejected": 0}
            modalities = []
            for (b, modality), ex in store.manifest.examples.items():
                if b != bid:
                    continue
                modalities.append(modality)
                for lb in ex.labels:
                    counts[lb.curation] += 1
            summaries.append(
                BundleSummary(
                    bundle_id=bid, modalities=sorted(modalities), **counts
                )
            )
        return BundlePage(bundles=summaries, total=len(ids), page=page, size=size)

    @app.get("/api/bundles/{bundle_id}", response_model=BundleDetail)
    def get_bundle(bundle_id: str) -> BundleDetail:
        examples = {
            modality: ex
            for (b, modality), ex in store.manifest.examples.items()
            if b == bundle_id
        }
        if not examples:
            raise HTTPException(status_code=404, detail=f"unknown bundle {bundle_id}")
        sets = set_lookup(bundle_id)
        frames = []
        labels = []
        for modality in sorted(examples):
            ex = examples[modality]
            url = None
            if (bundle_id, modality) in images:
                url = f"/api/images/{bundle_id}_{modality}"
            frames.append(
                FramePayload(
                    modality=modality,
                    width=ex.width,
                    height=ex.height,
                    split=ex.split,
                    image_url=url,
                )
            )
            for k, lb in enumerate(ex.labels):
                labels.append(
                    LabelPayload(
                        modality=modality,
                        index=k,
                        polygon=[[x, y] for x, y in lb.polygon],
                        curation=lb.curation,
                        confidence=lb.confidence,
                        provenance=lb.provenance,
                        mask_id=lb.mask_id,
                        set_id=sets.get(lb.mask_id) if lb.mask_id else None,
                    )
                )
        return BundleDetail(
            bundle_id=bundle_id,
            revision=store.revision,
            frames=frames,
            labels=labels,
        )

    @app.get("/api/images/{frame}")
    def get_image(frame: str):
        if "_" not in frame:
            raise HTTPException(status_code=404, detail="frame must be <bundle>_<modality>")
        bundle_id, modality = frame.rsplit("_", 1)
        path = images.get((bundle_id, modality))
        if path is None or not Path(path).exists():
            raise HTTPException(status_code=404, detail=f"no image for {frame}")
        return FileResponse(path, media_type="image/png")

    @app.post(
        "/api/labels/{bundle_id}/{modality}/{index}/verdict",
        response_model=VerdictResponse,
    )
    def post_verdict(
        bundle_id: str, modality: str, index: int, body: VerdictRequest
    ) -> VerdictResponse:
        if body.verdict not in VERDICTS:
            raise HTTPException(
                status_code=400,
                detail=f"verdict must be one of {list(VERDICTS)}",
            )
        if body.revision is not None and body.revision != store.revision:
            raise HTTPException(
                status_code=409,
                detail=f"stale revision {body.revision}, store is at {store.revision}",
            )
        try:
            store.record_verdict(bundle_id, modality, index, body.verdict)
        except LabelNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return VerdictResponse(ok=True, revision=store.revision, curation=body.verdict)

    @app.get("/api/progress", response_model=Progress)
    def progress() -> Progress:
        return Progress(**store.manifest.label_counts())

    @app.post("/api/complete")
    def complete() -> dict:
        if complete_event is not None:
            complete_event.set()
        return {"ok": True}

    if frontend_dist is not None and Path(frontend_dist).exists():
        app.mount("/", StaticFiles(directory=frontend_dist, html=True), name="ui")

    return app


def default_frontend_dist() -> Path | None:
    """Built review UI shipped alongside the package checkout, if present."""
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return candidate if candidate.exists() else None


def serve(
    store: DatasetStore,
    run_dir: Path | None = None,
    assoc_dir: Path | None = None,
    port: int = 8714,
    host: str = "127.0.0.1",
    wait_complete: bool = False,
    sync_tolerance: float = sync.DEFAULT_TOLERANCE,
) -> None:
    """Run the curation API; with ``wait_complete`` the call returns once a
    client posts /api/complete (the pipeline's interactive curation gate)."""
    import uvicorn

    event = threading.Event() if wait_complete else None
    app = create_app(
        store,
        run_dir=run_dir,
        assoc_dir=assoc_dir,
        frontend_dist=default_frontend_dist(),
        complete_event=event,
        sync_tolerance=sync_tolerance,
    )
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    if not wait_complete:
        server.run()
        return
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    assert event is not None
    event.wait()
    server.should_exit = True
    thread.join(timeout=10)
