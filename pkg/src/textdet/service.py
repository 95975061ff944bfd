"""HTTP inference service: /health, /infer, and the test-split example
browser used by the query UI. The model is loaded once and never mutated;
requests may be served concurrently."""
from __future__ import annotations

import base64
import binascii
import io
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict
from starlette.exceptions import HTTPException as StarletteHTTPException
from starlette.staticfiles import StaticFiles

from .alignment import InferenceConfig
from .inference import ImageSizeError, infer
from .model import TextDetModel
from .shapegen import DatasetManifest


class InferRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    image: str | None = None     # base64-encoded PNG
    image_id: str | None = None  # test-split example id
    query: str
    score_threshold: float = 0.5
    top_k: int = 20


def _example_index(manifest: DatasetManifest | None) -> dict[str, dict]:
    if manifest is None:
        return {}
    return {Path(rec["image"]).stem: rec for rec in manifest.split("test")}


def create_app(model: TextDetModel, manifest: DatasetManifest | None = None,
               static_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="textdet", docs_url=None, redoc_url=None)
    examples = _example_index(manifest)

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(StarletteHTTPException)
    async def on_http_error(request, exc):
        return JSONResponse(status_code=exc.status_code, content={"error": str(exc.detail)})

    @app.get("/health")
    def health():
        return {"status": "ok", "model": {
            "image_size": model.cfg.image_size,
            "anchor_size": model.cfg.anchor_size,
            "feature_stride": model.cfg.backbone.feature_stride,
            "embed_dim": model.cfg.proposal.embed_dim,
        }}

    def load_request_image(req: InferRequest) -> np.ndarray:
        if req.image is not None:
            try:
                raw = base64.b64decode(req.image, validate=True)
                img = Image.open(io.BytesIO(raw))
            except (binascii.Error, ValueError, UnidentifiedImageError, OSError) as e:
                raise HTTPException(400, f"undecodable image: {e}")
            return np.asarray(img.convert("RGB"))
        rec = examples.get(str(req.image_id))
        if rec is None:
            detail = "service has no dataset" if manifest is None \
                else f"unknown example id {req.image_id!r}"
            raise HTTPException(404, detail)
        return np.asarray(Image.open(manifest.root / rec["image"]).convert("RGB"))

    @app.post("/infer")
    def post_infer(req: InferRequest):
        if (req.image is None) == (req.image_id is None):
            raise HTTPException(400, "provide exactly one of 'image' or 'image_id'")
        try:
            cfg = InferenceConfig(score_threshold=req.score_threshold, top_k=req.top_k)
        except ValueError as e:
            raise HTTPException(400, str(e))
        image = load_request_image(req)
        try:
            return infer(model, image, req.query, cfg)
        except ImageSizeError as e:
            raise HTTPException(400, str(e))

    @app.get("/examples")
    def list_examples():
        if manifest is None:
            raise HTTPException(404, "service has no dataset")
        return [{"id": stem, "query": rec["query"]}
                for stem, rec in sorted(examples.items(), key=lambda kv: int(kv[0]))]

    @app.get("/examples/{example_id}/image")
    def example_image(example_id: str):
        rec = examples.get(example_id)
        if rec is None:
            detail = "service has no dataset" if manifest is None \
                else f"unknown example id {example_id!r}"
            raise HTTPException(404, detail)
        data = (manifest.root / rec["image"]).read_bytes()
        return Response(content=data, media_type="image/png")

    if static_dir is not None:
        # API routes are registered first and take precedence; the mount
        # only sees paths none of them claim
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def serve(model: TextDetModel, manifest: DatasetManifest | None,
          host: str = "127.0.0.1", port: int = 8000,
          static_dir: Path | None = None) -> None:
    import uvicorn

    uvicorn.run(create_app(model, manifest, static_dir=static_dir),
                host=host, port=port, log_level="info")
