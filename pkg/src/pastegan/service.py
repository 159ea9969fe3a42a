"""HTTP inference service consumed by the composer UI.

Endpoints::

    POST /generate           GenerateRequest -> GenerateResponse
    GET  /vocab              authorable category / predicate names
    GET  /crops?category=&limit=   browse the tank
    GET  /crop/{crop_id}.png       raw crop image
    GET  /healthz

The service is stateless: models and tank load once, every response is a
pure function of the request.
"""

from __future__ import annotations

import base64
import time

from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from .memory_tank import TankError
from .pipeline import RunArtifacts, generate_image, image_to_png_bytes
from .scenegraph import (IMAGE_CATEGORY, IN_IMAGE_PREDICATE, SceneGraphError,
                         parse_scene_graph)


class GenerateRequest(BaseModel):
    scene_graph: dict
    crop_overrides: dict[int, str] = Field(default_factory=dict)
    k: int | None = None
    seed: int = 0
    gt_boxes: list[list[float]] | None = None


class CropUsed(BaseModel):
    object_index: int
    crop_id: str
    thumbnail_png_base64: str


class GenerateResponse(BaseModel):
    image_png_base64: str
    boxes: list[list[float]]
    crops: list[CropUsed]
    candidates: list[list[str]]
    timing_ms: float


def create_app(artifacts: RunArtifacts) -> FastAPI:
    app = FastAPI(title="pastegan")
    vocab = artifacts.vocab
    tank = artifacts.tank

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "crops": len(tank)}

    @app.get("/vocab")
    def get_vocab():
        return {
            "objects": [n for n in vocab.object_categories if n != IMAGE_CATEGORY],
            "predicates": [n for n in vocab.predicate_categories if n != IN_IMAGE_PREDICATE],
        }

    @app.get("/crops")
    def browse_crops(category: str = "", limit: int = 20):
        if category:
            try:
                cat_id = vocab.object_id(category)
            except SceneGraphError as e:
                raise HTTPException(status_code=404, detail=str(e)) from e
            records = tank.category_records(cat_id)
        else:
            records = tank.records
        records = sorted(records, key=lambda r: r.crop_id)[:max(0, limit)]
        return {"crops": [
            {"crop_id": r.crop_id, "category": vocab.object_categories[r.category_id],
             "category_id": r.category_id, "source": r.source}
            for r in records
        ]}

    @app.get("/crop/{crop_id}.png")
    def crop_png(crop_id: str):
        try:
            rec = tank.record(crop_id)
        except TankError as e:
            raise HTTPException(status_code=404, detail=str(e)) from e
        return Response(content=image_to_png_bytes(rec.image), media_type="image/png")

    @app.post("/generate", response_model=GenerateResponse)
    def generate(req: GenerateRequest):
        import json

        start = time.perf_counter()
        try:
            graph = parse_scene_graph(json.dumps(req.scene_graph), vocab)
        except SceneGraphError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        try:
            result = generate_image(artifacts, graph, seed=req.seed, k=req.k,
                                    crop_overrides=req.crop_overrides or None,
                                    gt_boxes=req.gt_boxes)
        except TankError as e:
            detail = str(e)
            status = 404 if "no crop with id" in detail else 400
            raise HTTPException(status_code=status, detail=detail) from e
        except (SceneGraphError, ValueError) as e:
            raise HTTPException(status_code=400, detail=str(e)) from e

        crops = [
            CropUsed(object_index=i, crop_id=cid,
                     thumbnail_png_base64=base64.b64encode(
                         image_to_png_bytes(result.selected_thumbnails[i])).decode())
            for i, cid in enumerate(result.selected_crop_ids)
        ]
        return GenerateResponse(
            image_png_base64=base64.b64encode(image_to_png_bytes(result.image)).decode(),
            boxes=[list(b.as_tuple()) for b in result.boxes],
            crops=crops,
            candidates=result.candidates,
            timing_ms=(time.perf_counter() - start) * 1000.0,
        )

    return app
