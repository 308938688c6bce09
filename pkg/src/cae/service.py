"""HTTP service exposing encode / decode / path / saliency over a loaded model.

Endpoints are pure views over the library operations: every response is the
serialized result of the corresponding library call on an immutable
``SessionState``. One model per service instance.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .core import ClassStyleCode, Dataset, ImageTensor, LabeledSample
from .data import image_from_png_bytes, image_to_png_bytes
from .explain import (
    BlackBoxClassifier,
    CounterfactualSeries,
    SaliencyResult,
    generate_series,
    render_overlay,
    saliency_map,
)
from .manifold import CodeTable, ProjectionModel, build_path, extract_codes, fit_pca
from .networks import ModelBundle, encode_class, encode_indiv

__all__ = ["SessionState", "build_session", "create_app", "serve"]


@dataclass(frozen=True)
class SessionState:
    """Everything a running service shares, derived from one model hash."""

    bundle: ModelBundle
    dataset: Dataset
    table: CodeTable
    projection: ProjectionModel
    classifier: BlackBoxClassifier
    model_hash: str

    def __post_init__(self):
        if self.table.model_hash != self.model_hash:
            raise ValueError("code table was produced by a different model")


def build_session(
    bundle: ModelBundle,
    dataset: Dataset,
    classifier: BlackBoxClassifier,
    table: CodeTable | None = None,
    projection_k: int = 2,
) -> SessionState:
    table = table if table is not None else extract_codes(bundle, dataset)
    projection = fit_pca(table, k=min(projection_k, table.code_dim))
    return SessionState(
        bundle=bundle,
        dataset=dataset,
        table=table,
        projection=projection,
        classifier=classifier,
        model_hash=bundle.model_hash(),
    )


class EncodeRequest(BaseModel):
    image_png_b64: str
    model_hash: str | None = None


class DecodeRequest(BaseModel):
    source_id: str
    class_code: list[float]
    model_hash: str | None = None


class PathEnd(BaseModel):
    code: list[float] | None = None
    sample_id: str | None = None
    class_centroid: str | None = None


class PathRequest(BaseModel):
    source_id: str
    end: PathEnd
    start: list[float] | None = None
    n_steps: int = Field(default=10, ge=2)
    model_hash: str | None = None


class SaliencyRequest(PathRequest):
    weighting: str = "prob_delta"


def _b64_png(image: ImageTensor) -> str:
    return base64.b64encode(image_to_png_bytes(image)).decode()


def serialize_series(series: CounterfactualSeries) -> dict:
    return {
        "source_id": series.source_id,
        "source_class": series.source_class,
        "destination_class": series.destination_class,
        "n_steps": series.path.n_steps,
        "frames_png_b64": [_b64_png(f) for f in series.frames],
        "probs": [[float(p) for p in row] for row in series.probs],
    }


def serialize_saliency(result: SaliencyResult, series: CounterfactualSeries) -> dict:
    overlay = render_overlay(series.frames[0], result.saliency)
    return {
        "height": int(result.saliency.shape[0]),
        "width": int(result.saliency.shape[1]),
        "saliency_f32_b64": base64.b64encode(result.saliency.astype("<f4").tobytes()).decode(),
        "step_weights": [float(w) for w in result.step_weights],
        "flip_index": result.flip_index,
        "degenerate": result.degenerate,
        "weighting": result.weighting,
        "probs": [[float(p) for p in row] for row in series.probs],
        "overlay_png_b64": _b64_png(overlay),
    }


class ServiceError(Exception):
    def __init__(self, status: int, detail: str):
        self.status = status
        self.detail = detail


def create_app(state: SessionState) -> FastAPI:
    app = FastAPI(title="class-association-embedding service")

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        details = [
            {"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": details})

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"detail": exc.detail})

    def check_hash(model_hash: str | None):
        if model_hash is not None and model_hash != state.model_hash:
            raise ServiceError(409, f"model hash mismatch: service runs {state.model_hash}")

    def find_sample(sample_id: str) -> LabeledSample:
        try:
            return state.dataset.by_id(sample_id)
        except KeyError:
            raise ServiceError(400, f"unknown sample id {sample_id!r}") from None

    def resolve_end(end: PathEnd) -> tuple[np.ndarray, int | None]:
        given = [v is not None for v in (end.code, end.sample_id, end.class_centroid)]
        if sum(given) != 1:
            raise ServiceError(400, "end must set exactly one of code, sample_id, class_centroid")
        if end.code is not None:
            if len(end.code) != state.bundle.config.code_dim:
                raise ServiceError(
                    400, f"end.code must have length {state.bundle.config.code_dim}"
                )
            return np.asarray(end.code, dtype=np.float64), None
        if end.sample_id is not None:
            row = _row_of(end.sample_id)
            return state.table.codes[row].astype(np.float64), int(state.table.labels[row])
        names = list(state.dataset.class_names or [])
        if end.class_centroid not in names:
            raise ServiceError(400, f"unknown class name {end.class_centroid!r}")
        k = names.index(end.class_centroid)
        return state.table.class_centroid(k), k

    def _row_of(sample_id: str) -> int:
        try:
            return state.table.ids.index(sample_id)
        except ValueError:
            raise ServiceError(400, f"sample id {sample_id!r} not in code table") from None

    def build_series(req: PathRequest) -> CounterfactualSeries:
        check_hash(req.model_hash)
        source = find_sample(req.source_id)
        end_code, end_class = resolve_end(req.end)
        if req.start is not None:
            if len(req.start) != state.bundle.config.code_dim:
                raise ServiceError(400, f"start must have length {state.bundle.config.code_dim}")
            start = np.asarray(req.start, dtype=np.float64)
        else:
            start = encode_class(state.bundle, source.image).values.astype(np.float64)
        path = build_path(start, end_code, req.n_steps)
        return generate_series(state.bundle, source, path, state.classifier, end_class)

    @app.get("/v1/meta")
    def meta():
        cfg = state.bundle.config
        return {
            "class_count": cfg.class_count,
            "code_dim": cfg.code_dim,
            "side": cfg.side,
            "channels": cfg.channels,
            "class_names": list(
                state.dataset.class_names or [str(k) for k in range(cfg.class_count)]
            ),
            "model_hash": state.model_hash,
        }

    @app.get("/v1/codes")
    def codes():
        projected = state.projection.project(state.table.codes)
        names = state.dataset.class_names or tuple(
            str(k) for k in range(state.table.class_count)
        )
        return {
            "model_hash": state.model_hash,
            "code_dim": state.table.code_dim,
            "rows": [
                {
                    "id": sid,
                    "label": int(state.table.labels[i]),
                    "class_name": names[int(state.table.labels[i])],
                    "code": [float(v) for v in state.table.codes[i]],
                    "xy": [float(projected[i, 0]), float(projected[i, 1] if projected.shape[1] > 1 else 0.0)],
                }
                for i, sid in enumerate(state.table.ids)
            ],
            "projection": {
                "mean": [float(v) for v in state.projection.mean],
                "axes": [[float(v) for v in row] for row in state.projection.axes],
                "variance_fractions": [float(v) for v in state.projection.variance_fractions],
            },
        }

    @app.post("/v1/encode")
    def encode(req: EncodeRequest):
        check_hash(req.model_hash)
        try:
            image = image_from_png_bytes(
                base64.b64decode(req.image_png_b64), target_size=state.bundle.config.side
            )
        except Exception as exc:
            raise ServiceError(400, f"image_png_b64: {exc}") from None
        code = encode_class(state.bundle, image)
        style = encode_indiv(state.bundle, image)
        return {
            "class_code": [float(v) for v in code.values],
            "indiv_code_shape": list(style.values.shape),
            "indiv_code_f32_b64": base64.b64encode(
                style.values.astype("<f4").tobytes()
            ).decode(),
        }

    @app.post("/v1/decode")
    def decode_endpoint(req: DecodeRequest):
        check_hash(req.model_hash)
        source = find_sample(req.source_id)
        if len(req.class_code) != state.bundle.config.code_dim:
            raise ServiceError(400, f"class_code must have length {state.bundle.config.code_dim}")
        style = encode_indiv(state.bundle, source.image)
        from .networks import decode as decode_op

        frame = decode_op(
            state.bundle,
            ClassStyleCode(np.asarray(req.class_code, dtype=np.float32)),
            style,
        )
        return {"image_png_b64": _b64_png(frame)}

    @app.post("/v1/path")
    def path_endpoint(req: PathRequest):
        return serialize_series(build_series(req))

    @app.post("/v1/saliency")
    def saliency_endpoint(req: SaliencyRequest):
        if req.weighting not in ("prob_delta", "endpoint_contrast"):
            raise ServiceError(400, f"unknown weighting {req.weighting!r}")
        series = build_series(req)
        result = saliency_map(series, weighting=req.weighting)
        return serialize_saliency(result, series)

    return app


def serve(state: SessionState, port: int, static_dir: str | None = None) -> None:
    """Run the service; blocks until interrupted."""
    import uvicorn

    app = create_app(state)
    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
