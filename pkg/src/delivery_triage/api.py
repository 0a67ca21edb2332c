"""HTTP facade over the triage pipeline and case store.

Every endpoint is a thin serialization shim over module calls; no
decision logic lives here.  Heatmaps cross the wire as raw RGB bytes in
base64 with explicit dimensions so clients never need an image codec.
"""

from __future__ import annotations

import base64
import binascii
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .cnn import load_cnn_model
from .datasets import FeedbackRecord
from .ppm import read_ppm
from .text_model import load_text_model
from .triage import (
    CaseStore,
    SystemClock,
    TriageCase,
    TriageConfig,
    analyst_resolve,
    queue,
    run_pipeline,
)


@dataclass
class ServiceConfig:
    """Startup wiring: where the data lives and which model files to serve."""

    data_dir: Path
    text_model_path: Path
    relevance_model_path: Path
    damage_model_path: Path
    host: str = "127.0.0.1"
    port: int = 8000
    triage: TriageConfig = field(default_factory=TriageConfig)

    def __post_init__(self) -> None:
        self.data_dir = Path(self.data_dir)
        for attr in ("text_model_path", "relevance_model_path", "damage_model_path"):
            path = Path(getattr(self, attr))
            setattr(self, attr, path)
            if not path.is_file():
                raise ValueError(f"model file not found: {path}")
        self.data_dir.mkdir(parents=True, exist_ok=True)
        probe = self.data_dir / ".write-probe"
        try:
            probe.write_bytes(b"")
            probe.unlink()
        except OSError as exc:
            raise ValueError(f"data directory not writable: {self.data_dir}") from exc


def _bad_request(field_name: str, message: str) -> HTTPException:
    return HTTPException(status_code=400, detail=f"{field_name}: {message}")


def _optional_str(payload: dict, field_name: str, default: str | None = None) -> str | None:
    value = payload.get(field_name, default)
    if value is not None and not isinstance(value, str):
        raise _bad_request(field_name, "must be a string")
    return value


def _require_str(payload: dict, field_name: str) -> str:
    value = payload.get(field_name)
    if value is None:
        raise _bad_request(field_name, "required")
    if not isinstance(value, str):
        raise _bad_request(field_name, "must be a string")
    return value


def _case_response(case: TriageCase) -> dict:
    body = case.to_dict()
    body["text_prediction"] = None
    if case.text_class is not None:
        body["text_prediction"] = {
            "class": case.text_class,
            "confidence": case.text_confidence,
            "probabilities": case.text_probabilities,
        }
    body["image_verdicts"] = {
        "relevance": case.image_relevance.as_dict() if case.image_relevance else None,
        "damage": case.image_damage.as_dict() if case.image_damage else None,
    }
    return body


def _pixmap_payload(root: Path, relative_path: str | None) -> dict | None:
    """Raw-RGB rendering of a stored pixmap, or None when absent/unreadable."""
    if relative_path is None:
        return None
    try:
        pixels = read_ppm(root / relative_path)
    except (OSError, ValueError):
        return None
    raw = np.rint(pixels * 255.0).astype(np.uint8).tobytes()
    return {
        "width": pixels.shape[1],
        "height": pixels.shape[0],
        "rgb_base64": base64.b64encode(raw).decode("ascii"),
    }


def create_app(config: ServiceConfig) -> FastAPI:
    text_model = load_text_model(config.text_model_path)
    relevance_model = load_cnn_model(config.relevance_model_path)
    damage_model = load_cnn_model(config.damage_model_path)
    config.triage.validate_against(text_model.taxonomy)

    store = CaseStore(config.data_dir / "journal.jsonl", clock=SystemClock())
    uploads = store.data_dir / "uploads"
    # layer caches make a model non-reentrant, so pipeline runs serialize
    pipeline_lock = threading.Lock()

    app = FastAPI(title="delivery-triage", docs_url=None, redoc_url=None)
    app.state.store = store
    app.state.config = config

    @app.exception_handler(RequestValidationError)
    def _validation_to_400(request: Request, exc: RequestValidationError):
        details = []
        for err in exc.errors():
            location = ".".join(str(p) for p in err.get("loc", ()) if p not in ("body",))
            details.append(f"{location or 'body'}: {err.get('msg', 'invalid')}")
        return JSONResponse(status_code=400, content={"detail": "; ".join(details)})

    @app.post("/api/feedback", status_code=201)
    def post_feedback(payload: dict = Body(...)):
        if not isinstance(payload, dict):
            raise _bad_request("body", "must be an object")
        comment = _optional_str(payload, "comment", default="") or ""
        image_b64 = _optional_str(payload, "image")
        image_path = None
        if image_b64 is not None:
            try:
                blob = base64.b64decode(image_b64, validate=True)
            except (binascii.Error, ValueError) as exc:
                raise _bad_request("image", f"invalid base64: {exc}") from None
            uploads.mkdir(parents=True, exist_ok=True)
            name = f"upload-{uuid.uuid4().hex}.ppm"
            (uploads / name).write_bytes(blob)
            image_path = f"uploads/{name}"
        record = FeedbackRecord(
            id=f"api-{uuid.uuid4().hex}", comment=comment, image_path=image_path
        )
        with pipeline_lock:
            case = run_pipeline(
                record, text_model, relevance_model, damage_model, config.triage, store
            )
        body = _case_response(case)
        return {
            "case_id": case.id,
            "state": case.state,
            "reason": case.reason,
            "text_prediction": body["text_prediction"],
            "image_verdicts": body["image_verdicts"],
            "warnings": list(case.warnings),
        }

    @app.get("/api/cases")
    def get_cases(state: str | None = None, page: int = 1, page_size: int = 20):
        try:
            result = queue(store, state=state, page=page, page_size=page_size)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        return {
            "items": [row.as_dict() for row in result.items],
            "page": result.page,
            "page_size": result.page_size,
            "total_cases": result.total_cases,
            "total_pages": result.total_pages,
        }

    @app.get("/api/cases/{case_id}")
    def get_case(case_id: str):
        try:
            case = store.get(case_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id!r}") from None
        body = _case_response(case)
        body["heatmap"] = _pixmap_payload(store.data_dir, case.heatmap_path)
        body["image"] = _pixmap_payload(store.data_dir, case.record.image_path)
        return body

    @app.post("/api/cases/{case_id}/decision")
    def post_decision(case_id: str, payload: dict = Body(...)):
        if not isinstance(payload, dict):
            raise _bad_request("body", "must be an object")
        action = _require_str(payload, "action")
        analyst_id = _require_str(payload, "analyst_id")
        label = _optional_str(payload, "label")
        try:
            case = analyst_resolve(
                store, case_id, action, analyst_id, label=label, taxonomy=text_model.taxonomy
            )
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id!r}") from None
        except ValueError as exc:
            status = 409 if "not escalated" in str(exc) else 400
            raise HTTPException(status_code=status, detail=str(exc)) from None
        return _case_response(case)

    @app.get("/api/stats")
    def get_stats():
        return store.stats()

    @app.get("/api/taxonomy")
    def get_taxonomy():
        return {
            "classes": list(text_model.taxonomy.classes),
            "merged_aliases": dict(text_model.taxonomy.merged_aliases),
            "verifiable_classes": sorted(config.triage.verifiable_classes),
        }

    return app
