"""Request and response bodies of the HTTP protocol.

Field names and endpoint paths are part of the protocol and must not
change.  Images cross the wire as base64-encoded 8-bit PNG.
"""
from __future__ import annotations

import base64

from pydantic import BaseModel

from ..images import ImageBuffer, decode_png, encode_png

PROTOCOL_VERSION = "1"

STC_PATH = "/v1/stc"
PREDICT_PATH = "/v1/predict/{level}"
GENERATE_PATH = "/v1/generate"
HEALTH_PATH = "/v1/health"


class RequestCommon(BaseModel):
    protocol_version: str
    clip_id: str
    step_k: int
    schema_digest: str


class StcRequest(RequestCommon):
    state: list[str]
    image: str


class StcResponse(BaseModel):
    decision: str
    level: int | None = None


class PredictRequest(RequestCommon):
    partial_state: list[str]
    allowed_labels: list[str]
    image: str


class PredictResponse(BaseModel):
    label: str


class GenerateRequest(RequestCommon):
    state: list[str]
    image: str


class GenerateResponse(BaseModel):
    image: str


class HealthResponse(BaseModel):
    status: str
    protocol_version: str


def image_to_wire(image: ImageBuffer) -> str:
    return base64.b64encode(encode_png(image)).decode("ascii")


def image_from_wire(data: str) -> ImageBuffer:
    return decode_png(base64.b64decode(data))
