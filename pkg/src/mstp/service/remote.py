"""Engine-side backends that forward every call over the wire.

Responses are invariant-checked here so the rest of the engine never
sees the network: a semantically wrong answer becomes InvalidAgentOutput
exactly as it would for a misbehaving in-process backend, and is never
retried.
"""
from __future__ import annotations

from pydantic import ValidationError as PydanticValidationError

from ..agents import CallContext, DecisionBackend, TransitionDecision
from ..errors import DimensionMismatch, InvalidAgentOutput, ProtocolError
from ..generation import Generator
from ..images import ImageBuffer
from ..model import LevelSchema, StateVector
from .client import ProtocolClient
from .wire import (
    GENERATE_PATH,
    PREDICT_PATH,
    PROTOCOL_VERSION,
    STC_PATH,
    GenerateRequest,
    GenerateResponse,
    PredictRequest,
    PredictResponse,
    StcRequest,
    StcResponse,
    image_from_wire,
    image_to_wire,
)


def _common(ctx: CallContext, schema_digest: str) -> dict:
    return {
        "protocol_version": PROTOCOL_VERSION,
        "clip_id": ctx.clip_id,
        "step_k": ctx.step_k,
        "schema_digest": schema_digest,
    }


def _parse(model, payload: dict, endpoint: str):
    try:
        return model.model_validate(payload)
    except PydanticValidationError as exc:
        raise ProtocolError(f"{endpoint} response failed validation: {exc}") from exc


class RemoteDecisionBackend(DecisionBackend):
    """Gate and level agents served by one remote endpoint."""

    def __init__(self, client: ProtocolClient, schema: LevelSchema):
        self.client = client
        self.schema = schema

    def decide(
        self, ctx: CallContext, state: StateVector, image: ImageBuffer
    ) -> TransitionDecision:
        request = StcRequest(
            **_common(ctx, self.schema.digest),
            state=list(state.labels),
            image=image_to_wire(image),
        )
        payload = self.client.call(STC_PATH, request.model_dump())
        response = _parse(StcResponse, payload, STC_PATH)
        if response.decision == "continue":
            return TransitionDecision.continue_()
        if response.decision == "transition":
            if response.level is None or response.level < 1:
                raise InvalidAgentOutput(
                    "transition decision arrived without a positive level"
                )
            return TransitionDecision.transition_at(response.level)
        raise ProtocolError(f"unknown decision {response.decision!r} from {STC_PATH}")

    def predict(
        self,
        ctx: CallContext,
        level: int,
        prefix: tuple[str, ...],
        allowed: tuple[str, ...],
        image: ImageBuffer,
    ) -> str:
        endpoint = PREDICT_PATH.format(level=level)
        request = PredictRequest(
            **_common(ctx, self.schema.digest),
            partial_state=list(prefix),
            allowed_labels=list(allowed),
            image=image_to_wire(image),
        )
        payload = self.client.call(endpoint, request.model_dump())
        response = _parse(PredictResponse, payload, endpoint)
        if response.label not in allowed:
            raise InvalidAgentOutput(
                f"remote label {response.label!r} outside the allowed set "
                f"at level {level}"
            )
        return response.label


class RemoteGenerator(Generator):
    """Image synthesis served by a remote endpoint."""

    def __init__(self, client: ProtocolClient):
        self.client = client

    def generate(
        self, ctx: CallContext, state_next: StateVector, image_k: ImageBuffer
    ) -> ImageBuffer:
        request = GenerateRequest(
            **_common(ctx, state_next.schema_id),
            state=list(state_next.labels),
            image=image_to_wire(image_k),
        )
        payload = self.client.call(GENERATE_PATH, request.model_dump())
        response = _parse(GenerateResponse, payload, GENERATE_PATH)
        try:
            result = image_from_wire(response.image)
        except Exception as exc:
            raise ProtocolError(
                f"{GENERATE_PATH} image does not decode as base64 PNG: {exc}"
            ) from exc
        if not result.same_shape(image_k):
            raise DimensionMismatch(
                f"remote generator changed image shape from "
                f"{(image_k.height, image_k.width, image_k.channels)} to "
                f"{(result.height, result.width, result.channels)}"
            )
        return result
