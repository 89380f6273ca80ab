"""Oracle-backed mock server implementing the wire protocol.

Every endpoint delegates to the same in-process backends the local
runner uses, built per clip from one decision descriptor and one
generator descriptor.  A closed-loop run through this server therefore
reproduces the equivalent local run byte for byte.
"""
from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass
from typing import Mapping

import uvicorn
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..agents import (
    CallContext,
    DecisionBackendDescriptor,
    DecisionStack,
    build_decision_stack,
)
from ..dataset import Clip, clip_alignment
from ..errors import BindError, MstpError
from ..generation import Generator, GeneratorDescriptor, build_generator
from ..model import LevelSchema, StateVector
from ..sequences import GridAlignment
from .wire import (
    GENERATE_PATH,
    HEALTH_PATH,
    PREDICT_PATH,
    PROTOCOL_VERSION,
    STC_PATH,
    GenerateRequest,
    GenerateResponse,
    HealthResponse,
    PredictRequest,
    PredictResponse,
    RequestCommon,
    StcRequest,
    StcResponse,
    image_from_wire,
    image_to_wire,
)

logger = logging.getLogger(__name__)

_TRUTH_DECISIONS = ("ground_truth", "noisy")
_TRUTH_GENERATORS = ("passthrough",)


class _Reject(Exception):
    """Request that cannot be served; mapped to a 400 response."""


class MockBacking:
    """Per-clip backend bundle shared by all endpoints.

    Thread safe: the clip cache is lock guarded and the backends
    themselves are pure given the request coordinates, so concurrent
    requests for the same clip cannot interfere.
    """

    def __init__(
        self,
        schema: LevelSchema,
        decision: DecisionBackendDescriptor,
        generator: GeneratorDescriptor,
        clips: Mapping[str, Clip] | None = None,
        incremental_scale: float = 1.0,
        retries: int = 1,
    ):
        if decision.kind == "remote" or generator.kind == "remote":
            raise MstpError("the mock cannot back itself with remote backends")
        self.schema = schema
        self.decision = decision
        self.generator = generator
        self.clips = dict(clips or {})
        self.incremental_scale = incremental_scale
        self.retries = retries
        self._lock = threading.Lock()
        self._cache: dict[str, tuple[DecisionStack, Generator]] = {}

    def _truth_for(self, clip_id: str) -> GridAlignment | None:
        clip = self.clips.get(clip_id)
        if clip is not None:
            return clip_alignment(clip, self.incremental_scale)
        if (
            self.decision.kind in _TRUTH_DECISIONS
            or self.generator.kind in _TRUTH_GENERATORS
        ):
            raise _Reject(f"unknown clip_id {clip_id!r}")
        return None

    def bundle(self, clip_id: str) -> tuple[DecisionStack, Generator]:
        with self._lock:
            hit = self._cache.get(clip_id)
            if hit is not None:
                return hit
            truth = self._truth_for(clip_id)
            stack = build_decision_stack(
                self.decision,
                self.schema,
                truth,
                clip_id=clip_id,
                retries=self.retries,
            )
            gen = build_generator(self.generator, truth)
            self._cache[clip_id] = (stack, gen)
            return stack, gen


def _reject(reason: str) -> JSONResponse:
    return JSONResponse(status_code=400, content={"error": reason})


def _fail(exc: Exception) -> JSONResponse:
    logger.exception("mock backend call failed")
    return JSONResponse(
        status_code=500, content={"error": f"{type(exc).__name__}: {exc}"}
    )


def create_app(backing: MockBacking) -> FastAPI:
    """FastAPI application serving the protocol over the given backing."""
    app = FastAPI(title="mstp mock backend", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def _malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400,
            content={"error": "malformed body", "detail": str(exc)[:500]},
        )

    def precheck(common: RequestCommon) -> str | None:
        if common.protocol_version != PROTOCOL_VERSION:
            return (
                f"unsupported protocol_version {common.protocol_version!r}, "
                f"server speaks {PROTOCOL_VERSION!r}"
            )
        if common.schema_digest != backing.schema.digest:
            return "schema_digest does not match the serving schema"
        return None

    def decode_image(data: str):
        try:
            return image_from_wire(data)
        except Exception as exc:
            raise _Reject(f"image does not decode as base64 PNG: {exc}") from exc

    def as_state(labels: list[str]) -> StateVector:
        if len(labels) != backing.schema.depth:
            raise _Reject(
                f"state carries {len(labels)} labels, schema has "
                f"{backing.schema.depth} levels"
            )
        return StateVector(labels=tuple(labels), schema_id=backing.schema.digest)

    @app.post(STC_PATH)
    def stc(body: StcRequest):
        reason = precheck(body)
        if reason is not None:
            return _reject(reason)
        try:
            stack, _ = backing.bundle(body.clip_id)
            state = as_state(body.state)
            image = decode_image(body.image)
            ctx = CallContext(clip_id=body.clip_id, step_k=body.step_k)
            decision = stack.stc.decide(ctx, state, image)
        except _Reject as exc:
            return _reject(str(exc))
        except Exception as exc:
            return _fail(exc)
        return StcResponse(decision=decision.kind, level=decision.level)

    @app.post(PREDICT_PATH)
    def predict(level: int, body: PredictRequest):
        reason = precheck(body)
        if reason is not None:
            return _reject(reason)
        if not 1 <= level <= backing.schema.depth:
            return _reject(
                f"level {level} outside 1..{backing.schema.depth}"
            )
        try:
            stack, _ = backing.bundle(body.clip_id)
            prefix = as_state(body.partial_state)
            image = decode_image(body.image)
            ctx = CallContext(clip_id=body.clip_id, step_k=body.step_k)
            label = stack.agents[level - 1].predict(
                ctx, level, prefix.labels, tuple(body.allowed_labels), image
            )
        except _Reject as exc:
            return _reject(str(exc))
        except Exception as exc:
            return _fail(exc)
        return PredictResponse(label=label)

    @app.post(GENERATE_PATH)
    def generate(body: GenerateRequest):
        reason = precheck(body)
        if reason is not None:
            return _reject(reason)
        try:
            _, gen = backing.bundle(body.clip_id)
            state = as_state(body.state)
            image = decode_image(body.image)
            ctx = CallContext(clip_id=body.clip_id, step_k=body.step_k)
            result = gen.generate(ctx, state, image)
        except _Reject as exc:
            return _reject(str(exc))
        except Exception as exc:
            return _fail(exc)
        return GenerateResponse(image=image_to_wire(result))

    @app.get(HEALTH_PATH)
    def health():
        return HealthResponse(status="ok", protocol_version=PROTOCOL_VERSION)

    return app


@dataclass
class ServerHandle:
    """Running mock server; stop() shuts it down gracefully."""

    server: uvicorn.Server
    thread: threading.Thread
    host: str
    port: int

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def stop(self, timeout: float = 10.0) -> None:
        self.server.should_exit = True
        self.thread.join(timeout)

    def join(self) -> None:
        self.thread.join()


def serve_mock(
    backing: MockBacking,
    host: str = "127.0.0.1",
    port: int = 0,
    log_level: str = "warning",
) -> ServerHandle:
    """Start the mock in a background thread and wait until it binds.

    Port 0 asks the OS for a free port; the handle reports the bound one.

    Raises:
        BindError: the address could not be bound or startup stalled.
    """
    app = create_app(backing)
    config = uvicorn.Config(
        app, host=host, port=port, log_level=log_level, access_log=False
    )
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, name="mstp-mock", daemon=True)
    thread.start()
    deadline = time.monotonic() + 10.0
    while not server.started:
        if not thread.is_alive():
            raise BindError(f"mock server failed to bind {host}:{port}")
        if time.monotonic() > deadline:
            server.should_exit = True
            raise BindError(f"mock server did not start on {host}:{port}")
        time.sleep(0.01)
    bound = port
    for running in server.servers:
        for sock in running.sockets:
            bound = sock.getsockname()[1]
    return ServerHandle(server=server, thread=thread, host=host, port=bound)
