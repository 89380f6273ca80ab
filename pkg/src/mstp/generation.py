"""Image generation backends for the closed loop.

The loop only requires a contract: given the next state and the current
image, produce the next image with identical dimensions.  The built-ins
are deterministic stand-ins; a real synthesis model is reachable through
the remote kind.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Any, Mapping

from .agents import CallContext
from .errors import BackendUnavailable, DimensionMismatch, SchemaError
from .images import ImageBuffer, add_uniform_noise
from .model import StateVector
from .seeding import derive_rng
from .sequences import GridAlignment

GENERATOR_KINDS = ("identity", "passthrough", "noise", "remote")


@dataclass(frozen=True)
class GeneratorDescriptor:
    """Declarative generator choice: a kind plus its parameter blob."""

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in GENERATOR_KINDS:
            raise SchemaError(f"unknown generator kind {self.kind!r}")
        params = dict(self.params)
        if params.get("sigma", 0) < 0:
            raise SchemaError("noise amplitude must be non-negative")
        object.__setattr__(self, "params", params)


class Generator(abc.ABC):
    """Interface every generation backend implements."""

    @abc.abstractmethod
    def generate(
        self, ctx: CallContext, state_next: StateVector, image_k: ImageBuffer
    ) -> ImageBuffer:
        """Image for step ``ctx.step_k + 1``."""


class IdentityGenerator(Generator):
    """Returns the input image unchanged; the degradation baseline."""

    def generate(self, ctx, state_next, image_k):
        return image_k


class PassthroughGenerator(Generator):
    """Returns the annotated ground-truth frame at the next step."""

    def __init__(self, truth: GridAlignment):
        self.truth = truth

    def generate(self, ctx, state_next, image_k):
        return self.truth.image_at(ctx.step_k + 1)


class NoiseGenerator(Generator):
    """Returns the input plus seeded uniform noise, clamped to range.

    The noise draw is keyed by (seed, clip, step) so trajectories are
    reproducible regardless of scheduling.
    """

    def __init__(self, sigma: float, seed: int = 0):
        if sigma < 0:
            raise SchemaError("noise amplitude must be non-negative")
        self.sigma = sigma
        self.seed = seed

    def generate(self, ctx, state_next, image_k):
        rng = derive_rng(self.seed, ctx.clip_id, ctx.step_k, "vg")
        return add_uniform_noise(image_k, self.sigma, rng)


def generate_next(
    state_next: StateVector,
    image_k: ImageBuffer,
    gen: Generator,
    context: CallContext,
) -> ImageBuffer:
    """Run one generation call and enforce the dimension contract.

    Raises:
        DimensionMismatch: the backend changed the image geometry.
        MissingGroundTruth: passthrough ran past its bound sequence.
        BackendUnavailable: propagated from the backend.
    """
    result = gen.generate(context, state_next, image_k)
    if not result.same_shape(image_k):
        raise DimensionMismatch(
            f"generator changed image shape from "
            f"{(image_k.height, image_k.width, image_k.channels)} to "
            f"{(result.height, result.width, result.channels)}"
        )
    return result


def build_generator(
    desc: GeneratorDescriptor,
    truth: GridAlignment | None = None,
    *,
    client: Any = None,
) -> Generator:
    """Materialize a generator descriptor for one trajectory."""
    if desc.kind == "identity":
        return IdentityGenerator()
    if desc.kind == "passthrough":
        if truth is None:
            raise BackendUnavailable("passthrough generator needs a truth alignment")
        return PassthroughGenerator(truth)
    if desc.kind == "noise":
        return NoiseGenerator(
            sigma=desc.params.get("sigma", 0.0), seed=desc.params.get("seed", 0)
        )
    from .service.remote import RemoteGenerator

    if client is None:
        raise BackendUnavailable("remote generator needs a protocol client")
    return RemoteGenerator(client=client)
