"""Transition detection and minority-class oversampling.

State transitions are rare next to continuations (often worse than 100:1),
so gate training data is rebalanced by emitting alpha perturbed variants of
every genuine transition: the anchor step is shifted by a bounded random
offset and the anchor image gets bounded uniform noise.  Every variant
carries provenance back to its source transition.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .agents import TransitionDecision
from .errors import NoTransitions, SchemaError
from .images import ImageBuffer, add_uniform_noise, save_image
from .model import LevelSchema, StateVector, TimeGrid, validate_state
from .seeding import derive_rng, derive_seed
from .sequences import AnnotatedSequence

AUTO = "auto"


@dataclass(frozen=True)
class TransitionIndex:
    """Steps at which an annotated sequence changes state.

    Steps are 1-based over the resampled sequence; a transition at k means
    the state differs between steps k and k+1.
    """

    sequence_id: str
    steps: tuple[int, ...]
    n_steps: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        for a, b in zip(self.steps, self.steps[1:]):
            if b <= a:
                raise SchemaError("transition steps must strictly increase")
        if self.steps and not (
            1 <= self.steps[0] and self.steps[-1] <= self.n_steps - 1
        ):
            raise SchemaError("transition steps must lie in 1..N-1")

    @property
    def count(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class AugmentConfig:
    """Oversampling knobs.

    ``alpha`` is the variant count per transition, or "auto" to rebalance
    continuations and transitions to roughly 1:1.  ``delta_tau_max`` bounds
    the anchor shift in steps; ``eps_img`` bounds the pixel noise.
    """

    alpha: int | str = AUTO
    delta_tau_max: int = 0
    eps_img: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.alpha != AUTO and (not isinstance(self.alpha, int) or self.alpha < 0):
            raise SchemaError("alpha must be a non-negative integer or 'auto'")
        if self.delta_tau_max < 0:
            raise SchemaError("delta_tau_max must be non-negative")
        if self.eps_img < 0:
            raise SchemaError("eps_img must be non-negative")


@dataclass(frozen=True)
class Provenance:
    source_k: int
    delta: int
    seed: int


@dataclass(frozen=True)
class SyntheticSample:
    """One oversampled transition example.

    The input is the true annotated state and (perturbed) image at the
    shifted anchor; the label is the transition decision at the source
    step.
    """

    sequence_id: str
    anchor_k: int
    state: StateVector
    image: ImageBuffer
    decision: TransitionDecision
    provenance: Provenance


def find_transitions(seq: AnnotatedSequence, grid: TimeGrid) -> TransitionIndex:
    """All steps k in 1..N-1 where the annotation changes at k+1.

    The sequence must already be resampled so one frame is one grid step.
    """
    n_steps = min(len(seq.frames), grid.n_steps)
    steps = [
        k
        for k in range(1, n_steps)
        if seq.frames[k - 1].state.labels != seq.frames[k].state.labels
    ]
    return TransitionIndex(sequence_id=seq.sequence_id, steps=tuple(steps),
                           n_steps=n_steps)


def compute_alpha(n_steps: int, eps_count: int) -> int:
    """Variants per transition that bring the classes to roughly 1:1.

    Raises:
        NoTransitions: rebalancing is undefined when nothing transitions.
    """
    if eps_count < 1:
        raise NoTransitions("sequence has no transitions to rebalance")
    return -((n_steps - eps_count) // -eps_count)


def class_balance(n_steps: int, eps_count: int, alpha: int) -> float:
    """Synthetic transition samples per non-transition sample."""
    return alpha * eps_count / (n_steps - eps_count)


def transition_decision_at(seq: AnnotatedSequence, k: int) -> TransitionDecision:
    """The gate label for step k: coarsest changed level, or continue."""
    current = seq.frames[k - 1].state.labels
    upcoming = seq.frames[k].state.labels
    for pos, (a, b) in enumerate(zip(current, upcoming), start=1):
        if a != b:
            return TransitionDecision.transition_at(pos)
    return TransitionDecision.continue_()


def augment_transitions(
    seq: AnnotatedSequence,
    idx: TransitionIndex,
    cfg: AugmentConfig,
    schema: LevelSchema | None = None,
) -> list[SyntheticSample]:
    """Emit alpha variants per transition, deterministically under the seed.

    Anchor shifts falling outside 1..N-1 are redrawn, so each transition
    contributes exactly alpha samples.  A shifted anchor keeps the true
    annotated state at its own step, re-validated when a schema is given.
    """
    if idx.count == 0 and cfg.alpha == AUTO:
        raise NoTransitions(f"sequence {seq.sequence_id!r} has no transitions")
    alpha = compute_alpha(idx.n_steps, idx.count) if cfg.alpha == AUTO else cfg.alpha
    samples: list[SyntheticSample] = []
    for k in idx.steps:
        for variant in range(alpha):
            rng = derive_rng(cfg.seed, seq.sequence_id, k, variant, "shift")
            delta = 0
            if cfg.delta_tau_max > 0:
                while True:
                    delta = int(
                        rng.integers(-cfg.delta_tau_max, cfg.delta_tau_max + 1)
                    )
                    if 1 <= k + delta <= idx.n_steps - 1:
                        break
            anchor = k + delta
            noise_seed = derive_seed(cfg.seed, seq.sequence_id, k, variant, "img")
            image = seq.frame_image(anchor - 1)
            if cfg.eps_img > 0:
                image = add_uniform_noise(
                    image, cfg.eps_img,
                    derive_rng(cfg.seed, seq.sequence_id, k, variant, "img"),
                )
            state = seq.frames[anchor - 1].state
            if schema is not None:
                check = validate_state(schema, state)
                if not check:
                    raise SchemaError(
                        f"sequence {seq.sequence_id!r} step {anchor}: {check}"
                    )
            samples.append(
                SyntheticSample(
                    sequence_id=seq.sequence_id,
                    anchor_k=anchor,
                    state=state,
                    image=image,
                    decision=transition_decision_at(seq, k),
                    provenance=Provenance(source_k=k, delta=delta, seed=noise_seed),
                )
            )
    return samples


def write_augmented(
    samples: Iterable[SyntheticSample],
    path: str | Path,
    image_dir: str | Path | None = None,
) -> None:
    """Write samples as clip-style records with a provenance block.

    When an image directory is given, each sample's (possibly perturbed)
    pixels are written there and referenced; otherwise records carry no
    image path.
    """
    image_root = Path(image_dir) if image_dir is not None else None
    if image_root is not None:
        image_root.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        counters: dict[tuple[str, int], int] = {}
        for sample in samples:
            key = (sample.sequence_id, sample.provenance.source_k)
            serial = counters.get(key, 0)
            counters[key] = serial + 1
            sample_id = f"{sample.sequence_id}:aug:{sample.provenance.source_k}:{serial}"
            image_path = None
            if image_root is not None:
                image_path = str(image_root / f"{sample_id.replace(':', '_')}.png")
                save_image(sample.image, image_path)
            record = {
                "clip_id": sample_id,
                "sequence_id": sample.sequence_id,
                "horizon": 0,
                "start_idx": sample.anchor_k,
                "fps": 1,
                "frames": [
                    {
                        "idx": sample.anchor_k,
                        "image_path": image_path,
                        "labels": list(sample.state.labels),
                    }
                ],
                "decision": sample.decision.encode(),
                "provenance": {
                    "source_k": sample.provenance.source_k,
                    "delta": sample.provenance.delta,
                    "seed": sample.provenance.seed,
                },
            }
            fh.write(json.dumps(record) + "\n")
