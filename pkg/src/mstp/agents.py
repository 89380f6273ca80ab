"""Transition gating and the hierarchical prediction cascade.

One decision step has two parts: a gate that answers "does the state change
now, and at which level", and a cascade that re-predicts every level from
the transition level down to the finest.  Both parts run against a
pluggable backend; the built-ins are deterministic oracles for desk-scale
evaluation (ground truth, noisy ground truth, Markov sampler, scripted
table).  The remote backend lives in :mod:`mstp.service.remote`.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import (
    BackendUnavailable,
    InvalidAgentOutput,
    MissingRow,
    SchemaError,
)
from .images import ImageBuffer
from .model import LevelSchema, StateVector, validate_state
from .seeding import derive_rng, derive_seed
from .sequences import GridAlignment

DEFAULT_RETRIES = 1

_CONTINUE = "continue"
_TRANSITION = "transition"


@dataclass(frozen=True)
class TransitionDecision:
    """Gate outcome: continue unchanged, or transition at a level."""

    kind: str
    level: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in (_CONTINUE, _TRANSITION):
            raise SchemaError(f"unknown decision kind {self.kind!r}")
        if self.kind == _TRANSITION and (self.level is None or self.level < 1):
            raise SchemaError("a transition decision needs a positive level")
        if self.kind == _CONTINUE and self.level is not None:
            raise SchemaError("a continue decision carries no level")

    @classmethod
    def continue_(cls) -> "TransitionDecision":
        return cls(_CONTINUE)

    @classmethod
    def transition_at(cls, level: int) -> "TransitionDecision":
        return cls(_TRANSITION, level)

    @property
    def is_transition(self) -> bool:
        return self.kind == _TRANSITION

    def encode(self) -> str:
        if self.is_transition:
            return f"transition:{self.level}"
        return _CONTINUE

    @classmethod
    def decode(cls, text: str) -> "TransitionDecision":
        if text == _CONTINUE:
            return cls.continue_()
        if text.startswith("transition:"):
            return cls.transition_at(int(text.split(":", 1)[1]))
        raise SchemaError(f"cannot decode decision {text!r}")


@dataclass(frozen=True)
class CallContext:
    """Coordinates of one backend call: which clip, which step.

    ``step_k`` is the index of the input state; the call produces the state
    or image for step ``step_k + 1``.
    """

    clip_id: str
    step_k: int


class DecisionBackend(abc.ABC):
    """Interface every decision backend implements.

    Backends must be safe to call concurrently for distinct trajectories;
    calls within one trajectory are sequential.
    """

    @abc.abstractmethod
    def decide(
        self, ctx: CallContext, state: StateVector, image: ImageBuffer
    ) -> TransitionDecision:
        """Gate decision for advancing from step ``ctx.step_k``."""

    @abc.abstractmethod
    def predict(
        self,
        ctx: CallContext,
        level: int,
        prefix: tuple[str, ...],
        allowed: tuple[str, ...],
        image: ImageBuffer,
    ) -> str:
        """Label for one level of the next state.

        Args:
            level: 1-based level being predicted.
            prefix: the full working label tuple; levels above ``level``
                already hold next-step labels, the rest still hold the
                current step's labels.
            allowed: the labels the agent must choose from.
            image: the current step's image.
        """


def stc_decide(
    state: StateVector,
    image: ImageBuffer,
    backend: DecisionBackend,
    ctx: CallContext,
) -> TransitionDecision:
    """Run the gate and bound-check its answer.

    Raises:
        InvalidAgentOutput: the backend named a level outside the state's
            hierarchy.
        BackendUnavailable: propagated from the backend.
    """
    decision = backend.decide(ctx, state, image)
    if decision.is_transition and not 1 <= decision.level <= len(state.labels):
        raise InvalidAgentOutput(
            f"transition level {decision.level} outside 1..{len(state.labels)}"
        )
    return decision


def cascade_predict(
    schema: LevelSchema,
    level: int,
    state_k: StateVector,
    image_k: ImageBuffer,
    agents: tuple[DecisionBackend, ...],
    ctx: CallContext,
    retries: int = DEFAULT_RETRIES,
) -> StateVector:
    """Re-predict levels ``level..L``; inherit everything above.

    Each agent sees the partially assembled label tuple and must choose
    from the child set of the already-assembled parent.  An agent whose
    answer falls outside that set is retried ``retries`` times and then the
    call fails; no invalid state ever leaves this function.

    Raises:
        SchemaError: level out of range or wrong agent count.
        InvalidAgentOutput: an agent kept answering outside its allowed set.
    """
    if not 1 <= level <= schema.depth:
        raise SchemaError(f"cascade level {level} outside 1..{schema.depth}")
    if len(agents) != schema.depth:
        raise SchemaError(
            f"cascade needs {schema.depth} level agents, got {len(agents)}"
        )
    working = list(state_k.labels)
    for pos in range(level, schema.depth + 1):
        parent = working[pos - 2] if pos > 1 else None
        allowed = schema.allowed_labels(pos, parent)
        if not allowed:
            raise InvalidAgentOutput(
                f"level {pos}: label {parent!r} has no allowed children"
            )
        label = None
        for _ in range(retries + 1):
            candidate = agents[pos - 1].predict(
                ctx, pos, tuple(working), allowed, image_k
            )
            if candidate in allowed:
                label = candidate
                break
        if label is None:
            raise InvalidAgentOutput(
                f"level {pos} agent kept answering outside its allowed set "
                f"after {retries} retries"
            )
        working[pos - 1] = label
    result = StateVector(tuple(working), state_k.schema_id)
    check = validate_state(schema, result)
    if not check:
        raise InvalidAgentOutput(f"cascade produced an invalid state: {check}")
    return result


# ---------------------------------------------------------------------------
# built-in backends
# ---------------------------------------------------------------------------

class GroundTruthBackend(DecisionBackend):
    """Oracle bound to an annotated sequence alignment.

    The gate reports the coarsest level at which the annotation changes at
    the next step; predictions return the annotated next-step label.
    """

    def __init__(self, truth: GridAlignment):
        self.truth = truth

    def decide(self, ctx, state, image):
        current = self.truth.state_at(ctx.step_k)
        upcoming = self.truth.state_at(ctx.step_k + 1)
        for pos, (a, b) in enumerate(zip(current.labels, upcoming.labels), start=1):
            if a != b:
                return TransitionDecision.transition_at(pos)
        return TransitionDecision.continue_()

    def predict(self, ctx, level, prefix, allowed, image):
        return self.truth.state_at(ctx.step_k + 1).labels[level - 1]


@dataclass(frozen=True)
class NoisyOracleConfig:
    """Per-level error rates over a ground-truth oracle.

    ``independent`` mode draws one error coin per (step, level), so level
    failures are independent and joint accuracy follows the product of the
    per-level accuracies.  ``corrective`` mode draws a single coin per step
    shared by all levels, so errors co-occur: marginals stay at 1 - p per
    level while joint accuracy rises to 1 - max(p), the behaviour of a
    cascade whose finer agents fail on exactly the frames that already
    broke the coarser ones.
    """

    probabilities: tuple[float, ...]
    mode: str = "independent"
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "probabilities", tuple(self.probabilities))
        if self.mode not in ("independent", "corrective"):
            raise SchemaError(f"unknown noise mode {self.mode!r}")
        for p in self.probabilities:
            if not 0.0 <= p <= 1.0:
                raise SchemaError(f"error probability {p} outside [0, 1]")


class NoisyOracleBackend(DecisionBackend):
    """Ground-truth oracle whose per-level answers flip with probability p.

    The gate itself is exact; with all probabilities at zero the backend is
    indistinguishable from :class:`GroundTruthBackend`.
    """

    def __init__(self, truth: GridAlignment, config: NoisyOracleConfig):
        self.truth = truth
        self.config = config
        self._gate = GroundTruthBackend(truth)

    def decide(self, ctx, state, image):
        return self._gate.decide(ctx, state, image)

    def predict(self, ctx, level, prefix, allowed, image):
        if level > len(self.config.probabilities):
            raise BackendUnavailable(
                f"no error probability configured for level {level}"
            )
        truth_label = self.truth.state_at(ctx.step_k + 1).labels[level - 1]
        p = self.config.probabilities[level - 1]
        if self.config.mode == "independent":
            coin = derive_rng(
                self.config.seed, ctx.clip_id, ctx.step_k, level, "err"
            ).random()
        else:
            coin = derive_rng(self.config.seed, ctx.clip_id, ctx.step_k, "err").random()
        erred = coin < p
        if not erred and truth_label in allowed:
            return truth_label
        wrong = [lab for lab in allowed if lab != truth_label]
        if not wrong:
            return allowed[0]
        pick = derive_rng(self.config.seed, ctx.clip_id, ctx.step_k, level, "pick")
        return wrong[int(pick.integers(len(wrong)))]


@dataclass(frozen=True)
class MarkovModel:
    """Per-level transition rows conditioned on the already-updated parent.

    ``transitions[level][(parent_label, from_label)]`` is a row over the
    level's labels; the parent key is None at level 1.  Rows must sum to 1
    and their support must respect containment under the parent.
    """

    transitions: Mapping[int, Mapping[tuple[str | None, str], Mapping[str, float]]]
    initial: Mapping[int, Mapping[str, float]] = field(default_factory=dict)


def validate_markov_model(model: MarkovModel, schema: LevelSchema) -> None:
    """Raise SchemaError on a non-stochastic row or a containment leak."""
    for level, rows in model.transitions.items():
        if not 1 <= level <= schema.depth:
            raise SchemaError(f"markov level {level} outside schema")
        for (parent, source), row in rows.items():
            total = sum(row.values())
            if abs(total - 1.0) > 1e-9:
                raise SchemaError(
                    f"markov row ({parent!r}, {source!r}) at level {level} sums "
                    f"to {total}"
                )
            allowed = set(schema.allowed_labels(level, parent))
            for label, prob in row.items():
                if prob < 0:
                    raise SchemaError("markov probabilities must be non-negative")
                if prob > 0 and label not in allowed:
                    raise SchemaError(
                        f"markov row ({parent!r}, {source!r}) at level {level} puts "
                        f"mass on {label!r} outside the allowed set"
                    )


def markov_model_to_dict(model: MarkovModel) -> dict[str, Any]:
    """JSON-friendly form; tuple row keys become explicit fields."""
    levels = []
    for level in sorted(model.transitions):
        rows = [
            {"parent": parent, "from": source, "probs": dict(row)}
            for (parent, source), row in sorted(
                model.transitions[level].items(), key=lambda item: repr(item[0])
            )
        ]
        levels.append({"level": level, "rows": rows})
    initial = [
        {"level": level, "probs": dict(model.initial[level])}
        for level in sorted(model.initial)
    ]
    return {"levels": levels, "initial": initial}


def markov_model_from_dict(payload: Mapping[str, Any]) -> MarkovModel:
    transitions: dict[int, dict[tuple[str | None, str], dict[str, float]]] = {}
    for entry in payload.get("levels", []):
        rows = transitions.setdefault(int(entry["level"]), {})
        for row in entry["rows"]:
            rows[(row.get("parent"), row["from"])] = {
                str(k): float(v) for k, v in row["probs"].items()
            }
    initial = {
        int(entry["level"]): {str(k): float(v) for k, v in entry["probs"].items()}
        for entry in payload.get("initial", [])
    }
    return MarkovModel(transitions=transitions, initial=initial)


def markov_sample(
    model: MarkovModel,
    state: StateVector,
    level: int,
    parent_label: str | None,
    rng_seed: int,
) -> str:
    """Draw the next label for one level; deterministic given the seed.

    Raises:
        MissingRow: the model has no row for (parent, current label).
    """
    rows = model.transitions.get(level, {})
    key = (parent_label, state.labels[level - 1])
    row = rows.get(key)
    if row is None:
        raise MissingRow(f"level {level} has no row for {key!r}")
    u = derive_rng(rng_seed).random()
    cumulative = 0.0
    items = sorted(row.items())
    for label, prob in items:
        cumulative += prob
        if u < cumulative:
            return label
    return items[-1][0]


class MarkovBackend(DecisionBackend):
    """Samples every level from Markov rows at every step.

    The gate always fires at the top level; self-transitions in the rows
    express continuation.
    """

    def __init__(self, schema: LevelSchema, model: MarkovModel, seed: int = 0):
        validate_markov_model(model, schema)
        self.schema = schema
        self.model = model
        self.seed = seed

    def decide(self, ctx, state, image):
        return TransitionDecision.transition_at(1)

    def predict(self, ctx, level, prefix, allowed, image):
        parent = prefix[level - 2] if level > 1 else None
        state = StateVector(prefix, self.schema.digest)
        call_seed = derive_seed(self.seed, ctx.clip_id, ctx.step_k, level)
        return markov_sample(self.model, state, level, parent, call_seed)


@dataclass(frozen=True)
class Script:
    """Deterministic decision/label table keyed by step (and level)."""

    decisions: Mapping[int, TransitionDecision] = field(default_factory=dict)
    labels: Mapping[tuple[int, int], str] = field(default_factory=dict)


def parse_script(text: str) -> Script:
    """Parse the scripted-backend table format.

    One entry per line, ``#`` starts a comment:

    * ``<k> stc continue``
    * ``<k> stc transition <level>``
    * ``<k> <level> <label>``

    ``k`` is the input step of the call; labels answer the prediction for
    step ``k + 1``.  Steps without an stc row default to continue.
    """
    decisions: dict[int, TransitionDecision] = {}
    labels: dict[tuple[int, int], str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            step = int(parts[0])
            if parts[1] == "stc":
                if parts[2] == _CONTINUE:
                    decisions[step] = TransitionDecision.continue_()
                elif parts[2] == _TRANSITION:
                    decisions[step] = TransitionDecision.transition_at(int(parts[3]))
                else:
                    raise ValueError(f"unknown stc entry {parts[2]!r}")
            else:
                labels[(step, int(parts[1]))] = parts[2]
        except (IndexError, ValueError) as exc:
            raise SchemaError(f"script line {line_no}: {exc}") from exc
    return Script(decisions=decisions, labels=labels)


class ScriptedBackend(DecisionBackend):
    """Plays back a fixed table; missing label rows are a backend fault."""

    def __init__(self, script: Script):
        self.script = script

    def decide(self, ctx, state, image):
        return self.script.decisions.get(ctx.step_k, TransitionDecision.continue_())

    def predict(self, ctx, level, prefix, allowed, image):
        try:
            return self.script.labels[(ctx.step_k, level)]
        except KeyError:
            raise BackendUnavailable(
                f"script has no label for step {ctx.step_k} level {level}"
            ) from None


# ---------------------------------------------------------------------------
# descriptors and the decision stack
# ---------------------------------------------------------------------------

DECISION_KINDS = ("ground_truth", "markov", "noisy", "scripted", "remote")


@dataclass(frozen=True)
class DecisionBackendDescriptor:
    """Declarative backend choice: a kind plus its parameter blob."""

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in DECISION_KINDS:
            raise SchemaError(f"unknown decision backend kind {self.kind!r}")
        object.__setattr__(self, "params", dict(self.params))


@dataclass(frozen=True)
class DecisionStack:
    """The full decision side of one step: gate plus level agents."""

    stc: DecisionBackend
    agents: tuple[DecisionBackend, ...]
    retries: int = DEFAULT_RETRIES


def build_decision_stack(
    desc: DecisionBackendDescriptor,
    schema: LevelSchema,
    truth: GridAlignment | None = None,
    *,
    clip_id: str = "",
    retries: int = DEFAULT_RETRIES,
    client: Any = None,
) -> DecisionStack:
    """Materialize a backend descriptor for one trajectory.

    Oracle kinds need a ground-truth alignment; the remote kind needs a
    protocol client (shared across trajectories for connection pooling).
    """
    backend: DecisionBackend
    if desc.kind == "ground_truth":
        if truth is None:
            raise BackendUnavailable("ground_truth backend needs a truth alignment")
        backend = GroundTruthBackend(truth)
    elif desc.kind == "noisy":
        if truth is None:
            raise BackendUnavailable("noisy backend needs a truth alignment")
        config = NoisyOracleConfig(
            probabilities=tuple(desc.params["probabilities"]),
            mode=desc.params.get("mode", "independent"),
            seed=desc.params.get("seed", 0),
        )
        backend = NoisyOracleBackend(truth, config)
    elif desc.kind == "markov":
        model = desc.params.get("model")
        if model is None:
            raise BackendUnavailable("markov backend needs a model")
        backend = MarkovBackend(schema, model, seed=desc.params.get("seed", 0))
    elif desc.kind == "scripted":
        script = desc.params.get("script")
        if script is None:
            text = desc.params.get("table", "")
            script = parse_script(text)
        backend = ScriptedBackend(script)
    else:
        from .service.remote import RemoteDecisionBackend

        if client is None:
            raise BackendUnavailable("remote backend needs a protocol client")
        backend = RemoteDecisionBackend(client=client, schema=schema)
    return DecisionStack(
        stc=backend, agents=(backend,) * schema.depth, retries=retries
    )
