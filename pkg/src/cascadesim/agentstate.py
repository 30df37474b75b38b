"""Per-agent cognitive state and its update rules.

An agent carries a slow-moving unit-norm belief vector (persona), a
fast-decaying emotion vector (affect), and a bounded episodic memory of past
message embeddings. Three kernels operate on that state:

- ``retrieve_context``: attention-weighted, recency-decayed aggregation of
  the memory store against an incoming message embedding,
- ``dual_update``: gated coupled update that moves the persona along the
  unit sphere and relaxes affect toward the message emotion,
- ``activation_probability``: the logistic engagement policy combining
  belief alignment, affective resonance, episodic coherence, sender
  influence, and platform bias.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError, PreconditionError

DEFAULT_MEMORY_CAPACITY = 256

# Open-interval clamp bounds for probabilities: the largest/smallest doubles
# strictly inside (0, 1), so saturated logits never return exactly 0 or 1.
_P_MAX = float(np.nextafter(1.0, 0.0))
_P_MIN = float(np.nextafter(0.0, 1.0))


def sigmoid(x: float) -> float:
    """Numerically stable logistic 1/(1+e^-x)."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class AgentParams:
    """Per-agent behavioral constants.

    beta: semantic selectivity of memory retrieval (> 0)
    delta: recency decay per round, in (0, 1)
    eta: emotional persistence, in (0, 1)
    gamma: adaptation rate (> 0)
    alpha: affective gate gain (> 0)
    theta: intrinsic activation threshold (any real)
    """

    beta: float
    delta: float
    eta: float
    gamma: float
    alpha: float
    theta: float

    def __post_init__(self):
        if not (self.beta > 0):
            raise ConfigurationError(f"beta must be > 0, got {self.beta}")
        if not (0 < self.delta < 1):
            raise ConfigurationError(f"delta must be in (0,1), got {self.delta}")
        if not (0 < self.eta < 1):
            raise ConfigurationError(f"eta must be in (0,1), got {self.eta}")
        if not (self.gamma > 0):
            raise ConfigurationError(f"gamma must be > 0, got {self.gamma}")
        if not (self.alpha > 0):
            raise ConfigurationError(f"alpha must be > 0, got {self.alpha}")
        if not math.isfinite(self.theta):
            raise ConfigurationError(f"theta must be finite, got {self.theta}")


@dataclass(frozen=True)
class MemoryRecord:
    """One remembered interaction. Immutable once stored."""

    content_embedding: np.ndarray
    emotion: np.ndarray
    memory_vector: np.ndarray
    round: int


@dataclass(frozen=True)
class Message:
    """A piece of content moving through the network.

    Engine behavior depends only on (content_embedding, emotion, author,
    platform, round); ``text`` is display/provenance only.
    """

    id: str
    content_embedding: np.ndarray
    emotion: np.ndarray
    author: str
    platform: str
    round: int
    text: str | None = None

    def __post_init__(self):
        if not np.isfinite(self.content_embedding).all():
            raise ConfigurationError(f"message {self.id}: nonfinite embedding")
        emo = self.emotion
        if not np.isfinite(emo).all() or (np.abs(emo) > 1.0).any():
            raise ConfigurationError(f"message {self.id}: emotion outside [-1,1]")
        if self.round < 0:
            raise ConfigurationError(f"message {self.id}: negative round")


@dataclass
class AgentState:
    """Dual cognitive state: unit-norm persona, bounded affect, episodic memory."""

    persona: np.ndarray
    affect: np.ndarray
    memory: deque = field(default_factory=lambda: deque(maxlen=DEFAULT_MEMORY_CAPACITY))

    def validate(self, tol: float = 1e-9) -> None:
        nrm = float(np.linalg.norm(self.persona))
        if abs(nrm - 1.0) > tol:
            raise PreconditionError(f"persona norm {nrm} not within {tol} of 1")
        rounds = [rec.round for rec in self.memory]
        if any(b < a for a, b in zip(rounds, rounds[1:])):
            raise PreconditionError("memory rounds not nondecreasing")


def make_state(persona, affect, capacity: int = DEFAULT_MEMORY_CAPACITY) -> AgentState:
    persona = np.asarray(persona, dtype=np.float64)
    nrm = float(np.linalg.norm(persona))
    if nrm < 1e-12:
        raise ConfigurationError("persona must be nonzero")
    return AgentState(
        persona=persona / nrm,
        affect=np.asarray(affect, dtype=np.float64),
        memory=deque(maxlen=capacity),
    )


def retrieval_weights(memory, query: np.ndarray, now: int, *, beta: float, delta: float) -> np.ndarray:
    """Normalized retrieval weights over the memory store.

    w_tau proportional to exp(beta * <x_tau, query>) * delta^(now - round_tau).
    Computed in log space so large gaps and similarities cannot overflow.
    beta=0 is accepted here (pure recency weighting) for boundary testing
    even though AgentParams requires beta > 0.
    """

    m = len(memory)
    if m == 0:
        return np.empty(0, dtype=np.float64)
    d = query.shape[0]
    embeddings = np.empty((m, d), dtype=np.float64)
    ages = np.empty(m, dtype=np.float64)
    for k, rec in enumerate(memory):
        vec = rec.content_embedding
        if vec.shape[0] != d:
            raise ConfigurationError(
                f"memory record dimension {vec.shape[0]} != query dimension {d}"
            )
        if rec.round >= now:
            raise PreconditionError(f"memory record at round {rec.round} not before {now}")
        embeddings[k] = vec
        ages[k] = now - rec.round
    logw = beta * (embeddings @ query) + ages * math.log(delta)
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    return w


def retrieve_context(memory, query: np.ndarray, now: int, params: AgentParams) -> np.ndarray:
    """Attention-weighted, recency-decayed aggregate of stored memory vectors.

    Empty memory yields the zero vector, keeping the episodic term of the
    activation policy inert for fresh agents.
    """

    if len(memory) == 0:
        return np.zeros(query.shape[0], dtype=np.float64)
    w = retrieval_weights(memory, query, now, beta=params.beta, delta=params.delta)
    out = np.zeros(query.shape[0], dtype=np.float64)
    for wk, rec in zip(w, memory):
        out += wk * rec.memory_vector
    return out


def project_tangent(v: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Project v onto the tangent space of the unit sphere at z."""

    if v.shape != z.shape:
        raise ConfigurationError(f"shape mismatch {v.shape} vs {z.shape}")
    zz = float(z @ z)
    if abs(zz - 1.0) > 1e-6:
        raise PreconditionError(f"z is not unit norm (|z|^2 = {zz})")
    return v - float(v @ z) * z


def dual_update(state: AgentState, msg: Message, params: AgentParams) -> AgentState:
    """Gated coupled update of (persona, affect) in response to one message.

    gate = sigmoid(alpha * <affect, msg.emotion>); the persona takes a
    tangent-space step of size gamma*gate toward the content residual and is
    renormalized; affect decays by eta and relaxes toward the message emotion
    at rate gamma*gate. Memory is untouched; the returned state shares it.
    """

    z = state.persona
    r = state.affect
    x = msg.content_embedding
    q = msg.emotion
    if x.shape != z.shape:
        raise ConfigurationError(f"content dim {x.shape[0]} != persona dim {z.shape[0]}")
    if q.shape != r.shape:
        raise ConfigurationError(f"emotion dim {q.shape[0]} != affect dim {r.shape[0]}")
    zz = float(z @ z)
    if abs(zz - 1.0) > 1e-6:
        raise PreconditionError(f"persona is not unit norm (|z|^2 = {zz})")

    gate = sigmoid(params.alpha * float(r @ q))
    scale = params.gamma * gate
    u = x - float(x @ z) * z
    step = u - float(u @ z) * z  # re-project: keeps the increment tangent
    pre = z + scale * step
    nrm = float(np.linalg.norm(pre))
    if nrm < 1e-12:
        raise NumericalError("persona update degenerate: cannot renormalize")
    return AgentState(
        persona=pre / nrm,
        affect=params.eta * r + scale * (q - r),
        memory=state.memory,
    )


def activation_logit(
    state: AgentState,
    context: np.ndarray,
    msg: Message,
    sender_influence: float,
    platform,
    params: AgentParams,
) -> float:
    """Raw engagement logit; exposed so exact-equality properties can be tested."""

    if not 0.0 <= sender_influence <= 1.0:
        raise ConfigurationError(f"sender influence {sender_influence} outside [0,1]")
    x = msg.content_embedding
    logit = (
        platform.w1 * float(state.persona @ x)
        + platform.w2 * float(state.affect @ msg.emotion)
        + platform.w3 * float(context @ x)
        + platform.w4 * sender_influence
        + platform.bias
        - params.theta
    )
    if not math.isfinite(logit):
        raise NumericalError(f"nonfinite activation logit {logit}")
    return logit


def activation_probability(
    state: AgentState,
    context: np.ndarray,
    msg: Message,
    sender_influence: float,
    platform,
    params: AgentParams,
) -> float:
    """Probability in the open interval (0,1) that the agent engages the message."""

    p = sigmoid(activation_logit(state, context, msg, sender_influence, platform, params))
    if p >= 1.0:
        return _P_MAX
    if p <= 0.0:
        return _P_MIN
    return p


def record_memory(state: AgentState, msg: Message) -> AgentState:
    """Append the message to the episodic store (in place), evicting the oldest
    record beyond capacity. The memory vector is the content embedding itself,
    so retrieved context lives in the same space the activation policy consumes.
    """

    if state.memory and msg.round < state.memory[-1].round:
        raise PreconditionError(
            f"message round {msg.round} precedes last stored round {state.memory[-1].round}"
        )
    state.memory.append(
        MemoryRecord(
            content_embedding=msg.content_embedding,
            emotion=msg.emotion,
            memory_vector=msg.content_embedding,
            round=msg.round,
        )
    )
    return state
