"""Directed platform graphs, sender influence, and spectral cascade analysis.

The reproduction coefficient of a message is the spectral radius of the
adjacency-masked activation matrix; values above 1 mark self-sustaining
cascades, and an intervention is accepted when it pushes the coefficient
below unity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .agentstate import AgentParams, AgentState, Message, activation_probability, retrieve_context
from .errors import ConfigurationError, PreconditionError


@dataclass(frozen=True)
class PlatformParams:
    """Engagement-policy weights and bias for one platform."""

    platform_id: str
    w1: float
    w2: float
    w3: float
    w4: float
    bias: float

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "w4"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigurationError(f"{self.platform_id}: {name} must be >= 0, got {v}")
        if not math.isfinite(self.bias):
            raise ConfigurationError(f"{self.platform_id}: bias must be finite")


def influence_from_followers(followers: int, f_max: int) -> float:
    """Log-damped follower count calibrated to [0, 1] against the scenario maximum."""

    if followers < 0 or f_max < 0:
        raise ConfigurationError("follower counts must be nonnegative")
    if f_max == 0:
        return 0.0
    return min(1.0, math.log1p(followers) / math.log1p(f_max))


@dataclass(frozen=True)
class AgentProfile:
    """Static description of one agent: identity, platform, reach, behavior constants."""

    agent_id: str
    platform: str
    followers: int
    influence: float
    params: AgentParams
    persona_seed: str = ""

    def __post_init__(self):
        if not (0.0 <= self.influence <= 1.0):
            raise ConfigurationError(f"{self.agent_id}: influence outside [0,1]")
        if self.followers < 0:
            raise ConfigurationError(f"{self.agent_id}: negative followers")


class PlatformNetwork:
    """Directed follower graph on one platform.

    Edge (receiver, sender) means the receiver sees the sender's posts.
    Stored as an edge list for iteration; the dense adjacency (rows =
    receivers, columns = senders) is materialized on demand.
    """

    def __init__(self, platform_id: str, n: int, edges):
        if n < 0:
            raise ConfigurationError("agent count must be nonnegative")
        seen = set()
        clean = []
        for recv, send in edges:
            recv, send = int(recv), int(send)
            if recv == send:
                raise ConfigurationError(f"{platform_id}: self-loop at {recv}")
            if not (0 <= recv < n and 0 <= send < n):
                raise ConfigurationError(f"{platform_id}: edge ({recv},{send}) out of range")
            if (recv, send) not in seen:
                seen.add((recv, send))
                clean.append((recv, send))
        self.platform_id = platform_id
        self.n = n
        self.edges = tuple(clean)
        self.out_neighbors: dict[int, list[int]] = {}
        self.in_edges: dict[int, list[int]] = {}
        for recv, send in clean:
            self.out_neighbors.setdefault(send, []).append(recv)
            self.in_edges.setdefault(recv, []).append(send)
        self._dense: np.ndarray | None = None

    def to_dense(self) -> np.ndarray:
        if self._dense is None:
            a = np.zeros((self.n, self.n), dtype=np.float64)
            for recv, send in self.edges:
                a[recv, send] = 1.0
            self._dense = a
        return self._dense

    @classmethod
    def from_dense(cls, platform_id: str, matrix) -> "PlatformNetwork":
        matrix = np.asarray(matrix)
        recv, send = np.nonzero(matrix)
        return cls(platform_id, matrix.shape[0], zip(recv.tolist(), send.tolist()))

    def dump_edge_list(self, path) -> None:
        """Debug dump: one "receiver sender" pair per line, UTF-8, newline-terminated."""
        with open(path, "w", encoding="utf-8") as fh:
            for recv, send in self.edges:
                fh.write(f"{recv} {send}\n")

    @classmethod
    def load_edge_list(cls, platform_id: str, path, n: int) -> "PlatformNetwork":
        edges = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    recv, send = line.split()
                    edges.append((int(recv), int(send)))
        return cls(platform_id, n, edges)

    def __eq__(self, other):
        return (
            isinstance(other, PlatformNetwork)
            and self.platform_id == other.platform_id
            and self.n == other.n
            and sorted(self.edges) == sorted(other.edges)
        )


@dataclass(frozen=True)
class ActivationMatrix:
    """Edgewise engagement probabilities for one message at one round."""

    entries: np.ndarray
    message_id: str
    round: int


def build_activation_matrix(
    net: PlatformNetwork,
    agents,
    msg: Message,
    platform: PlatformParams,
    *,
    now: int | None = None,
) -> ActivationMatrix:
    """Evaluate the engagement policy on every edge of the platform graph.

    ``agents`` is an indexable sequence of (AgentProfile, AgentState) aligned
    with the network's node indices. ``now`` is the round the hypothetical
    evaluation would happen at (defaults to msg.round + 1, i.e. the earliest
    round every stored memory already predates). Non-edges stay 0.
    """

    if len(agents) != net.n:
        raise ConfigurationError(f"{net.n} nodes but {len(agents)} agent entries")
    if now is None:
        now = msg.round + 1
    entries = np.zeros((net.n, net.n), dtype=np.float64)
    x = msg.content_embedding
    for recv, senders in net.in_edges.items():
        profile_r, state_r = agents[recv]
        ctx = retrieve_context(state_r.memory, x, now, profile_r.params)
        for send in senders:
            influence = agents[send][0].influence
            entries[recv, send] = activation_probability(
                state_r, ctx, msg, influence, platform, profile_r.params
            )
    return ActivationMatrix(entries=entries, message_id=msg.id, round=msg.round)


@dataclass(frozen=True)
class SpectralResult:
    """Spectral-radius estimate plus convergence diagnostics."""

    value: float
    converged: bool
    iterations: int

    def __float__(self):
        return self.value


def spectral_radius(M, tol: float = 1e-8, max_iter: int = 10_000) -> SpectralResult:
    """Spectral radius of a nonnegative matrix by power iteration.

    Deterministic all-ones start; converges when the Rayleigh quotient is
    stable for two consecutive iterations. Imprimitive matrices (pure cycles
    with unequal weights) make the Rayleigh quotient oscillate, so the
    geometric mean of two consecutive growth factors is tracked as a fallback
    estimate; for nonnegative matrices the Perron root equals the spectral
    radius, which that two-step statistic converges to.
    """

    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError(f"matrix must be square, got {M.shape}")
    if not np.isfinite(M).all():
        raise PreconditionError("matrix has nonfinite entries")
    if (M < 0).any():
        raise PreconditionError("matrix has negative entries")
    n = M.shape[0]
    if n == 0:
        return SpectralResult(0.0, True, 0)

    x = np.full(n, 1.0 / math.sqrt(n))
    lam_prev = math.inf
    lam_stable = 0
    growth_prev = None
    gm_prev = math.inf
    gm_stable = 0
    lam = 0.0
    for it in range(1, max_iter + 1):
        y = M @ x
        growth = float(np.linalg.norm(y))
        if growth == 0.0:
            # the nonnegative iterate was annihilated: nilpotent action, radius 0
            return SpectralResult(0.0, True, it)
        lam = float(x @ y)
        if abs(lam - lam_prev) <= tol * max(1.0, abs(lam)):
            lam_stable += 1
            if lam_stable >= 2:
                return SpectralResult(max(lam, 0.0), True, it)
        else:
            lam_stable = 0
        if growth_prev is not None:
            gm = math.sqrt(growth_prev * growth)
            if abs(gm - gm_prev) <= tol * max(1.0, gm):
                gm_stable += 1
                if gm_stable >= 4 and lam_stable == 0:
                    return SpectralResult(gm, True, it)
            else:
                gm_stable = 0
            gm_prev = gm
        lam_prev = lam
        growth_prev = growth
        x = y / growth
    return SpectralResult(max(lam, 0.0), False, max_iter)


def reproduction_coefficient(net: PlatformNetwork, act: ActivationMatrix) -> SpectralResult:
    """Spectral radius of the adjacency-masked activation matrix."""

    entries = act.entries
    if entries.shape != (net.n, net.n):
        raise ConfigurationError(
            f"activation matrix {entries.shape} does not match network size {net.n}"
        )
    return spectral_radius(net.to_dense() * entries)


def is_supercritical(R: float) -> bool:
    """True iff the reproduction coefficient exceeds 1 (strict)."""

    if R < 0:
        raise PreconditionError(f"reproduction coefficient {R} negative")
    return R > 1.0


@dataclass(frozen=True)
class StrategyVerdict:
    accepted: bool
    delta: float


def strategy_acceptance(r_before: float, r_after: float) -> StrategyVerdict:
    """Accept an intervention iff it leaves the reproduction coefficient below unity."""

    if r_before < 0 or r_after < 0:
        raise PreconditionError("reproduction coefficients must be nonnegative")
    return StrategyVerdict(accepted=r_after < 1.0, delta=r_after - r_before)
