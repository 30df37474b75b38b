"""Round-based simulation loop.

One round = one timeline day (times ticks_per_day). Within a round: scheduled
events are injected, agents with pending inbox items are visited in seeded
random order, each inbox item gets one Bernoulli engagement draw from the
activation policy, engaged agents update state, record memory, and may emit
one post per cascade which their followers evaluate next round. Reproduction
coefficients of tracked messages are recomputed at each round end.

Determinism: every random draw comes from a stream addressed by (seed, round,
agent index) in a counter-based generator, so a run is a pure function of
(scenario, config, seed).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .agentstate import (
    AgentState,
    Message,
    activation_probability,
    dual_update,
    record_memory,
    retrieve_context,
)
from .errors import ConfigurationError, PreconditionError, ProviderError
from .network import PlatformNetwork, reproduction_coefficient, build_activation_matrix
from .providers import DeterministicProvider, StateSummary
from .scenario import Scenario, SimulationConfig, TimelineEvent, generate_network

_EMOTION_CHANNELS_8 = ("joy", "trust", "fear", "surprise", "sadness", "disgust", "anger", "anticipation")


@dataclass
class RoundTrace:
    """Everything observable about one executed round."""

    round: int
    day: int
    evaluated: int = 0
    engaged_count: int = 0
    # (agent_id, message_id, sender_id, probability, engaged)
    engagements: list = field(default_factory=list)
    posts: list = field(default_factory=list)  # Message objects created this round
    dropped: int = 0
    reproduction: dict = field(default_factory=dict)  # msg_id -> {platform, value, converged}
    stance_scores: np.ndarray | None = None
    rng_algorithm: str = rngmod.ALGORITHM
    digest: str = ""


def trace_summary(trace: RoundTrace) -> dict:
    """One-line JSONable summary of a round, for newline-delimited streams."""

    return {
        "round": trace.round,
        "day": trace.day,
        "evaluated": trace.evaluated,
        "engaged": trace.engaged_count,
        "posts": len(trace.posts),
        "dropped": trace.dropped,
        "reproduction": {
            mid: round(entry["value"], 12) for mid, entry in sorted(trace.reproduction.items())
        },
        "digest": trace.digest,
    }


def trace_to_dict(trace: RoundTrace) -> dict:
    """Full structured dump of a round for the UI / metrics pipeline."""

    return {
        "round": trace.round,
        "day": trace.day,
        "evaluated": trace.evaluated,
        "engaged": trace.engaged_count,
        "engagements": [
            {
                "agent": agent,
                "message": mid,
                "sender": sender,
                "probability": prob,
                "engaged": engaged,
            }
            for agent, mid, sender, prob, engaged in trace.engagements
        ],
        "posts": [
            {
                "id": m.id,
                "author": m.author,
                "platform": m.platform,
                "round": m.round,
                "text": m.text,
            }
            for m in trace.posts
        ],
        "dropped": trace.dropped,
        "reproduction": trace.reproduction,
        "stance_scores": None if trace.stance_scores is None else trace.stance_scores.tolist(),
        "rng_algorithm": trace.rng_algorithm,
        "digest": trace.digest,
    }


class World:
    """Mutable simulation state for one run. Owned by a single logical thread."""

    def __init__(
        self,
        config: SimulationConfig,
        profiles,
        networks,
        provider=None,
        seed: int | None = None,
        topic: np.ndarray | None = None,
        timeline=(),
        priors: dict | None = None,
        initial_personas=None,
        stance_thresholds=(-0.2, 0.2),
    ):
        self.config = config
        self.profiles = list(profiles)
        if len(self.profiles) != config.num_agents:
            raise ConfigurationError(
                f"config declares {config.num_agents} agents, got {len(self.profiles)} profiles"
            )
        self.seed = config.seed if seed is None else int(seed)
        self.rng = rngmod.SplitRng(self.seed)
        self.provider = provider or DeterministicProvider(config.embedding_dim, config.emotion_dim)
        self.topic = topic
        self.stance_thresholds = tuple(stance_thresholds)

        self.index_of = {p.agent_id: i for i, p in enumerate(self.profiles)}
        if len(self.index_of) != len(self.profiles):
            raise ConfigurationError("agent ids are not unique")
        self.networks: dict[str, PlatformNetwork] = {}
        for net in networks:
            net = generate_network(net, config.num_agents, getattr(net, "seed", 0))
            self.networks[net.platform_id] = net
        self.platform_params = {p.platform_id: p for p in config.platforms}
        for prof in self.profiles:
            if prof.platform not in self.platform_params:
                raise ConfigurationError(f"{prof.agent_id}: unknown platform {prof.platform!r}")
        self.platform_members = {pid: [] for pid in self.platform_params}
        for i, prof in enumerate(self.profiles):
            self.platform_members[prof.platform].append(i)

        self._priors = priors or {}
        self.states: list[AgentState] = self._init_states(self._priors, initial_personas)
        self.round = 0
        self.traces: list[RoundTrace] = []
        self._events_by_round: dict[int, list[TimelineEvent]] = {}
        for ev in timeline:
            self._events_by_round.setdefault(ev.round * config.ticks_per_day, []).append(ev)
        # inbox for the next round to execute: agent index -> {msg_id: (msg, sender, influence)}
        self._pending: dict[int, dict] = {}
        self._next: dict[int, dict] = {}
        self._dropped_injection = 0
        self._dropped_next = 0
        self.tracked: dict[str, str] = {}  # message id -> platform
        self._messages: dict[str, Message] = {}
        self._root_of: dict[str, str] = {}
        self._posted_roots: list[set] = [set() for _ in self.profiles]
        self._msg_counter = 0

    # ---------- construction ----------

    @classmethod
    def from_scenario(cls, scenario: Scenario, seed: int | None = None, provider=None) -> "World":
        provider = provider or DeterministicProvider(
            scenario.config.embedding_dim, scenario.config.emotion_dim
        )
        topic = scenario.topic_embedding
        if topic is None:
            text = scenario.topic_text or scenario.description
            if text:
                topic = provider.embed(text)
        return cls(
            scenario.config,
            scenario.personas,
            scenario.networks,
            provider=provider,
            seed=seed,
            topic=topic,
            timeline=scenario.timeline,
            priors=scenario.priors,
            stance_thresholds=scenario.stance_thresholds,
        )

    def reset(self, seed: int, initial_personas=None) -> None:
        """Rewind to round 0 under a new seed, keeping profiles and networks.

        Cheap enough for tight Monte Carlo loops over the same population.
        """

        self.seed = int(seed)
        self.rng.reseed(self.seed)
        self.states = self._init_states(self._priors, initial_personas)
        self.round = 0
        self.traces = []
        self._pending = {}
        self._next = {}
        self._dropped_injection = 0
        self._dropped_next = 0
        self.tracked = {}
        self._messages = {}
        self._root_of = {}
        for posted in self._posted_roots:
            posted.clear()
        self._msg_counter = 0

    def _init_states(self, priors, initial_personas):
        d = self.config.embedding_dim
        k = self.config.emotion_dim
        cap = self.config.memory_capacity
        states = []
        for i, prof in enumerate(self.profiles):
            if initial_personas is not None:
                persona = np.asarray(initial_personas[i], dtype=np.float64).copy()
            else:
                persona = self.rng.stream(rngmod.TAG_PERSONA, i).standard_normal(d)
                prior = priors.get(prof.agent_id)
                if prior is not None:
                    toward, mix = prior
                    if isinstance(toward, str):
                        if self.topic is None:
                            raise ConfigurationError(
                                f"{prof.agent_id}: prior references topic but scenario has none"
                            )
                        toward_vec = self.topic if toward == "topic" else -self.topic
                    else:
                        toward_vec = np.asarray(toward, dtype=np.float64)
                        nrm = float(np.linalg.norm(toward_vec))
                        if nrm < 1e-12:
                            raise ConfigurationError(f"{prof.agent_id}: zero prior direction")
                        toward_vec = toward_vec / nrm
                    persona = persona / float(np.linalg.norm(persona))
                    persona = (1.0 - mix) * persona + mix * toward_vec
            nrm = float(np.linalg.norm(persona))
            if nrm < 1e-12:
                raise ConfigurationError(f"agent {i}: degenerate initial persona")
            from collections import deque

            states.append(
                AgentState(persona=persona / nrm, affect=np.zeros(k), memory=deque(maxlen=cap))
            )
        return states

    # ---------- message plumbing ----------

    def new_message_id(self) -> str:
        self._msg_counter += 1
        return f"m{self._msg_counter:06d}"

    def _enqueue(self, boxes: dict, receiver: int, msg: Message, sender: str, influence: float) -> int:
        """Add to a receiver's inbox; returns 1 if dropped by the per-round cap."""

        inbox = boxes.setdefault(receiver, {})
        existing = inbox.get(msg.id)
        if existing is not None:
            # coalesce duplicates keeping the highest-influence sender
            if influence > existing[2]:
                inbox[msg.id] = (msg, sender, influence)
            return 0
        if len(inbox) >= self.config.max_messages_per_agent_per_round:
            return 1
        inbox[msg.id] = (msg, sender, influence)
        return 0

    def inject_message(self, msg: Message, targets="all", author_influence: float = 1.0) -> None:
        """Queue a message for the next round to execute and track its cascade.

        ``targets`` is "all" (every agent on the message's platform) or an
        iterable of agent ids. The author may be a virtual profile such as an
        organization account; ``author_influence`` is its influence value.
        """

        if msg.round != self.round:
            raise PreconditionError(
                f"message round {msg.round} != next round to execute {self.round}"
            )
        if msg.platform not in self.platform_params:
            raise ConfigurationError(f"unknown platform {msg.platform!r}")
        if targets == "all":
            indices = self.platform_members[msg.platform]
        else:
            offenders = [t for t in targets if t not in self.index_of]
            off_platform = [
                t
                for t in targets
                if t in self.index_of and self.profiles[self.index_of[t]].platform != msg.platform
            ]
            if offenders or off_platform:
                raise ConfigurationError(
                    f"unknown agent ids {offenders}; off-platform targets {off_platform}"
                )
            indices = [self.index_of[t] for t in targets]
        self._messages[msg.id] = msg
        self._root_of[msg.id] = msg.id
        self.tracked[msg.id] = msg.platform
        author_idx = self.index_of.get(msg.author)
        if author_idx is not None:
            # the author has shared its own cascade; it never re-posts it
            self._posted_roots[author_idx].add(msg.id)
        for i in indices:
            if self.profiles[i].agent_id != msg.author:
                self._dropped_injection += self._enqueue(
                    self._pending, i, msg, msg.author, author_influence
                )

    def event_to_message(self, ev: TimelineEvent) -> Message:
        if ev.embedding is not None:
            embedding, emotion = ev.embedding, ev.emotion
        else:
            embedding = self.provider.embed(ev.text)
            emotion = self.provider.emote(ev.text)
        return Message(
            id=self.new_message_id(),
            content_embedding=embedding,
            emotion=emotion,
            author=ev.author,
            platform=ev.platform,
            round=self.round,
            text=ev.text,
        )

    # ---------- stance helpers ----------

    def stance_scores(self) -> np.ndarray:
        if self.topic is None:
            return np.zeros(len(self.states))
        personas = np.stack([s.persona for s in self.states])
        return personas @ self.topic

    def stance_label(self, score: float) -> str:
        lo, hi = self.stance_thresholds
        if score < lo:
            return "oppose"
        if score > hi:
            return "support"
        return "neutral"

    def _summary_for(self, idx: int) -> StateSummary:
        state = self.states[idx]
        if self.topic is None:
            stance = "neutral"
        else:
            stance = self.stance_label(float(state.persona @ self.topic))
        affect = state.affect
        peak = int(np.argmax(affect))
        if affect[peak] <= 0:
            emotion = "neutral"
        elif len(affect) == 8:
            emotion = _EMOTION_CHANNELS_8[peak]
        else:
            emotion = f"e{peak}"
        return StateSummary(
            stance=stance, emotion_peak=emotion, persona_seed=self.profiles[idx].persona_seed
        )

    # ---------- the round loop ----------

    def _snapshot(self):
        # Structural sharing: arrays and Message/MemoryRecord objects are
        # immutable once created, so shallow copies are sufficient.
        return (
            [AgentState(s.persona, s.affect, s.memory.copy()) for s in self.states],
            {i: dict(box) for i, box in self._pending.items()},
            {i: dict(box) for i, box in self._next.items()},
            dict(self.tracked),
            dict(self._root_of),
            dict(self._messages),
            [set(s) for s in self._posted_roots],
            self._msg_counter,
            self.round,
            self._dropped_injection,
        )

    def _restore(self, snap) -> None:
        (
            self.states,
            self._pending,
            self._next,
            self.tracked,
            self._root_of,
            self._messages,
            self._posted_roots,
            self._msg_counter,
            self.round,
            self._dropped_injection,
        ) = snap
        self._dropped_next = 0

    def step_round(self) -> RoundTrace:
        """Execute one round; aborts atomically (state rolled back) on provider failure."""

        snap = self._snapshot()
        try:
            trace = self._execute_round()
        except ProviderError:
            self._restore(snap)
            raise
        self.traces.append(trace)
        return trace

    def _execute_round(self) -> RoundTrace:
        t = self.round
        cfg = self.config
        trace = RoundTrace(round=t, day=t // cfg.ticks_per_day)

        # (1) scheduled events land in this round's inbox
        for ev in self._events_by_round.get(t, ()):
            self.inject_message(self.event_to_message(ev), ev.targets, ev.author_influence)
        trace.dropped += self._dropped_injection
        self._dropped_injection = 0

        inboxes = self._pending
        self._pending = {}
        self._next = {}
        self._dropped_next = 0

        # (2) seeded shuffle of the agents with work this round; agents with
        # empty inboxes are no-ops, so restricting the permutation to the
        # pending set is observationally equivalent to shuffling everyone.
        pending_agents = sorted(inboxes.keys())
        if pending_agents:
            order = self.rng.stream(rngmod.TAG_SHUFFLE, t).permutation(len(pending_agents))
            pending_agents = [pending_agents[int(j)] for j in order]

        # (3) sequential evaluation
        engagements = trace.engagements
        p_post = cfg.p_post
        for idx in pending_agents:
            items = list(inboxes[idx].values())
            profile = self.profiles[idx]
            params = profile.params
            platform = self.platform_params[profile.platform]
            stream = self.rng.stream(rngmod.TAG_AGENT, t, idx)
            draws = stream.random(len(items))
            agent_id = profile.agent_id
            for j, (msg, sender, influence) in enumerate(items):
                state = self.states[idx]
                ctx = retrieve_context(state.memory, msg.content_embedding, t + 1, params)
                prob = activation_probability(state, ctx, msg, influence, platform, params)
                engaged = bool(draws[j] < prob)
                engagements.append((agent_id, msg.id, sender, prob, engaged))
                if not engaged:
                    continue
                trace.engaged_count += 1
                state = dual_update(state, msg, params)
                record_memory(state, msg)
                self.states[idx] = state
                root = self._root_of.get(msg.id, msg.id)
                posted = self._posted_roots[idx]
                if root not in posted:
                    # one re-share chance per cascade, on first engagement
                    posted.add(root)
                    if p_post > 0.0 and float(stream.random()) < p_post:
                        self._emit_post(idx, msg, root, t, trace)
        trace.evaluated = len(engagements)
        trace.dropped += self._dropped_next

        # (4) reproduction coefficients for tracked messages
        if cfg.track_reproduction and self.tracked:
            agents_view = list(zip(self.profiles, self.states))
            for mid, platform_id in sorted(self.tracked.items()):
                net = self.networks.get(platform_id)
                if net is None:
                    continue
                msg = self._messages[mid]
                act = build_activation_matrix(
                    net,
                    agents_view,
                    msg,
                    self.platform_params[platform_id],
                    now=t + 1,
                )
                result = reproduction_coefficient(net, act)
                trace.reproduction[mid] = {
                    "platform": platform_id,
                    "value": result.value,
                    "converged": result.converged,
                }

        # (5) close out: stance snapshot, digest, advance round
        trace.stance_scores = self.stance_scores()
        trace.digest = self._digest(trace)
        self._pending = self._next
        self._next = {}
        self.round = t + 1
        return trace

    def _emit_post(self, idx: int, msg: Message, root: str, t: int, trace: RoundTrace) -> None:
        profile = self.profiles[idx]
        net = self.networks.get(profile.platform)
        out = net.out_neighbors.get(idx) if net is not None else None
        text = self.provider.generate_post(profile, self._summary_for(idx), msg)
        if self.config.post_vector_mode == "inherit":
            embedding = msg.content_embedding
            emotion = np.clip(self.states[idx].affect, -1.0, 1.0)
        else:
            embedding = self.provider.embed(text)
            emotion = self.provider.emote(text)
        post = Message(
            id=self.new_message_id(),
            content_embedding=embedding,
            emotion=emotion,
            author=profile.agent_id,
            platform=profile.platform,
            round=t,
            text=text,
        )
        self._messages[post.id] = post
        self._root_of[post.id] = root
        trace.posts.append(post)
        if not out:
            return
        influence = profile.influence
        boxes = self._next
        for recv in out:
            self._dropped_next += self._enqueue(boxes, recv, post, profile.agent_id, influence)

    def _digest(self, trace: RoundTrace) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(rngmod.ALGORITHM.encode())
        h.update(f"{self.seed}|{trace.round}".encode())
        for agent, mid, sender, prob, engaged in trace.engagements:
            h.update(f"{agent}|{mid}|{sender}|{prob!r}|{engaged:d}".encode())
        for post in trace.posts:
            h.update(f"{post.id}|{post.author}|{post.text}".encode())
        for mid, entry in sorted(trace.reproduction.items()):
            h.update(f"{mid}|{entry['value']!r}".encode())
        if trace.stance_scores is not None:
            h.update(trace.stance_scores.tobytes())
        return h.hexdigest()

    def has_pending(self) -> bool:
        return bool(self._pending) or any(
            t >= self.round for t in self._events_by_round
        )


def inject_message(world: World, msg: Message, targets="all", author_influence: float = 1.0) -> None:
    world.inject_message(msg, targets, author_influence)


def step_round(world: World, round_index: int | None = None) -> RoundTrace:
    if round_index is not None and round_index != world.round:
        raise PreconditionError(f"expected round {world.round}, asked for {round_index}")
    return world.step_round()


def run_scenario(world: World, scenario: Scenario) -> list[RoundTrace]:
    """Execute every scenario round. Identical (scenario, seed) give identical traces."""

    if world.round != 0:
        raise PreconditionError("run_scenario needs a fresh world")
    total = scenario.config.rounds * scenario.config.ticks_per_day
    for _ in range(total):
        world.step_round()
    return world.traces
