"""Scenario definition, validation, sampling, and (de)serialization.

A scenario is a single JSON document: engine configuration, the agent
population (explicit profiles or a weighted persona library to sample),
per-platform networks (explicit edges or generator specs), a day-level
timeline of events/strategies, and optional ground truth for replay scoring.
Validation collects every violation with its field path instead of stopping
at the first.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .agentstate import AgentParams
from .errors import ConfigurationError, ScenarioValidationError
from .network import AgentProfile, PlatformNetwork, PlatformParams, influence_from_followers
from .rng import TAG_NETWORK, TAG_SAMPLE, SplitRng

SCHEMA_VERSION = 1
DEFAULT_STANCE_LABELS = ("oppose", "neutral", "support")
DEFAULT_STANCE_THRESHOLDS = (-0.2, 0.2)


@dataclass(frozen=True)
class SimulationConfig:
    """Engine-level knobs. One round is one timeline day (times ticks_per_day)."""

    seed: int = 0
    num_agents: int = 100
    rounds: int = 10
    embedding_dim: int = 256
    emotion_dim: int = 8
    max_messages_per_agent_per_round: int = 32
    p_post: float = 0.5
    post_vector_mode: str = "provider"
    ticks_per_day: int = 1
    memory_capacity: int = 256
    track_reproduction: bool = True
    platforms: tuple = ()

    def __post_init__(self):
        if self.num_agents < 1:
            raise ConfigurationError("num_agents must be >= 1")
        if self.rounds < 0:
            raise ConfigurationError("rounds must be >= 0")
        if self.embedding_dim < 2:
            raise ConfigurationError("embedding_dim must be >= 2")
        if self.emotion_dim < 1:
            raise ConfigurationError("emotion_dim must be >= 1")
        if self.max_messages_per_agent_per_round < 1:
            raise ConfigurationError("max_messages_per_agent_per_round must be >= 1")
        if not 0.0 <= self.p_post <= 1.0:
            raise ConfigurationError("p_post must be in [0,1]")
        if self.post_vector_mode not in ("provider", "inherit"):
            raise ConfigurationError(f"unknown post_vector_mode {self.post_vector_mode!r}")
        if self.ticks_per_day < 1:
            raise ConfigurationError("ticks_per_day must be >= 1")
        if self.memory_capacity < 1:
            raise ConfigurationError("memory_capacity must be >= 1")
        if not self.platforms:
            raise ConfigurationError("at least one platform is required")

    def platform(self, platform_id: str) -> PlatformParams:
        for p in self.platforms:
            if p.platform_id == platform_id:
                return p
        raise ConfigurationError(f"unknown platform {platform_id!r}")


@dataclass(frozen=True)
class TimelineEvent:
    round: int
    kind: str  # "event" | "strategy"
    author: str
    platform: str
    text: str | None = None
    embedding: np.ndarray | None = None
    emotion: np.ndarray | None = None
    targets: object = "all"  # "all" | tuple of agent ids
    author_influence: float = 1.0


@dataclass(frozen=True)
class GroundTruth:
    trajectory: tuple  # ((round, value), ...)
    final_stances: np.ndarray
    stance_labels: tuple


@dataclass(frozen=True)
class NetworkSpec:
    """Deferred network construction: realized per run via generate_network."""

    platform_id: str
    kind: str  # "erdos_renyi" | "preferential_attachment"
    p: float | None = None
    m: int | None = None
    seed: int = 0


@dataclass
class Scenario:
    name: str
    description: str
    config: SimulationConfig
    personas: list = field(default_factory=list)
    networks: list = field(default_factory=list)  # PlatformNetwork | NetworkSpec
    timeline: list = field(default_factory=list)
    ground_truth: GroundTruth | None = None
    topic_text: str | None = None
    topic_embedding: np.ndarray | None = None
    stance_labels: tuple = DEFAULT_STANCE_LABELS
    stance_thresholds: tuple = DEFAULT_STANCE_THRESHOLDS
    trajectory_kind: str = "mean_alignment"
    priors: dict = field(default_factory=dict)  # agent_id -> (direction spec, mix)


class _Check:
    """Error collector: every complaint carries a JSON-ish field path."""

    def __init__(self):
        self.errors: list[str] = []

    def fail(self, path: str, msg: str):
        self.errors.append(f"{path}: {msg}")

    def obj(self, value, path, required_keys=(), allow_missing=True):
        if not isinstance(value, dict):
            self.fail(path, f"expected object, got {type(value).__name__}")
            return None
        for key in required_keys:
            if key not in value:
                self.fail(f"{path}.{key}", "missing required field")
        return value

    def num(self, raw, path, *, lo=None, hi=None, integer=False):
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            self.fail(path, f"expected number, got {type(raw).__name__}")
            return None
        if integer and int(raw) != raw:
            self.fail(path, f"expected integer, got {raw}")
            return None
        if not math.isfinite(raw):
            self.fail(path, "must be finite")
            return None
        if lo is not None and raw < lo:
            self.fail(path, f"must be >= {lo}, got {raw}")
            return None
        if hi is not None and raw > hi:
            self.fail(path, f"must be <= {hi}, got {raw}")
            return None
        return int(raw) if integer else float(raw)

    def text(self, raw, path, allow_empty=False):
        if not isinstance(raw, str):
            self.fail(path, f"expected string, got {type(raw).__name__}")
            return None
        if not raw and not allow_empty:
            self.fail(path, "must be non-empty")
            return None
        return raw

    def vector(self, raw, path, dim, *, lo=None, hi=None, sidecar=None):
        if isinstance(raw, dict) and "$vec" in raw:
            if sidecar is None:
                self.fail(path, "sidecar reference but no vector_file declared")
                return None
            ref = raw["$vec"]
            if (
                not isinstance(ref, list)
                or len(ref) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in ref)
            ):
                self.fail(path, "$vec must be [offset, length] of nonnegative integers")
                return None
            offset, length = ref
            if (offset + length) * 4 > len(sidecar):
                self.fail(path, "$vec range beyond sidecar file")
                return None
            values = struct.unpack_from(f"<{length}f", sidecar, offset * 4)
            raw = list(values)
        if not isinstance(raw, list):
            self.fail(path, f"expected array, got {type(raw).__name__}")
            return None
        if len(raw) != dim:
            self.fail(path, f"expected {dim} components, got {len(raw)}")
            return None
        out = np.empty(dim, dtype=np.float64)
        for i, v in enumerate(raw):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                self.fail(f"{path}[{i}]", "expected finite number")
                return None
            if lo is not None and v < lo or hi is not None and v > hi:
                self.fail(f"{path}[{i}]", f"value {v} outside [{lo},{hi}]")
                return None
            out[i] = v
        return out


def _parse_config(check: _Check, raw: dict) -> SimulationConfig | None:
    cfg = check.obj(raw.get("config"), "config", required_keys=("num_agents", "rounds", "platforms"))
    if cfg is None:
        return None
    n = check.num(cfg.get("num_agents"), "config.num_agents", lo=1, integer=True)
    rounds = check.num(cfg.get("rounds"), "config.rounds", lo=0, integer=True)
    dim = check.num(cfg.get("embedding_dim", 256), "config.embedding_dim", lo=2, integer=True)
    emo = check.num(cfg.get("emotion_dim", 8), "config.emotion_dim", lo=1, integer=True)
    cap = check.num(
        cfg.get("max_messages_per_agent_per_round", 32),
        "config.max_messages_per_agent_per_round",
        lo=1,
        integer=True,
    )
    p_post = check.num(cfg.get("p_post", 0.5), "config.p_post", lo=0.0, hi=1.0)
    seed = check.num(cfg.get("seed", 0), "config.seed", lo=0, integer=True)
    ticks = check.num(cfg.get("ticks_per_day", 1), "config.ticks_per_day", lo=1, integer=True)
    memcap = check.num(cfg.get("memory_capacity", 256), "config.memory_capacity", lo=1, integer=True)
    mode = cfg.get("post_vector_mode", "provider")
    if mode not in ("provider", "inherit"):
        check.fail("config.post_vector_mode", f"unknown mode {mode!r}")
        mode = "provider"
    track = cfg.get("track_reproduction", True)
    if not isinstance(track, bool):
        check.fail("config.track_reproduction", "expected boolean")
        track = True
    platforms = []
    raw_platforms = cfg.get("platforms")
    if not isinstance(raw_platforms, list) or not raw_platforms:
        check.fail("config.platforms", "expected non-empty array")
        raw_platforms = []
    seen = set()
    for i, praw in enumerate(raw_platforms):
        path = f"config.platforms[{i}]"
        pobj = check.obj(praw, path, required_keys=("platform_id",))
        if pobj is None:
            continue
        pid = check.text(pobj.get("platform_id"), f"{path}.platform_id")
        if pid in seen:
            check.fail(f"{path}.platform_id", f"duplicate platform {pid!r}")
        seen.add(pid)
        weights = [
            check.num(pobj.get(w, 0.0), f"{path}.{w}", lo=0.0) for w in ("w1", "w2", "w3", "w4")
        ]
        bias = check.num(pobj.get("bias", 0.0), f"{path}.bias")
        if pid is not None and bias is not None and all(w is not None for w in weights):
            platforms.append(PlatformParams(pid, *weights, bias=bias))
    if check.errors or None in (n, rounds, dim, emo, cap, p_post, seed, ticks, memcap):
        return None
    try:
        return SimulationConfig(
            seed=seed,
            num_agents=n,
            rounds=rounds,
            embedding_dim=dim,
            emotion_dim=emo,
            max_messages_per_agent_per_round=cap,
            p_post=p_post,
            post_vector_mode=mode,
            ticks_per_day=ticks,
            memory_capacity=memcap,
            track_reproduction=track,
            platforms=tuple(platforms),
        )
    except ConfigurationError as exc:
        check.fail("config", str(exc))
        return None


_PARAM_FIELDS = ("beta", "delta", "eta", "gamma", "alpha", "theta")
_PARAM_BOUNDS = {
    "beta": (1e-9, None),
    "delta": (1e-9, 1 - 1e-9),
    "eta": (1e-9, 1 - 1e-9),
    "gamma": (1e-9, None),
    "alpha": (1e-9, None),
    "theta": (None, None),
}


def _parse_params(check: _Check, raw, path) -> AgentParams | None:
    obj = check.obj(raw, path, required_keys=_PARAM_FIELDS)
    if obj is None:
        return None
    values = {}
    for name in _PARAM_FIELDS:
        lo, hi = _PARAM_BOUNDS[name]
        v = check.num(obj.get(name), f"{path}.{name}", lo=lo, hi=hi)
        if v is None:
            return None
        values[name] = v
    return AgentParams(**values)


def _parse_prior(check: _Check, raw, path, dim, sidecar):
    if raw is None:
        return None
    obj = check.obj(raw, path, required_keys=("toward", "mix"))
    if obj is None:
        return None
    mix = check.num(obj.get("mix"), f"{path}.mix", lo=0.0, hi=1.0)
    toward = obj.get("toward")
    if isinstance(toward, str):
        if toward not in ("topic", "-topic"):
            check.fail(f"{path}.toward", "expected 'topic', '-topic', or a vector")
            return None
    else:
        toward = check.vector(toward, f"{path}.toward", dim, sidecar=sidecar)
        if toward is None:
            return None
    if mix is None:
        return None
    return (toward, mix)


def sample_personas(library: dict, n: int, seed: int, platform_ids=None) -> list[AgentProfile]:
    """Sample n profiles from a stratified persona library, deterministically.

    Stratum counts use largest-remainder allocation on the declared weights
    (ties broken by a seeded shuffle), follower counts come from each
    stratum's log-normal, and behavior constants are drawn uniformly from the
    declared ranges. Influence is calibrated against the sampled maximum
    follower count.
    """

    strata = library.get("strata")
    if not strata:
        raise ConfigurationError("persona library has no strata")
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    weights = np.array([float(s["weight"]) for s in strata], dtype=np.float64)
    if (weights < 0).any() or weights.sum() <= 0:
        raise ConfigurationError("stratum weights must be nonnegative and sum > 0")
    rng = SplitRng(seed).fresh_stream(TAG_SAMPLE)
    quotas = n * weights / weights.sum()
    counts = np.floor(quotas).astype(int)
    remainder = n - counts.sum()
    fractional = quotas - counts
    tiebreak = rng.permutation(len(strata))
    order = sorted(range(len(strata)), key=lambda i: (-fractional[i], tiebreak[i]))
    for i in order[:remainder]:
        counts[i] += 1

    profiles = []
    idx = 0
    for s_i, (stratum, count) in enumerate(zip(strata, counts)):
        log_params = stratum.get("followers_lognormal", {"mu": 6.0, "sigma": 2.0})
        ranges = stratum.get("params", {})
        platform = stratum.get("platform")
        if platform is None and platform_ids:
            platform = platform_ids[0]
        for _ in range(count):
            followers = int(rng.lognormal(float(log_params["mu"]), float(log_params["sigma"])))
            drawn = {}
            for name in _PARAM_FIELDS:
                lo, hi = ranges.get(name, _DEFAULT_PARAM_RANGES[name])
                drawn[name] = float(rng.uniform(lo, hi))
            profiles.append(
                AgentProfile(
                    agent_id=f"a{idx:04d}",
                    platform=platform,
                    followers=followers,
                    influence=0.0,
                    params=AgentParams(**drawn),
                    persona_seed=stratum.get("descriptor", stratum.get("name", f"stratum{s_i}")),
                )
            )
            idx += 1
    f_max = max(p.followers for p in profiles)
    return [
        replace(p, influence=influence_from_followers(p.followers, f_max)) for p in profiles
    ]


_DEFAULT_PARAM_RANGES = {
    "beta": (1.0, 4.0),
    "delta": (0.55, 0.9),
    "eta": (0.6, 0.9),
    "gamma": (0.05, 0.25),
    "alpha": (0.8, 2.0),
    "theta": (0.0, 1.0),
}


def generate_network(spec, n: int, seed: int) -> PlatformNetwork:
    """Realize a network generator spec into a concrete platform graph."""

    if isinstance(spec, PlatformNetwork):
        return spec
    rng = SplitRng(seed).fresh_stream(TAG_NETWORK)
    if spec.kind == "erdos_renyi":
        if spec.p is None or not 0.0 <= spec.p <= 1.0:
            raise ConfigurationError(f"{spec.platform_id}: erdos_renyi p outside [0,1]")
        edges = []
        if spec.p > 0:
            draws = rng.random((n, n))
            for recv in range(n):
                for send in range(n):
                    if recv != send and draws[recv, send] < spec.p:
                        edges.append((recv, send))
        return PlatformNetwork(spec.platform_id, n, edges)
    if spec.kind == "preferential_attachment":
        m = spec.m
        if m is None or m < 1 or m >= n:
            raise ConfigurationError(f"{spec.platform_id}: need 1 <= m < n, got m={m}")
        # Nodes join in order; each new node sends to m distinct existing
        # targets chosen with probability proportional to in-degree + 1,
        # which accumulates heavy-tailed in-degree on early/popular nodes.
        in_degree = np.zeros(n, dtype=np.float64)
        edges = []
        for new in range(1, n):
            k = min(m, new)
            w = in_degree[:new] + 1.0
            targets = rng.choice(new, size=k, replace=False, p=w / w.sum())
            for t in targets:
                edges.append((int(t), new))
                in_degree[t] += 1.0
        return PlatformNetwork(spec.platform_id, n, edges)
    raise ConfigurationError(f"unknown network generator kind {spec.kind!r}")


def _parse_scenario(check: _Check, doc: dict, sidecar: bytes | None) -> Scenario | None:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        check.fail("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    name = check.text(doc.get("name"), "name")
    description = check.text(doc.get("description", ""), "description", allow_empty=True)
    config = _parse_config(check, doc)
    if config is None:
        return None
    dim, emo_dim = config.embedding_dim, config.emotion_dim
    platform_ids = [p.platform_id for p in config.platforms]

    # --- population: explicit personas XOR sampled library ---
    personas: list[AgentProfile] = []
    priors: dict = {}
    has_explicit = "personas" in doc
    has_library = "persona_library" in doc
    if has_explicit and has_library:
        check.fail("personas", "explicit personas and persona_library are mutually exclusive")
    if has_explicit:
        raw_personas = doc.get("personas")
        if not isinstance(raw_personas, list):
            check.fail("personas", "expected array")
            raw_personas = []
        seen_ids = set()
        followers = []
        entries = []
        for i, rp in enumerate(raw_personas):
            path = f"personas[{i}]"
            obj = check.obj(rp, path, required_keys=("agent_id", "platform", "followers", "params"))
            if obj is None:
                continue
            agent_id = check.text(obj.get("agent_id"), f"{path}.agent_id")
            platform = check.text(obj.get("platform"), f"{path}.platform")
            if platform is not None and platform not in platform_ids:
                check.fail(f"{path}.platform", f"unknown platform {platform!r}")
            nf = check.num(obj.get("followers"), f"{path}.followers", lo=0, integer=True)
            params = _parse_params(check, obj.get("params"), f"{path}.params")
            if agent_id in seen_ids:
                check.fail(f"{path}.agent_id", f"duplicate agent id {agent_id!r}")
            seen_ids.add(agent_id)
            prior = _parse_prior(check, obj.get("prior"), f"{path}.prior", dim, sidecar)
            if None not in (agent_id, platform, nf, params):
                entries.append((agent_id, platform, nf, params, obj.get("persona_seed", ""), prior))
                followers.append(nf)
        if entries:
            f_max = max(followers)
            for agent_id, platform, nf, params, pseed, prior in entries:
                personas.append(
                    AgentProfile(
                        agent_id=agent_id,
                        platform=platform,
                        followers=nf,
                        influence=influence_from_followers(nf, f_max),
                        params=params,
                        persona_seed=str(pseed),
                    )
                )
                if prior is not None:
                    priors[agent_id] = prior
    elif has_library:
        lib = check.obj(doc.get("persona_library"), "persona_library", required_keys=("strata",))
        if lib is not None:
            lib_seed = check.num(lib.get("seed", 0), "persona_library.seed", lo=0, integer=True)
            strata = lib.get("strata")
            ok = isinstance(strata, list) and strata
            if not ok:
                check.fail("persona_library.strata", "expected non-empty array")
            else:
                for i, st in enumerate(strata):
                    spath = f"persona_library.strata[{i}]"
                    sobj = check.obj(st, spath, required_keys=("weight",))
                    if sobj is None:
                        ok = False
                        continue
                    if check.num(sobj.get("weight"), f"{spath}.weight", lo=0.0) is None:
                        ok = False
                    plat = sobj.get("platform")
                    if plat is not None and plat not in platform_ids:
                        check.fail(f"{spath}.platform", f"unknown platform {plat!r}")
                        ok = False
                    if "params" in sobj:
                        pr = sobj["params"]
                        if not isinstance(pr, dict):
                            check.fail(f"{spath}.params", "expected object of [lo,hi] ranges")
                            ok = False
                        else:
                            for pname, rng_pair in pr.items():
                                ppath = f"{spath}.params.{pname}"
                                if pname not in _PARAM_FIELDS:
                                    check.fail(ppath, "unknown parameter")
                                    ok = False
                                elif (
                                    not isinstance(rng_pair, list)
                                    or len(rng_pair) != 2
                                    or not all(
                                        isinstance(v, (int, float)) and not isinstance(v, bool)
                                        for v in rng_pair
                                    )
                                ):
                                    check.fail(ppath, "expected [lo, hi]")
                                    ok = False
                    if "followers_lognormal" in sobj:
                        fl = check.obj(
                            sobj["followers_lognormal"],
                            f"{spath}.followers_lognormal",
                            required_keys=("mu", "sigma"),
                        )
                        if fl is not None:
                            check.num(fl.get("mu"), f"{spath}.followers_lognormal.mu")
                            check.num(fl.get("sigma"), f"{spath}.followers_lognormal.sigma", lo=0.0)
                    prior = _parse_prior(check, sobj.get("prior"), f"{spath}.prior", dim, sidecar)
                    sobj["_parsed_prior"] = prior
            if ok and lib_seed is not None and not check.errors:
                try:
                    personas = sample_personas(lib, config.num_agents, lib_seed, platform_ids)
                except ConfigurationError as exc:
                    check.fail("persona_library", str(exc))
                else:
                    by_descriptor = {}
                    for st in strata:
                        key = st.get("descriptor", st.get("name", ""))
                        if st.get("_parsed_prior") is not None:
                            by_descriptor[key] = st["_parsed_prior"]
                    for profile in personas:
                        prior = by_descriptor.get(profile.persona_seed)
                        if prior is not None:
                            priors[profile.agent_id] = prior
    else:
        check.fail("personas", "scenario needs personas or a persona_library")
    if personas and len(personas) != config.num_agents:
        check.fail("personas", f"expected {config.num_agents} agents, got {len(personas)}")

    # --- networks ---
    networks = []
    raw_networks = doc.get("networks")
    if not isinstance(raw_networks, list):
        check.fail("networks", "expected array")
        raw_networks = []
    net_platforms = set()
    for i, rn in enumerate(raw_networks):
        path = f"networks[{i}]"
        obj = check.obj(rn, path, required_keys=("platform_id",))
        if obj is None:
            continue
        pid = check.text(obj.get("platform_id"), f"{path}.platform_id")
        if pid is None:
            continue
        if pid not in platform_ids:
            check.fail(f"{path}.platform_id", f"unknown platform {pid!r}")
            continue
        if pid in net_platforms:
            check.fail(f"{path}.platform_id", f"duplicate network for platform {pid!r}")
            continue
        net_platforms.add(pid)
        has_edges = "edges" in obj
        has_gen = "generator" in obj
        if has_edges == has_gen:
            check.fail(path, "exactly one of edges / generator is required")
            continue
        if has_edges:
            edges_raw = obj["edges"]
            if not isinstance(edges_raw, list):
                check.fail(f"{path}.edges", "expected array of [receiver, sender] pairs")
                continue
            edges = []
            bad = False
            for j, e in enumerate(edges_raw):
                if (
                    not isinstance(e, list)
                    or len(e) != 2
                    or not all(isinstance(v, int) and not isinstance(v, bool) for v in e)
                ):
                    check.fail(f"{path}.edges[{j}]", "expected [receiver, sender] integers")
                    bad = True
                    continue
                edges.append((e[0], e[1]))
            if bad:
                continue
            try:
                networks.append(PlatformNetwork(pid, config.num_agents, edges))
            except ConfigurationError as exc:
                check.fail(f"{path}.edges", str(exc))
        else:
            gen = check.obj(obj["generator"], f"{path}.generator", required_keys=("kind",))
            if gen is None:
                continue
            kind = gen.get("kind")
            gseed = check.num(gen.get("seed", 0), f"{path}.generator.seed", lo=0, integer=True)
            if kind == "erdos_renyi":
                p = check.num(gen.get("p"), f"{path}.generator.p", lo=0.0, hi=1.0)
                if p is not None and gseed is not None:
                    networks.append(NetworkSpec(pid, "erdos_renyi", p=p, seed=gseed))
            elif kind == "preferential_attachment":
                m = check.num(gen.get("m"), f"{path}.generator.m", lo=1, integer=True)
                if m is not None and m >= config.num_agents:
                    check.fail(f"{path}.generator.m", f"m={m} must be < num_agents")
                elif m is not None and gseed is not None:
                    networks.append(NetworkSpec(pid, "preferential_attachment", m=m, seed=gseed))
            else:
                check.fail(f"{path}.generator.kind", f"unknown kind {kind!r}")
    missing = set(platform_ids) - net_platforms
    if missing:
        check.fail("networks", f"no network for platforms {sorted(missing)}")

    # --- stance configuration and topic ---
    labels = doc.get("stance_labels", list(DEFAULT_STANCE_LABELS))
    if not (isinstance(labels, list) and len(labels) == 3 and all(isinstance(x, str) for x in labels)):
        check.fail("stance_labels", "expected three label strings")
        labels = list(DEFAULT_STANCE_LABELS)
    thresholds = doc.get("stance_thresholds", list(DEFAULT_STANCE_THRESHOLDS))
    if (
        not isinstance(thresholds, list)
        or len(thresholds) != 2
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in thresholds)
        or thresholds[0] > thresholds[1]
    ):
        check.fail("stance_thresholds", "expected [lo, hi] with lo <= hi")
        thresholds = list(DEFAULT_STANCE_THRESHOLDS)
    trajectory_kind = doc.get("trajectory_kind", "mean_alignment")
    if trajectory_kind not in ("mean_alignment", "oppose_share"):
        check.fail("trajectory_kind", f"unknown kind {trajectory_kind!r}")
        trajectory_kind = "mean_alignment"

    topic_text = None
    topic_embedding = None
    topic = doc.get("topic")
    if topic is not None:
        tobj = check.obj(topic, "topic")
        if tobj is not None:
            if ("text" in tobj) == ("embedding" in tobj):
                check.fail("topic", "exactly one of text / embedding is required")
            elif "text" in tobj:
                topic_text = check.text(tobj.get("text"), "topic.text")
            else:
                vec = check.vector(tobj.get("embedding"), "topic.embedding", dim, sidecar=sidecar)
                if vec is not None:
                    nrm = float(np.linalg.norm(vec))
                    if nrm < 1e-12:
                        check.fail("topic.embedding", "zero vector")
                    else:
                        topic_embedding = vec / nrm

    # --- timeline ---
    timeline = []
    raw_timeline = doc.get("timeline", [])
    if not isinstance(raw_timeline, list):
        check.fail("timeline", "expected array")
        raw_timeline = []
    known_ids = {p.agent_id for p in personas}
    for i, rt in enumerate(raw_timeline):
        path = f"timeline[{i}]"
        obj = check.obj(rt, path, required_keys=("round", "platform", "author"))
        if obj is None:
            continue
        rnd = check.num(obj.get("round"), f"{path}.round", lo=0, integer=True)
        if rnd is not None and config.rounds and rnd >= config.rounds:
            check.fail(f"{path}.round", f"round {rnd} beyond scenario rounds ({config.rounds})")
        kind = obj.get("kind", "event")
        if kind not in ("event", "strategy"):
            check.fail(f"{path}.kind", f"expected event|strategy, got {kind!r}")
        platform = check.text(obj.get("platform"), f"{path}.platform")
        if platform is not None and platform not in platform_ids:
            check.fail(f"{path}.platform", f"unknown platform {platform!r}")
        author = check.text(obj.get("author"), f"{path}.author")
        influence = check.num(
            obj.get("author_influence", 1.0), f"{path}.author_influence", lo=0.0, hi=1.0
        )
        text = None
        if "text" in obj:
            text = check.text(obj.get("text"), f"{path}.text")
        embedding = emotion = None
        if "embedding" in obj:
            embedding = check.vector(obj.get("embedding"), f"{path}.embedding", dim, sidecar=sidecar)
            if "emotion" not in obj:
                check.fail(f"{path}.emotion", "embedding present but emotion missing")
        if "emotion" in obj:
            emotion = check.vector(
                obj.get("emotion"), f"{path}.emotion", emo_dim, lo=-1.0, hi=1.0, sidecar=sidecar
            )
        if text is None and embedding is None:
            check.fail(path, "at least one of text / embedding is required")
        targets = obj.get("targets", "all")
        if targets != "all":
            if not isinstance(targets, list) or not all(isinstance(t, str) for t in targets):
                check.fail(f"{path}.targets", "expected 'all' or array of agent ids")
                targets = "all"
            else:
                unknown = [t for t in targets if t not in known_ids]
                if unknown:
                    check.fail(f"{path}.targets", f"unknown agent ids {unknown}")
                targets = tuple(targets)
        if None in (rnd, platform, author, influence):
            continue
        timeline.append(
            TimelineEvent(
                round=rnd,
                kind=kind,
                author=author,
                platform=platform,
                text=text,
                embedding=embedding,
                emotion=emotion,
                targets=targets,
                author_influence=influence,
            )
        )

    # --- ground truth ---
    ground_truth = None
    raw_gt = doc.get("ground_truth")
    if raw_gt is not None:
        gobj = check.obj(raw_gt, "ground_truth", required_keys=("trajectory", "final_stances"))
        if gobj is not None:
            traj_raw = gobj.get("trajectory")
            trajectory = []
            if not isinstance(traj_raw, list) or len(traj_raw) < 1:
                check.fail("ground_truth.trajectory", "expected non-empty array")
            else:
                last_round = -1
                for j, pt in enumerate(traj_raw):
                    ppath = f"ground_truth.trajectory[{j}]"
                    if not isinstance(pt, list) or len(pt) != 2:
                        check.fail(ppath, "expected [round, value]")
                        continue
                    r = check.num(pt[0], f"{ppath}[0]", lo=0, integer=True)
                    v = check.num(pt[1], f"{ppath}[1]")
                    if r is None or v is None:
                        continue
                    if r <= last_round:
                        check.fail(ppath, "rounds must be strictly increasing")
                    last_round = r
                    trajectory.append((r, v))
            stances = gobj.get("final_stances")
            gt_labels = gobj.get("stance_labels", labels)
            if not (
                isinstance(gt_labels, list) and all(isinstance(x, str) for x in gt_labels)
            ):
                check.fail("ground_truth.stance_labels", "expected array of strings")
                gt_labels = labels
            if list(gt_labels) != list(labels):
                check.fail("ground_truth.stance_labels", f"labels {gt_labels} != scenario labels {labels}")
            vec = check.vector(stances, "ground_truth.final_stances", len(labels), lo=0.0, hi=1.0)
            if vec is not None and abs(float(vec.sum()) - 1.0) > 1e-9:
                check.fail("ground_truth.final_stances", f"must sum to 1, got {float(vec.sum())}")
                vec = None
            if vec is not None and trajectory:
                ground_truth = GroundTruth(
                    trajectory=tuple(trajectory),
                    final_stances=vec,
                    stance_labels=tuple(gt_labels),
                )

    if check.errors:
        return None
    return Scenario(
        name=name,
        description=description or "",
        config=config,
        personas=personas,
        networks=networks,
        timeline=timeline,
        ground_truth=ground_truth,
        topic_text=topic_text,
        topic_embedding=topic_embedding,
        stance_labels=tuple(labels),
        stance_thresholds=tuple(thresholds),
        trajectory_kind=trajectory_kind,
        priors=priors,
    )


def loads_scenario(text: str, sidecar: bytes | None = None) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioValidationError([f"parse error at line {exc.lineno} column {exc.colno}: {exc.msg}"])
    if not isinstance(doc, dict):
        raise ScenarioValidationError(["top level: expected object"])
    check = _Check()
    scenario = _parse_scenario(check, doc, sidecar)
    if scenario is None:
        raise ScenarioValidationError(check.errors or ["unknown validation failure"])
    return scenario


def load_scenario(path) -> Scenario:
    """Load and fully validate a scenario file; all violations reported together."""

    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    sidecar = None
    try:
        doc = json.loads(text)
        vector_file = doc.get("vector_file") if isinstance(doc, dict) else None
    except json.JSONDecodeError:
        vector_file = None
    if vector_file:
        import os

        side_path = os.path.join(os.path.dirname(os.path.abspath(path)), str(vector_file))
        try:
            with open(side_path, "rb") as fh:
                sidecar = fh.read()
        except OSError as exc:
            raise ScenarioValidationError([f"vector_file: cannot read {side_path}: {exc}"])
    return loads_scenario(text, sidecar)


def scenario_to_doc(scenario: Scenario) -> dict:
    """Canonical JSON document for a scenario (vectors inlined)."""

    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": scenario.name,
        "description": scenario.description,
        "config": {
            "seed": scenario.config.seed,
            "num_agents": scenario.config.num_agents,
            "rounds": scenario.config.rounds,
            "embedding_dim": scenario.config.embedding_dim,
            "emotion_dim": scenario.config.emotion_dim,
            "max_messages_per_agent_per_round": scenario.config.max_messages_per_agent_per_round,
            "p_post": scenario.config.p_post,
            "post_vector_mode": scenario.config.post_vector_mode,
            "ticks_per_day": scenario.config.ticks_per_day,
            "memory_capacity": scenario.config.memory_capacity,
            "track_reproduction": scenario.config.track_reproduction,
            "platforms": [
                {
                    "platform_id": p.platform_id,
                    "w1": p.w1,
                    "w2": p.w2,
                    "w3": p.w3,
                    "w4": p.w4,
                    "bias": p.bias,
                }
                for p in scenario.config.platforms
            ],
        },
        "personas": [
            {
                "agent_id": p.agent_id,
                "platform": p.platform,
                "followers": p.followers,
                "params": {name: getattr(p.params, name) for name in _PARAM_FIELDS},
                "persona_seed": p.persona_seed,
                **(
                    {
                        "prior": {
                            "toward": (
                                scenario.priors[p.agent_id][0]
                                if isinstance(scenario.priors[p.agent_id][0], str)
                                else list(scenario.priors[p.agent_id][0])
                            ),
                            "mix": scenario.priors[p.agent_id][1],
                        }
                    }
                    if p.agent_id in scenario.priors
                    else {}
                ),
            }
            for p in scenario.personas
        ],
        "networks": [],
        "timeline": [],
        "stance_labels": list(scenario.stance_labels),
        "stance_thresholds": list(scenario.stance_thresholds),
        "trajectory_kind": scenario.trajectory_kind,
    }
    for net in scenario.networks:
        if isinstance(net, PlatformNetwork):
            doc["networks"].append(
                {"platform_id": net.platform_id, "edges": [list(e) for e in net.edges]}
            )
        else:
            gen = {"kind": net.kind, "seed": net.seed}
            if net.p is not None:
                gen["p"] = net.p
            if net.m is not None:
                gen["m"] = net.m
            doc["networks"].append({"platform_id": net.platform_id, "generator": gen})
    for ev in scenario.timeline:
        entry = {
            "round": ev.round,
            "kind": ev.kind,
            "author": ev.author,
            "platform": ev.platform,
            "author_influence": ev.author_influence,
            "targets": "all" if ev.targets == "all" else list(ev.targets),
        }
        if ev.text is not None:
            entry["text"] = ev.text
        if ev.embedding is not None:
            entry["embedding"] = ev.embedding.tolist()
        if ev.emotion is not None:
            entry["emotion"] = ev.emotion.tolist()
        doc["timeline"].append(entry)
    if scenario.topic_text is not None:
        doc["topic"] = {"text": scenario.topic_text}
    elif scenario.topic_embedding is not None:
        doc["topic"] = {"embedding": scenario.topic_embedding.tolist()}
    if scenario.ground_truth is not None:
        gt = scenario.ground_truth
        doc["ground_truth"] = {
            "trajectory": [[r, v] for r, v in gt.trajectory],
            "final_stances": gt.final_stances.tolist(),
            "stance_labels": list(gt.stance_labels),
        }
    return doc


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_doc(scenario), fh, indent=1, sort_keys=True)
        fh.write("\n")


def ground_truth_from_csv(path) -> list[tuple[int, float]]:
    """Convenience converter: 'round,value' CSV (with header) to trajectory pairs."""

    import csv

    out = []
    with open(path, encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["round", "value"]:
            raise ConfigurationError("expected CSV header 'round,value'")
        for row in reader:
            if not row:
                continue
            out.append((int(row[0]), float(row[1])))
    return out
