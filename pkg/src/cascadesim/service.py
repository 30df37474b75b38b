"""HTTP API for interactive simulation steering.

Hosts many simulation instances in memory. Each instance serializes its
mutations behind a non-blocking per-instance lock (concurrent round steps
yield exactly one execution and one conflict), while reads serve the last
published immutable snapshot, so a step in progress is never observable
half-applied.

Endpoints (JSON over HTTP, versioned under /v1):
    GET  /v1/health
    GET  /v1/cases
    POST /v1/simulations            {scenario | case | resume, seed?}
    GET  /v1/simulations/{id}
    POST /v1/simulations/{id}/rounds    optional strategy body
    GET  /v1/simulations/{id}/state
    GET  /v1/simulations/{id}/report
    POST /v1/batches                {scenario | case, seeds}

Errors use the envelope {"code", "message", "details": [...]}.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import Body, FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from importlib import resources as _resources

from .agentstate import Message
from .engine import World, run_scenario, trace_to_dict
from .errors import ProviderError, ScenarioValidationError, SimulationError
from .metrics import aggregate_seeds, build_report, report_to_dict
from .network import strategy_acceptance
from .providers import ProviderSpec, build_provider
from .scenario import Scenario, loads_scenario, scenario_to_doc


def bundled_cases() -> dict[str, str]:
    """Name -> raw JSON text of the synthetic cases shipped with the package."""

    out = {}
    base = _resources.files("cascadesim.data")
    cases = base / "cases"
    if cases.is_dir():
        for entry in cases.iterdir():
            if entry.name.endswith(".json"):
                out[entry.name[: -len(".json")]] = entry.read_text()
    return out


@dataclass
class SimEntry:
    sim_id: str
    scenario: Scenario
    world: World
    seed: int
    status: str = "awaiting_input"  # awaiting_input | running_round | finished | failed
    lock: threading.Lock = field(default_factory=threading.Lock)
    snapshot: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    round_payloads: list = field(default_factory=list)
    last_error: str | None = None

    @property
    def total_rounds(self) -> int:
        return self.scenario.config.rounds * self.scenario.config.ticks_per_day


def _error(status: int, code: str, message: str, details=()) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"code": code, "message": message, "details": list(details)},
    )


def _handle(entry: SimEntry) -> dict:
    return {
        "id": entry.sim_id,
        "status": entry.status,
        "current_round": entry.world.round,
        "total_rounds": entry.total_rounds,
        "scenario": entry.scenario.name,
        "seed": entry.seed,
    }


def _build_snapshot(entry: SimEntry) -> dict:
    world = entry.world
    scores = world.stance_scores()
    agents = [
        {
            "id": prof.agent_id,
            "platform": prof.platform,
            "influence": prof.influence,
            "score": float(scores[i]),
            "stance": world.stance_label(float(scores[i])),
        }
        for i, prof in enumerate(world.profiles)
    ]
    last_trace = world.traces[-1] if world.traces else None
    engaged_edges: dict[str, list] = {pid: [] for pid in world.networks}
    if last_trace is not None:
        for agent, mid, sender, _prob, engaged in last_trace.engagements:
            if not engaged:
                continue
            msg = world._messages.get(mid)
            if msg is None or sender not in world.index_of or agent not in world.index_of:
                continue
            engaged_edges.setdefault(msg.platform, []).append(
                [world.index_of[agent], world.index_of[sender]]
            )
    platforms = [
        {
            "platform_id": pid,
            "n": net.n,
            "edges": [list(e) for e in net.edges],
            "engaged_edges": engaged_edges.get(pid, []),
        }
        for pid, net in world.networks.items()
    ]
    reproduction = dict(last_trace.reproduction) if last_trace is not None else {}
    return {
        "id": entry.sim_id,
        "status": entry.status,
        "round": world.round,
        "total_rounds": entry.total_rounds,
        "agents": agents,
        "platforms": platforms,
        "history": list(entry.history),
        "reproduction": reproduction,
        "stance_labels": list(entry.scenario.stance_labels),
    }


def _append_history(entry: SimEntry, trace) -> None:
    world = entry.world
    for agent, mid, sender, prob, engaged in trace.engagements:
        if not engaged:
            continue
        msg = world._messages.get(mid)
        entry.history.append(
            {
                "round": trace.round,
                "agent": agent,
                "sender": sender,
                "message": mid,
                "author": msg.author if msg else sender,
                "platform": msg.platform if msg else None,
                "text": msg.text if msg else None,
                "probability": prob,
            }
        )


def _max_tracked(trace, exclude=()) -> float:
    values = [
        entry["value"]
        for mid, entry in trace.reproduction.items()
        if mid not in exclude
    ]
    return max(values, default=0.0)


def create_app(
    provider_spec: ProviderSpec | None = None,
    persist_dir: str | None = None,
) -> FastAPI:
    app = FastAPI(title="cascadesim", version="1")
    registry: dict[str, SimEntry] = {}
    registry_lock = threading.Lock()
    counter = {"n": 0}
    cases = bundled_cases()
    spec = provider_spec or ProviderSpec()

    @app.exception_handler(RequestValidationError)
    def malformed_request(_request, exc):
        return _error(422, "invalid_request", "malformed request body", [str(e) for e in exc.errors()])

    def make_provider(scenario: Scenario):
        return build_provider(spec, scenario.config.embedding_dim, scenario.config.emotion_dim)

    def persist_path(sim_id: str) -> str | None:
        if not persist_dir:
            return None
        path = os.path.join(persist_dir, sim_id)
        os.makedirs(path, exist_ok=True)
        return path

    def load_scenario_from_body(body: dict) -> Scenario:
        if "scenario" in body:
            return loads_scenario(json.dumps(body["scenario"]))
        if "case" in body:
            name = body["case"]
            if name not in cases:
                raise ScenarioValidationError([f"case: unknown case {name!r}"])
            return loads_scenario(cases[name])
        raise ScenarioValidationError(["body: one of scenario / case / resume is required"])

    def register(scenario: Scenario, seed: int) -> SimEntry:
        world = World.from_scenario(scenario, seed=seed, provider=make_provider(scenario))
        with registry_lock:
            counter["n"] += 1
            sim_id = f"sim{counter['n']:04d}"
        entry = SimEntry(sim_id=sim_id, scenario=scenario, world=world, seed=seed)
        entry.snapshot = _build_snapshot(entry)
        registry[sim_id] = entry
        path = persist_path(entry.sim_id)
        if path:
            with open(os.path.join(path, "meta.json"), "w", encoding="utf-8") as fh:
                json.dump(
                    {"scenario": scenario_to_doc(scenario), "seed": seed},
                    fh,
                    sort_keys=True,
                )
        return entry

    def execute_round(entry: SimEntry, strategy_body: dict | None):
        """Runs inside the per-entry lock."""

        world = entry.world
        strategy_result = None
        prev_trace = world.traces[-1] if world.traces else None
        exclude = set()
        strategy_msg = None
        if strategy_body is not None:
            strategy_msg = build_strategy_message(entry, strategy_body)
            world.inject_message(
                strategy_msg,
                targets="all",
                author_influence=float(strategy_body.get("author_influence", 1.0)),
            )
            exclude.add(strategy_msg.id)
        trace = world.step_round()
        _append_history(entry, trace)
        if strategy_msg is not None:
            r_before = _max_tracked(prev_trace, exclude) if prev_trace else 0.0
            r_after = _max_tracked(trace, exclude)
            verdict = strategy_acceptance(r_before, r_after)
            strategy_result = {
                "message_id": strategy_msg.id,
                "accepted": verdict.accepted,
                "delta": verdict.delta,
                "r_before": r_before,
                "r_after": r_after,
                "own_reproduction": trace.reproduction.get(strategy_msg.id, {}).get("value"),
            }
        entry.round_payloads.append(strategy_body)
        path = persist_path(entry.sim_id)
        if path:
            record = {"trace": trace_to_dict(trace), "strategy": strategy_body}
            with open(
                os.path.join(path, f"round_{trace.round:04d}.json"), "w", encoding="utf-8"
            ) as fh:
                json.dump(record, fh, sort_keys=True)
        return trace, strategy_result

    def build_strategy_message(entry: SimEntry, body: dict) -> Message:
        world = entry.world
        scenario = entry.scenario
        platform = body.get("platform") or scenario.config.platforms[0].platform_id
        if platform not in world.platform_params:
            raise _StrategyError(f"unknown platform {platform!r}")
        author = body.get("author", "organization")
        influence = body.get("author_influence", 1.0)
        if not isinstance(influence, (int, float)) or not 0.0 <= float(influence) <= 1.0:
            raise _StrategyError("author_influence must be a number in [0,1]")
        text = body.get("text")
        has_vectors = "embedding" in body or "emotion" in body
        if (text is None) == (not has_vectors):
            raise _StrategyError("provide exactly one of text / embedding+emotion")
        if text is not None:
            if not isinstance(text, str) or not text.strip():
                raise _StrategyError("text must be a non-empty string")
            try:
                embedding = world.provider.embed(text)
                emotion = world.provider.emote(text)
            except ProviderError as exc:
                raise _StrategyError(f"provider failed on strategy text: {exc}")
        else:
            embedding = _vector_from(body.get("embedding"), scenario.config.embedding_dim)
            emotion = _vector_from(body.get("emotion"), scenario.config.emotion_dim, lo=-1.0, hi=1.0)
        try:
            return Message(
                id=world.new_message_id(),
                content_embedding=embedding,
                emotion=emotion,
                author=author,
                platform=platform,
                round=world.round,
                text=text,
            )
        except SimulationError as exc:
            raise _StrategyError(str(exc))

    # ---------- endpoints ----------

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.get("/v1/cases")
    def list_cases():
        out = []
        for name, raw in sorted(cases.items()):
            doc = json.loads(raw)
            out.append(
                {
                    "case": name,
                    "name": doc.get("name"),
                    "description": doc.get("description", ""),
                    "rounds": doc.get("config", {}).get("rounds"),
                    "num_agents": doc.get("config", {}).get("num_agents"),
                    "has_ground_truth": "ground_truth" in doc,
                }
            )
        return {"cases": out}

    @app.get("/v1/simulations")
    def list_simulations():
        return {"simulations": [_handle(e) for e in registry.values()]}

    @app.post("/v1/simulations", status_code=201)
    def create_simulation(body: dict = Body(...)):
        if not isinstance(body, dict):
            return _error(400, "invalid_request", "body must be a JSON object")
        if "resume" in body:
            return resume_simulation(str(body["resume"]))
        try:
            scenario = load_scenario_from_body(body)
        except ScenarioValidationError as exc:
            return _error(400, "invalid_scenario", "scenario validation failed", exc.errors)
        seed = body.get("seed", scenario.config.seed)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            return _error(400, "invalid_request", "seed must be a nonnegative integer")
        entry = register(scenario, seed)
        return _handle(entry)

    def resume_simulation(sim_id: str):
        if not persist_dir:
            return _error(400, "invalid_request", "resume requires a persistence directory")
        path = os.path.join(persist_dir, sim_id)
        meta_path = os.path.join(path, "meta.json")
        if not os.path.exists(meta_path):
            return _error(404, "not_found", f"no persisted simulation {sim_id!r}")
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        try:
            scenario = loads_scenario(json.dumps(meta["scenario"]))
        except ScenarioValidationError as exc:
            return _error(400, "invalid_scenario", "persisted scenario invalid", exc.errors)
        entry = register(scenario, int(meta["seed"]))
        rounds = sorted(
            f for f in os.listdir(path) if f.startswith("round_") and f.endswith(".json")
        )
        with entry.lock:
            for fname in rounds:
                with open(os.path.join(path, fname), encoding="utf-8") as fh:
                    record = json.load(fh)
                trace, _ = execute_round(entry, record.get("strategy"))
                if trace.digest != record["trace"]["digest"]:
                    entry.status = "failed"
                    entry.last_error = f"replay diverged at round {trace.round}"
                    return _error(500, "replay_diverged", entry.last_error)
            if entry.world.round >= entry.total_rounds:
                entry.status = "finished"
            entry.snapshot = _build_snapshot(entry)
        return _handle(entry)

    @app.get("/v1/simulations/{sim_id}")
    def get_simulation(sim_id: str):
        entry = registry.get(sim_id)
        if entry is None:
            return _error(404, "not_found", f"unknown simulation {sim_id!r}")
        return _handle(entry)

    @app.post("/v1/simulations/{sim_id}/rounds")
    def post_round(sim_id: str, body: dict | None = Body(default=None)):
        entry = registry.get(sim_id)
        if entry is None:
            return _error(404, "not_found", f"unknown simulation {sim_id!r}")
        if entry.status == "finished":
            return _error(409, "conflict", "simulation already finished")
        if entry.status == "failed":
            return _error(409, "conflict", f"simulation failed: {entry.last_error}")
        strategy_body = None
        if body:
            strategy_body = body
        if not entry.lock.acquire(blocking=False):
            return _error(409, "conflict", "a round is already executing")
        try:
            entry.status = "running_round"
            try:
                trace, strategy_result = execute_round(entry, strategy_body)
            except _StrategyError as exc:
                entry.status = "awaiting_input"
                return _error(422, "invalid_strategy", str(exc))
            except ProviderError as exc:
                entry.status = "awaiting_input"
                return _error(503, "provider_failure", f"round aborted and rolled back: {exc}")
            entry.status = (
                "finished" if entry.world.round >= entry.total_rounds else "awaiting_input"
            )
            entry.snapshot = _build_snapshot(entry)
        except SimulationError as exc:
            entry.status = "failed"
            entry.last_error = str(exc)
            return _error(500, "simulation_error", str(exc))
        finally:
            if entry.status == "running_round":
                entry.status = "awaiting_input"
            entry.lock.release()
        response = {
            "round": trace.round,
            "day": trace.day,
            "status": entry.status,
            "evaluated": trace.evaluated,
            "engaged": trace.engaged_count,
            "posts": len(trace.posts),
            "dropped": trace.dropped,
            "reproduction": trace.reproduction,
            "digest": trace.digest,
        }
        if strategy_result is not None:
            response["strategy"] = strategy_result
        return response

    @app.get("/v1/simulations/{sim_id}/state")
    def get_state(sim_id: str):
        entry = registry.get(sim_id)
        if entry is None:
            return _error(404, "not_found", f"unknown simulation {sim_id!r}")
        return entry.snapshot

    @app.get("/v1/simulations/{sim_id}/report")
    def get_report(sim_id: str):
        entry = registry.get(sim_id)
        if entry is None:
            return _error(404, "not_found", f"unknown simulation {sim_id!r}")
        if not entry.world.traces:
            return _error(409, "conflict", "no completed rounds to report on")
        report = build_report(entry.scenario, entry.world.traces, entry.seed)
        return report_to_dict(report)

    @app.post("/v1/batches")
    def run_batch(body: dict = Body(...)):
        try:
            scenario = load_scenario_from_body(body)
        except ScenarioValidationError as exc:
            return _error(400, "invalid_scenario", "scenario validation failed", exc.errors)
        seeds = body.get("seeds")
        if (
            not isinstance(seeds, list)
            or not seeds
            or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds)
        ):
            return _error(400, "invalid_request", "seeds must be a non-empty list of integers")
        reports = []
        for seed in seeds:
            world = World.from_scenario(scenario, seed=seed, provider=make_provider(scenario))
            traces = run_scenario(world, scenario)
            reports.append(build_report(scenario, traces, seed))
        aggregate = aggregate_seeds(reports)
        return {
            "aggregate": report_to_dict(aggregate),
            "per_seed": [report_to_dict(r) for r in reports],
        }

    return app


class _StrategyError(Exception):
    pass


def _vector_from(raw, dim: int, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != dim:
        raise _StrategyError(f"expected a {dim}-component array")
    try:
        vec = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise _StrategyError("vector components must be numbers")
    if not np.isfinite(vec).all():
        raise _StrategyError("vector components must be finite")
    if lo is not None and ((vec < lo).any() or (vec > hi).any()):
        raise _StrategyError(f"components must lie in [{lo},{hi}]")
    if lo is None:
        nrm = float(np.linalg.norm(vec))
        if nrm < 1e-12:
            raise _StrategyError("zero embedding")
        vec = vec / nrm
    return vec
