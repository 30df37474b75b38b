"""Fidelity measurement: stance readout, trajectories, correlation, divergence.

Process fidelity is the Pearson correlation between an empirical opinion
series and the simulated one; outcome fidelity is the Jensen-Shannon
divergence (base 2, so values live in [0, 1]) between final stance
distributions. Both series the simulator can export are produced: the
continuous opinion index (mean persona-topic alignment) and the oppose-share
series; reports state which one was correlated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UndefinedCorrelationError

DEFAULT_THRESHOLDS = (-0.2, 0.2)
DEFAULT_LABELS = ("oppose", "neutral", "support")


@dataclass(frozen=True)
class Trajectory:
    """An opinion series: ((round, value), ...) with strictly increasing rounds."""

    values: tuple

    def __post_init__(self):
        rounds = [r for r, _ in self.values]
        if any(b <= a for a, b in zip(rounds, rounds[1:])):
            raise ConfigurationError("trajectory rounds must be strictly increasing")
        if any(not math.isfinite(v) for _, v in self.values):
            raise ConfigurationError("trajectory values must be finite")

    def as_dict(self) -> dict:
        return dict(self.values)


@dataclass(frozen=True)
class StanceDistribution:
    labels: tuple
    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if len(self.labels) != p.shape[0]:
            raise ConfigurationError("labels and probabilities disagree in length")
        if (p < 0).any() or abs(float(p.sum()) - 1.0) > 1e-9:
            raise ConfigurationError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probabilities", p)


def stance_of_agent(state, topic_embedding: np.ndarray, thresholds=DEFAULT_THRESHOLDS, labels=DEFAULT_LABELS) -> str:
    """Read an agent's stance label off its persona-topic alignment."""

    lo, hi = thresholds
    if lo > hi:
        raise ConfigurationError(f"thresholds ({lo}, {hi}) must satisfy lo <= hi")
    nrm = float(np.linalg.norm(topic_embedding))
    if abs(nrm - 1.0) > 1e-6:
        raise ConfigurationError(f"topic embedding norm {nrm} != 1")
    s = float(state.persona @ topic_embedding)
    if s < lo:
        return labels[0]
    if s > hi:
        return labels[2]
    return labels[1]


def scores_to_distribution(scores: np.ndarray, thresholds=DEFAULT_THRESHOLDS, labels=DEFAULT_LABELS) -> StanceDistribution:
    lo, hi = thresholds
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    if n == 0:
        raise ConfigurationError("no agents to build a distribution from")
    oppose = int((scores < lo).sum())
    support = int((scores > hi).sum())
    counts = np.array([oppose, n - oppose - support, support], dtype=np.float64)
    return StanceDistribution(tuple(labels), counts / n)


def _day_traces(traces):
    """Last trace of each day (a day spans ticks_per_day rounds)."""

    by_day = {}
    for trace in traces:
        by_day[trace.day] = trace
    return [by_day[d] for d in sorted(by_day)]


def simulated_trajectory(traces, kind: str = "mean_alignment", thresholds=DEFAULT_THRESHOLDS) -> Trajectory:
    """Per-day opinion series from engine traces.

    ``mean_alignment`` is the continuous opinion index: the mean over agents
    of the persona-topic alignment the engine recorded at each round end.
    ``oppose_share`` is the fraction of agents below the oppose threshold.
    """

    day_traces = [t for t in _day_traces(traces) if t.stance_scores is not None]
    if not day_traces:
        raise ConfigurationError("no traces with stance scores")
    if any(t.stance_scores.shape[0] == 0 for t in day_traces):
        raise ConfigurationError("traces cover zero agents")
    points = []
    for trace in day_traces:
        scores = trace.stance_scores
        if kind == "mean_alignment":
            value = float(scores.mean())
        elif kind == "oppose_share":
            value = float((scores < thresholds[0]).sum()) / scores.shape[0]
        else:
            raise ConfigurationError(f"unknown trajectory kind {kind!r}")
        points.append((trace.day, value))
    return Trajectory(tuple(points))


def round_distributions(traces, thresholds=DEFAULT_THRESHOLDS, labels=DEFAULT_LABELS):
    """Per-day stance distributions from engine traces."""

    return [
        (trace.day, scores_to_distribution(trace.stance_scores, thresholds, labels))
        for trace in _day_traces(traces)
        if trace.stance_scores is not None
    ]


def pearson_r(a: Trajectory, b: Trajectory) -> float:
    """Sample Pearson correlation on the round intersection of two series."""

    da, db = a.as_dict(), b.as_dict()
    common = sorted(set(da) & set(db))
    if len(common) < 2:
        raise ConfigurationError(f"need >= 2 common rounds, got {len(common)}")
    xs = np.array([da[r] for r in common])
    ys = np.array([db[r] for r in common])
    xd = xs - xs.mean()
    yd = ys - ys.mean()
    vx = float(xd @ xd)
    vy = float(yd @ yd)
    if vx == 0.0 or vy == 0.0:
        raise UndefinedCorrelationError(
            "correlation undefined: zero variance in " + ("first" if vx == 0.0 else "second") + " series"
        )
    r = float(xd @ yd) / math.sqrt(vx * vy)
    return max(-1.0, min(1.0, r))


def jsd(p: StanceDistribution, q: StanceDistribution) -> float:
    """Jensen-Shannon divergence with base-2 logarithm, bounded in [0, 1]."""

    if p.labels != q.labels:
        raise ConfigurationError(f"label mismatch: {p.labels} vs {q.labels}")
    pv, qv = p.probabilities, q.probabilities
    m = 0.5 * (pv + qv)

    def kl(x, mm):
        mask = x > 0
        return float(np.sum(x[mask] * np.log2(x[mask] / mm[mask])))

    value = 0.5 * kl(pv, m) + 0.5 * kl(qv, m)
    return max(0.0, min(1.0, value))


@dataclass
class FidelityReport:
    """Everything a replay comparison produces for one run (or a seed aggregate)."""

    scenario: str
    seeds: tuple
    trajectory_kind: str
    trajectory: Trajectory
    oppose_share: Trajectory
    distributions: list  # [(day, StanceDistribution)]
    final_distribution: StanceDistribution
    reproduction: dict = field(default_factory=dict)  # msg_id -> [(round, value)]
    pearson: float | None = None
    divergence: float | None = None
    per_seed: list = field(default_factory=list)  # [(seed, pearson, divergence)]
    notes: str = ""


def build_report(scenario, traces, seed: int) -> FidelityReport:
    """Single-seed fidelity report; r/JSD only when the scenario has ground truth."""

    kind = scenario.trajectory_kind
    thresholds = scenario.stance_thresholds
    labels = scenario.stance_labels
    traj = simulated_trajectory(traces, kind, thresholds)
    oppose = simulated_trajectory(traces, "oppose_share", thresholds)
    dists = round_distributions(traces, thresholds, labels)
    final = dists[-1][1] if dists else None
    repro: dict[str, list] = {}
    for trace in traces:
        for mid, entry in trace.reproduction.items():
            repro.setdefault(mid, []).append((trace.round, entry["value"]))
    report = FidelityReport(
        scenario=scenario.name,
        seeds=(seed,),
        trajectory_kind=kind,
        trajectory=traj,
        oppose_share=oppose,
        distributions=dists,
        final_distribution=final,
        reproduction=repro,
        notes=f"correlated series: {kind}",
    )
    gt = scenario.ground_truth
    if gt is not None:
        report.pearson = pearson_r(Trajectory(tuple(gt.trajectory)), traj)
        report.divergence = jsd(
            StanceDistribution(tuple(gt.stance_labels), gt.final_stances), final
        )
        report.per_seed = [(seed, report.pearson, report.divergence)]
    return report


def aggregate_seeds(reports) -> FidelityReport:
    """Average fidelity metrics over seeds; per-seed values are retained."""

    reports = list(reports)
    if not reports:
        raise ConfigurationError("no reports to aggregate")
    first = reports[0]
    if len(reports) == 1:
        return first
    for rep in reports[1:]:
        if rep.scenario != first.scenario or rep.trajectory_kind != first.trajectory_kind:
            raise ConfigurationError("reports describe different scenarios")
        if [d for d, _ in rep.distributions] != [d for d, _ in first.distributions]:
            raise ConfigurationError("reports cover different days")
        if rep.final_distribution.labels != first.final_distribution.labels:
            raise ConfigurationError("reports use different stance labels")

    def mean_trajectory(get):
        days = [r for r, _ in get(first).values]
        for rep in reports[1:]:
            if [r for r, _ in get(rep).values] != days:
                raise ConfigurationError("trajectories cover different rounds")
        stacked = np.array([[v for _, v in get(rep).values] for rep in reports])
        return Trajectory(tuple(zip(days, stacked.mean(axis=0).tolist())))

    labels = first.final_distribution.labels
    dists = []
    for i, (day, _) in enumerate(first.distributions):
        stacked = np.array([rep.distributions[i][1].probabilities for rep in reports])
        mean = stacked.mean(axis=0)
        dists.append((day, StanceDistribution(labels, mean / mean.sum())))
    final = np.array([rep.final_distribution.probabilities for rep in reports]).mean(axis=0)
    per_seed = []
    for rep in reports:
        per_seed.extend(rep.per_seed if rep.per_seed else [(s, rep.pearson, rep.divergence) for s in rep.seeds])
    pearsons = [p for _, p, _ in per_seed if p is not None]
    divergences = [d for _, _, d in per_seed if d is not None]
    repro: dict[str, list] = {}
    for rep in reports:
        for mid, series in rep.reproduction.items():
            repro.setdefault(mid, []).append(series)
    mean_repro = {}
    for mid, series_list in repro.items():
        if len({tuple(r for r, _ in s) for s in series_list}) == 1:
            rounds = [r for r, _ in series_list[0]]
            vals = np.array([[v for _, v in s] for s in series_list]).mean(axis=0)
            mean_repro[mid] = list(zip(rounds, vals.tolist()))
    return FidelityReport(
        scenario=first.scenario,
        seeds=tuple(s for rep in reports for s in rep.seeds),
        trajectory_kind=first.trajectory_kind,
        trajectory=mean_trajectory(lambda r: r.trajectory),
        oppose_share=mean_trajectory(lambda r: r.oppose_share),
        distributions=dists,
        final_distribution=StanceDistribution(labels, final / final.sum()),
        reproduction=mean_repro,
        pearson=float(np.mean(pearsons)) if pearsons else None,
        divergence=float(np.mean(divergences)) if divergences else None,
        per_seed=per_seed,
        notes=first.notes,
    )


def report_to_dict(report: FidelityReport) -> dict:
    out = {
        "scenario": report.scenario,
        "seeds": list(report.seeds),
        "trajectory_kind": report.trajectory_kind,
        "trajectory": [[r, v] for r, v in report.trajectory.values],
        "oppose_share": [[r, v] for r, v in report.oppose_share.values],
        "distributions": [
            {"day": day, "labels": list(d.labels), "probabilities": d.probabilities.tolist()}
            for day, d in report.distributions
        ],
        "final_distribution": {
            "labels": list(report.final_distribution.labels),
            "probabilities": report.final_distribution.probabilities.tolist(),
        },
        "reproduction": {
            mid: [[r, v] for r, v in series] for mid, series in sorted(report.reproduction.items())
        },
        "notes": report.notes,
    }
    if report.pearson is not None:
        out["pearson_r"] = report.pearson
    if report.divergence is not None:
        out["jsd"] = report.divergence
    if report.per_seed:
        out["per_seed"] = [
            {"seed": s, "pearson_r": p, "jsd": d} for s, p, d in report.per_seed
        ]
    return out


def trajectory_csv(report: FidelityReport) -> str:
    """Plot-ready CSV: day, trajectory value, oppose share, stance shares."""

    labels = report.final_distribution.labels
    lines = ["day,value,oppose_share," + ",".join(f"share_{label}" for label in labels)]
    oppose = report.oppose_share.as_dict()
    dists = {day: d for day, d in report.distributions}
    for day, value in report.trajectory.values:
        shares = dists[day].probabilities if day in dists else [float("nan")] * len(labels)
        lines.append(
            f"{day},{value!r},{oppose.get(day, float('nan'))!r},"
            + ",".join(repr(float(s)) for s in shares)
        )
    return "\n".join(lines) + "\n"
