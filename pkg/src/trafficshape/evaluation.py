"""Run metrics against the hindsight LP, and the experiment sweeps.

Ratios use the hindsight dual value (an upper bound on the LP optimum) as the
denominator; the rounded-down interval against the primal bound is reported
next to it.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from trafficshape.engine import LEARNING, SERVING, ServeDecision, run_pipeline
from trafficshape.errors import InvalidInputError
from trafficshape.lp_dual import (
    ConstraintSpec,
    DualPrices,
    DualSolveReport,
    SampledLpConfig,
    solve_hindsight,
    solve_sampled_dual,
)
from trafficshape.matching import assign_batch, gather
from trafficshape.session import SessionInstance, stack_sessions
from trafficshape.traffic import GeneratorConfig, generate_stream

logger = logging.getLogger(__name__)


def _ratio(num: float, den: float) -> float | None:
    return float(num / den) if den > 0 else None


@dataclass
class ExperimentReport:
    total_reward: float
    learning_reward: float
    serving_reward: float
    hindsight_value: float
    hindsight_primal_bound: float
    competitive_ratio: float | None
    competitive_ratio_interval: tuple[float | None, float | None]
    online_performance_ratio: float | None
    delivery_ratio: list[float | None]
    delivery_ratio_with_learning: list[float | None]
    delivery_ratio_serving_only: list[float | None]
    delivered: list[float]
    delivered_serving: list[float]
    targets: list[float]
    prices: list[float] | None
    flags: list[str]
    config: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return all(r is None or r >= 1.0 for r in self.delivery_ratio)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")


def evaluate_run(decisions: Sequence[ServeDecision], sessions: Sequence[SessionInstance],
                 spec: ConstraintSpec, hindsight: DualSolveReport | None = None,
                 prices: DualPrices | None = None, credit_learning_phase: bool = False,
                 lp_config: SampledLpConfig | None = None, config: dict | None = None,
                 extra_flags: Sequence[str] = ()) -> ExperimentReport:
    """Score a decision log against the hindsight optimum of the same stream."""
    if len(decisions) != len(sessions):
        raise InvalidInputError(f"log has {len(decisions)} decisions for {len(sessions)} sessions")
    serving_mask = np.zeros(len(sessions), dtype=bool)
    rewards = np.empty(len(sessions))
    delivered = np.zeros((len(sessions), spec.T))
    for k, (d, s) in enumerate(zip(decisions, sessions)):
        if d.session_id != s.id:
            raise InvalidInputError(f"decision {k} is for session {d.session_id}, stream has {s.id}")
        if sorted(d.sigma) != list(range(s.m)):
            raise InvalidInputError(f"decision {k} is not a permutation of {s.m} slots")
        rewards[k] = s.reward(d.sigma)
        delivered[k] = s.delivered(d.sigma)
        if abs(rewards[k] - d.reward) > 1e-9 * max(1.0, abs(rewards[k])):
            raise InvalidInputError(f"decision {k}: logged reward disagrees with the session")
        serving_mask[k] = d.phase == SERVING

    if hindsight is None:
        hindsight = solve_hindsight(sessions, spec, lp_config)
    upper, lower = hindsight.dual_value, hindsight.best_primal_bound
    total = float(rewards.sum())
    serving = float(rewards[serving_mask].sum())
    hindsight_serving = float(hindsight.session_reward[serving_mask].sum())

    b = spec.b
    with_learning = delivered.sum(axis=0)
    serving_only = delivered[serving_mask].sum(axis=0)
    ratio_with = [_ratio(x, bt) for x, bt in zip(with_learning, b)]
    ratio_serv = [_ratio(x, bt) for x, bt in zip(serving_only, b)]
    chosen = ratio_with if credit_learning_phase else ratio_serv

    flags = list(dict.fromkeys(list(extra_flags) + [f"hindsight_{f}" for f in hindsight.flags]))
    if any(r is not None and r < 1.0 for r in chosen):
        flags.append("constraint_violated")
    return ExperimentReport(
        total_reward=total,
        learning_reward=total - serving,
        serving_reward=serving,
        hindsight_value=upper,
        hindsight_primal_bound=lower,
        competitive_ratio=_ratio(total, upper),
        competitive_ratio_interval=(_ratio(total, upper), _ratio(total, lower)),
        online_performance_ratio=_ratio(serving, hindsight_serving),
        delivery_ratio=chosen,
        delivery_ratio_with_learning=ratio_with,
        delivery_ratio_serving_only=ratio_serv,
        delivered=with_learning.tolist(),
        delivered_serving=serving_only.tolist(),
        targets=b.tolist(),
        prices=list(prices.lam) if prices is not None else None,
        flags=flags,
        config=dict(config or {}, credit_learning_phase=credit_learning_phase),
    )


# -- sweeps -----------------------------------------------------------------

@dataclass
class SweepPoint:
    axis_value: float
    seed: int | None
    metrics: dict[str, float]
    report: ExperimentReport | None = None


@dataclass
class SweepResult:
    axis: str
    values: list[float]
    points: list[SweepPoint]
    extras: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        """Tidy rows: one per (axis value, metric, seed)."""
        out = []
        for p in self.points:
            for metric, value in p.metrics.items():
                out.append({"axis": self.axis, "axis_value": p.axis_value, "metric": metric,
                            "value": value, "seed": "" if p.seed is None else p.seed})
        return out

    def metric(self, name: str, seed: int | None = None) -> np.ndarray:
        """Values of one metric along the axis (for one seed)."""
        pts = [p for p in self.points if p.seed == seed] if seed is not None else self.points
        return np.array([p.metrics[name] for p in pts], dtype=float)

    def median(self, name: str) -> np.ndarray:
        return np.array([np.median([p.metrics[name] for p in self.points if p.axis_value == v])
                         for v in self.values])

    def quartiles(self, name: str) -> np.ndarray:
        return np.array([np.percentile([p.metrics[name] for p in self.points if p.axis_value == v],
                                       [25, 75]) for v in self.values])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["axis", "axis_value", "metric", "value", "seed"])
            writer.writeheader()
            for row in self.rows():
                writer.writerow({**row, "value": repr(float(row["value"]))})


def _map(fn: Callable, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def permuted(sessions: Sequence[SessionInstance], seed: int | None) -> list[SessionInstance]:
    """Stream order for one replication; ``None`` keeps the given order."""
    if seed is None:
        return list(sessions)
    order = np.random.default_rng(seed).permutation(len(sessions))
    return [sessions[i] for i in order]


def resolve_nu(rule: str | float, epsilon: float) -> float:
    if rule == "feasibility":
        return 1 + 4 * epsilon
    if rule == "objective":
        return 1 - epsilon
    return float(rule)


def _flatten_report(rep: ExperimentReport, names: Sequence[str]) -> dict[str, float]:
    out = {"competitive_ratio": rep.competitive_ratio,
           "online_performance_ratio": rep.online_performance_ratio}
    for name, r, rw in zip(names, rep.delivery_ratio, rep.delivery_ratio_with_learning):
        out[f"delivery_ratio[{name}]"] = r
        out[f"delivery_ratio_with_learning[{name}]"] = rw
    return {k: (float("nan") if v is None else float(v)) for k, v in out.items()}


def _epsilon_point(args):
    sessions, spec, eps, nu_rule, seed, matcher, lp_config, credit, hindsight = args
    stream = permuted(sessions, seed)
    order = [s.id for s in stream]
    nu = resolve_nu(nu_rule, eps)
    decisions, engine = run_pipeline(stream, spec, eps, nu=nu, matcher=matcher, lp_config=lp_config)
    # hindsight session rewards follow the permuted order
    index = {s.id: i for i, s in enumerate(sessions)}
    view = dataclasses.replace(
        hindsight,
        session_reward=hindsight.session_reward[[index[i] for i in order]],
        session_delivered=hindsight.session_delivered[[index[i] for i in order]])
    report = evaluate_run(decisions, stream, spec, hindsight=view, prices=engine.prices,
                          credit_learning_phase=credit, extra_flags=engine.state.flags,
                          config={"epsilon": eps, "nu": nu, "seed": seed, "matcher": matcher})
    return SweepPoint(eps, seed, _flatten_report(report, spec.names), report)


def sweep_epsilon(sessions: Sequence[SessionInstance], spec: ConstraintSpec,
                  grid: Sequence[float], nu_rule: str | float = 1.05,
                  seeds: Sequence[int | None] = (None,), matcher: str = "auto",
                  lp_config: SampledLpConfig | None = None, credit_learning_phase: bool = False,
                  jobs: int = 1) -> SweepResult:
    """One full online run per (epsilon, seed): competitive, online and delivery ratios."""
    hindsight = solve_hindsight(sessions, spec, lp_config)
    tasks = [(sessions, spec, float(eps), nu_rule, seed, matcher, lp_config,
              credit_learning_phase, hindsight) for eps in grid for seed in seeds]
    return SweepResult("epsilon", [float(e) for e in grid], _map(_epsilon_point, tasks, jobs))


def _sample_point(args):
    sessions, spec, size, seed, nu, lp_config, reference = args
    stream = permuted(sessions, seed)
    eps = size / spec.horizon
    cfg = dataclasses.replace(lp_config or SampledLpConfig(), epsilon=eps, nu=nu)
    rep = solve_sampled_dual(stream[:size], spec, cfg)
    lam = rep.prices.array
    metrics = {"objective_per_session": rep.dual_value / size,
               "price_distance": float(np.abs(lam - reference).max()) if len(lam) else 0.0,
               "infeasible": float(rep.likely_infeasible)}
    for name, x in zip(spec.names, lam):
        metrics[f"price[{name}]"] = float(x)
    return SweepPoint(float(size), seed, metrics)


def sweep_sample_size(sessions: Sequence[SessionInstance], spec: ConstraintSpec,
                      grid: Sequence[int], seeds: Sequence[int | None] = (None,), nu: float = 1.0,
                      lp_config: SampledLpConfig | None = None, jobs: int = 1) -> SweepResult:
    """Sampled-LP prices and per-session objective as the sample grows.

    ``price_distance`` is the sup-norm distance to the hindsight prices.
    """
    n = spec.horizon
    if any(not 1 <= g <= n for g in grid):
        raise InvalidInputError(f"sample sizes must lie in [1, {n}]")
    reference = solve_hindsight(sessions, spec, lp_config).prices.array
    tasks = [(sessions, spec, int(g), seed, nu, lp_config, reference) for g in grid for seed in seeds]
    return SweepResult("sample_size", [float(g) for g in grid], _map(_sample_point, tasks, jobs),
                       extras={"hindsight_prices": reference.tolist()})


def max_deliverable(sessions: Sequence[SessionInstance], t: int) -> float:
    """Sum over sessions of the best achievable ``<A_t, P>``, other constraints ignored."""
    _, A = stack_sessions(sessions)
    At = A[:, t]
    return float(gather(At, assign_batch(At, "auto")).sum())


def _tradeoff_point(args):
    sessions, spec, theta, t, lp_config = args
    targets = spec.b
    targets[t] *= theta
    rep = solve_hindsight(sessions, spec.with_targets(targets), lp_config)
    n = len(sessions)
    metrics = {"objective_per_session": rep.dual_value / n,
               "primal_per_session": rep.best_primal_bound / n,
               "infeasible": float(rep.likely_infeasible)}
    for name, x in zip(spec.names, rep.prices.lam):
        metrics[f"price[{name}]"] = float(x)
    return SweepPoint(float(theta), None, metrics)


def sweep_tradeoff(sessions: Sequence[SessionInstance], spec: ConstraintSpec,
                   thetas: Sequence[float], constraint: int | str = 0,
                   lp_config: SampledLpConfig | None = None, jobs: int = 1) -> SweepResult:
    """Hindsight objective per session as one target is scaled by ``theta``."""
    t = spec.names.index(constraint) if isinstance(constraint, str) else int(constraint)
    tasks = [(sessions, spec, float(th), t, lp_config) for th in thetas]
    bt = spec.targets[t]
    theta_max = max_deliverable(sessions, t) / bt if bt > 0 else float("inf")
    return SweepResult("theta", [float(x) for x in thetas], _map(_tradeoff_point, tasks, jobs),
                       extras={"constraint": spec.names[t], "theta_max": theta_max})


# -- replicated trials on fresh synthetic streams -----------------------------

def _trial(args):
    gen_cfg, spec, eps, nu, matcher, lp_config, credit, seed = args
    sessions = generate_stream(dataclasses.replace(gen_cfg, seed=seed))
    decisions, engine = run_pipeline(sessions, spec, eps, nu=nu, matcher=matcher, lp_config=lp_config)
    return evaluate_run(decisions, sessions, spec, prices=engine.prices, lp_config=lp_config,
                        credit_learning_phase=credit, extra_flags=engine.state.flags,
                        config={"epsilon": eps, "nu": nu, "seed": seed})


def replicate(gen_cfg: GeneratorConfig, spec: ConstraintSpec, epsilon: float, nu: float,
              seeds: Sequence[int], matcher: str = "auto",
              lp_config: SampledLpConfig | None = None, credit_learning_phase: bool = False,
              jobs: int = 1) -> list[ExperimentReport]:
    """Independent streams (one per seed) from the same distribution and targets."""
    tasks = [(gen_cfg, spec, epsilon, nu, matcher, lp_config, credit_learning_phase, s)
             for s in seeds]
    return _map(_trial, tasks, jobs)
