"""The online loop: log a learning window, price it once, then serve."""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from trafficshape.errors import InvalidInputError, SchemaError
from trafficshape.lp_dual import (
    ConstraintSpec,
    DualPrices,
    DualSolveReport,
    SampledLpConfig,
    solve_sampled_dual,
)
from trafficshape.matching import (
    MATCHERS,
    Assignment,
    assign_batch,
    greedy_matching,
    hungarian_max_weight,
)
from trafficshape.session import SessionInstance

logger = logging.getLogger(__name__)

LEARNING, SERVING = "learning", "serving"


def learning_window(n: int, epsilon: float) -> int:
    """Number of learning sessions: ceil(epsilon * n), never below one."""
    return max(1, math.ceil(epsilon * n - 1e-9))


def score_matrix(session: SessionInstance, prices: DualPrices) -> np.ndarray:
    """Price-weighted scores ``C + sum_t lam_t A_t``."""
    lam = prices.array if isinstance(prices, DualPrices) else np.asarray(prices, dtype=float)
    if lam.shape != (session.T,):
        raise InvalidInputError(f"{lam.shape[0] if lam.ndim else 0} prices for {session.T} constraints")
    return session.C + np.tensordot(lam, session.A, axes=1)


def match(S: np.ndarray, matcher: str) -> Assignment:
    if matcher == "hungarian":
        return hungarian_max_weight(S)[0]
    if matcher == "greedy":
        return greedy_matching(S)
    if matcher == "auto":
        sigma = assign_batch(S[None], "auto")[0]
        return Assignment(tuple(int(j) for j in sigma), float(S[np.arange(len(sigma)), sigma].sum()))
    raise InvalidInputError(f"unknown matcher {matcher!r}; choose from {MATCHERS}")


def apply_prices(sessions: Sequence[SessionInstance], prices: DualPrices,
                 matcher: str = "hungarian") -> list[tuple[int, ...]]:
    """Offline ranking of every session with fixed prices."""
    return [match(score_matrix(s, prices), matcher).sigma for s in sessions]


@dataclass(frozen=True)
class ServeDecision:
    session_id: int
    phase: str
    sigma: tuple[int, ...]
    reward: float
    delivered: tuple[float, ...]

    def to_json(self) -> dict:
        return {"session_id": self.session_id, "phase": self.phase, "sigma": list(self.sigma),
                "reward": self.reward, "delivered": list(self.delivered)}

    @classmethod
    def from_json(cls, obj: dict, line: int | None = None) -> "ServeDecision":
        try:
            decision = cls(int(obj["session_id"]), str(obj["phase"]),
                           tuple(int(j) for j in obj["sigma"]), float(obj["reward"]),
                           tuple(float(x) for x in obj["delivered"]))
        except KeyError as exc:
            raise SchemaError("missing field", line, exc.args[0]) from None
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"bad decision record ({exc})", line) from None
        if decision.phase not in (LEARNING, SERVING):
            raise SchemaError(f"unknown phase {decision.phase!r}", line, "phase")
        return decision


def save_decisions(path, decisions: Iterable[ServeDecision]) -> None:
    with open(path, "w") as fh:
        for d in decisions:
            fh.write(json.dumps(d.to_json(), allow_nan=False) + "\n")


def load_decisions(path) -> list[ServeDecision]:
    out = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            if raw.strip():
                try:
                    obj = json.loads(raw)
                except ValueError as exc:
                    raise SchemaError(f"invalid JSON ({exc})", lineno) from None
                out.append(ServeDecision.from_json(obj, lineno))
    return out


@dataclass
class PriceAudit:
    old: DualPrices | None
    new: DualPrices
    gap: float
    flags: list[str]
    sessions_used: int


@dataclass
class EngineState:
    n: int
    epsilon: float
    nu: float
    T: int
    prices: DualPrices | None = None
    sessions_seen: int = 0
    cumulative_reward: float = 0.0
    cumulative_delivered: np.ndarray = None
    learning_reward: float = 0.0
    learning_delivered: np.ndarray = None
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.cumulative_delivered is None:
            self.cumulative_delivered = np.zeros(self.T)
        if self.learning_delivered is None:
            self.learning_delivered = np.zeros(self.T)

    @property
    def window(self) -> int:
        return learning_window(self.n, self.epsilon)


class ShapingEngine:
    """Sequential consumer of a session stream.

    The first ``ceil(epsilon * n)`` sessions get the identity ranking and are
    logged. When the next session arrives the sampled dual is solved once on
    that log; from then on each session is ranked by a max-weight matching on
    ``C + sum_t lam_t A_t``.

    ``prices`` may be supplied up front (learned offline on the same window);
    the learning window is still served with the identity so the run is
    identical to learning in-line.
    """

    def __init__(self, spec: ConstraintSpec, epsilon: float, nu: float | None = None,
                 matcher: str = "hungarian", prices: DualPrices | None = None,
                 lp_config: SampledLpConfig | None = None):
        if matcher not in MATCHERS:
            raise InvalidInputError(f"unknown matcher {matcher!r}; choose from {MATCHERS}")
        base = lp_config or SampledLpConfig()
        self.lp_config = dataclasses.replace(base, epsilon=epsilon,
                                             nu=nu if nu is not None else base.nu)
        self.spec = spec
        self.matcher = matcher
        self.state = EngineState(n=spec.horizon, epsilon=epsilon, nu=self.lp_config.safety, T=spec.T)
        if prices is not None and len(prices) != spec.T:
            raise InvalidInputError(f"{len(prices)} prices for {spec.T} constraints")
        self._preloaded = prices
        self._log: list[SessionInstance] = []
        self.solve_report: DualSolveReport | None = None
        self.audits: list[PriceAudit] = []

    @property
    def prices(self) -> DualPrices | None:
        return self.state.prices

    def _activate_prices(self) -> None:
        if self._preloaded is not None:
            self.state.prices = self._preloaded
            self.audits.append(PriceAudit(None, self._preloaded, float("nan"), [], 0))
            return
        if len(self._log) != self.state.window:
            raise RuntimeError("learning log incomplete at the end of the window")
        self.refresh_prices(self._log)

    def refresh_prices(self, sessions: Sequence[SessionInstance] | None = None,
                       spec: ConstraintSpec | None = None,
                       cfg: SampledLpConfig | None = None) -> PriceAudit:
        """Re-solve the sampled dual and swap in the new prices."""
        sessions = self._log if sessions is None else sessions
        if spec is not None:
            if spec.T != self.spec.T:
                raise InvalidInputError("refresh cannot change the number of constraints")
            self.spec = spec
        if cfg is not None:
            self.lp_config = cfg
        report = solve_sampled_dual(sessions, self.spec, self.lp_config)
        audit = PriceAudit(self.state.prices, report.prices, report.gap, report.flags, len(sessions))
        self.solve_report = report
        self.state.prices = report.prices
        for flag in report.flags:
            if flag not in self.state.flags:
                self.state.flags.append(flag)
        self.audits.append(audit)
        logger.info("prices %s -> %s (gap %.3g)", audit.old, audit.new, audit.gap)
        return audit

    def _record(self, session: SessionInstance, phase: str, sigma) -> ServeDecision:
        reward = session.reward(sigma)
        delivered = session.delivered(sigma)
        st = self.state
        st.sessions_seen += 1
        st.cumulative_reward += reward
        st.cumulative_delivered = st.cumulative_delivered + delivered
        if phase == LEARNING:
            st.learning_reward += reward
            st.learning_delivered = st.learning_delivered + delivered
        return ServeDecision(session.id, phase, tuple(int(j) for j in sigma), reward,
                             tuple(float(x) for x in delivered))

    def _serve(self, session: SessionInstance, matcher: str) -> ServeDecision:
        st = self.state
        if session.T != self.spec.T:
            raise InvalidInputError(f"session {session.id} has {session.T} constraints, spec has {self.spec.T}")
        if st.sessions_seen >= st.n:
            raise InvalidInputError(f"stream exceeds the declared horizon n={st.n}")
        if st.sessions_seen < st.window:
            self._log.append(session)
            return self._record(session, LEARNING, np.arange(session.m))
        if st.prices is None:
            self._activate_prices()
        assignment = match(score_matrix(session, st.prices), matcher)
        return self._record(session, SERVING, assignment.sigma)

    def serve(self, session: SessionInstance) -> ServeDecision:
        return self._serve(session, self.matcher)

    def serve_with_greedy(self, session: SessionInstance) -> ServeDecision:
        return self._serve(session, "greedy")

    def run(self, sessions: Sequence[SessionInstance]) -> list[ServeDecision]:
        """Serve a whole stream of exactly ``n`` sessions (longer ones are truncated)."""
        remaining = self.state.n - self.state.sessions_seen
        if len(sessions) < remaining:
            raise InvalidInputError(f"stream has {len(sessions)} sessions, {remaining} expected")
        if len(sessions) > remaining:
            logger.warning("stream has %d sessions; truncating to %d", len(sessions), remaining)
        return [self.serve(s) for s in sessions[:remaining]]

    def replay(self, sessions: Sequence[SessionInstance]) -> list[ServeDecision]:
        """Serving-phase decisions for ``sessions`` under the current prices, state untouched."""
        if self.state.prices is None:
            raise RuntimeError("no prices yet")
        probe = copy.deepcopy(self)
        probe.state.n = probe.state.sessions_seen + len(sessions)
        return [probe._serve(s, self.matcher) for s in sessions]


def run_pipeline(sessions: Sequence[SessionInstance], spec: ConstraintSpec, epsilon: float,
                 nu: float | None = None, matcher: str = "hungarian",
                 prices: DualPrices | None = None,
                 lp_config: SampledLpConfig | None = None) -> tuple[list[ServeDecision], ShapingEngine]:
    engine = ShapingEngine(spec, epsilon, nu=nu, matcher=matcher, prices=prices, lp_config=lp_config)
    return engine.run(sessions), engine
