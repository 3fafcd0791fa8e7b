"""Shadow prices from the Lagrangian dual of the session-matching LP.

For prices ``lam >= 0`` the dual function is

    g(lam) = sum_k max_P <C_k + sum_t lam_t A_kt, P> - sum_t lam_t * rhs_t

with ``rhs = nu * eps * b``. It decomposes per session into a max-weight
matching, is convex and piecewise linear, and its minimum over ``lam >= 0``
equals the optimum of the relaxed primal (doubly stochastic ``P_k``).

``g`` is minimized by a cutting-plane (Kelley) method over the box
``[0, lambda_cap]``. Each cut is the linear function attached to one joint
choice of matchings. The master LP over the cuts gives a lower bound. Its
dual weights form a convex mixture of those matchings, which is a feasible
fractional primal whenever the cap is inactive, so the reported gap brackets
the LP optimum from both sides.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from trafficshape.errors import InvalidInputError
from trafficshape.matching import assign_batch, gather
from trafficshape.session import SessionInstance, stack_sessions

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConstraintSpec:
    """Lower-bound targets ``b_t`` committed over ``horizon`` sessions."""

    targets: tuple[float, ...]
    horizon: int
    names: tuple[str, ...] = ()

    def __post_init__(self):
        targets = tuple(float(b) for b in self.targets)
        names = tuple(self.names) or tuple(f"c{t}" for t in range(len(targets)))
        if len(names) != len(targets):
            raise InvalidInputError(f"{len(names)} names for {len(targets)} targets")
        if any(not math.isfinite(b) or b < 0 for b in targets):
            raise InvalidInputError(f"targets must be finite and nonnegative: {targets}")
        if int(self.horizon) < 1:
            raise InvalidInputError(f"horizon must be >= 1, got {self.horizon}")
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def T(self) -> int:
        return len(self.targets)

    @property
    def b(self) -> np.ndarray:
        return np.array(self.targets, dtype=float)

    def with_targets(self, targets) -> "ConstraintSpec":
        return ConstraintSpec(tuple(targets), self.horizon, self.names)

    def to_json(self) -> dict:
        return {"names": list(self.names), "targets": list(self.targets), "horizon": self.horizon}

    @classmethod
    def from_json(cls, obj: dict) -> "ConstraintSpec":
        try:
            return cls(tuple(obj["targets"]), int(obj["horizon"]), tuple(obj.get("names", ())))
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"bad constraint spec: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ConstraintSpec":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class DualPrices:
    lam: tuple[float, ...]

    def __post_init__(self):
        lam = tuple(float(x) for x in self.lam)
        if any(not math.isfinite(x) or x < 0 for x in lam):
            raise InvalidInputError(f"prices must be finite and nonnegative: {lam}")
        object.__setattr__(self, "lam", lam)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.lam, dtype=float)

    @classmethod
    def zeros(cls, T: int) -> "DualPrices":
        return cls((0.0,) * T)

    def __len__(self):
        return len(self.lam)


@dataclass(frozen=True)
class SampledLpConfig:
    epsilon: float = 0.2
    nu: float | None = None  # None: 1 + 4 * epsilon
    max_iters: int = 5000
    tolerance: float = 1e-9  # relative duality gap
    lambda_cap: float | None = None  # None: derived from the data
    oracle: str = "auto"

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise InvalidInputError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.nu is not None and self.nu <= 0:
            raise InvalidInputError(f"nu must be positive, got {self.nu}")
        if self.max_iters < 1 or self.tolerance <= 0:
            raise InvalidInputError("max_iters and tolerance must be positive")
        if self.lambda_cap is not None and self.lambda_cap <= 0:
            raise InvalidInputError("lambda_cap must be positive")

    @property
    def safety(self) -> float:
        return 1 + 4 * self.epsilon if self.nu is None else float(self.nu)


@dataclass
class DualSolveReport:
    prices: DualPrices
    dual_value: float
    best_primal_bound: float
    gap: float
    iterations: int
    binding: tuple[bool, ...]
    converged: bool
    likely_infeasible: bool
    nu: float
    epsilon: float
    lambda_cap: np.ndarray
    rhs: np.ndarray
    history: list[float] = field(default_factory=list, repr=False)
    # fractional primal recovered from the cut mixture, per session
    session_reward: np.ndarray | None = field(default=None, repr=False)
    session_delivered: np.ndarray | None = field(default=None, repr=False)

    @property
    def flags(self) -> list[str]:
        out = []
        if not self.converged:
            out.append("non_converged")
        if self.likely_infeasible:
            out.append("likely_infeasible")
        return out

    def prices_json(self, names: Sequence[str]) -> dict:
        return prices_to_json(self.prices, names, nu=self.nu, epsilon=self.epsilon,
                              gap=self.gap, iterations=self.iterations,
                              flags=self.flags)


# -- the dual function ------------------------------------------------------

def _shared_rank_one(C: np.ndarray, A: np.ndarray, rtol: float = 1e-9):
    """Factor every session as ``C_k = outer(u_k, r_k)``, ``A_kt = outer(v_kt, r_k)``.

    Returns (u, v, r) when all matrices are nonnegative and share one slot
    vector per session, else None.
    """
    M = np.concatenate([C[:, None], A], axis=1)  # (n, T+1, m, m)
    if (M < 0).any():
        return None
    R = M.sum(axis=(1, 2))
    top = R.max(axis=1, keepdims=True)
    if (top <= 0).any():
        return None
    r = R / top
    rows = M.sum(axis=3) / r.sum(axis=1)[:, None, None]
    err = np.abs(M - rows[..., :, None] * r[:, None, None, :]).max()
    if err > rtol * max(float(M.max()), 1e-300):
        return None
    return rows[:, 0], rows[:, 1:], r


class _Problem:
    """Stacked sessions plus the right-hand side, evaluated many times."""

    def __init__(self, C: np.ndarray, A: np.ndarray, rhs: np.ndarray, oracle: str):
        self.C, self.A, self.rhs, self.oracle = C, A, rhs, oracle
        self.factors = _shared_rank_one(C, A) if oracle != "hungarian" else None
        if self.factors is not None:
            self.slot_order = np.argsort(-self.factors[2], axis=1, kind="stable")

    def _assign(self, lam: np.ndarray) -> np.ndarray:
        if self.factors is not None:
            u, v, _ = self.factors
            scores = u + np.einsum("t,ktd->kd", lam, v)
            sigmas = np.empty_like(self.slot_order)
            np.put_along_axis(sigmas, np.argsort(-scores, axis=1, kind="stable"), self.slot_order, axis=1)
            return sigmas
        S = self.C + np.einsum("t,ktij->kij", lam, self.A) if self.A.shape[1] else self.C
        return assign_batch(S, self.oracle)

    def evaluate(self, lam: np.ndarray):
        sigmas = self._assign(lam)
        if self.factors is not None:
            u, v, r = self.factors
            slot_weight = np.take_along_axis(r, sigmas, axis=1)
            rewards = (u * slot_weight).sum(axis=1)
            delivered = (v * slot_weight[:, None, :]).sum(axis=2)
        else:
            rewards = gather(self.C, sigmas)
            delivered = gather(self.A, sigmas) if self.A.shape[1] else np.zeros((len(sigmas), 0))
        total_reward = float(rewards.sum())
        total_delivered = delivered.sum(axis=0)
        value = total_reward + float(lam @ (total_delivered - self.rhs))
        return value, total_reward, total_delivered, rewards, delivered


def _check_prices(lam, T: int) -> np.ndarray:
    lam = np.asarray(lam.array if isinstance(lam, DualPrices) else lam, dtype=float)
    if lam.shape != (T,):
        raise InvalidInputError(f"expected {T} prices, got shape {lam.shape}")
    if (lam < 0).any() or not np.isfinite(lam).all():
        raise InvalidInputError(f"prices must be finite and nonnegative: {lam}")
    return lam


def dual_objective(lam, sessions: Sequence[SessionInstance], spec: ConstraintSpec,
                   nu: float = 1.0, epsilon: float = 1.0, oracle: str = "auto"):
    """Value and a subgradient of the Lagrangian dual at ``lam``.

    ``subgradient[t] = sum_k <A_kt, P_k(lam)> - nu * epsilon * b_t`` where
    ``P_k(lam)`` is the session's max-weight matching on the price-weighted
    scores, so ``g(mu) >= g(lam) + subgradient @ (mu - lam)``.
    """
    C, A = stack_sessions(sessions)
    if A.shape[1] != spec.T:
        raise InvalidInputError(f"sessions carry {A.shape[1]} constraints, spec has {spec.T}")
    lam = _check_prices(lam, spec.T)
    rhs = nu * epsilon * spec.b
    value, _, delivered, _, _ = _Problem(C, A, rhs, oracle).evaluate(lam)
    return value, delivered - rhs


def default_lambda_cap(C: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Per-constraint price ceiling: 1e4 times the engagement/constraint unit ratio."""
    c_scale = max(float(np.abs(C).max()), 1e-12)
    a_scale = np.abs(A).max(axis=(0, 2, 3)) if A.size else np.zeros(A.shape[1])
    return 1e4 * c_scale / np.maximum(a_scale, 1e-12 * c_scale)


def _solve_master(cuts_a: list[float], cuts_g: list[np.ndarray], cap: np.ndarray):
    """min z s.t. z >= a_j + g_j . lam, 0 <= lam <= cap. Returns (lam, z, weights)."""
    T = len(cap)
    G = np.array(cuts_g).reshape(len(cuts_a), T)
    A_ub = np.hstack([G, -np.ones((len(cuts_a), 1))])
    b_ub = -np.array(cuts_a)
    c = np.zeros(T + 1)
    c[-1] = 1.0
    bounds = [(0.0, float(u)) for u in cap] + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"master LP failed: {res.message}")
    weights = np.clip(-res.ineqlin.marginals, 0.0, None)
    if weights.sum() > 0:
        weights = weights / weights.sum()
    return np.clip(res.x[:T], 0.0, cap), float(res.x[-1]), weights


def _center(cuts_a, cuts_g, cap, level: float):
    """Chebyshev center of {lam in box : every cut <= level}, or None."""
    T = len(cap)
    G = np.array(cuts_g).reshape(len(cuts_a), T)
    norms = np.linalg.norm(G, axis=1)
    # variables (lam, r); maximize r
    rows = [np.hstack([G, norms[:, None]])]
    rhs = [level - np.array(cuts_a)]
    eye = np.eye(T)
    rows.append(np.hstack([-eye, np.ones((T, 1))]))  # r <= lam_t
    rhs.append(np.zeros(T))
    rows.append(np.hstack([eye, np.ones((T, 1))]))  # lam_t + r <= cap_t
    rhs.append(np.asarray(cap, dtype=float))
    c = np.zeros(T + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs),
                  bounds=[(0.0, float(u)) for u in cap] + [(0.0, None)], method="highs")
    if res.status != 0:
        return None
    return np.clip(res.x[:T], 0.0, cap)


def minimize_dual(C: np.ndarray, A: np.ndarray, rhs: np.ndarray, *, nu: float, epsilon: float,
                  max_iters: int = 5000, tolerance: float = 1e-9,
                  lambda_cap: float | np.ndarray | None = None,
                  oracle: str = "auto", center: bool = True) -> DualSolveReport:
    """Cutting-plane minimization of the dual function over ``0 <= lam <= cap``."""
    T = A.shape[1]
    problem = _Problem(C, A, rhs, oracle)
    if T == 0:
        value, reward, _, rewards, delivered = problem.evaluate(np.zeros(0))
        return DualSolveReport(
            prices=DualPrices(()), dual_value=value, best_primal_bound=reward, gap=0.0,
            iterations=1, binding=(), converged=True, likely_infeasible=False, nu=nu,
            epsilon=epsilon, lambda_cap=np.zeros(0), rhs=rhs, history=[value],
            session_reward=rewards, session_delivered=delivered)

    cap = default_lambda_cap(C, A) if lambda_cap is None else np.broadcast_to(
        np.asarray(lambda_cap, dtype=float), (T,)).copy()

    cuts_a: list[float] = []
    cuts_g: list[np.ndarray] = []
    per_session: list[tuple[np.ndarray, np.ndarray]] = []
    history: list[float] = []

    def add_cut(lam):
        value, reward, delivered, rewards, deliv = problem.evaluate(lam)
        cuts_a.append(reward)
        cuts_g.append(delivered - rhs)
        per_session.append((rewards, deliv))
        return value

    lam = np.zeros(T)
    best_lam, best_value = lam, add_cut(lam)
    history.append(best_value)
    lower = -np.inf
    weights = np.ones(1)
    converged = False
    iterations = 1
    while iterations < max_iters:
        scale = max(1.0, abs(best_value))
        lam, lower, weights = _solve_master(cuts_a, cuts_g, cap)
        if best_value - lower <= tolerance * scale:
            converged = True
            break
        value = add_cut(lam)
        iterations += 1
        if value < best_value:
            best_lam, best_value = lam, value
        history.append(best_value)
    else:
        lam, lower, weights = _solve_master(cuts_a, cuts_g, cap)
        logger.warning("dual solve stopped at max_iters=%d with gap %.3g",
                       max_iters, best_value - lower)

    if center:
        # Prefer a point deep inside the optimal face: serving decisions made
        # there are tie-free whenever the face has interior.
        level = best_value + 1e-9 * max(1.0, abs(best_value))
        for _ in range(50):
            mid = _center(cuts_a, cuts_g, cap, level)
            if mid is None:
                break
            value = add_cut(mid)
            if value <= level:
                best_lam, best_value = mid, value
                break
            level = best_value + 1e-9 * max(1.0, abs(best_value))
    _, lower_final, weights = _solve_master(cuts_a, cuts_g, cap)
    lower = max(lower, lower_final)

    likely_infeasible = bool((best_lam >= cap * (1 - 1e-6)).any())
    session_reward = sum(w * r for w, (r, _) in zip(weights, per_session) if w > 0)
    session_delivered = sum(w * d for w, (_, d) in zip(weights, per_session) if w > 0)
    mix_delivered = session_delivered.sum(axis=0)
    slack_tol = 1e-6 * np.maximum(1.0, np.abs(rhs))
    binding = tuple(bool(abs(x - r) <= s) for x, r, s in zip(mix_delivered, rhs, slack_tol))
    # the mixture is a doubly stochastic primal point; it bounds the optimum
    # from below only if it meets every target
    mix_feasible = bool((mix_delivered >= rhs - slack_tol).all())
    primal_bound = float(session_reward.sum()) if mix_feasible else -np.inf
    return DualSolveReport(
        prices=DualPrices(tuple(best_lam)), dual_value=best_value,
        best_primal_bound=primal_bound, gap=best_value - lower, iterations=iterations,
        binding=binding, converged=converged, likely_infeasible=likely_infeasible,
        nu=nu, epsilon=epsilon, lambda_cap=cap, rhs=rhs, history=history,
        session_reward=session_reward, session_delivered=session_delivered)


def solve_sampled_dual(sessions: Sequence[SessionInstance], spec: ConstraintSpec,
                       cfg: SampledLpConfig = SampledLpConfig()) -> DualSolveReport:
    """Prices from the sampled LP: targets shrunk to ``nu * epsilon * b``."""
    C, A = stack_sessions(sessions)
    if A.shape[1] != spec.T:
        raise InvalidInputError(f"sessions carry {A.shape[1]} constraints, spec has {spec.T}")
    if cfg.epsilon > 1 / 3:
        logger.warning("epsilon=%.3g is outside the (0, 1/3] regime of the guarantees", cfg.epsilon)
    expected = math.ceil(cfg.epsilon * spec.horizon - 1e-9)
    if len(sessions) != expected:
        logger.info("sample has %d sessions; epsilon * n rounds to %d", len(sessions), expected)
    nu = cfg.safety
    rhs = nu * cfg.epsilon * spec.b
    report = minimize_dual(C, A, rhs, nu=nu, epsilon=cfg.epsilon, max_iters=cfg.max_iters,
                           tolerance=cfg.tolerance, lambda_cap=cfg.lambda_cap, oracle=cfg.oracle)
    if report.likely_infeasible:
        logger.warning("sampled LP looks infeasible: prices hit the cap %s", report.lambda_cap)
    return report


def solve_hindsight(sessions: Sequence[SessionInstance], spec: ConstraintSpec,
                    cfg: SampledLpConfig | None = None) -> DualSolveReport:
    """Full-information LP over every session with unscaled targets."""
    cfg = cfg or SampledLpConfig()
    C, A = stack_sessions(sessions)
    if A.shape[1] != spec.T:
        raise InvalidInputError(f"sessions carry {A.shape[1]} constraints, spec has {spec.T}")
    return minimize_dual(C, A, spec.b.copy(), nu=1.0, epsilon=1.0, max_iters=cfg.max_iters,
                         tolerance=cfg.tolerance, lambda_cap=cfg.lambda_cap, oracle=cfg.oracle)


# -- prices file ------------------------------------------------------------

def prices_to_json(prices: DualPrices, names: Sequence[str], **metadata) -> dict:
    if len(names) != len(prices):
        raise InvalidInputError(f"{len(names)} names for {len(prices)} prices")
    out = {name: lam for name, lam in zip(names, prices.lam)}
    out["metadata"] = metadata
    return out


def prices_from_json(obj: dict, names: Sequence[str]) -> DualPrices:
    missing = [n for n in names if n not in obj]
    if missing:
        raise InvalidInputError(f"prices file lacks constraints {missing}")
    return DualPrices(tuple(float(obj[n]) for n in names))


def save_prices(path, report_or_prices, names: Sequence[str], **metadata) -> None:
    if isinstance(report_or_prices, DualSolveReport):
        obj = report_or_prices.prices_json(names)
    else:
        obj = prices_to_json(report_or_prices, names, **metadata)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_prices(path, names: Sequence[str]) -> DualPrices:
    return prices_from_json(json.loads(Path(path).read_text()), names)
