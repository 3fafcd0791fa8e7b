"""Synthetic sessions under a reference-CTR position model, plus stream I/O.

A document's engagement in slot ``p`` is its slot-1 value times ``ref[p]``
(``ref[0] == 1``). Dwell-time, clicks and newsiness share the curve, so every
session matrix is a rank-one outer product ``attribute ⊗ ref``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from trafficshape.errors import InvalidInputError, SchemaError
from trafficshape.lp_dual import ConstraintSpec
from trafficshape.matching import assign_batch, gather
from trafficshape.session import SessionInstance, stack_sessions

logger = logging.getLogger(__name__)

CONSTRAINT_KINDS = ("publisher_a", "publisher_b", "newsiness")
_PUBLISHER_INDEX = {"publisher_a": 0, "publisher_b": 1}

_MAIN_STREAM, _PILOT_STREAM = 0, 1


@dataclass(frozen=True)
class DocumentProfile:
    dwell: float
    ctr: float
    news: float
    publisher_flags: tuple[bool, ...] = (False, False)

    def __post_init__(self):
        if not (math.isfinite(self.dwell) and self.dwell >= 0):
            raise InvalidInputError(f"dwell must be finite and >= 0, got {self.dwell}")
        for name in ("ctr", "news"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class RefCtrCurve:
    ref: tuple[float, ...]

    def __post_init__(self):
        ref = tuple(float(r) for r in self.ref)
        if not ref or ref[0] != 1.0:
            raise InvalidInputError("reference curve must start at exactly 1")
        if any(not math.isfinite(r) or r < 0 for r in ref):
            raise InvalidInputError("reference curve entries must be finite and >= 0")
        object.__setattr__(self, "ref", ref)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.ref)

    def __len__(self):
        return len(self.ref)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["position", "ref"])
            for p, r in enumerate(self.ref, start=1):
                writer.writerow([p, repr(r)])


def default_curve(m: int = 20) -> RefCtrCurve:
    """Decaying slot weights with a bump at slots 5-6 (not monotone)."""
    p = np.arange(m)
    ref = 1.0 / (1.0 + 0.45 * p)
    ref[(p == 4) | (p == 5)] *= 1.4
    return RefCtrCurve(tuple(ref))


@dataclass(frozen=True)
class GeneratorConfig:
    """Everything needed to draw a reproducible synthetic stream."""

    m: int = 20
    n: int = 2000
    seed: int = 0
    dwell_mu: float = 0.0
    dwell_sigma: float = 0.5
    dwell_max: float | None = None  # None: exp(mu + 3 sigma)
    ctr_a: float = 2.0
    ctr_b: float = 18.0
    news_a: float = 2.0
    news_b: float = 5.0
    publisher_probs: tuple[float, ...] = (0.25, 0.20)
    curve: tuple[float, ...] | None = None
    constraints: tuple[str, ...] = CONSTRAINT_KINDS
    newsiness_mode: str = "total"  # or "average": target is a per-session mean
    # per-session target: fraction * d0 + lift * (dmax - d0), with d0 the
    # price-free delivery and dmax the best delivery for that constraint alone
    target_fraction: float = 1.0
    target_lift: float = 0.3
    pilot_sessions: int = 1000
    calibration_seed: int | None = None  # None: reuse `seed`

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise InvalidInputError("m and n must be >= 1")
        if self.curve is not None and len(self.curve) != self.m:
            raise InvalidInputError(f"curve has {len(self.curve)} entries, m = {self.m}")
        unknown = [c for c in self.constraints if c not in CONSTRAINT_KINDS]
        if unknown:
            raise InvalidInputError(f"unknown constraint kinds {unknown}; choose from {CONSTRAINT_KINDS}")
        if self.newsiness_mode not in ("total", "average"):
            raise InvalidInputError(f"newsiness_mode must be 'total' or 'average'")
        if len(self.publisher_probs) < 2 or not all(0 <= q <= 1 for q in self.publisher_probs):
            raise InvalidInputError("publisher_probs needs two probabilities in [0, 1]")
        if self.dwell_sigma < 0 or min(self.ctr_a, self.ctr_b, self.news_a, self.news_b) <= 0:
            raise InvalidInputError("distribution parameters out of range")
        if self.target_fraction < 0 or self.target_lift < 0 or self.pilot_sessions < 1:
            raise InvalidInputError("target_fraction, target_lift must be >= 0; pilot_sessions >= 1")

    @property
    def ref_curve(self) -> RefCtrCurve:
        return RefCtrCurve(self.curve) if self.curve is not None else default_curve(self.m)

    @property
    def dwell_cap(self) -> float:
        if self.dwell_max is not None:
            return float(self.dwell_max)
        return math.exp(self.dwell_mu + 3 * self.dwell_sigma)

    @property
    def bounds(self) -> dict[str, float]:
        """Upper bound ``U`` on any permutation's total, per matrix kind."""
        total_ref = float(self.ref_curve.array.sum())
        out = {"engagement": self.dwell_cap * total_ref}
        for kind in self.constraints:
            scale = 1.0 / self.n if kind == "newsiness" and self.newsiness_mode == "average" else 1.0
            out[kind] = total_ref * scale
        return out

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise InvalidInputError(f"unknown generator config keys {sorted(unknown)}")
        obj = dict(obj)
        for key in ("publisher_probs", "curve", "constraints"):
            if obj.get(key) is not None:
                obj[key] = tuple(obj[key])
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "GeneratorConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


# -- session construction ---------------------------------------------------

def _constraint_rows(kind: str, ctr, news, flags, news_scale: float) -> np.ndarray:
    if kind == "newsiness":
        return news * news_scale
    return ctr * flags[..., _PUBLISHER_INDEX[kind]]


def _matrices(dwell, ctr, news, flags, ref, constraints, news_scale):
    """Vectorized over leading axes: doc arrays (..., m) -> C (..., m, m), A (..., T, m, m)."""
    C = dwell[..., :, None] * ref
    rows = [_constraint_rows(kind, ctr, news, flags, news_scale) for kind in constraints]
    if rows:
        A = np.stack(rows, axis=-2)[..., :, :, None] * ref
    else:
        A = np.zeros(C.shape[:-2] + (0,) + C.shape[-2:])
    return C, A


def build_session(docs: Sequence[DocumentProfile], curve: RefCtrCurve,
                  constraints: Sequence[str] = CONSTRAINT_KINDS, session_id: int = 0,
                  news_scale: float = 1.0) -> SessionInstance:
    """Session matrices for one list of documents.

    ``C[d, p] = dwell(d) ref[p]``; publisher constraints use
    ``ctr(d) ref[p]`` on rows the publisher curates; newsiness uses
    ``news(d) ref[p]``.
    """
    if len(docs) != len(curve):
        raise InvalidInputError(f"{len(docs)} documents for a {len(curve)}-slot curve")
    for kind in constraints:
        if kind not in CONSTRAINT_KINDS:
            raise InvalidInputError(f"unknown constraint kind {kind!r}")
    dwell = np.array([d.dwell for d in docs])
    ctr = np.array([d.ctr for d in docs])
    news = np.array([d.news for d in docs])
    width = max(2, max(len(d.publisher_flags) for d in docs))
    flags = np.zeros((len(docs), width))
    for i, d in enumerate(docs):
        flags[i, :len(d.publisher_flags)] = d.publisher_flags
    C, A = _matrices(dwell, ctr, news, flags, curve.array, constraints, news_scale)
    return SessionInstance(session_id, C, A)


def _session_rng(seed: int, stream: int, k: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, k]))


def _draw_documents(cfg: GeneratorConfig, seed: int, stream: int, n: int):
    m, P = cfg.m, len(cfg.publisher_probs)
    dwell = np.empty((n, m))
    ctr = np.empty((n, m))
    news = np.empty((n, m))
    flags = np.empty((n, m, P))
    for k in range(n):
        rng = _session_rng(seed, stream, k)
        dwell[k] = np.minimum(rng.lognormal(cfg.dwell_mu, cfg.dwell_sigma, m), cfg.dwell_cap)
        ctr[k] = rng.beta(cfg.ctr_a, cfg.ctr_b, m)
        news[k] = rng.beta(cfg.news_a, cfg.news_b, m)
        flags[k] = rng.random((m, P)) < np.asarray(cfg.publisher_probs)
    return dwell, ctr, news, flags


def _news_scale(cfg: GeneratorConfig) -> float:
    return 1.0 / cfg.n if cfg.newsiness_mode == "average" else 1.0


def _generate(cfg: GeneratorConfig, seed: int, stream: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    dwell, ctr, news, flags = _draw_documents(cfg, seed, stream, n)
    return _matrices(dwell, ctr, news, flags, cfg.ref_curve.array, cfg.constraints,
                     _news_scale(cfg))


def generate_stream(cfg: GeneratorConfig) -> list[SessionInstance]:
    """i.i.d. sessions; session ``k`` draws from its own RNG substream of ``seed``."""
    C, A = _generate(cfg, cfg.seed, _MAIN_STREAM, cfg.n)
    return [SessionInstance(k, C[k], A[k]) for k in range(cfg.n)]


def calibrate_targets(cfg: GeneratorConfig) -> ConstraintSpec:
    """Targets from a pilot stream drawn independently of the main one.

    Per session, let ``d0`` be the mean delivery of the price-free ranking and
    ``dmax`` the mean of the best achievable delivery for that constraint
    alone. The target is ``n * (fraction * d0 + lift * (dmax - d0))``.
    """
    seed = cfg.seed if cfg.calibration_seed is None else cfg.calibration_seed
    C, A = _generate(cfg, seed, _PILOT_STREAM, cfg.pilot_sessions)
    T = A.shape[1]
    if T == 0:
        return ConstraintSpec((), cfg.n, ())
    base = gather(A, assign_batch(C, "auto")).mean(axis=0)
    best = np.array([gather(A[:, t], assign_batch(A[:, t], "auto")).mean() for t in range(T)])
    per_session = cfg.target_fraction * base + cfg.target_lift * (best - base)
    return ConstraintSpec(tuple(cfg.n * per_session), cfg.n, cfg.constraints)


def generate_corpus(cfg: GeneratorConfig) -> tuple[list[SessionInstance], ConstraintSpec]:
    return generate_stream(cfg), calibrate_targets(cfg)


def analytic_identity_delivery(cfg: GeneratorConfig) -> np.ndarray:
    """Expected per-session ``<A_t, I>`` under the configured distributions."""
    ref_total = float(cfg.ref_curve.array.sum())
    ctr_mean = cfg.ctr_a / (cfg.ctr_a + cfg.ctr_b)
    news_mean = cfg.news_a / (cfg.news_a + cfg.news_b)
    out = []
    for kind in cfg.constraints:
        if kind == "newsiness":
            out.append(news_mean * ref_total * _news_scale(cfg))
        else:
            out.append(ctr_mean * cfg.publisher_probs[_PUBLISHER_INDEX[kind]] * ref_total)
    return np.array(out)


# -- stream files -----------------------------------------------------------

def session_to_json(session: SessionInstance) -> dict:
    return {"id": session.id, "m": session.m, "C": session.C.tolist(), "A": session.A.tolist()}


def save_stream(path, sessions: Iterable[SessionInstance]) -> None:
    with open(path, "w") as fh:
        for s in sessions:
            fh.write(json.dumps(session_to_json(s), allow_nan=False) + "\n")


def _matrix(value, m: int, line: int, name: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"not a numeric matrix ({exc})", line, name) from None
    if arr.shape != (m, m):
        raise SchemaError(f"expected shape ({m}, {m}), got {arr.shape}", line, name)
    if not np.isfinite(arr).all():
        raise SchemaError("non-finite entry", line, name)
    return arr


def session_from_json(obj, line: int | None = None) -> SessionInstance:
    if not isinstance(obj, dict):
        raise SchemaError("session must be a JSON object", line)
    for key in ("id", "m", "C", "A"):
        if key not in obj:
            raise SchemaError("missing field", line, key)
    m = obj["m"]
    if not isinstance(m, int) or isinstance(m, bool) or m < 1:
        raise SchemaError(f"m must be a positive integer, got {m!r}", line, "m")
    if not isinstance(obj["id"], int) or isinstance(obj["id"], bool):
        raise SchemaError(f"id must be an integer, got {obj['id']!r}", line, "id")
    C = _matrix(obj["C"], m, line, "C")
    if not isinstance(obj["A"], list):
        raise SchemaError("A must be a list of matrices", line, "A")
    A = [_matrix(a, m, line, f"A[{t}]") for t, a in enumerate(obj["A"])]
    return SessionInstance(obj["id"], C, np.array(A) if A else np.zeros((0, m, m)))


def _reject_constant(token):
    raise ValueError(f"non-finite number {token}")


def load_stream(path) -> list[SessionInstance]:
    sessions = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw, parse_constant=_reject_constant)
            except ValueError as exc:
                raise SchemaError(f"invalid JSON ({exc})", lineno) from None
            sessions.append(session_from_json(obj, lineno))
    if sessions:
        try:
            stack_sessions(sessions)
        except InvalidInputError as exc:
            raise SchemaError(str(exc)) from None
    return sessions
