"""Max-weight perfect matching on square weight matrices.

Three solvers share one output type:

* ``hungarian_max_weight`` is exact and returns dual potentials that certify
  optimality (feasible, tight on chosen edges, equal objective).
* ``greedy_matching`` takes edges in decreasing weight order. It is a
  1/2-approximation in general and exact when the weights are a nonnegative
  rank-one outer product.
* ``brute_force_matching`` enumerates all permutations (test oracle).

Weights may be arbitrary finite reals. Ties are always broken toward the
lowest index so every call is reproducible.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from trafficshape.errors import InvalidInputError, SizeLimitError

#: slack allowed in dual feasibility checks (scaled by max(1, max|W|))
FEASIBILITY_TOL = 1e-9
#: tolerance for equality checks: strong duality, tight edges
EQUALITY_TOL = 1e-7

BRUTE_FORCE_MAX_M = 8


@dataclass(frozen=True)
class Assignment:
    """``sigma[d]`` is the slot given to document ``d``; ``value`` the matched weight."""

    sigma: tuple[int, ...]
    value: float

    @property
    def m(self) -> int:
        return len(self.sigma)

    def permutation_matrix(self) -> np.ndarray:
        P = np.zeros((self.m, self.m))
        P[np.arange(self.m), self.sigma] = 1.0
        return P


@dataclass(frozen=True)
class MatchingCertificate:
    """Row potentials ``alpha`` and column potentials ``beta``.

    Convention: ``alpha[i] + beta[j] >= W[i, j]`` for every edge, so
    ``sum(alpha) + sum(beta)`` upper-bounds every perfect matching.
    """

    alpha: np.ndarray
    beta: np.ndarray

    @property
    def bound(self) -> float:
        return float(self.alpha.sum() + self.beta.sum())


def as_weight_matrix(W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] < 1:
        raise InvalidInputError(f"weight matrix must be square and non-empty, got shape {W.shape}")
    if not np.isfinite(W).all():
        raise InvalidInputError("weight matrix has non-finite entries")
    return W


def matching_value(W: np.ndarray, sigma) -> float:
    return float(W[np.arange(W.shape[0]), np.asarray(sigma)].sum())


def _min_cost_assignment(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest-augmenting-path Hungarian method on a nonnegative cost matrix.

    Returns (col_of_row, u, v) with ``u[i] + v[j] <= cost[i, j]`` and equality on
    the assignment. Arrays are 1-based internally; index 0 is a sentinel column.
    """
    m = cost.shape[0]
    u = np.zeros(m + 1)
    v = np.zeros(m + 1)
    u[1:] = cost.min(axis=1)  # row reduction keeps the potentials feasible
    row_of_col = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)

    for i in range(1, m + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1

    col_of_row = np.empty(m, dtype=np.int64)
    col_of_row[row_of_col[1:] - 1] = np.arange(m)
    return col_of_row, u[1:], v[1:]


def hungarian_max_weight(W) -> tuple[Assignment, MatchingCertificate]:
    """Maximum-weight perfect matching with an optimality certificate.

    The weights are mapped to costs ``max(W) - W`` (nonnegative, so negative
    weights need no special care), solved as a min-cost assignment, and the
    potentials mapped back. Runs in O(m^3).
    """
    W = as_weight_matrix(W)
    top = float(W.max())
    sigma, u, v = _min_cost_assignment(top - W)
    alpha = top - u
    beta = -v
    assignment = Assignment(tuple(int(j) for j in sigma), matching_value(W, sigma))
    return assignment, MatchingCertificate(alpha, beta)


def check_certificate(W, assignment: Assignment, cert: MatchingCertificate,
                      feas_tol: float = FEASIBILITY_TOL, eq_tol: float = EQUALITY_TOL) -> dict:
    """Evaluate the three optimality conditions; returns the worst violations.

    Keys ``feasible``, ``strong_duality``, ``tight`` hold booleans; the
    ``*_violation`` keys hold the raw magnitudes.
    """
    W = as_weight_matrix(W)
    scale = max(1.0, float(np.abs(W).max()))
    m = W.shape[0]
    sigma = np.asarray(assignment.sigma)
    slack = cert.alpha[:, None] + cert.beta[None, :] - W
    feas_violation = max(0.0, -float(slack.min()))
    duality_violation = abs(cert.bound - assignment.value)
    tight_violation = float(np.abs(slack[np.arange(m), sigma]).max())
    value_violation = abs(assignment.value - matching_value(W, sigma))
    return {
        "feasible": feas_violation <= feas_tol * scale,
        "strong_duality": duality_violation <= eq_tol * scale,
        "tight": tight_violation <= eq_tol * scale,
        "value_consistent": value_violation <= FEASIBILITY_TOL * scale,
        "feasibility_violation": feas_violation,
        "duality_violation": duality_violation,
        "tight_violation": tight_violation,
    }


def greedy_matching(W) -> Assignment:
    """Scan edges by decreasing weight, keeping each one that still fits.

    Equal weights are visited by (row, column) ascending.
    """
    W = as_weight_matrix(W)
    m = W.shape[0]
    order = np.argsort(-W.ravel(), kind="stable")
    sigma = np.full(m, -1, dtype=np.int64)
    col_used = np.zeros(m, dtype=bool)
    placed = 0
    for flat in order:
        r, c = divmod(int(flat), m)
        if sigma[r] >= 0 or col_used[c]:
            continue
        sigma[r] = c
        col_used[c] = True
        placed += 1
        if placed == m:
            break
    return Assignment(tuple(int(j) for j in sigma), matching_value(W, sigma))


def rank_one_matching(doc_scores, slot_weights) -> np.ndarray:
    """Optimal matching for ``W = outer(doc_scores, slot_weights)`` with both >= 0.

    Best document goes to the heaviest slot, and so on down both orders.
    """
    s = np.asarray(doc_scores, dtype=float)
    r = np.asarray(slot_weights, dtype=float)
    sigma = np.empty(len(s), dtype=np.int64)
    sigma[np.argsort(-s, kind="stable")] = np.argsort(-r, kind="stable")
    return sigma


def brute_force_matching(W) -> Assignment:
    """Exact maximum over all m! permutations; first maximum in lexicographic order wins."""
    W = as_weight_matrix(W)
    m = W.shape[0]
    if m > BRUTE_FORCE_MAX_M:
        raise SizeLimitError(f"brute force limited to m <= {BRUTE_FORCE_MAX_M}, got m={m}")
    rows = np.arange(m)
    best_sigma, best_value = None, -np.inf
    for perm in itertools.permutations(range(m)):
        value = float(W[rows, perm].sum())
        if value > best_value:
            best_sigma, best_value = perm, value
    return Assignment(tuple(best_sigma), best_value)


def debug_dump(W, assignment: Assignment, cert: MatchingCertificate | None = None) -> str:
    """JSON snapshot of a matching problem for failure triage."""
    payload = {
        "W": np.asarray(W, dtype=float).tolist(),
        "sigma": list(assignment.sigma),
        "value": assignment.value,
    }
    if cert is not None:
        payload["alpha"] = cert.alpha.tolist()
        payload["beta"] = cert.beta.tolist()
    return json.dumps(payload)


# -- batched helpers used by the dual solver and the engine -----------------

MATCHERS = ("hungarian", "greedy", "auto")


def _rank_one_mask(S: np.ndarray, rtol: float = 1e-9) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Detect nonnegative rank-one matrices in a (n, m, m) batch.

    For ``W = outer(s, r)`` with s, r >= 0 the row sums order documents like
    ``s`` and the column sums order slots like ``r``.
    """
    rows = S.sum(axis=2)
    cols = S.sum(axis=1)
    total = rows.sum(axis=1)
    outer = rows[:, :, None] * cols[:, None, :]
    scaled = S * total[:, None, None]
    scale = np.abs(scaled).max(axis=(1, 2))
    err = np.abs(scaled - outer).max(axis=(1, 2))
    ok = (S >= 0).all(axis=(1, 2)) & (total > 0) & (err <= rtol * np.maximum(scale, 1e-300))
    return ok, rows, cols


def assign_batch(S: np.ndarray, matcher: str = "auto") -> np.ndarray:
    """Return sigmas of shape (n, m) for a batch of score matrices.

    ``auto`` sorts rank-one nonnegative sessions and runs the Hungarian method
    on the rest, so it is always exact. ``greedy`` uses the same sort fast
    path, which coincides with the edge-greedy result on rank-one input.
    """
    if matcher not in MATCHERS:
        raise InvalidInputError(f"unknown matcher {matcher!r}; choose from {MATCHERS}")
    S = np.asarray(S, dtype=float)
    n, m, _ = S.shape
    sigmas = np.empty((n, m), dtype=np.int64)
    if matcher == "hungarian":
        for k in range(n):
            sigmas[k] = hungarian_max_weight(S[k])[0].sigma
        return sigmas
    ok, rows, cols = _rank_one_mask(S)
    if ok.any():
        doc_order = np.argsort(-rows[ok], axis=1, kind="stable")
        slot_order = np.argsort(-cols[ok], axis=1, kind="stable")
        fast = np.empty_like(doc_order)
        np.put_along_axis(fast, doc_order, slot_order, axis=1)
        sigmas[ok] = fast
    solve = greedy_matching if matcher == "greedy" else (lambda W: hungarian_max_weight(W)[0])
    for k in np.flatnonzero(~ok):
        sigmas[k] = solve(S[k]).sigma
    return sigmas


def gather(M: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    """Per-session matched weights: ``M`` (n, ..., m, m), sigmas (n, m) -> (n, ...)."""
    n, m = sigmas.shape
    idx = sigmas.reshape((n,) + (1,) * (M.ndim - 3) + (m, 1))
    return np.take_along_axis(M, idx, axis=-1)[..., 0].sum(axis=-1)
