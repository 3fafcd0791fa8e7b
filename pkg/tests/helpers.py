"""Small instance builders and exhaustive oracles shared by the tests."""

import itertools

import numpy as np

from trafficshape.lp_dual import ConstraintSpec
from trafficshape.session import SessionInstance


def random_sessions(rng, n, m, T, integer=False):
    out = []
    for k in range(n):
        if integer:
            C = rng.integers(0, 10, size=(m, m)).astype(float)
            A = rng.integers(0, 10, size=(T, m, m)).astype(float)
        else:
            C = rng.random((m, m))
            A = rng.random((T, m, m))
        out.append(SessionInstance(k, C, A))
    return out


def all_perms(m):
    return list(itertools.permutations(range(m)))


def deliverable_range(sessions, t):
    """(min, max) over permutations of total <A_t, P>, summed over sessions."""
    lo = hi = 0.0
    for s in sessions:
        vals = [s.delivered(p)[t] for p in all_perms(s.m)]
        lo += min(vals)
        hi += max(vals)
    return lo, hi


def grid_dual(sessions, rhs, grid):
    """Dual function of a T = 1 problem on a grid, by enumerating permutations."""
    perms = all_perms(sessions[0].m)
    rewards = np.array([[s.reward(p) for p in perms] for s in sessions])
    deliv = np.array([[s.delivered(p)[0] for p in perms] for s in sessions])
    vals = (rewards[None] + grid[:, None, None] * deliv[None]).max(axis=2).sum(axis=1)
    return vals - grid * rhs


def enumerate_integer_optimum(sessions, b):
    """Best feasible tuple of permutations (value, tuple) or (-inf, None)."""
    perms = all_perms(sessions[0].m)
    best, arg = -np.inf, None
    for combo in itertools.product(perms, repeat=len(sessions)):
        delivered = sum(s.delivered(p) for s, p in zip(sessions, combo))
        if (delivered >= np.asarray(b) - 1e-12).all():
            value = sum(s.reward(p) for s, p in zip(sessions, combo))
            if value > best:
                best, arg = value, combo
    return best, arg


def spec_for(targets, n, names=None):
    return ConstraintSpec(tuple(targets), n, tuple(names or ()))
