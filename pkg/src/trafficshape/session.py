from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from trafficshape.errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class SessionInstance:
    """One session: engagement matrix ``C`` and constraint matrices ``A[t]``.

    ``C[d, p]`` is the engagement accrued when document ``d`` sits in slot
    ``p``; ``A[t, d, p]`` the units it delivers toward constraint ``t``.
    """

    id: int
    C: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] < 1:
            raise InvalidInputError(f"session {self.id}: C must be square, got {C.shape}")
        m = C.shape[0]
        A = np.array(self.A, dtype=float)
        if A.size == 0:
            A = np.zeros((0, m, m))
        if A.ndim != 3 or A.shape[1:] != (m, m):
            raise InvalidInputError(
                f"session {self.id}: A must have shape (T, {m}, {m}), got {A.shape}")
        if not (np.isfinite(C).all() and np.isfinite(A).all()):
            raise InvalidInputError(f"session {self.id}: non-finite entries")
        C.setflags(write=False)
        A.setflags(write=False)
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "A", A)

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def T(self) -> int:
        return self.A.shape[0]

    def reward(self, sigma) -> float:
        return float(self.C[np.arange(self.m), np.asarray(sigma)].sum())

    def delivered(self, sigma) -> np.ndarray:
        return self.A[:, np.arange(self.m), np.asarray(sigma)].sum(axis=1)

    def __eq__(self, other):
        if not isinstance(other, SessionInstance):
            return NotImplemented
        return (self.id == other.id and np.array_equal(self.C, other.C)
                and np.array_equal(self.A, other.A))

    __hash__ = None


def stack_sessions(sessions: Sequence[SessionInstance]) -> tuple[np.ndarray, np.ndarray]:
    """Stack sessions into ``C`` of shape (n, m, m) and ``A`` of shape (n, T, m, m)."""
    if not sessions:
        raise InvalidInputError("no sessions")
    m, T = sessions[0].m, sessions[0].T
    for s in sessions:
        if s.m != m or s.T != T:
            raise InvalidInputError(
                f"session {s.id} has (m={s.m}, T={s.T}); expected (m={m}, T={T})")
    C = np.stack([s.C for s in sessions])
    A = np.stack([s.A for s in sessions])
    return C, A
