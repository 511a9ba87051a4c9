"""Model parameters and the one-step transition kernel of the network Markov chain.

Every node's in-degree ``q_i(t)`` evolves as a nonhomogeneous Markov chain:
between ``t`` and ``t + 1`` the node receives ``j`` of the ``m`` new links with
probability ``C(m, j) pi^j (1 - pi)^(m - j)`` where
``pi = (q + A) / ((m + A) t)``.  The kernel depends on ``(q, t)`` only, never
on the birth time of the node.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


@dataclass(frozen=True)
class ModelParams:
    """Links per step ``m`` and initial attractiveness ``A``.

    ``A_exact`` is set when ``A`` was given as an exact rational; the
    simulator then runs its weight tree in integer-scaled arithmetic.
    """

    m: int
    A: float
    A_exact: Fraction | None = field(default=None, compare=False)

    def __post_init__(self):
        if isinstance(self.m, bool) or int(self.m) != self.m:
            raise DomainError(f"m must be an integer, got {self.m!r}")
        if self.m < 1:
            raise DomainError(f"m must be >= 1, got {self.m}")
        A = self.A
        if isinstance(A, Fraction):
            object.__setattr__(self, "A_exact", A)
            A = float(A)
        A = float(A)
        if not np.isfinite(A) or A < 0:
            raise DomainError(f"A must be a finite number >= 0, got {self.A!r}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "A", A)
        if self.A_exact is not None and float(self.A_exact) != A:
            raise DomainError("A_exact does not match A")

    @classmethod
    def from_rational(cls, m: int, A: str | Fraction | int) -> "ModelParams":
        """Build parameters with an exact rational ``A`` such as ``"1/2"``."""
        try:
            frac = Fraction(A)
        except (ValueError, ZeroDivisionError) as exc:
            raise DomainError(f"cannot parse rational A from {A!r}") from exc
        if frac < 0:
            raise DomainError(f"A must be >= 0, got {frac}")
        return cls(m=m, A=float(frac), A_exact=frac)

    @property
    def a(self) -> float:
        """The ratio ``A / m``."""
        return self.A / self.m

    def require_positive_A(self, what: str) -> None:
        if self.A <= 0:
            raise DomainError(
                f"{what} requires A > 0 (Gamma(A) diverges at A = 0), got A={self.A}"
            )

    def to_dict(self) -> dict:
        d = {"m": self.m, "A": self.A}
        if self.A_exact is not None:
            d["A_exact"] = str(self.A_exact)
        return d


@dataclass(frozen=True)
class TransitionRow:
    """Distribution of the number of links gained in one step."""

    q: int
    t: int
    probs: np.ndarray

    def __getitem__(self, j):
        return self.probs[j]

    def __len__(self):
        return len(self.probs)


def total_attractiveness(t: int, p: ModelParams) -> float:
    """Sum of ``A + q_s`` over the ``t`` nodes alive at time ``t``."""
    if t < 1:
        raise DomainError(f"t must be >= 1, got {t}")
    return (p.m + p.A) * t


def _check_args(q, t, p: ModelParams) -> None:
    if t < 1:
        raise DomainError(f"t must be >= 1, got {t}")
    if np.any(np.asarray(q) < 0):
        raise DomainError(f"q must be >= 0, got {q}")
    if np.any(np.asarray(q) + p.A > (p.m + p.A) * t):
        raise DomainError(
            f"q + A must not exceed (m + A) t = {(p.m + p.A) * t} (link probability > 1)"
        )


def link_probability(q, t: int, p: ModelParams):
    """Probability that a single new link lands on a node of in-degree ``q``.

    Accepts a scalar or an array of in-degrees.
    """
    _check_args(q, t, p)
    res = (np.asarray(q, dtype=float) + p.A) / ((p.m + p.A) * t)
    return float(res) if np.ndim(res) == 0 else res


def binomial_coefficients(m: int) -> np.ndarray:
    """``C(m, j)`` for ``j = 0..m`` by the multiplicative recurrence."""
    c = np.empty(m + 1)
    c[0] = 1.0
    for j in range(m):
        c[j + 1] = c[j] * (m - j) / (j + 1)
    return c


def gain_probabilities(q, t: int, p: ModelParams) -> np.ndarray:
    """Vectorised kernel: array of shape ``(m + 1, len(q))``.

    Entry ``[j, k]`` is the probability that a node with in-degree ``q[k]`` at
    time ``t`` gains exactly ``j`` links during the step ``t -> t + 1``.
    """
    q = np.atleast_1d(np.asarray(q))
    pi = np.atleast_1d(link_probability(q, t, p))
    return binomial_terms(pi, p.m)


def binomial_terms(pi: np.ndarray, m: int) -> np.ndarray:
    """``C(m, j) pi^j (1 - pi)^(m - j)`` stacked over ``j = 0..m``."""
    pi = np.asarray(pi, dtype=float)
    out = np.empty((m + 1,) + pi.shape)
    coef = binomial_coefficients(m)
    comp = 1.0 - pi
    for j in range(m + 1):
        out[j] = coef[j] * pi**j * comp ** (m - j)
    return out


def transition_row(q: int, t: int, p: ModelParams) -> TransitionRow:
    """One row of the transition kernel, indexed by the number of links gained."""
    probs = gain_probabilities(q, t, p)[:, 0]
    return TransitionRow(q=int(q), t=int(t), probs=probs)
