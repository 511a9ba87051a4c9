"""Closed-form steady-state in-degree distribution of the attractiveness model.

Three constructions of the same limit ``P(q)`` are provided:

* :func:`steady_recurrence` builds a whole distribution from ``P(0)`` through
  the ratio ``P(q) / P(q-1) = m (q + A - 1) / (m (q + A + 1) + A)``;
* :func:`steady_gamma` evaluates the gamma-function closed form at any ``q``
  (log-gamma differences and a single exponential, safe up to ``q ~ 1e6``);
* :func:`steady_ba_special` is the rational formula for ``A = m``.

:func:`stationarity_residual` evaluates the stationary master equation and is
used as a test oracle for all of them.
"""
from __future__ import annotations

import math
import warnings

import numpy as np

from .distribution import DegreeDistribution
from .model import DomainError, ModelParams


class DegenerateModelWarning(UserWarning):
    """The parameters make the stationary distribution degenerate (A = 0)."""


# Bernoulli-number coefficients B_2k / (2k (2k - 1)) of the Stirling series.
_STIRLING = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)
_STIRLING_MIN_X = 16.0


def _stirling_tail(z):
    zi = 1.0 / z
    zi2 = zi * zi
    acc = np.zeros_like(z)
    for coef in reversed(_STIRLING):
        acc = acc * zi2 + coef
    return acc * zi


def log_gamma_ratio(x, c):
    """``log Gamma(x + c) - log Gamma(x)`` for ``x > 0``, ``c >= 0``.

    Evaluated as a difference of Stirling expansions (after shifting small
    ``x`` upward with the recurrence ``Gamma(x+1) = x Gamma(x)``) so the two
    large log-gamma values never cancel against each other.
    """
    x = np.asarray(x, dtype=float)
    c = float(c)
    if np.any(x <= 0) or c < 0:
        raise DomainError("log_gamma_ratio needs x > 0 and c >= 0")
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    correction = np.zeros_like(x)
    while True:
        small = x < _STIRLING_MIN_X
        if not small.any():
            break
        correction[small] += np.log1p(c / x[small])
        x[small] += 1.0
    res = ((x - 0.5) * np.log1p(c / x) + c * np.log(x + c) - c
           + _stirling_tail(x + c) - _stirling_tail(x))
    res -= correction
    return float(res[0]) if scalar else res


def p_zero(p: ModelParams) -> float:
    """Limit of the fraction of nodes with no incoming link.

    ``(m + A) / (m + A + m A)``; it does not depend on the initial network.
    For ``A = 0`` the value is 1 and a :class:`DegenerateModelWarning` is
    emitted.
    """
    if p.A == 0:
        warnings.warn("A = 0: steady state is degenerate, P(0) = 1",
                      DegenerateModelWarning, stacklevel=2)
        return 1.0
    return (p.m + p.A) / (p.m + p.A + p.m * p.A)


def recurrence_ratios(p: ModelParams, q_max: int) -> np.ndarray:
    """``P(q) / P(q - 1)`` for ``q = 1..q_max``."""
    q = np.arange(1, q_max + 1, dtype=float)
    return p.m * (q + p.A - 1.0) / (p.m * (q + p.A + 1.0) + p.A)


def steady_recurrence(p: ModelParams, q_max: int) -> DegreeDistribution:
    """Steady-state masses on ``0..q_max`` built by the ratio recurrence."""
    p.require_positive_A("steady_recurrence")
    if q_max < 0:
        raise DomainError(f"q_max must be >= 0, got {q_max}")
    mass = np.empty(q_max + 1)
    mass[0] = p_zero(p)
    mass[1:] = mass[0] * np.cumprod(recurrence_ratios(p, q_max))
    tail = 1.0 - math.fsum(mass)
    return DegreeDistribution.from_dense(mass, tail_mass=max(tail, 0.0),
                                         params=p.to_dict())


def _log_prefactor(p: ModelParams) -> float:
    # log of ((m + A) / m) * Gamma(A + a + 1) / Gamma(A)
    return math.log1p(p.a) + log_gamma_ratio(p.A, p.a + 1.0)


def steady_gamma(p: ModelParams, q):
    """Gamma-function closed form of ``P(q)``; ``q`` may be an array."""
    p.require_positive_A("steady_gamma")
    q = np.asarray(q)
    if np.any(q < 0):
        raise DomainError("q must be >= 0")
    logp = np.asarray(_log_prefactor(p) - log_gamma_ratio(q + p.A, 2.0 + p.a))
    return np.exp(logp) if logp.ndim else float(np.exp(logp))


def steady_gamma_distribution(p: ModelParams, q_max: int) -> DegreeDistribution:
    """:func:`steady_gamma` evaluated on ``0..q_max`` as a distribution."""
    if q_max < 0:
        raise DomainError(f"q_max must be >= 0, got {q_max}")
    mass = np.atleast_1d(steady_gamma(p, np.arange(q_max + 1)))
    tail = 1.0 - math.fsum(mass)
    return DegreeDistribution.from_dense(mass, tail_mass=max(tail, 0.0),
                                         params=p.to_dict())


def steady_ba_special(m: int, q):
    """``2 m (m + 1) / ((q + m)(q + m + 1)(q + m + 2))``, the ``A = m`` case."""
    if m < 1:
        raise DomainError(f"m must be >= 1, got {m}")
    q = np.asarray(q, dtype=float)
    val = 2.0 * m * (m + 1) / ((q + m) * (q + m + 1) * (q + m + 2))
    return val if val.ndim else float(val)


def steady_ba_distribution(m: int, q_max: int) -> DegreeDistribution:
    mass = np.atleast_1d(steady_ba_special(m, np.arange(q_max + 1)))
    return DegreeDistribution.from_dense(mass, tail_mass=max(1.0 - math.fsum(mass), 0.0),
                                         params={"m": m, "A": float(m)})


def tail_exponent(p: ModelParams) -> float:
    """Power-law exponent ``gamma = 2 + A / m`` of the large-``q`` tail."""
    p.require_positive_A("tail_exponent")
    return 2.0 + p.a


def tail_amplitude(p: ModelParams) -> float:
    """Constant ``C`` in ``P(q) ~ C q^-gamma``."""
    p.require_positive_A("tail_amplitude")
    return math.exp(_log_prefactor(p))


def stationarity_residual(d: DegreeDistribution, p: ModelParams, q: int) -> float:
    """Left minus right side of the stationary master equation at ``q``.

    ``(1 + a) P(q) + (q + m a) P(q) - (q - 1 + m a) P(q - 1) - (1 + a) [q == 0]``
    with ``P(-1) = 0``.  Vanishes (to rounding) for the steady state.
    """
    a = p.a
    ma = p.A
    pq = d[q]
    prev = d[q - 1] if q > 0 else 0.0
    rhs = (1.0 + a) if q == 0 else 0.0
    return (1.0 + a) * pq + (q + ma) * pq - (q - 1 + ma) * prev - rhs
