"""Exact finite-time evolution of the network Markov chain.

Two propagation routes are provided.  The per-node route evolves
``P(., i, t)`` for a single node born at ``i``.  The aggregate route evolves
the network average ``P(q, t) = (1/t) sum_i P(q, i, t)`` directly through

    (t + 1) P(q, t + 1) = t sum_j B_j(q - j, t) P(q - j, t) + [q == 0]

which is legitimate because the one-step kernel ``B_j(q, t)`` does not depend
on the birth time.  The two routes are cross-checked in the test-suite.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .distribution import DegreeDistribution
from .model import DomainError, ModelParams, binomial_terms

DEFAULT_EPS = 1e-12
MAX_EPS = 1e-6
DEFAULT_MAX_SUPPORT = 20_000_000


class SupportLimitError(RuntimeError):
    """The propagated support outgrew the configured memory guard."""


@dataclass(frozen=True)
class AggregateState:
    """Network degree distribution ``P(., t)`` on ``0..len(probs)-1``."""

    t: int
    probs: np.ndarray
    truncated_mass: float = 0.0

    def __getitem__(self, q: int) -> float:
        return float(self.probs[q]) if 0 <= q < self.probs.size else 0.0

    @property
    def total(self) -> float:
        return math.fsum(self.probs)

    def as_dict(self) -> dict[int, float]:
        return {int(q): float(v) for q, v in enumerate(self.probs) if v != 0.0}

    def distribution(self, params: ModelParams | None = None) -> DegreeDistribution:
        return DegreeDistribution.from_dense(
            self.probs, tail_mass=max(1.0 - self.total, 0.0),
            params=None if params is None else {**params.to_dict(), "t": self.t},
            drop_zeros=True)


@dataclass(frozen=True)
class PerNodeState:
    """Distribution ``P(., i, t)`` of the in-degree of node ``i`` at time ``t``."""

    i: int
    t: int
    probs: np.ndarray

    def __getitem__(self, q: int) -> float:
        return float(self.probs[q]) if 0 <= q < self.probs.size else 0.0

    def as_dict(self) -> dict[int, float]:
        return {int(q): float(v) for q, v in enumerate(self.probs) if v != 0.0}

    def distribution(self) -> DegreeDistribution:
        return DegreeDistribution.from_dense(self.probs, drop_zeros=True)


@dataclass(frozen=True)
class FirstPassageTable:
    """``f(q, i, s)`` for ``s = i..T``: probability node ``i`` first reaches ``q`` at ``s``."""

    i: int
    q: int
    values: np.ndarray  # values[k] = f(q, i, i + k)
    t0: int

    def __getitem__(self, s: int) -> float:
        k = s - self.i
        return float(self.values[k]) if 0 <= k < self.values.size else 0.0

    @property
    def horizon(self) -> int:
        return self.i + self.values.size - 1

    @property
    def rows(self) -> dict[tuple[int, int], float]:
        return {(self.q, self.i + k): float(v) for k, v in enumerate(self.values)}


def apply_kernel(probs: np.ndarray, t: int, p: ModelParams) -> np.ndarray:
    """One step ``t -> t + 1`` of the chain applied to a distribution over ``q``.

    The result has ``m`` more entries than the input.
    """
    n = probs.size
    q = np.arange(n, dtype=float)
    pi = (q + p.A) / ((p.m + p.A) * t)
    if n and pi[-1] > 1.0 and probs[-1] != 0.0:
        raise DomainError(f"state q={n - 1} is unreachable at t={t} (link probability > 1)")
    gains = binomial_terms(np.minimum(pi, 1.0), p.m)
    out = np.zeros(n + p.m)
    for j in range(p.m + 1):
        out[j:j + n] += gains[j] * probs
    return out


def init_aggregate(p: ModelParams) -> AggregateState:
    """State at ``t = 1``: a single node holding ``m`` incoming links."""
    probs = np.zeros(p.m + 1)
    probs[p.m] = 1.0
    return AggregateState(t=1, probs=probs, truncated_mass=0.0)


def _truncate(probs: np.ndarray, budget: float) -> tuple[np.ndarray, float]:
    """Drop the longest tail whose mass is at most ``budget``."""
    nz = np.flatnonzero(probs)
    end = nz[-1] + 1 if nz.size else 1
    probs = probs[:end]
    if budget <= 0.0 or probs.size <= 1:
        return probs, 0.0
    tail = np.cumsum(probs[::-1])
    k = int(np.searchsorted(tail, budget, side="right"))  # entries droppable
    k = min(k, probs.size - 1)
    if k == 0:
        return probs, 0.0
    dropped = float(tail[k - 1])
    return probs[:-k], dropped


def step_aggregate(s: AggregateState, p: ModelParams, eps: float = DEFAULT_EPS,
                   max_support: int = DEFAULT_MAX_SUPPORT) -> AggregateState:
    """Advance the network average from ``t`` to ``t + 1``.

    Trailing states are dropped only while the cumulative dropped mass stays
    within ``eps``; otherwise the support is extended.  Previously dropped mass
    is carried forward with weight ``t / (t + 1)`` like every other surviving
    node's mass.
    """
    if s.t < 1:
        raise DomainError(f"state time must be >= 1, got {s.t}")
    t = s.t
    new = apply_kernel(s.probs, t, p)
    new *= t / (t + 1.0)
    new[0] += 1.0 / (t + 1.0)
    carried = s.truncated_mass * (t / (t + 1.0))
    new, dropped = _truncate(new, eps - carried)
    if new.size > max_support:
        raise SupportLimitError(
            f"support reached q_max={new.size - 1} at t={t + 1}, above the guard of {max_support} states")
    return AggregateState(t=t + 1, probs=new, truncated_mass=carried + dropped)


def propagate_aggregate(p: ModelParams, T: int, eps: float = DEFAULT_EPS,
                        checkpoints: Iterable[int] | None = None,
                        max_support: int = DEFAULT_MAX_SUPPORT) -> list[AggregateState]:
    """``P(., t)`` at each checkpoint (default: just ``T``), in increasing ``t``."""
    return list(iter_aggregate(p, T, eps, checkpoints, max_support))


def iter_aggregate(p: ModelParams, T: int, eps: float = DEFAULT_EPS,
                   checkpoints: Iterable[int] | None = None,
                   max_support: int = DEFAULT_MAX_SUPPORT) -> Iterator[AggregateState]:
    """Streaming form of :func:`propagate_aggregate`; only checkpoints are yielded."""
    if T < 1:
        raise DomainError(f"horizon T must be >= 1, got {T}")
    if not (0.0 <= eps <= MAX_EPS):
        raise DomainError(f"eps must lie in [0, {MAX_EPS}], got {eps}")
    wanted = sorted(set(checkpoints)) if checkpoints is not None else [T]
    if wanted and (wanted[0] < 1 or wanted[-1] > T):
        raise DomainError(f"checkpoints must lie in [1, {T}]")
    pending = iter(wanted)
    nxt = next(pending, None)
    state = init_aggregate(p)
    while nxt is not None:
        if state.t == nxt:
            yield state
            nxt = next(pending, None)
            continue
        state = step_aggregate(state, p, eps, max_support)


def _per_node_initial(p: ModelParams, i: int) -> np.ndarray:
    if i == 1:
        probs = np.zeros(p.m + 1)
        probs[p.m] = 1.0
    else:
        probs = np.ones(1)
    return probs


def iter_per_node(p: ModelParams, i: int, T: int) -> Iterator[PerNodeState]:
    """Yield ``P(., i, t)`` for ``t = i..T``."""
    if i < 1:
        raise DomainError(f"birth time i must be >= 1, got {i}")
    if i > T:
        raise DomainError(f"birth time i={i} exceeds horizon T={T}")
    probs = _per_node_initial(p, i)
    t = i
    yield PerNodeState(i, t, probs)
    while t < T:
        probs = apply_kernel(probs, t, p)
        t += 1
        yield PerNodeState(i, t, probs)


def propagate_per_node(p: ModelParams, i: int, T: int, trajectory: bool = False):
    """Exact ``P(., i, T)``; with ``trajectory=True`` the list for ``t = i..T``."""
    states = iter_per_node(p, i, T)
    if trajectory:
        return list(states)
    last = None
    for last in states:
        pass
    return last


def aggregate_from_per_node(p: ModelParams, T: int, workers: int | None = None) -> np.ndarray:
    """``(1/T) sum_i P(., i, T)`` over independent per-node chains.

    Chains may run on several threads; the reduction is ordered by ``i`` so the
    result does not depend on the worker count.
    """
    def run(i):
        return propagate_per_node(p, i, T).probs

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(1, T + 1)))
    else:
        parts = [run(i) for i in range(1, T + 1)]
    out = np.zeros(max(part.size for part in parts))
    for part in parts:
        out[:part.size] += part
    return out / T


def first_passage_time_min(p: ModelParams, i: int, q: int) -> int:
    """Earliest time node ``i`` can hold in-degree ``q``."""
    start = p.m if i == 1 else 0
    return i + max(0, -(-(q - start) // p.m))


def first_passage(p: ModelParams, i: int, q: int, T: int) -> FirstPassageTable:
    """First-passage probabilities ``f(q, i, s)`` for ``s = i..T``.

    For ``s > i``, ``f(q, i, s) = sum_{j=1}^{min(m, q)} B_j(q - j, s - 1) P(q - j, i, s - 1)``:
    degrees never decrease, so entering ``q`` at ``s`` means coming from some
    ``q - j`` with ``1 <= j <= m``.  Node 1 starts at ``q = m``, so
    ``f(m, 1, 1) = 1``.
    """
    if q < 1:
        raise DomainError("q must be >= 1: the birth state is entered at birth, not by passage")
    values = np.zeros(T - i + 1) if T >= i else None
    if values is None:
        raise DomainError(f"birth time i={i} exceeds horizon T={T}")
    prev = None
    for k, state in enumerate(iter_per_node(p, i, T)):
        if k == 0:
            values[0] = 1.0 if (i == 1 and q == p.m) else 0.0
        else:
            s = state.t
            total = 0.0
            for j in range(1, min(p.m, q) + 1):
                src = q - j
                mass = prev[src]
                if mass == 0.0:
                    continue
                pi = (src + p.A) / ((p.m + p.A) * (s - 1))
                total += math.comb(p.m, j) * pi**j * (1.0 - pi) ** (p.m - j) * mass
            values[k] = total
        prev = state
    return FirstPassageTable(i=i, q=q, values=values, t0=first_passage_time_min(p, i, q))


def stay_probability(p: ModelParams, q: int, s: int, t: int) -> float:
    """Probability of gaining no link from ``s`` through ``t``: ``prod_{j=s}^{t-1} (1 - pi_j)^m``."""
    prod = 1.0
    for j in range(s, t):
        prod *= (1.0 - (q + p.A) / ((p.m + p.A) * j)) ** p.m
    return prod


def passage_identity_rhs(p: ModelParams, i: int, q: int, t: int,
                         table: FirstPassageTable | None = None) -> float:
    """``sum_{s=t0}^{t} f(q, i, s) prod_{j=s}^{t-1} (1 - (q + A)/((m + A) j))^m``."""
    if table is None or table.horizon < t:
        table = first_passage(p, i, q, t)
    return math.fsum(table[s] * stay_probability(p, q, s, t)
                     for s in range(max(table.t0, i), t + 1))


def verify_passage_identity(p: ModelParams, i: int, q: int, t: int) -> float:
    """``|P(q, i, t) - rhs|`` where rhs rebuilds ``P`` from first passages."""
    t0 = first_passage_time_min(p, i, q)
    if t < t0:
        raise DomainError(f"t={t} precedes the earliest passage time t0={t0}")
    direct = propagate_per_node(p, i, t)[q]
    return abs(direct - passage_identity_rhs(p, i, q, t))


@dataclass
class ConvergenceSeries:
    """Rows ``(t, P(q, t), t (P(q, t + 1) - P(q, t)))`` at each checkpoint."""

    q: int
    t: list[int] = field(default_factory=list)
    p: list[float] = field(default_factory=list)
    t_delta_p: list[float] = field(default_factory=list)

    @property
    def decreasing(self) -> bool:
        """``|t dP|`` strictly decreasing over the last three checkpoints."""
        tail = [abs(x) for x in self.t_delta_p[-3:]]
        return len(tail) >= 2 and all(a > b for a, b in zip(tail, tail[1:]))

    def rows(self):
        return list(zip(self.t, self.p, self.t_delta_p))

    def to_csv(self) -> str:
        from .distribution import fmt
        lines = ["t,p,t_delta_p"]
        lines += [f"{t},{fmt(p)},{fmt(d)}" for t, p, d in self.rows()]
        return "\n".join(lines) + "\n"


def convergence_diagnostic(p: ModelParams, q: int, checkpoints: Sequence[int],
                           eps: float = DEFAULT_EPS) -> ConvergenceSeries:
    """Track ``P(q, t)`` and the scaled increment ``t (P(q, t+1) - P(q, t))``.

    A vanishing scaled increment is the extra condition under which the
    stationary master equation follows from the finite-``t`` dynamics.
    """
    cps = list(checkpoints)
    if len(cps) < 1 or any(b <= a for a, b in zip(cps, cps[1:])) or cps[0] < 2:
        raise DomainError("checkpoints must be strictly increasing and >= 2")
    times = sorted(set(cps) | {c + 1 for c in cps})
    states = {st.t: st for st in iter_aggregate(p, times[-1], eps, times)}
    series = ConvergenceSeries(q=q)
    for c in cps:
        now, nxt = states[c][q], states[c + 1][q]
        series.t.append(c)
        series.p.append(now)
        series.t_delta_p.append(c * (nxt - now))
    return series
