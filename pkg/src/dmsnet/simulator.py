"""Monte Carlo growth of attractiveness-model networks.

Node weights ``A + q_s`` live in a Fenwick (binary indexed) tree so a link
target is drawn in ``O(log n)``.  Within one growth step all ``m`` targets are
drawn from the weights as they stood at the start of the step and the
increments are applied afterwards; this makes each node's gain in a step
exactly ``Binomial(m, (A + q_s) / ((m + A) t))``.  The newborn node joins the
tree only after the draws.

Random numbers come from numpy's PCG64 generator.  Replica ``r`` of a run with
seed ``s`` uses ``SeedSequence(s, spawn_key=(r,))``, so replicas are
independent streams and each one is reproducible on its own.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .distribution import DegreeDistribution
from .model import DomainError, ModelParams

CHUNK_STEPS = 1 << 18
RNG_ALGORITHM = "PCG64"


# -- Fenwick tree primitives (0-based node index, 1-based tree) ---------------

@numba.njit(cache=True, nogil=True)
def _fw_add(tree, i, delta):
    n = tree.size - 1
    j = i + 1
    while j <= n:
        tree[j] += delta
        j += j & (-j)


@numba.njit(cache=True, nogil=True)
def _fw_prefix(tree, i):
    """Sum of weights of nodes ``0..i-1``."""
    s = tree[0] * 0
    j = i
    while j > 0:
        s += tree[j]
        j -= j & (-j)
    return s


@numba.njit(cache=True, nogil=True)
def _fw_find(tree, x):
    """Smallest index ``s`` with prefix(s + 1) > x (tree size is a power of two)."""
    n = tree.size - 1
    pos = 0
    step = n
    while step > 0:
        nxt = pos + step
        if nxt <= n and tree[nxt] <= x:
            pos = nxt
            x -= tree[nxt]
        step >>= 1
    return pos


@numba.njit(cache=True, nogil=True)
def _fw_point(tree, i):
    return _fw_prefix(tree, i + 1) - _fw_prefix(tree, i)


@numba.njit(cache=True, nogil=True)
def _sample(tree, x, live):
    s = _fw_find(tree, x)
    if s >= live:
        # x rounded onto the boundary of the total; fall back to the last
        # live node that carries weight
        s = live - 1
        while s > 0 and _fw_point(tree, s) <= 0:
            s -= 1
    return s


@numba.njit(cache=True, nogil=True)
def _sample_many(tree, xs, live, out):
    for k in range(xs.size):
        out[k] = _sample(tree, xs[k], live)


@numba.njit(cache=True, nogil=True)
def _grow_steps(tree, indeg, m, unit, base, t_start, t_end, draws, scale_by_total,
                edges, track, track_w, track_gain, targets):
    """Run growth steps ``t -> t + 1`` for ``t`` in ``[t_start, t_end)``.

    ``draws`` holds ``m`` numbers per step: uniforms in [0, 1) (float mode,
    scaled by the tree total) or integers already in [0, total) (exact mode).
    ``unit`` is the weight of one in-link and ``base`` the newborn weight.
    """
    k = 0
    n = tree.size - 1
    for t in range(t_start, t_end):
        total = tree[n]
        for l in range(m):
            if scale_by_total:
                x = draws[k] * total
            else:
                x = draws[k]
            k += 1
            targets[l] = _sample(tree, x, t)
        if track >= 0 and track < t:
            track_w[t - 1] = _fw_point(tree, track)
            g = 0
            for l in range(m):
                if targets[l] == track:
                    g += 1
            track_gain[t - 1] = g
        for l in range(m):
            s = targets[l]
            indeg[s] += 1
            _fw_add(tree, s, unit)
            if edges.shape[0] > 0:
                e = m * t + l
                edges[e, 0] = t + 1
                edges[e, 1] = s + 1
        _fw_add(tree, t, base)


# -- weight index -------------------------------------------------------------

class WeightIndex:
    """Prefix-sum tree over node weights with ``O(log n)`` sampling.

    ``dtype`` is ``float64`` for real weights or ``int64`` for weights scaled
    to integers (exact arithmetic).
    """

    def __init__(self, capacity: int, dtype=np.float64):
        if capacity < 1:
            raise DomainError("capacity must be >= 1")
        size = 1
        while size < capacity:
            size <<= 1
        self.capacity = capacity
        self.tree = np.zeros(size + 1, dtype=dtype)
        self.count = 0

    @classmethod
    def from_weights(cls, weights, dtype=np.float64) -> "WeightIndex":
        w = cls(max(len(weights), 1), dtype)
        for x in weights:
            w.append(x)
        return w

    def append(self, weight) -> int:
        if self.count >= self.capacity:
            raise IndexError("weight index is full")
        if weight < 0:
            raise DomainError("weights must be nonnegative")
        _fw_add(self.tree, self.count, self.tree.dtype.type(weight))
        self.count += 1
        return self.count - 1

    def add(self, index: int, delta) -> None:
        if not 0 <= index < self.count:
            raise IndexError(index)
        _fw_add(self.tree, index, self.tree.dtype.type(delta))

    def weight(self, index: int):
        if not 0 <= index < self.count:
            raise IndexError(index)
        return _fw_point(self.tree, index)

    def sample_many(self, us) -> np.ndarray:
        """Vectorised :func:`sample_target` for points ``us`` in ``[0, total)``."""
        us = np.asarray(us, dtype=self.tree.dtype)
        if self.total <= 0:
            raise DomainError("cannot sample from an index with zero total weight")
        if us.size and (us.min() < 0 or us.max() >= self.total):
            raise DomainError("sample points must lie in [0, total)")
        out = np.empty(us.size, dtype=np.int64)
        _sample_many(self.tree, us, self.count, out)
        return out

    def prefix(self, index: int):
        return _fw_prefix(self.tree, index)

    @property
    def total(self):
        return self.tree[-1]

    def __len__(self):
        return self.count


def sample_target(w: WeightIndex, u) -> int:
    """Index whose weight interval (in prefix-sum order) contains ``u``.

    ``u`` must lie in ``[0, total)``.
    """
    total = w.total
    if total <= 0:
        raise DomainError("cannot sample from an index with zero total weight")
    if not 0 <= u < total:
        raise DomainError(f"u={u} outside [0, {total})")
    return int(_sample(w.tree, w.tree.dtype.type(u), w.count))


# -- growth -------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthConfig:
    params: ModelParams
    steps: int
    seed: int = 0
    record_edges: bool = False
    replicas: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise DomainError(f"steps must be >= 1, got {self.steps}")
        if self.replicas < 1:
            raise DomainError(f"replicas must be >= 1, got {self.replicas}")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "steps": self.steps, "seed": self.seed,
                "record_edges": self.record_edges, "replicas": self.replicas,
                "rng": RNG_ALGORITHM}


@dataclass
class SimulatedNetwork:
    node_count: int
    in_degree: np.ndarray
    seed: int
    replica: int = 0
    edges: np.ndarray | None = None
    params: ModelParams | None = None
    tracked: dict | None = field(default=None, repr=False)
    index: WeightIndex | None = field(default=None, repr=False)

    def counts(self) -> np.ndarray:
        """Number of nodes per in-degree, indexed by ``q``."""
        return np.bincount(self.in_degree)

    def edges_csv(self) -> str:
        if self.edges is None:
            raise ValueError("edges were not recorded")
        lines = ["step,target"] + [f"{s},{t}" for s, t in self.edges]
        return "\n".join(lines) + "\n"


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replica,))))


def grow(c: GrowthConfig, replica: int = 0, track: int | None = None) -> SimulatedNetwork:
    """Grow one network to ``c.steps`` nodes.

    ``track`` (0-based node index) records, for every step where that node is
    alive, its weight at the start of the step and the number of links it
    gained; available as ``network.tracked``.
    """
    p = c.params
    T, m = c.steps, p.m
    rng = replica_rng(c.seed, replica)
    exact = p.A_exact is not None
    if exact:
        num, den = p.A_exact.numerator, p.A_exact.denominator
        if (m * den + num) * T >= 2**62:
            raise DomainError("integer-scaled weights would overflow int64; use real-valued A")
        unit, base = den, num
        index = WeightIndex(T, np.int64)
    else:
        unit, base = 1.0, p.A
        index = WeightIndex(T, np.float64)
    index.count = T
    tree = index.tree
    indeg = np.zeros(T, dtype=np.int64)
    indeg[0] = m
    _fw_add(tree, 0, tree.dtype.type(base + m * unit))

    edges = np.zeros((m * T, 2) if c.record_edges else (0, 2), dtype=np.int64)
    if c.record_edges:
        edges[:m, 0] = 1
        edges[:m, 1] = 1
    trk = -1 if track is None else int(track)
    if trk >= T:
        raise DomainError(f"tracked node {trk} never exists in a {T}-node run")
    track_w = np.full(T - 1 if trk >= 0 else 0, -1, dtype=tree.dtype)
    track_gain = np.full(T - 1 if trk >= 0 else 0, -1, dtype=np.int64)
    targets = np.empty(m, dtype=np.int64)

    t = 1
    while t < T:
        t_end = min(T, t + CHUNK_STEPS)
        if exact:
            totals = np.repeat((m * den + num) * np.arange(t, t_end, dtype=np.int64), m)
            draws = rng.integers(0, totals)
        else:
            draws = rng.random(m * (t_end - t))
        _grow_steps(tree, indeg, m, tree.dtype.type(unit), tree.dtype.type(base),
                    t, t_end, draws, not exact, edges, trk, track_w, track_gain, targets)
        t = t_end

    tracked = None
    if trk >= 0:
        live = np.arange(1, T) > trk
        scale = den if exact else 1.0
        tracked = {"node": trk, "t": np.arange(1, T)[live],
                   "weight": track_w[live] / scale, "gain": track_gain[live]}
    return SimulatedNetwork(node_count=T, in_degree=indeg, seed=c.seed, replica=replica,
                            edges=edges if c.record_edges else None, params=p,
                            tracked=tracked, index=index)


def weight_total(n: SimulatedNetwork) -> float:
    """``sum_s (A + q_s)``; equals ``(m + A) T`` for a consistent network."""
    return n.params.A * n.node_count + int(n.in_degree.sum())


def degree_histogram(n: SimulatedNetwork) -> DegreeDistribution:
    """Fraction of nodes at each in-degree."""
    params = n.params.to_dict() if n.params is not None else None
    return DegreeDistribution.from_counts(n.counts(), params=params)


@dataclass
class ReplicateResult:
    average: DegreeDistribution
    histograms: list[DegreeDistribution]
    counts: list[np.ndarray]


def replicate(c: GrowthConfig, workers: int | None = None) -> ReplicateResult:
    """Run ``c.replicas`` independent networks and average their histograms.

    Replicas may grow on several threads (the kernel releases the GIL); the
    average is combined in replica order, so it does not depend on scheduling.
    """
    if workers is None:
        workers = min(c.replicas, os.cpu_count() or 1)

    def run(r):
        return grow(c, replica=r).counts()

    if workers > 1 and c.replicas > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(run, range(c.replicas)))
    else:
        counts = [run(r) for r in range(c.replicas)]
    width = max(x.size for x in counts)
    acc = np.zeros(width)
    hists = []
    for x in counts:
        frac = x / x.sum()
        acc[:x.size] += frac
        hists.append(DegreeDistribution.from_counts(x, params=c.params.to_dict()))
    acc /= c.replicas
    avg = DegreeDistribution.from_dense(acc, tail_mass=0.0, params=c.params.to_dict(),
                                        drop_zeros=True)
    return ReplicateResult(average=avg, histograms=hists, counts=counts)
