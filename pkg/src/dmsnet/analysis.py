"""Distances between degree distributions, tail fits and comparison reports."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from .distribution import DegreeDistribution, fmt
from .model import DomainError

DEFAULT_MIN_EXPECTED = 5.0
FIT_METHODS = ("loglog-ls", "discrete-mle")


def _aligned(p: DegreeDistribution, q: DegreeDistribution):
    support = np.union1d(p.support, q.support)
    a = np.zeros(support.size)
    b = np.zeros(support.size)
    a[np.searchsorted(support, p.support)] = p.mass
    b[np.searchsorted(support, q.support)] = q.mass
    return support, a, b


def total_variation(p: DegreeDistribution, q: DegreeDistribution) -> float:
    """Half the L1 distance; the two tail masses count as one extra bin."""
    _, a, b = _aligned(p, q)
    tv = 0.5 * (math.fsum(np.abs(a - b)) + abs(p.tail_mass - q.tail_mass))
    return min(max(tv, 0.0), 1.0)


def ks_discrete(p: DegreeDistribution, q: DegreeDistribution) -> float:
    """Largest gap between the two cumulative distribution functions."""
    _, a, b = _aligned(p, q)
    if a.size == 0:
        return abs(p.tail_mass - q.tail_mass)
    gap = np.max(np.abs(np.cumsum(a) - np.cumsum(b)))
    return float(min(gap, 1.0))


class ChiSquare(NamedTuple):
    statistic: float
    dof: int
    pooled_bins: list  # [(q_lo, q_hi, observed, expected), ...] in increasing q


def pool_bins(observed: np.ndarray, expected: np.ndarray, labels: Sequence,
              min_expected: float = DEFAULT_MIN_EXPECTED):
    """Merge adjacent bins from the largest label downwards until each
    pooled bin expects at least ``min_expected`` counts.

    Returns ``[(first_label, last_label, obs, exp), ...]`` in increasing order.
    A leftover low-end group below the threshold joins its upper neighbour.
    """
    bins = []
    acc_o = acc_e = 0.0
    hi = None
    for k in range(len(labels) - 1, -1, -1):
        if hi is None:
            hi = labels[k]
        acc_o += observed[k]
        acc_e += expected[k]
        if acc_e >= min_expected:
            bins.append([labels[k], hi, acc_o, acc_e])
            acc_o = acc_e = 0.0
            hi = None
    if hi is not None:
        if bins:
            bins[-1][0] = labels[0]
            bins[-1][2] += acc_o
            bins[-1][3] += acc_e
        else:
            bins.append([labels[0], hi, acc_o, acc_e])
    bins.reverse()
    return [tuple(b) for b in bins]


def chi_square_binned(observed, expected, labels=None,
                      min_expected: float = DEFAULT_MIN_EXPECTED) -> ChiSquare:
    """Pearson statistic for observed vs expected counts after tail pooling."""
    observed = np.asarray(observed, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if labels is None:
        labels = list(range(observed.size))
    bins = pool_bins(observed, expected, labels, min_expected)
    if len(bins) < 2:
        raise DomainError(
            f"chi-square needs at least 2 bins after pooling (min_expected={min_expected}), got {len(bins)}")
    if any(e <= 0 for *_, e in bins):
        raise DomainError("a pooled bin has zero expected count")
    stat = math.fsum((o - e) ** 2 / e for *_, o, e in bins)
    return ChiSquare(stat, len(bins) - 1, bins)


def chi_square(counts: Mapping[int, int] | np.ndarray, expected: DegreeDistribution,
               min_expected: float = DEFAULT_MIN_EXPECTED) -> ChiSquare:
    """Goodness of fit of integer counts against a degree distribution.

    Observations beyond the expected distribution's stored support, and its
    ``tail_mass``, form one extra bin at the top (label ``"tail"``).
    """
    if isinstance(counts, Mapping):
        obs_q = np.array(sorted(counts), dtype=np.int64)
        obs_c = np.array([counts[k] for k in obs_q], dtype=float)
    else:
        c = np.asarray(counts)
        obs_q = np.nonzero(c)[0]
        obs_c = c[obs_q].astype(float)
    n = obs_c.sum()
    if n < 1:
        raise DomainError("chi-square needs at least one observation")
    support = np.union1d(expected.support, obs_q[obs_q <= expected.q_max])
    exp = np.zeros(support.size)
    exp[np.searchsorted(support, expected.support)] = expected.mass * n
    obs = np.zeros(support.size)
    inside = obs_q <= expected.q_max
    obs[np.searchsorted(support, obs_q[inside])] = obs_c[inside]
    labels = [int(q) for q in support]
    tail_obs = obs_c[~inside].sum()
    if expected.tail_mass > 0 or tail_obs > 0:
        labels.append("tail")
        obs = np.append(obs, tail_obs)
        exp = np.append(exp, expected.tail_mass * n)
    return chi_square_binned(obs, exp, labels, min_expected)


@dataclass(frozen=True)
class TailFit:
    slope: float
    intercept: float
    q_range: tuple[int, int]
    r_squared: float
    method: str

    @property
    def exponent(self) -> float:
        return -self.slope

    def to_dict(self) -> dict:
        return asdict(self)


def _fit_points(d: DegreeDistribution, q_min: int, q_max: int):
    keep = (d.support >= max(q_min, 1)) & (d.support <= q_max) & (d.mass > 0)
    q = d.support[keep].astype(float)
    w = d.mass[keep]
    if q.size < 5:
        raise DomainError(
            f"need at least 5 support points with positive mass in [{q_min}, {q_max}], got {q.size}")
    return q, w


def _r_squared(x, y, slope, intercept) -> float:
    resid = y - (intercept + slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0


def _mle_exponent(q: np.ndarray, w: np.ndarray, lo: int, hi: int) -> float:
    """Exponent of a discrete power law truncated to ``[lo, hi]`` maximising
    the (weighted) likelihood of the observed masses."""
    grid = np.arange(lo, hi + 1, dtype=float)
    lg = np.log(grid)
    target = float(np.sum(w * np.log(q)) / np.sum(w))

    def score(gamma):
        # model mean of log q minus data mean; decreasing in gamma
        logw = -gamma * lg
        logw -= logw.max()
        pw = np.exp(logw)
        return float(np.dot(pw, lg) / pw.sum()) - target

    a, b = -20.0, 60.0
    if score(a) < 0 or score(b) > 0:
        raise DomainError("power-law exponent outside the searchable range")
    return brentq(score, a, b, xtol=1e-13, rtol=1e-15, maxiter=500)


def fit_tail(d: DegreeDistribution, q_min: int | None = None, q_max: int | None = None,
             method: str = "loglog-ls", m: int | None = None) -> TailFit:
    """Fit ``p(q) ~ q^slope`` over ``[q_min, q_max]``.

    ``loglog-ls`` regresses ``log p`` on ``log q`` (suited to smooth closed-form
    values); ``discrete-mle`` fits a power law truncated to the range by
    maximum likelihood, weighting each degree by its mass (suited to noisy
    histograms).  Defaults: ``q_min = 10 m``, ``q_max`` = largest degree with
    positive mass.
    """
    if method not in FIT_METHODS:
        raise DomainError(f"unknown fit method {method!r}; choose from {FIT_METHODS}")
    if q_min is None:
        if m is None:
            m = int((d.params or {}).get("m", 1))
        q_min = 10 * m
    if q_max is None:
        pos = d.support[d.mass > 0]
        q_max = int(pos[-1]) if pos.size else 0
    if q_min >= q_max:
        raise DomainError(f"empty fit range [{q_min}, {q_max}]")
    q, w = _fit_points(d, q_min, q_max)
    x, y = np.log(q), np.log(w)
    if method == "loglog-ls":
        slope, intercept = np.polyfit(x, y, 1)
    else:
        lo, hi = int(q[0]), int(q_max)
        gamma = _mle_exponent(q, w, lo, hi)
        slope = -gamma
        grid = np.arange(lo, hi + 1, dtype=float)
        logz = np.log(np.sum(np.exp(-gamma * (np.log(grid) - np.log(lo))))) - gamma * np.log(lo)
        # normalisation chosen so the fitted curve carries the mass in range
        intercept = float(np.log(np.sum(w))) - logz
    return TailFit(float(slope), float(intercept), (int(q_min), int(q_max)),
                   _r_squared(x, y, slope, intercept), method)


@dataclass
class ComparisonReport:
    left_label: str
    right_label: str
    tv: float
    ks: float
    chi_square: tuple | None
    q_range: tuple[int, int]
    notes: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.chi_square is not None:
            stat, dof, bins = self.chi_square
            d["chi_square"] = {"statistic": stat, "dof": dof, "pooled_bins": len(bins)}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def compare_report(left: DegreeDistribution, right: DegreeDistribution,
                   labels: tuple[str, str] = ("left", "right"),
                   q_range: tuple[int, int] | None = None,
                   left_counts: Mapping[int, int] | np.ndarray | None = None,
                   min_expected: float = DEFAULT_MIN_EXPECTED) -> ComparisonReport:
    """TV, KS and (when ``left_counts`` are given) chi-square of left vs right.

    TV and KS are computed on ``q_range``; mass outside the range on either
    side is lumped into each distribution's tail bin.  The chi-square statistic
    always covers all counts.
    """
    if q_range is None:
        q_range = (0, max(left.q_max, right.q_max, 0))
    lo, hi = q_range
    lr, rr = left.restrict(lo, hi), right.restrict(lo, hi)
    notes = []
    chi = None
    if left_counts is not None:
        # chi-square always uses every count against the full right distribution
        try:
            chi = tuple(chi_square(left_counts, right, min_expected))
        except DomainError as exc:
            notes.append(f"chi-square skipped: {exc}")
    else:
        notes.append("chi-square skipped: no counts for the left distribution")
    return ComparisonReport(labels[0], labels[1], total_variation(lr, rr), ks_discrete(lr, rr),
                            chi, (int(lo), int(hi)), "; ".join(notes))


def metric_series_csv(rows: Sequence[tuple], columns: Sequence[str]) -> str:
    """CSV for a metric-versus-time series."""
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(str(v) if isinstance(v, (int, np.integer)) else fmt(v) for v in row))
    return "\n".join(lines) + "\n"
