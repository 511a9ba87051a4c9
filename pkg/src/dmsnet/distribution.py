"""Sparse degree distributions and their CSV/JSON interchange formats.

CSV files carry a mandatory header ``q,p`` (or ``q,count,p`` for simulated
histograms).  Reals are written with 17 significant digits, which round-trips
every double exactly.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

MASS_TOL = 1e-9
TAIL_TOL = 1e-12


class SchemaError(ValueError):
    """A CSV/JSON input does not follow the interchange schema."""


def fmt(x: float) -> str:
    """17-significant-digit decimal; exact round trip for doubles."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class DegreeDistribution:
    """Probability mass over in-degrees, truncated at the largest stored ``q``.

    ``support`` is strictly increasing; ``tail_mass`` is the mass that lies
    beyond the stored entries (recorded, never renormalised away).
    """

    support: np.ndarray
    mass: np.ndarray
    tail_mass: float = 0.0
    params: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64).ravel()
        mass = np.asarray(self.mass, dtype=float).ravel()
        if support.shape != mass.shape:
            raise ValueError("support and mass must have the same length")
        if support.size and (support[0] < 0 or np.any(np.diff(support) <= 0)):
            raise ValueError("support must be strictly increasing nonnegative integers")
        if np.any(mass < 0) or np.any(mass > 1):
            raise ValueError("masses must lie in [0, 1]")
        tail = float(self.tail_mass)
        if tail < -TAIL_TOL:
            raise ValueError(f"tail_mass must be >= 0, got {tail}")
        if abs(math.fsum(mass) + tail - 1.0) > MASS_TOL:
            raise ValueError(
                f"masses plus tail_mass must sum to 1, got {math.fsum(mass) + tail!r}"
            )
        support.flags.writeable = False
        mass.flags.writeable = False
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "tail_mass", tail)

    @classmethod
    def from_dense(cls, mass, *, start: int = 0, tail_mass: float | None = None,
                   params: dict | None = None, drop_zeros: bool = False):
        """Masses for consecutive degrees ``start, start + 1, ...``.

        With ``tail_mass=None`` the tail is taken as ``1 - sum(mass)``.
        """
        mass = np.asarray(mass, dtype=float)
        support = np.arange(start, start + mass.size)
        if drop_zeros:
            keep = mass != 0
            support, mass = support[keep], mass[keep]
        if tail_mass is None:
            tail_mass = max(0.0, 1.0 - math.fsum(mass))
        return cls(support, mass, tail_mass, params)

    @classmethod
    def from_mapping(cls, entries: Mapping[int, float], *, tail_mass: float | None = None,
                     params: dict | None = None):
        keys = sorted(int(k) for k in entries)
        mass = np.array([float(entries[k]) for k in keys])
        if tail_mass is None:
            tail_mass = max(0.0, 1.0 - math.fsum(mass))
        return cls(np.array(keys, dtype=np.int64), mass, tail_mass, params)

    @classmethod
    def from_counts(cls, counts: Mapping[int, int] | np.ndarray, params: dict | None = None):
        """Empirical distribution from integer counts (mapping or dense by q)."""
        if isinstance(counts, Mapping):
            keys = np.array(sorted(counts), dtype=np.int64)
            c = np.array([counts[k] for k in keys], dtype=np.int64)
        else:
            c = np.asarray(counts, dtype=np.int64)
            keys = np.nonzero(c)[0]
            c = c[keys]
        total = int(c.sum())
        if total <= 0:
            raise ValueError("counts must contain at least one observation")
        return cls(keys, c / total, 0.0, params)

    def __len__(self):
        return int(self.support.size)

    def __getitem__(self, q: int) -> float:
        i = np.searchsorted(self.support, q)
        if i < self.support.size and self.support[i] == q:
            return float(self.mass[i])
        return 0.0

    get = __getitem__

    @property
    def q_max(self) -> int:
        return int(self.support[-1]) if self.support.size else -1

    def as_dict(self) -> dict[int, float]:
        return {int(q): float(p) for q, p in zip(self.support, self.mass)}

    def dense(self, q_max: int | None = None) -> np.ndarray:
        """Masses on ``0..q_max`` (entries beyond ``q_max`` are dropped)."""
        if q_max is None:
            q_max = max(self.q_max, 0)
        out = np.zeros(q_max + 1)
        keep = self.support <= q_max
        out[self.support[keep]] = self.mass[keep]
        return out

    def restrict(self, q_min: int, q_max: int) -> "DegreeDistribution":
        """Entries inside ``[q_min, q_max]``; outside mass moves to ``tail_mass``."""
        keep = (self.support >= q_min) & (self.support <= q_max)
        mass = self.mass[keep]
        return DegreeDistribution(self.support[keep], mass,
                                  max(0.0, 1.0 - math.fsum(mass)), self.params)

    # -- serialisation -------------------------------------------------------

    def to_csv(self, counts: np.ndarray | None = None) -> str:
        buf = io.StringIO()
        if counts is None:
            buf.write("q,p\n")
            for q, p in zip(self.support, self.mass):
                buf.write(f"{int(q)},{fmt(p)}\n")
        else:
            buf.write("q,count,p\n")
            for q, c, p in zip(self.support, counts, self.mass):
                buf.write(f"{int(q)},{int(c)},{fmt(p)}\n")
        return buf.getvalue()

    def to_json(self) -> str:
        obj = {
            "params": self.params,
            "entries": [[int(q), float(p)] for q, p in zip(self.support, self.mass)],
            "tail_mass": float(self.tail_mass),
        }
        return json.dumps(obj, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DegreeDistribution":
        try:
            obj = json.loads(text)
            entries = obj["entries"]
            support = [int(e[0]) for e in entries]
            mass = [float(e[1]) for e in entries]
            tail = float(obj["tail_mass"])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise SchemaError(f"invalid distribution JSON: {exc}") from exc
        return cls(np.array(support, dtype=np.int64), np.array(mass), tail, obj.get("params"))


def parse_csv(text: str, source: str = "<csv>"):
    """Parse an interchange CSV into ``(distribution, counts_or_None)``.

    The tail mass is taken as ``1 - sum(p)``.  Raises :class:`SchemaError`
    naming the offending row and column.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError(f"{source}: empty file (header q,p required)") from None
    if header not in (["q", "p"], ["q", "count", "p"]):
        raise SchemaError(f"{source}: row 1: header must be 'q,p' or 'q,count,p', got {','.join(header)!r}")
    has_count = len(header) == 3
    qs, ps, cs = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise SchemaError(f"{source}: row {lineno}: expected {len(header)} columns, got {len(row)}")
        cells = dict(zip(header, (c.strip() for c in row)))
        try:
            q = int(cells["q"])
        except ValueError:
            raise SchemaError(f"{source}: row {lineno}, column q: not an integer: {cells['q']!r}") from None
        try:
            p = float(cells["p"])
        except ValueError:
            raise SchemaError(f"{source}: row {lineno}, column p: not a number: {cells['p']!r}") from None
        if q < 0:
            raise SchemaError(f"{source}: row {lineno}, column q: negative degree {q}")
        if qs and q <= qs[-1]:
            raise SchemaError(f"{source}: row {lineno}, column q: degrees must be strictly increasing")
        if not (0.0 <= p <= 1.0):
            raise SchemaError(f"{source}: row {lineno}, column p: mass {p} outside [0, 1]")
        if has_count:
            try:
                c = int(cells["count"])
            except ValueError:
                raise SchemaError(f"{source}: row {lineno}, column count: not an integer: {cells['count']!r}") from None
            if c < 0:
                raise SchemaError(f"{source}: row {lineno}, column count: negative count {c}")
            cs.append(c)
        qs.append(q)
        ps.append(p)
    if not qs:
        raise SchemaError(f"{source}: no data rows")
    mass = np.array(ps)
    total = math.fsum(ps)
    if total > 1.0 + MASS_TOL:
        raise SchemaError(f"{source}: column p sums to {total!r} > 1")
    dist = DegreeDistribution(np.array(qs, dtype=np.int64), mass, max(0.0, 1.0 - total))
    return dist, (np.array(cs, dtype=np.int64) if has_count else None)


def read_csv(path: str | os.PathLike):
    path = Path(path)
    return parse_csv(path.read_text(), source=str(path))


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
