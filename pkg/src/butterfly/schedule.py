"""Resampling schedules: the stage matrices A_1, ..., A_m of augmented resampling.

Every built-in family factors the uniform matrix ``1_{1/N}`` into stages of the
form ``I_outer (x) 1_{1/fan} (x) I_inner``.  Row ``i`` of such a stage mixes
uniformly over the ``fan`` indices that agree with ``i`` in the outer and inner
digits, so rows are produced in O(fan) without building dense matrices.

Conventions: particle indices are 0-based; stages are numbered ``1..m`` with
level 0 denoting the input row.  Interfaces that print indices for people
(the CLI) shift particles to 1-based.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .errors import CapacityError, ScheduleError

MAX_PARTICLES = 2**22
DENSE_CAP = 64
SUPPORT_CAP = 1024
PATH_WORK_CAP = 10**7

FAMILIES = ("multinomial", "radix", "mixed")


@dataclass(frozen=True)
class KroneckerStage:
    """The stage matrix ``I_outer (x) 1_{1/fan} (x) I_inner``."""

    outer: int
    fan: int
    inner: int

    @property
    def size(self) -> int:
        return self.outer * self.fan * self.inner

    def neighbors(self, i: int) -> np.ndarray:
        block = self.fan * self.inner
        base = (i // block) * block + i % self.inner
        return base + self.inner * np.arange(self.fan)

    def weight(self, exact: bool = True):
        return Fraction(1, self.fan) if exact else 1.0 / self.fan


@dataclass(frozen=True)
class StageRow:
    stage: int
    row: int
    entries: tuple

    @property
    def columns(self) -> tuple:
        return tuple(j for j, _ in self.entries)

    def total(self):
        return sum(w for _, w in self.entries)


@dataclass(frozen=True)
class Schedule:
    """An immutable resampling schedule.

    ``r`` and ``c`` are recorded for the butterfly families (``c`` only for
    mixed radix) and are ``None`` otherwise.
    """

    family: str
    n_particles: int
    stages: tuple
    r: int | None = None
    c: int | None = None

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def label(self) -> str:
        if self.family == "radix":
            return f"radix(r={self.r}, m={self.n_stages})"
        if self.family == "mixed":
            return f"mixed(r={self.r}, c={self.c})"
        return f"multinomial(N={self.n_particles})"

    def stage(self, k: int) -> KroneckerStage:
        if not 1 <= k <= self.n_stages:
            raise ScheduleError(f"stage {k} outside 1..{self.n_stages}")
        return self.stages[k - 1]

    def check_index(self, i: int) -> None:
        if not 0 <= i < self.n_particles:
            raise ScheduleError(f"index {i} outside 0..{self.n_particles - 1}")

    @classmethod
    def multinomial(cls, n: int) -> "Schedule":
        if n < 1:
            raise ScheduleError("multinomial schedule needs N >= 1")
        _check_capacity(n)
        return cls("multinomial", n, (KroneckerStage(1, n, 1),))

    @classmethod
    def radix(cls, r: int, m: int) -> "Schedule":
        if r < 2:
            raise ScheduleError("radix needs r >= 2")
        if m < 1:
            raise ScheduleError("radix needs m >= 1")
        n = r**m
        _check_capacity(n)
        stages = tuple(KroneckerStage(r ** (m - k), r, r ** (k - 1)) for k in range(1, m + 1))
        return cls("radix", n, stages, r=r)

    @classmethod
    def mixed(cls, r: int, c: int) -> "Schedule":
        if r < 2:
            raise ScheduleError("mixed radix needs r >= 2")
        if c < 1:
            raise ScheduleError("mixed radix needs c >= 1")
        n = r * c
        _check_capacity(n)
        return cls("mixed", n, (KroneckerStage(r, c, 1), KroneckerStage(1, r, c)), r=r, c=c)


def _check_capacity(n: int) -> None:
    if n > MAX_PARTICLES:
        raise CapacityError(f"N={n} exceeds the schedule capacity {MAX_PARTICLES}")


def build_schedule(family: str, *, r: int | None = None, m: int | None = None,
                   c: int | None = None, n: int | None = None) -> Schedule:
    """Build a schedule from family name and its parameters."""
    if family == "multinomial":
        if n is None:
            raise ScheduleError("multinomial needs n")
        return Schedule.multinomial(n)
    if family == "radix":
        if r is None or m is None:
            raise ScheduleError("radix needs r and m")
        return Schedule.radix(r, m)
    if family == "mixed":
        if r is None or c is None:
            raise ScheduleError("mixed needs r and c")
        return Schedule.mixed(r, c)
    raise ScheduleError(f"unknown family {family!r}; expected one of {FAMILIES}")


def stage_row(s: Schedule, k: int, i: int, exact: bool = True) -> StageRow:
    """Non-zero entries ``(j, A_k[i, j])`` of row ``i`` of stage ``k``."""
    stage = s.stage(k)
    s.check_index(i)
    w = stage.weight(exact)
    return StageRow(k, i, tuple((int(j), w) for j in stage.neighbors(i)))


def dense_stage(s: Schedule, k: int) -> np.ndarray:
    """Dense ``N x N`` matrix of ``Fraction`` entries (verification aid)."""
    n = s.n_particles
    if n > DENSE_CAP:
        raise CapacityError(f"dense matrices are capped at N <= {DENSE_CAP}")
    out = np.full((n, n), Fraction(0), dtype=object)
    for i in range(n):
        for j, w in stage_row(s, k, i).entries:
            out[i, j] = w
    return out


def support_matrix(s: Schedule, k: int) -> np.ndarray:
    """0/1 matrix marking the non-zero entries of stage ``k``."""
    n = s.n_particles
    if n > SUPPORT_CAP:
        raise CapacityError(f"support matrices are capped at N <= {SUPPORT_CAP}")
    out = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        out[i, s.stage(k).neighbors(i)] = 1
    return out


def dense_product(mats: Iterable[np.ndarray]) -> np.ndarray:
    mats = list(mats)
    out = mats[0]
    for a in mats[1:]:
        out = out.dot(a)
    return out


# sparse row algebra ---------------------------------------------------------

def _row(s: Schedule, k: int, i: int) -> dict:
    return dict(stage_row(s, k, i).entries)


def row_times(s: Schedule, vec: dict, k: int) -> dict:
    """Return the row vector ``vec^T A_k`` (sparse dict, exact)."""
    out: dict = {}
    for j, v in vec.items():
        for jj, w in stage_row(s, k, j).entries:
            out[jj] = out.get(jj, 0) + v * w
    return out


def product_row(s: Schedule, i: int, ks: Iterable[int]) -> dict:
    """Row ``i`` of ``A_{k_1} A_{k_2} ...`` for stages ``ks`` in order."""
    vec = {i: Fraction(1)}
    for k in ks:
        vec = row_times(s, vec, k)
    return {j: v for j, v in vec.items() if v != 0}


def column_support(s: Schedule, k: int) -> list:
    """For every column ``j``, the rows ``i`` with ``A_k[i, j] != 0``."""
    cols: list = [[] for _ in range(s.n_particles)]
    for i in range(s.n_particles):
        for j in s.stage(k).neighbors(i):
            cols[int(j)].append(i)
    return cols


@dataclass(frozen=True)
class AssumptionReport:
    double_stochastic: bool
    product_uniform: bool
    symmetric: bool
    commuting: bool
    idempotent: bool
    equal_row_counts: bool
    unique_paths: bool | None

    def all_true(self) -> bool:
        return all(v is True for v in self.__dict__.values())

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def verify_assumptions(s: Schedule, path_cap: int | None = PATH_WORK_CAP) -> AssumptionReport:
    """Check the stage matrices exactly, in rational arithmetic.

    ``unique_paths`` is ``None`` when the path-counting work exceeds
    ``path_cap``; pass ``None`` to always count paths.
    """
    n, m = s.n_particles, s.n_stages
    one = Fraction(1)

    double_stochastic = True
    for k in range(1, m + 1):
        colsum = [Fraction(0)] * n
        for i in range(n):
            row = stage_row(s, k, i)
            if row.total() != one or any(w <= 0 for _, w in row.entries):
                double_stochastic = False
            for j, w in row.entries:
                colsum[j] += w
        if any(v != one for v in colsum):
            double_stochastic = False

    uniform = {j: Fraction(1, n) for j in range(n)}
    product_uniform = all(product_row(s, i, range(1, m + 1)) == uniform for i in range(n))

    symmetric = all(
        _row(s, k, j).get(i) == w
        for k in range(1, m + 1)
        for i in range(n)
        for j, w in stage_row(s, k, i).entries
    )

    idempotent = all(
        product_row(s, i, (k, k)) == _row(s, k, i)
        for k in range(1, m + 1)
        for i in range(n)
    )

    commuting = all(
        product_row(s, i, (p, q)) == product_row(s, i, (q, p))
        for p in range(1, m + 1)
        for q in range(p + 1, m + 1)
        for i in range(n)
    )

    equal_row_counts = all(
        len({len(stage_row(s, k, i).entries) for i in range(n)}) == 1 for k in range(1, m + 1)
    )

    unique_paths = _unique_paths(s) if path_cap is None or n * n * m <= path_cap else None

    return AssumptionReport(double_stochastic, product_uniform, symmetric, commuting,
                            idempotent, equal_row_counts, unique_paths)


def _unique_paths(s: Schedule) -> bool:
    """At most one directed path joins any two vertices of the stage graph."""
    n, m = s.n_particles, s.n_stages
    children = [column_support(s, k) for k in range(1, m + 1)]
    for p in range(m):
        for start in range(n):
            counts = {start: 1}
            for q in range(p + 1, m + 1):
                nxt: dict = {}
                for j, cnt in counts.items():
                    for i in children[q - 1][j]:
                        nxt[i] = nxt.get(i, 0) + cnt
                if any(v > 1 for v in nxt.values()):
                    return False
                counts = nxt
    return True


def stage_table(s: Schedule) -> np.ndarray:
    """``(m, 3)`` integer array of ``(outer, fan, inner)`` per stage, for the kernels."""
    return np.array([(st.outer, st.fan, st.inner) for st in s.stages], dtype=np.int64)


def apply_stage(s: Schedule, k: int, vec: np.ndarray) -> np.ndarray:
    """Return ``A_k @ vec``; works for float and object (rational) arrays."""
    st = s.stage(k)
    blocks = np.asarray(vec).reshape(st.outer, st.fan, st.inner)
    means = blocks.sum(axis=1, keepdims=True) / st.fan
    return np.broadcast_to(means, blocks.shape).reshape(-1).copy()
