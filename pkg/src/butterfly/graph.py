"""Combinatorics of the conditional independence graph of a schedule.

Vertices are ``(level, index)`` with level 0 the input row; there is an edge
from ``(k-1, j)`` to ``(k, i)`` whenever ``A_k[i, j] != 0``.  Index sets are
returned as sorted tuples of 0-based particle indices.

Each set has a closed form (fast, used by default) and a definition-based
counterpart read off products of dense 0/1 support matrices; the latter are
oracles and are capped at ``SUPPORT_CAP`` particles.  Supports of products
of non-negative matrices are products of supports, so the oracles are exact.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from .errors import AssumptionError, CapacityError, ScheduleError
from .schedule import (
    PATH_WORK_CAP,
    SUPPORT_CAP,
    Schedule,
    column_support,
    product_row,
    support_matrix,
    verify_assumptions,
)


def _span(start: int, count: int, step: int = 1) -> tuple:
    return tuple(range(start, start + count * step, step))


def _check_level(s: Schedule, k: int, lo: int) -> None:
    if not lo <= k <= s.n_stages:
        raise ScheduleError(f"level {k} outside {lo}..{s.n_stages}")


# closed forms ---------------------------------------------------------------

def parent_set(s: Schedule, k: int, i: int) -> tuple:
    """Columns ``j`` with ``A_k[i, j] != 0``."""
    _check_level(s, k, 1)
    s.check_index(i)
    if s.family == "radix":
        r = s.r
        return tuple(sorted(i % r ** (k - 1) + q * r ** (k - 1) + r**k * (i // r**k) for q in range(r)))
    if s.family == "mixed":
        r, c = s.r, s.c
        if k == 1:
            return _span(c * (i // c), c)
        return _span(i % c, r, c)
    return _span(0, s.n_particles)


def prime_parent_set(s: Schedule, k: int, i: int) -> tuple:
    """Input indices with a path to vertex ``(k, i)``; level 0 gives ``(i,)``."""
    _check_level(s, k, 0)
    s.check_index(i)
    if k == 0:
        return (i,)
    if s.family == "radix":
        rk = s.r**k
        return _span(rk * (i // rk), rk)
    if s.family == "mixed":
        return parent_set(s, 1, i) if k == 1 else _span(0, s.n_particles)
    return _span(0, s.n_particles)


def collision_start_set(s: Schedule, k: int, i: int) -> tuple:
    """``K_k(i) minus K_{k-1}(i)``: inputs first reachable from ``i`` at depth ``k``."""
    _check_level(s, k, 1)
    prev = set(prime_parent_set(s, k - 1, i))
    return tuple(j for j in prime_parent_set(s, k, i) if j not in prev)


def tail_product_set(s: Schedule, k: int, i: int) -> tuple:
    """Support of row ``i`` of ``A_m A_{m-1} ... A_{m-k+1}``."""
    _check_level(s, k, 1)
    s.check_index(i)
    m = s.n_stages
    if s.family == "radix":
        step = s.r ** (m - k)
        return _span(i % step, s.r**k, step)
    if s.family == "mixed":
        return parent_set(s, 2, i) if k == 1 else _span(0, s.n_particles)
    return _span(0, s.n_particles)


def path_count_from(s: Schedule, k: int, u: int) -> int:
    """Number of directed paths from vertex ``(k, u)`` down to level ``m``."""
    _check_level(s, k, 0)
    s.check_index(u)
    m = s.n_stages
    if s.family == "radix":
        return s.r ** (m - k)
    if s.family == "mixed":
        return (s.r * s.c, s.r, 1)[k]
    return s.n_particles if k == 0 else 1


# definition-based oracles ---------------------------------------------------

def _dense(s: Schedule) -> list:
    if s.n_particles > SUPPORT_CAP:
        raise CapacityError(f"dense oracles are capped at N <= {SUPPORT_CAP}")
    return _dense_cached(s)


@lru_cache(maxsize=64)
def _dense_cached(s: Schedule) -> list:
    return [support_matrix(s, k) for k in range(1, s.n_stages + 1)]


def _support(row) -> tuple:
    return tuple(int(j) for j in np.flatnonzero(row))


def _support_product(mats) -> np.ndarray:
    out = None
    for a in mats:
        out = a if out is None else np.minimum(out @ a, 1)
    return out


def parent_set_dense(s: Schedule, k: int, i: int) -> tuple:
    _check_level(s, k, 1)
    return _support(_dense(s)[k - 1][i])


@lru_cache(maxsize=256)
def _head_support(s: Schedule, k: int) -> np.ndarray:
    """Support of ``A_k A_{k-1} ... A_1``."""
    mats = _dense(s)
    return _support_product(mats[q - 1] for q in range(k, 0, -1))


@lru_cache(maxsize=256)
def _tail_support(s: Schedule, k: int) -> np.ndarray:
    """Support of ``A_m A_{m-1} ... A_{m-k+1}``."""
    mats, m = _dense(s), s.n_stages
    return _support_product(mats[q - 1] for q in range(m, m - k, -1))


def prime_parent_set_dense(s: Schedule, k: int, i: int) -> tuple:
    _check_level(s, k, 0)
    if k == 0:
        return (i,)
    return _support(_head_support(s, k)[i])


def collision_start_set_dense(s: Schedule, k: int, i: int) -> tuple:
    prev = set(prime_parent_set_dense(s, k - 1, i))
    return tuple(j for j in prime_parent_set_dense(s, k, i) if j not in prev)


def tail_product_set_dense(s: Schedule, k: int, i: int) -> tuple:
    _check_level(s, k, 1)
    return _support(_tail_support(s, k)[i])


def enumerate_paths_from(s: Schedule, k: int, u: int) -> list:
    """All paths ``(u_k, ..., u_m)`` from vertex ``(k, u)`` to the bottom row."""
    _check_level(s, k, 0)
    children = _children(s)
    paths = [(u,)]
    for q in range(k + 1, s.n_stages + 1):
        paths = [p + (v,) for p in paths for v in children[q - 1][p[-1]]]
    return paths


@lru_cache(maxsize=64)
def _children(s: Schedule) -> tuple:
    return tuple(tuple(tuple(c) for c in column_support(s, k)) for k in range(1, s.n_stages + 1))


# collision analysis ---------------------------------------------------------

@lru_cache(maxsize=256)
def _assumption5(s: Schedule) -> bool:
    if s.n_particles**2 * s.n_stages > PATH_WORK_CAP:
        # proved for the built-in families; too large to re-check here
        return s.family in ("radix", "mixed", "multinomial")
    return verify_assumptions(s).all_true()


def collision_cardinalities(s: Schedule, i: int, j: int) -> tuple:
    """Closed-form counts of colliding / complementary path pairs from ``(i, j)``.

    Returns ``(m_A, m_tilde_A)`` where the first counts pairs of input-to-output
    paths, one from ``i`` and one from ``j``, that share a vertex at some level
    ``k >= 1``.
    """
    if i == j:
        raise ScheduleError("collision cardinalities need i != j")
    s.check_index(i)
    s.check_index(j)
    if not _assumption5(s):
        raise AssumptionError(f"{s.label} violates the structural assumptions")
    n = s.n_particles
    for k in range(1, s.n_stages + 1):
        if j in collision_start_set(s, k, i):
            hits = path_count_from(s, k, i) ** 2 * len(prime_parent_set(s, k, i))
            return hits, n * n - hits
    raise AssumptionError(f"index {j} is in no collision start set of {i}")


def collision_cardinalities_bruteforce(s: Schedule, i: int, j: int) -> tuple:
    """Enumerate all path pairs from ``(i, j)``; count colliding and non-colliding."""
    if i == j:
        raise ScheduleError("collision cardinalities need i != j")
    pi = enumerate_paths_from(s, 0, i)
    pj = enumerate_paths_from(s, 0, j)
    if len(pi) * len(pj) > PATH_WORK_CAP:
        raise CapacityError("path-pair enumeration exceeds the cap")
    hits = sum(1 for a, b in product(pi, pj) if any(x == y for x, y in zip(a[1:], b[1:])))
    return hits, len(pi) * len(pj) - hits


# edge statistics and partitions ---------------------------------------------

@dataclass(frozen=True)
class EdgeStats:
    incoming_per_vertex: dict
    total_edges: int


def edge_stats(s: Schedule) -> EdgeStats:
    """Incoming edges per vertex on each level ``k >= 1``, and the edge total."""
    incoming = {k: st.fan for k, st in enumerate(s.stages, start=1)}
    total = sum(st.fan * s.n_particles for st in s.stages)
    return EdgeStats(incoming, total)


@dataclass(frozen=True)
class Partition:
    d: int
    blocks: tuple
    block_size: int

    def representatives(self, choice=None) -> np.ndarray:
        """One member per block; ``choice[u]`` picks the position within block ``u``."""
        if choice is None:
            return np.array([b[0] for b in self.blocks])
        return np.array([b[q] for b, q in zip(self.blocks, choice)])


def build_partition(s: Schedule, d: int) -> Partition:
    """Equal-size blocks whose outputs share the law of the last ``d`` stages.

    Block ``u`` is ``{u + q * N / r^(d-1) : q < r^(d-1)}`` for both butterfly
    families.
    """
    if s.family not in ("radix", "mixed"):
        raise ScheduleError("partitions are defined for the radix and mixed families")
    _check_level(s, d, 1)
    n = s.n_particles
    size = s.r ** (d - 1)
    stride = n // size
    blocks = tuple(_span(u, size, stride) for u in range(stride))
    part = Partition(d, blocks, size)
    _check_partition(s, part)
    return part


def _check_partition(s: Schedule, part: Partition) -> None:
    if part.block_size < part.d:
        raise AssumptionError("block size smaller than d")
    seen = sorted(i for b in part.blocks for i in b)
    if seen != list(range(s.n_particles)):
        raise AssumptionError("blocks do not partition the index set")
    if s.n_particles * part.block_size * s.r ** part.d > PATH_WORK_CAP:
        return
    m = s.n_stages
    tail = range(m, m - part.d, -1)
    for block in part.blocks:
        first = product_row(s, block[0], tail)
        if any(product_row(s, i, tail) != first for i in block[1:]):
            raise AssumptionError("tail-product rows differ within a block")
