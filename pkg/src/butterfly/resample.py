"""Augmented resampling, its weight recursion, and exact enumeration oracles.

Given inputs ``xi_0`` with weights ``g``, stage ``k`` replaces particle ``i``
by a draw from its stage-``k`` neighbours ``j`` with probability
``A_k[i, j] V_{k-1}[j] / V_k[i]`` where ``V_0 = g`` and ``V_k = A_k V_{k-1}``.
The ``V`` table depends on the inputs only, so the ancestral indices of all
stages are independent given ``xi_0``; the enumeration oracles below exploit
this product structure.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from math import prod, sqrt
from typing import Any, Callable, Sequence

import numpy as np

from . import kernels
from .errors import AssumptionError, CapacityError, WeightError
from .graph import Partition, build_partition, collision_cardinalities
from .rng import Streams
from .schedule import Schedule, apply_stage, stage_row, stage_table

ENUMERATION_CAP = 10**6
UNDERFLOW = 1e-300


@dataclass(frozen=True)
class ParticleSystem:
    """``N`` particle payloads and the weight function evaluated on them."""

    values: Any
    weight_fn: Callable

    @classmethod
    def indexed(cls, weights: Sequence) -> "ParticleSystem":
        """Particles ``0..N-1`` whose weights are given directly."""
        table = np.asarray(weights)
        return cls(np.arange(len(table)), lambda i: table[i])

    def __len__(self) -> int:
        return len(self.values)

    def weights(self) -> np.ndarray:
        g = np.array([self.weight_fn(v) for v in self.values], dtype=float)
        _check_weights(g)
        return g

    def exact_weights(self) -> list:
        return [exact_value(self.weight_fn(v)) for v in self.values]

    def take(self, origins: np.ndarray) -> "ParticleSystem":
        if isinstance(self.values, np.ndarray):
            vals = self.values[origins]
        else:
            vals = [self.values[j] for j in origins]
        return ParticleSystem(vals, self.weight_fn)


def exact_value(x) -> Fraction:
    """Exact rational copy of a number (floats convert without rounding)."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(float(x))


def _check_weights(g: np.ndarray) -> None:
    if g.size == 0:
        raise WeightError("empty particle system")
    if not np.all(np.isfinite(g)) or np.any(g <= 0):
        raise WeightError("weights must be strictly positive and finite")
    if g.sum() < UNDERFLOW:
        raise WeightError("total weight underflows")


def _phi_values(phi, values) -> np.ndarray:
    return np.array([phi(v) for v in values], dtype=float)


@dataclass(frozen=True)
class ResampleTrace:
    """Record of one augmented resampling call.

    ``v[k]`` is the weight row ``V_k``; ``parents[k - 1, i]`` is the index at
    level ``k - 1`` that particle ``i`` of level ``k`` copied; ``origins[k, i]``
    is the input index particle ``(k, i)`` descends from.
    """

    schedule: Schedule
    inputs: ParticleSystem
    v: np.ndarray
    parents: np.ndarray
    origins: np.ndarray

    @property
    def output_origins(self) -> np.ndarray:
        return self.origins[-1]


def v_table(ps: ParticleSystem, s: Schedule, exact: bool = False) -> np.ndarray:
    """Rows ``V_0 .. V_m``; rational entries (object array) when ``exact``."""
    if len(ps) != s.n_particles:
        raise WeightError(f"{len(ps)} particles for a schedule of size {s.n_particles}")
    g = np.array(ps.exact_weights(), dtype=object) if exact else ps.weights()
    if exact and any(w <= 0 for w in g):
        raise WeightError("weights must be strictly positive")
    rows = [g]
    for k in range(1, s.n_stages + 1):
        rows.append(apply_stage(s, k, rows[-1]))
    return np.array(rows)


def augmented_resample(ps: ParticleSystem, s: Schedule, streams: Streams,
                       step: int = 0) -> tuple:
    """Resample ``ps`` through every stage of ``s``.

    Returns the output particle system and the :class:`ResampleTrace`.
    """
    n, m = s.n_particles, s.n_stages
    if len(ps) != n:
        raise WeightError(f"{len(ps)} particles for a schedule of size {n}")
    g = ps.weights()
    v = np.empty((m + 1, n))
    origins = np.empty((m + 1, n), dtype=np.int64)
    parents = np.empty((m, n), dtype=np.int64)
    kernels.resample_all(np.arange(n), g, stage_table(s), streams.key, np.uint64(step),
                         v, origins, parents)
    trace = ResampleTrace(s, ps, v, parents, origins)
    return ps.take(origins[-1]), trace


# exact enumeration ----------------------------------------------------------

@dataclass(frozen=True)
class ExactOutputLaw:
    """Joint law of all ancestral indices given the inputs.

    ``outcomes`` holds ``(origins, probability)`` pairs with ``origins`` an
    ``(m + 1) x N`` tuple table as in :class:`ResampleTrace` and rational
    probabilities.
    """

    schedule: Schedule
    v: np.ndarray
    outcomes: tuple

    def expect(self, fn: Callable) -> Fraction:
        return sum((p * fn(o) for o, p in self.outcomes), Fraction(0))

    def marginal(self, i: int) -> list:
        """Law of the input index of output ``i``."""
        out = [Fraction(0)] * self.schedule.n_particles
        for o, p in self.outcomes:
            out[o[-1][i]] += p
        return out

    def pair_marginal(self, i: int, j: int) -> dict:
        out: dict = {}
        for o, p in self.outcomes:
            key = (o[-1][i], o[-1][j])
            out[key] = out.get(key, Fraction(0)) + p
        return out

    def output_law(self) -> dict:
        """Law of the vector of output origins."""
        out: dict = {}
        for o, p in self.outcomes:
            out[o[-1]] = out.get(o[-1], Fraction(0)) + p
        return out


def exact_output_distribution(ps: ParticleSystem, s: Schedule,
                              cap: int = ENUMERATION_CAP) -> ExactOutputLaw:
    """Enumerate every assignment of ancestral indices with its probability."""
    n, m = s.n_particles, s.n_stages
    v = v_table(ps, s, exact=True)
    choices = []
    for k in range(1, m + 1):
        for i in range(n):
            row = stage_row(s, k, i)
            choices.append([(j, w * v[k - 1][j] / v[k][i]) for j, w in row.entries])
    size = prod(len(c) for c in choices)
    if size > cap:
        raise CapacityError(f"{size} ancestral assignments exceed the cap {cap}")
    outcomes = []
    for pick in product(*choices):
        p = Fraction(1)
        levels = [tuple(range(n))]
        for k in range(m):
            prev = levels[-1]
            row = pick[k * n:(k + 1) * n]
            levels.append(tuple(prev[j] for j, _ in row))
            for _, q in row:
                p *= q
        outcomes.append((tuple(levels), p))
    return ExactOutputLaw(s, v, tuple(outcomes))


@dataclass(frozen=True)
class BiasReport:
    lhs: float
    rhs: float
    diff: float
    se: float | None = None
    replicates: int | None = None

    @property
    def passed(self) -> bool:
        if self.se is None:
            return self.diff <= 1e-12
        return self.diff <= 4 * self.se


def weighted_mean(ps: ParticleSystem, phi: Callable) -> float:
    g = ps.weights()
    return float(np.dot(g, _phi_values(phi, ps.values)) / g.sum())


def lack_of_bias_check(ps: ParticleSystem, s: Schedule, phi: Callable, *, exact: bool = True,
                       seed: int = 0, replicates: int = 10_000, step: int = 0) -> BiasReport:
    """Compare the mean of ``phi`` over outputs with the weighted input mean.

    Exact mode averages over the enumerated law in rational arithmetic; Monte
    Carlo mode averages ``replicates`` independent resamplings.
    """
    if exact:
        law = exact_output_distribution(ps, s)
        g = ps.exact_weights()
        phis = [exact_value(phi(v)) for v in ps.values]
        rhs = sum(a * b for a, b in zip(g, phis)) / sum(g)
        n = s.n_particles
        lhs = law.expect(lambda o: sum(phis[j] for j in o[-1]) / n)
        return BiasReport(float(lhs), float(rhs), float(abs(lhs - rhs)))
    out = resample_functional_samples(ps, s, phi, seed=seed, replicates=replicates, step=step)
    rhs = weighted_mean(ps, phi)
    lhs = float(out.mean())
    se = float(out.std(ddof=1) / sqrt(replicates)) if replicates > 1 else float("inf")
    return BiasReport(lhs, rhs, abs(lhs - rhs), se, replicates)


def resample_functional_samples(ps: ParticleSystem, s: Schedule, phi: Callable, *,
                                seed: int, replicates: int, step: int = 0,
                                first_replicate: int = 0) -> np.ndarray:
    """``mean(phi(outputs))`` for independent resamplings of the same inputs."""
    g = ps.weights()
    phis = _phi_values(phi, ps.values)
    out = np.empty(replicates)
    kernels.resample_functional_batch(g, phis, stage_table(s), np.uint64(seed),
                                      first_replicate, first_replicate + replicates,
                                      np.uint64(step), out)
    return out


# martingale decomposition ---------------------------------------------------

@dataclass(frozen=True)
class MartingaleTrace:
    """Increments ``X_rho`` of the resampling error and their scale ``S``.

    Increments are ordered stage by stage (``N`` per stage for the first
    ``m - d`` stages) followed by one increment per partition block.
    """

    d: int
    partition: Partition
    choice: np.ndarray
    increments: np.ndarray
    scale: float
    bounds: np.ndarray

    @property
    def total(self) -> float:
        """``S^{-1} * sum(X)``."""
        return float(self.increments.sum() / self.scale)


def martingale_scale(n: int, m: int, d: int, n_blocks: int) -> float:
    return ((m - d) / n + 1 / n_blocks) ** -0.5


def _raw_increments(s: Schedule, v: np.ndarray, origins: np.ndarray, phibar: np.ndarray,
                    d: int, choice: np.ndarray) -> np.ndarray:
    """Increments without the factor ``S``; float or rational entries."""
    n, m = s.n_particles, s.n_stages
    out = []
    for q in range(1, m - d + 1):
        prev = v[q - 1] * phibar[origins[q - 1]]
        out.append(v[q] * phibar[origins[q]] / n - apply_stage(s, q, prev) / n)
    h = v[m - d] * phibar[origins[m - d]]
    for k in range(m - d + 1, m + 1):
        h = apply_stage(s, k, h)
    reps = np.asarray(choice)
    out.append((v[m][reps] * phibar[origins[m][reps]] - h[reps]) / len(reps))
    return np.concatenate(out) if out else np.empty(0)


def _check_choice(part: Partition, choice) -> np.ndarray:
    reps = np.asarray(choice, dtype=np.int64)
    if reps.shape != (len(part.blocks),):
        raise AssumptionError("the choice needs one representative per block")
    for u, i in enumerate(reps):
        if int(i) not in part.blocks[u]:
            raise AssumptionError(f"representative {int(i)} is not in block {u}")
    return reps


def martingale_increments(trace: ResampleTrace, part: Partition, choice,
                          phi: Callable) -> MartingaleTrace:
    """Decompose the resampling error of ``trace`` into martingale increments."""
    s = trace.schedule
    n, m, d = s.n_particles, s.n_stages, part.d
    reps = _check_choice(part, choice)
    g = trace.v[0]
    phis = _phi_values(phi, trace.inputs.values)
    phibar = phis - np.dot(g, phis) / g.sum()
    scale = martingale_scale(n, m, d, len(reps))
    raw = _raw_increments(s, trace.v, trace.origins, phibar, d, reps)
    osc = float(phis.max() - phis.min())
    sup = float(g.max())
    bounds = np.concatenate([np.full((m - d) * n, scale / n * sup * osc),
                             np.full(len(reps), scale / len(reps) * sup * osc)])
    return MartingaleTrace(d, part, reps, scale * raw, scale, bounds)


def martingale_target(trace: ResampleTrace, choice, phi: Callable) -> float:
    """Mean input weight times the block average of ``phi`` minus ``mean(g * phi)``."""
    g = trace.v[0]
    phis = _phi_values(phi, trace.inputs.values)
    reps = np.asarray(choice)
    out = phis[trace.origins[-1][reps]].mean()
    return float(g.mean() * out - np.mean(g * phis))


def martingale_conditional_means(ps: ParticleSystem, s: Schedule, part: Partition, choice,
                                 phi: Callable) -> list:
    """Exact ``E[X_rho | past]`` (up to the factor ``S``) for every past.

    The past of a stage increment ``(q, i)`` is the whole of levels
    ``0..q-1`` plus particles ``0..i-1`` of level ``q``; the past of the
    block increment for block ``u`` is levels ``0..m-d`` plus the chosen
    outputs of blocks ``0..u-1``.  Returns the distinct conditional means.
    """
    n, m, d = s.n_particles, s.n_stages, part.d
    reps = _check_choice(part, choice)
    law = exact_output_distribution(ps, s)
    g = ps.exact_weights()
    phis = [exact_value(phi(v)) for v in ps.values]
    mean = sum(a * b for a, b in zip(g, phis)) / sum(g)
    phibar = np.array([f - mean for f in phis], dtype=object)
    n_inc = (m - d) * n + len(reps)
    sums: list = [dict() for _ in range(n_inc)]
    for origins, p in law.outcomes:
        table = np.array(origins, dtype=np.int64)
        x = _raw_increments(s, law.v, table, phibar, d, reps)
        for rho in range(n_inc):
            if rho < (m - d) * n:
                q, i = divmod(rho, n)
                past = (origins[:q + 1], origins[q + 1][:i])
            else:
                u = rho - (m - d) * n
                past = (origins[:m - d + 1], tuple(origins[m][j] for j in reps[:u]))
            acc = sums[rho].setdefault(past, [Fraction(0), Fraction(0)])
            acc[0] += p * x[rho]
            acc[1] += p
    return sorted({a / b for table in sums for a, b in table.values()})


# conditional second moment --------------------------------------------------

def conditional_second_moment_closed_form(ps: ParticleSystem, s: Schedule,
                                          phi: Callable) -> float:
    """Second moment of the resampling error given the inputs, by path counting.

    The error is ``mean(g) * mean(phi(outputs)) - mean(g * phi(inputs))``.
    Pairs of inputs contribute through the number of output-path pairs that
    collide (share a vertex below the input row) or do not.
    """
    n = s.n_particles
    g = ps.weights()
    phis = _phi_values(phi, ps.values)
    phibar = phis - np.dot(g, phis) / g.sum()
    gp = g * phibar
    total = np.sum(gp**2) / n**2
    cross = 0.0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            hits, misses = collision_cardinalities(s, i, j)
            cross += gp[i] * phibar[i] * g[j] * hits + gp[i] * gp[j] * misses
    return float(total + cross / n**4)


def conditional_second_moment_exact(ps: ParticleSystem, s: Schedule, phi: Callable) -> Fraction:
    """Enumeration oracle: ``(m / N) E[(sum X)^2 | inputs]`` with singleton blocks."""
    part = _singletons(s)
    reps = np.arange(s.n_particles)
    law = exact_output_distribution(ps, s)
    g = ps.exact_weights()
    phis = [exact_value(phi(v)) for v in ps.values]
    mean = sum(a * b for a, b in zip(g, phis)) / sum(g)
    phibar = np.array([f - mean for f in phis], dtype=object)

    def square(origins):
        x = _raw_increments(s, law.v, np.array(origins, dtype=np.int64), phibar, part.d, reps)
        return sum(x) ** 2

    # (m / N) * S^2 = 1 when every block is a singleton
    return law.expect(square)


def _singletons(s: Schedule) -> Partition:
    return Partition(1, tuple((i,) for i in range(s.n_particles)), 1)
