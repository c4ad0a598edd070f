"""Particle filter with augmented resampling, for finite-state models.

Each time step records the empirical mean of every test function before
resampling (predictor) and after it (filter), then mutates each particle
through the transition matrix.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ButterflyError
from .hmm import FiniteHmm
from .schedule import Schedule, stage_table


@dataclass(frozen=True)
class FilterRun:
    """One replicate: ``pred[n, f]`` and ``filt[n, f]`` for test function ``f``.

    ``particles[n, 0]`` / ``particles[n, 1]`` hold the states before / after
    resampling at step ``n`` when the run kept them.
    """

    schedule: Schedule
    horizon: int
    phis: np.ndarray
    pred: np.ndarray
    filt: np.ndarray
    seed: int
    replicate: int
    particles: np.ndarray | None = None


@dataclass(frozen=True)
class FilterBatch:
    """Many replicates: arrays indexed ``[replicate, n, f]`` (blocks ``[r, n, b, f]``)."""

    schedule: Schedule
    phis: np.ndarray
    pred: np.ndarray
    filt: np.ndarray
    block_filt: np.ndarray
    seed: int
    first_replicate: int


def as_phi_table(phis, n_states: int) -> np.ndarray:
    table = np.atleast_2d(np.asarray(phis, dtype=float))
    if table.shape[1] != n_states:
        raise ButterflyError(f"test functions need {n_states} values, got {table.shape[1]}")
    return np.ascontiguousarray(table)


def _inputs(hmm: FiniteHmm, obs, horizon: int):
    if horizon < 0 or horizon >= len(obs):
        raise ButterflyError(f"horizon {horizon} needs {horizon + 1} observations, have {len(obs)}")
    weights = np.ascontiguousarray(hmm.weight_table(obs[:horizon + 1]))
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise ButterflyError("emission weights must be strictly positive and finite")
    pi0_cum = np.cumsum(hmm.pi0)
    trans_cum = np.ascontiguousarray(np.cumsum(hmm.trans, axis=1))
    return pi0_cum, trans_cum, weights


def run_filter(hmm: FiniteHmm, obs, s: Schedule, horizon: int, phis, seed: int,
               replicate: int = 0, keep_particles: bool = False) -> FilterRun:
    """A single filter replicate; deterministic in ``(seed, replicate)``."""
    pi0_cum, trans_cum, weights = _inputs(hmm, obs, horizon)
    table = as_phi_table(phis, hmm.n_states)
    steps, f = horizon + 1, table.shape[0]
    pred = np.empty((1, steps, f))
    filt = np.empty((1, steps, f))
    blocks = np.zeros((0, 1), dtype=np.int64)
    shape = (1, steps, 2, s.n_particles) if keep_particles else (0, 0, 0, 0)
    keep = np.empty(shape, dtype=np.int64)
    kernels.filter_batch(pi0_cum, trans_cum, weights, table, blocks, stage_table(s),
                         np.uint64(seed), replicate, replicate + 1, pred, filt,
                         np.empty((1, steps, 0, f)), keep)
    return FilterRun(s, horizon, table, pred[0], filt[0], seed, replicate,
                     keep[0] if keep_particles else None)


def run_filter_batch(hmm: FiniteHmm, obs, s: Schedule, horizon: int, phis, seed: int,
                     replicates: int, *, blocks=None, first_replicate: int = 0,
                     workers: int = 1, chunk: int = 64) -> FilterBatch:
    """Replicates ``first_replicate ..`` of the filter, split over ``workers`` threads.

    ``blocks`` is an optional ``(B, L)`` array of particle indices whose
    filtered averages are recorded.  The output does not depend on
    ``workers`` or ``chunk``.
    """
    pi0_cum, trans_cum, weights = _inputs(hmm, obs, horizon)
    table = as_phi_table(phis, hmm.n_states)
    steps, f = horizon + 1, table.shape[0]
    blocks = np.zeros((0, 1), dtype=np.int64) if blocks is None else np.asarray(blocks, np.int64)
    if blocks.size and (blocks.min() < 0 or blocks.max() >= s.n_particles):
        raise ButterflyError("block indices outside the population")
    pred = np.empty((replicates, steps, f))
    filt = np.empty((replicates, steps, f))
    block_filt = np.empty((replicates, steps, blocks.shape[0], f))
    stages = stage_table(s)
    keep = np.empty((0, 0, 0, 0), dtype=np.int64)

    def work(lo: int, hi: int) -> None:
        kernels.filter_batch(pi0_cum, trans_cum, weights, table, blocks, stages, np.uint64(seed),
                             first_replicate + lo, first_replicate + hi, pred[lo:hi],
                             filt[lo:hi], block_filt[lo:hi], keep)

    spans = [(lo, min(lo + chunk, replicates)) for lo in range(0, replicates, chunk)]
    if workers <= 1:
        for lo, hi in spans:
            work(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda span: work(*span), spans))
    return FilterBatch(s, table, pred, filt, block_filt, seed, first_replicate)


def block_functional(run: FilterRun, block, phi, n: int) -> float:
    """Filtered average of ``phi`` over the particles listed in ``block`` at step ``n``."""
    if run.particles is None:
        raise ButterflyError("block functionals need a run made with keep_particles=True")
    idx = np.asarray(block, dtype=np.int64)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= run.schedule.n_particles:
        raise ButterflyError("invalid block")
    return float(np.asarray(phi, dtype=float)[run.particles[n, 1, idx]].mean())


def run_bpf_direct(hmm: FiniteHmm, obs, n_particles: int, horizon: int, phis, seed: int,
                   replicates: int) -> np.ndarray:
    """Bootstrap filter resampling with ``Generator.choice``; returns ``filt[r, n, f]``.

    An independent implementation used to cross-check the one-stage
    multinomial schedule.
    """
    _, trans_cum, weights = _inputs(hmm, obs, horizon)
    table = as_phi_table(phis, hmm.n_states)
    out = np.empty((replicates, horizon + 1, table.shape[0]))
    for rep in range(replicates):
        rng = np.random.default_rng([seed, rep])
        x = rng.choice(hmm.n_states, size=n_particles, p=hmm.pi0)
        for t in range(horizon + 1):
            if t > 0:
                u = rng.random(n_particles)
                x = (trans_cum[x] <= u[:, None]).sum(axis=1).clip(max=hmm.n_states - 1)
            w = weights[t, x]
            x = x[rng.choice(n_particles, size=n_particles, p=w / w.sum())]
            out[rep, t] = table[:, x].mean(axis=1)
    return out
