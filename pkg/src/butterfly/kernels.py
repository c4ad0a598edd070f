"""Compiled inner loops: stage resampling, mutation and whole filter replicates.

Schedules enter as an ``(m, 3)`` integer array of ``(outer, fan, inner)``
triples.  Uniform number ``i`` of the stream for ``(step, purpose, stage)``
drives output particle ``i``, so results do not depend on loop order and the
replicate loops may be split across threads freely.
"""
from __future__ import annotations

import numba
import numpy as np

from .rng import INIT, MUTATE, RESAMPLE, replicate_key, stream_key, uniform_at

_LINEAR_SCAN_MAX = 16


@numba.njit(inline="always")
def _first_above(cum, n, t):
    # first q with cum[q] > t, clamped to n - 1; zero-mass entries are never chosen
    if n <= _LINEAR_SCAN_MAX:
        q = 0
        while q < n - 1 and cum[q] <= t:
            q += 1
        return q
    lo = 0
    hi = n - 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if cum[mid] > t:
            hi = mid
        else:
            lo = mid + 1
    return lo


@numba.njit(inline="always")
def _guided(cum, guide, n, tot, t):
    # guide[q] is the first index whose cumulative mass exceeds q * tot / n
    q = int(t * n / tot)
    if q >= n:
        q = n - 1
    j = guide[q]
    while j > 0 and cum[j - 1] > t:
        j -= 1
    while j < n - 1 and cum[j] <= t:
        j += 1
    return j


@numba.njit(nogil=True)
def fill_uniforms(u, key):
    # a contiguous pass lets the hash vectorize; the selection loops below are strided
    for i in range(u.shape[0]):
        u[i] = uniform_at(key, i)


@numba.njit(nogil=True)
def _pair_stage(vals_in, v_in, vals_out, v_out, outer, inner, u, parents, track):
    block = 2 * inner
    for alpha in range(outer):
        for gamma in range(inner):
            j0 = alpha * block + gamma
            j1 = j0 + inner
            w0 = v_in[j0]
            tot = w0 + v_in[j1]
            mean = tot / 2
            # branch-free: the pick is a coin flip for the branch predictor
            s0 = np.int64(u[j0] * tot >= w0) * inner
            s1 = np.int64(u[j1] * tot >= w0) * inner
            vals_out[j0] = vals_in[j0 + s0]
            vals_out[j1] = vals_in[j0 + s1]
            v_out[j0] = mean
            v_out[j1] = mean
            if track:
                parents[j0] = j0 + s0
                parents[j1] = j0 + s1


@numba.njit(nogil=True)
def _narrow_stage(vals_in, v_in, vals_out, v_out, outer, fan, inner, u, cum, parents, track):
    block = fan * inner
    for alpha in range(outer):
        for gamma in range(inner):
            base = alpha * block + gamma
            tot = 0.0
            for beta in range(fan):
                tot += v_in[base + beta * inner]
                cum[beta] = tot
            mean = tot / fan
            for beta in range(fan):
                i = base + beta * inner
                j = base + _first_above(cum, fan, u[i] * tot) * inner
                vals_out[i] = vals_in[j]
                v_out[i] = mean
                if track:
                    parents[i] = j


@numba.njit(nogil=True)
def _wide_stage(vals_in, v_in, vals_out, v_out, outer, fan, inner, u, cum, guide, parents,
                track):
    block = fan * inner
    for alpha in range(outer):
        for gamma in range(inner):
            base = alpha * block + gamma
            tot = 0.0
            for beta in range(fan):
                tot += v_in[base + beta * inner]
                cum[beta] = tot
            mean = tot / fan
            j = 0
            for q in range(fan):
                while j < fan - 1 and cum[j] <= q * tot / fan:
                    j += 1
                guide[q] = j
            for beta in range(fan):
                i = base + beta * inner
                j = base + _guided(cum, guide, fan, tot, u[i] * tot) * inner
                vals_out[i] = vals_in[j]
                v_out[i] = mean
                if track:
                    parents[i] = j


@numba.njit(nogil=True)
def resample_stage(vals_in, v_in, vals_out, v_out, outer, fan, inner, key, cum, guide, u,
                   parents):
    """One stage of augmented resampling.

    Output ``i`` copies input ``j`` from its fan-in group with probability
    ``v_in[j] / sum(group)``; ``v_out[i]`` is the group mean.  ``parents`` is
    either empty or receives the chosen ``j`` for every ``i``.  ``cum`` and
    ``guide`` are scratch arrays of length at least ``fan``, ``u`` of length N.
    All three selection loops pick the first index whose cumulative weight
    exceeds ``u * total``, so they agree draw for draw.
    """
    fill_uniforms(u, key)
    track = parents.shape[0] > 0
    if fan == 2:
        _pair_stage(vals_in, v_in, vals_out, v_out, outer, inner, u, parents, track)
    elif fan > _LINEAR_SCAN_MAX:
        _wide_stage(vals_in, v_in, vals_out, v_out, outer, fan, inner, u, cum, guide, parents,
                    track)
    else:
        _narrow_stage(vals_in, v_in, vals_out, v_out, outer, fan, inner, u, cum, parents, track)


@numba.njit(nogil=True)
def resample_all(vals, weights, stages, rep_key, step, v_table, val_table, parents):
    """Run every stage; fills ``v_table`` and ``val_table`` (``m + 1`` rows).

    ``parents`` is ``(m, N)`` to record ancestral indices or ``(0, 0)``.
    """
    m = stages.shape[0]
    n = vals.shape[0]
    cum = np.empty(int(stages[:, 1].max()))
    guide = np.empty(cum.shape[0], np.int64)
    ubuf = np.empty(stages[0, 0] * stages[0, 1] * stages[0, 2])
    v_table[0, :] = weights
    val_table[0, :] = vals
    empty = np.empty(0, np.int64)
    for k in range(m):
        key = stream_key(rep_key, step, RESAMPLE, k + 1)
        par = parents[k] if parents.shape[0] > 0 else empty
        resample_stage(val_table[k], v_table[k], val_table[k + 1], v_table[k + 1],
                       stages[k, 0], stages[k, 1], stages[k, 2], key, cum, guide, ubuf, par)
    return n


@numba.njit(nogil=True)
def _check_weights(w):
    tot = 0.0
    for i in range(w.shape[0]):
        if not (w[i] > 0.0) or not np.isfinite(w[i]):
            raise ValueError("weights must be strictly positive and finite")
        tot += w[i]
    if tot < 1e-300:
        raise ValueError("total weight underflows")


@numba.njit(nogil=True)
def resample_functional_batch(weights, phi, stages, seed, rep_lo, rep_hi, step, out):
    """Mean of ``phi`` over the outputs of one resampling of fixed inputs.

    Inputs are particle indices ``0..N-1`` with weights ``weights``;
    ``phi[j]`` is the test function at input ``j``.  Row ``r - rep_lo`` of
    ``out`` receives replicate ``r``.
    """
    _check_weights(weights)
    n = weights.shape[0]
    m = stages.shape[0]
    cum = np.empty(int(stages[:, 1].max()))
    guide = np.empty(cum.shape[0], np.int64)
    ubuf = np.empty(stages[0, 0] * stages[0, 1] * stages[0, 2])
    idx = np.arange(n)
    a_val = np.empty(n, np.int64)
    b_val = np.empty(n, np.int64)
    a_v = np.empty(n)
    b_v = np.empty(n)
    empty = np.empty(0, np.int64)
    for rep in range(rep_lo, rep_hi):
        rk = replicate_key(np.uint64(seed), np.uint64(rep))
        a_val[:] = idx
        a_v[:] = weights
        for k in range(m):
            key = stream_key(rk, step, RESAMPLE, k + 1)
            resample_stage(a_val, a_v, b_val, b_v, stages[k, 0], stages[k, 1], stages[k, 2],
                           key, cum, guide, ubuf, empty)
            a_val, b_val = b_val, a_val
            a_v, b_v = b_v, a_v
        acc = 0.0
        for i in range(n):
            acc += phi[a_val[i]]
        out[rep - rep_lo] = acc / n


@numba.njit(inline="always")
def _draw(cum_row, n, u):
    return _first_above(cum_row, n, u * cum_row[n - 1])


@numba.njit(nogil=True)
def filter_batch(pi0_cum, trans_cum, weights, phis, blocks, stages, seed, rep_lo, rep_hi,
                 pred, filt, block_filt, keep):
    """Particle filter replicates ``rep_lo .. rep_hi - 1``.

    ``weights[n, s]`` is the likelihood of state ``s`` at time ``n``;
    ``phis[f, s]`` the test functions; ``blocks[b]`` a set of particle
    indices whose filtered average is recorded.  Outputs are indexed by
    ``rep - rep_lo``: ``pred``/``filt`` are ``(R, T + 1, F)``, ``block_filt``
    ``(R, T + 1, B, F)`` and ``keep`` either ``(0, 0, 0, 0)`` or
    ``(R, T + 1, 2, N)`` for storing the particles themselves.
    """
    n_steps = weights.shape[0]
    n_states = weights.shape[1]
    n_funcs = phis.shape[0]
    n_blocks = blocks.shape[0]
    block_len = blocks.shape[1]
    m = stages.shape[0]
    n = stages[0, 0] * stages[0, 1] * stages[0, 2]
    store = keep.shape[0] > 0
    cum = np.empty(int(stages[:, 1].max()))
    guide = np.empty(cum.shape[0], np.int64)
    ubuf = np.empty(stages[0, 0] * stages[0, 1] * stages[0, 2])
    x = np.empty(n, np.int64)
    y = np.empty(n, np.int64)
    v = np.empty(n)
    w = np.empty(n)
    empty = np.empty(0, np.int64)
    for rep in range(rep_lo, rep_hi):
        out = rep - rep_lo
        rk = replicate_key(np.uint64(seed), np.uint64(rep))
        key = stream_key(rk, 0, INIT, 0)
        for i in range(n):
            x[i] = _draw(pi0_cum, n_states, uniform_at(key, i))
        for t in range(n_steps):
            if t > 0:
                key = stream_key(rk, t, MUTATE, 0)
                for i in range(n):
                    x[i] = _draw(trans_cum[x[i]], n_states, uniform_at(key, i))
            for f in range(n_funcs):
                acc = 0.0
                for i in range(n):
                    acc += phis[f, x[i]]
                pred[out, t, f] = acc / n
            if store:
                keep[out, t, 0, :] = x
            tot = 0.0
            for i in range(n):
                v[i] = weights[t, x[i]]
                tot += v[i]
            if tot < 1e-300:
                raise ValueError("total weight underflows")
            for k in range(m):
                key = stream_key(rk, t, RESAMPLE, k + 1)
                resample_stage(x, v, y, w, stages[k, 0], stages[k, 1], stages[k, 2],
                               key, cum, guide, ubuf, empty)
                x, y = y, x
                v, w = w, v
            for f in range(n_funcs):
                acc = 0.0
                for i in range(n):
                    acc += phis[f, x[i]]
                filt[out, t, f] = acc / n
                for b in range(n_blocks):
                    acc = 0.0
                    for q in range(block_len):
                        acc += phis[f, x[blocks[b, q]]]
                    block_filt[out, t, b, f] = acc / block_len
            if store:
                keep[out, t, 1, :] = x
