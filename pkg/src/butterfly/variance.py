"""Asymptotic variances of particle-filter estimates, per resampling family.

Each flavour is a pair of mutually recursive functionals ``pred(n, psi)`` and
``filt(n, psi)`` of a test function ``psi`` (a length-``S`` vector).  The
recursion feeds transformed functions such as ``F psi`` and
``g_n (psi - filt_n psi)`` back in, so it is evaluated on vectors rather than
on scalars.

* ``bpf``: multinomial resampling.
* ``radix``: radix-``r`` butterfly; the resampling term is damped by
  ``1 - 1/r`` and the mutation term is absent.
* ``mixed``: mixed radix-``r``; the resampling term is inflated by
  ``2 - 1/r``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ScheduleError
from .hmm import ExactFilter, FiniteHmm

FLAVORS = ("bpf", "radix", "mixed")


@dataclass(frozen=True)
class VarianceSeries:
    flavor: str
    r: int | None
    phi: np.ndarray
    pred: np.ndarray
    filt: np.ndarray

    def value(self, kind: str, n: int) -> float:
        return float((self.pred if kind == "pred" else self.filt)[n])


def _var(p: np.ndarray, psi: np.ndarray) -> float:
    return float(p @ (psi - p @ psi) ** 2)


def _mutation_var(trans: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """``x -> sum_y F[x, y] (psi(y) - (F psi)(x))^2``."""
    return (trans * (psi[None, :] - (trans @ psi)[:, None]) ** 2).sum(axis=1)


class _Recursion:
    def __init__(self, ef: ExactFilter, hmm: FiniteHmm, flavor: str, r: int | None):
        if flavor not in FLAVORS:
            raise ValueError(f"unknown flavour {flavor!r}")
        if flavor != "bpf" and (r is None or r < 2):
            raise ScheduleError("the butterfly recursions need r >= 2")
        self.ef, self.trans, self.flavor = ef, hmm.trans, flavor
        self.factor = {"bpf": 1.0, "radix": 1 - 1 / r if r else 1.0,
                       "mixed": 2 - 1 / r if r else 1.0}[flavor]

    def pred(self, n: int, psi: np.ndarray) -> float:
        ef = self.ef
        if n == 0:
            return _var(ef.pred[0], psi)
        out = self.filt(n - 1, self.trans @ psi)
        if self.flavor != "radix":
            out += float(ef.filt[n - 1] @ _mutation_var(self.trans, psi))
        return out

    def filt(self, n: int, psi: np.ndarray) -> float:
        ef = self.ef
        p = ef.filt[n]
        out = self.factor * _var(p, psi)
        if n == 0 and self.flavor == "radix":
            return out
        g = ef.weights[n]
        return out + self.pred(n, g * (psi - p @ psi)) / ef.norm[n] ** 2


def series(ef: ExactFilter, hmm: FiniteHmm, phi, horizon: int | None, flavor: str,
           r: int | None) -> VarianceSeries:
    """Variance series of one flavour; ``r`` is ignored for ``bpf``."""
    phi = np.asarray(phi, dtype=float)
    horizon = ef.horizon if horizon is None else horizon
    rec = _Recursion(ef, hmm, flavor, r)
    pred = np.array([rec.pred(n, phi) for n in range(horizon + 1)])
    filt = np.array([rec.filt(n, phi) for n in range(horizon + 1)])
    return VarianceSeries(flavor, r, phi, pred, filt)


def bpf_variance(ef: ExactFilter, hmm: FiniteHmm, phi, horizon: int | None = None) -> VarianceSeries:
    return series(ef, hmm, phi, horizon, "bpf", None)


def radix_variance(ef: ExactFilter, hmm: FiniteHmm, phi, horizon: int | None = None, *,
                   r: int) -> VarianceSeries:
    return series(ef, hmm, phi, horizon, "radix", r)


def mixed_variance(ef: ExactFilter, hmm: FiniteHmm, phi, horizon: int | None = None, *,
                   r: int) -> VarianceSeries:
    return series(ef, hmm, phi, horizon, "mixed", r)


def variance_for(family: str, ef: ExactFilter, hmm: FiniteHmm, phi, horizon: int | None = None,
                 r: int | None = None) -> VarianceSeries:
    """The series matching a schedule family (multinomial uses the bpf flavour)."""
    flavor = {"multinomial": "bpf", "radix": "radix", "mixed": "mixed"}[family]
    return series(ef, hmm, phi, horizon, flavor, r)
