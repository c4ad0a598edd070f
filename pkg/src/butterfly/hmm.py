"""Finite-state hidden Markov models and their exact forward recursion."""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from .errors import ButterflyError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_TOL = 1e-12


@dataclass(frozen=True)
class FiniteHmm:
    """``S``-state chain with positive emission densities.

    Exactly one of ``emission`` (an ``S x K`` table over observations
    ``0..K-1``) or ``gauss`` (per-state means and a common standard
    deviation) describes the observation model.
    """

    pi0: np.ndarray
    trans: np.ndarray
    emission: np.ndarray | None = None
    gauss: tuple | None = None

    def __post_init__(self):
        pi0 = np.asarray(self.pi0, dtype=float)
        trans = np.asarray(self.trans, dtype=float)
        object.__setattr__(self, "pi0", pi0)
        object.__setattr__(self, "trans", trans)
        n = pi0.shape[0]
        if pi0.ndim != 1 or np.any(pi0 < 0) or abs(pi0.sum() - 1) > _TOL:
            raise ButterflyError("pi0 must be a probability vector")
        if trans.shape != (n, n) or np.any(trans < 0) or np.any(abs(trans.sum(1) - 1) > _TOL):
            raise ButterflyError("trans must be a row-stochastic S x S matrix")
        if (self.emission is None) == (self.gauss is None):
            raise ButterflyError("give exactly one of an emission table or gaussian parameters")
        if self.emission is not None:
            emit = np.asarray(self.emission, dtype=float)
            object.__setattr__(self, "emission", emit)
            if emit.ndim != 2 or emit.shape[0] != n or not np.all(emit > 0):
                raise ButterflyError("emission table must be S x K and strictly positive")
        else:
            means, sd = self.gauss
            means = tuple(float(x) for x in means)
            if len(means) != n or not sd > 0:
                raise ButterflyError("gaussian model needs S means and a positive sd")
            object.__setattr__(self, "gauss", (means, float(sd)))

    @property
    def n_states(self) -> int:
        return self.pi0.shape[0]

    def weights(self, y) -> np.ndarray:
        """``g(x, y)`` for every state ``x``."""
        if self.emission is not None:
            return self.emission[:, int(y)].copy()
        means, sd = self.gauss
        z = (float(y) - np.asarray(means)) / sd
        return np.exp(-0.5 * z * z) / (sd * np.sqrt(2 * np.pi))

    def weight_table(self, obs) -> np.ndarray:
        return np.array([self.weights(y) for y in obs])

    def to_dict(self) -> dict:
        out = {"pi0": self.pi0.tolist(), "trans": self.trans.tolist()}
        if self.emission is not None:
            out["emission"] = self.emission.tolist()
        else:
            out["gaussian"] = {"means": list(self.gauss[0]), "sd": self.gauss[1]}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FiniteHmm":
        if "gaussian" in d:
            gauss = (d["gaussian"]["means"], d["gaussian"]["sd"])
            return cls(d["pi0"], d["trans"], gauss=gauss)
        return cls(d["pi0"], d["trans"], emission=d["emission"])


def binary_symmetric(p: float = 0.1, q: float = 0.2, pi0=(0.5, 0.5)) -> FiniteHmm:
    """Two states that flip with probability ``p``, observed through a channel
    that reports the wrong state with probability ``q``."""
    return FiniteHmm(pi0, [[1 - p, p], [p, 1 - p]], emission=[[1 - q, q], [q, 1 - q]])


def random_model(n_states: int = 3, n_obs: int = 3, seed: int = 0) -> FiniteHmm:
    rng = np.random.default_rng(seed)
    pi0 = rng.dirichlet(np.ones(n_states))
    trans = rng.dirichlet(np.ones(n_states), size=n_states)
    emit = rng.dirichlet(np.ones(n_obs), size=n_states) + 0.01
    return FiniteHmm(pi0, trans, emission=emit)


def load_model(path) -> FiniteHmm:
    path = Path(path)
    if path.suffix == ".toml":
        with path.open("rb") as fh:
            return FiniteHmm.from_dict(tomllib.load(fh))
    return FiniteHmm.from_dict(json.loads(path.read_text()))


def save_model(hmm: FiniteHmm, path) -> None:
    Path(path).write_text(json.dumps(hmm.to_dict(), indent=2) + "\n")


def load_observations(path) -> list:
    data = json.loads(Path(path).read_text())
    return data["observations"] if isinstance(data, dict) else data


def save_observations(obs, path) -> None:
    Path(path).write_text(json.dumps({"observations": list(obs)}) + "\n")


def simulate(hmm: FiniteHmm, horizon: int, rng) -> tuple:
    """States ``x_0..x_T`` and observations ``y_0..y_T``."""
    rng = np.random.default_rng(rng)
    n = hmm.n_states
    states = np.empty(horizon + 1, dtype=np.int64)
    states[0] = rng.choice(n, p=hmm.pi0)
    for t in range(1, horizon + 1):
        states[t] = rng.choice(n, p=hmm.trans[states[t - 1]])
    if hmm.emission is not None:
        k = hmm.emission.shape[1]
        probs = hmm.emission / hmm.emission.sum(1, keepdims=True)
        obs = [int(rng.choice(k, p=probs[x])) for x in states]
    else:
        means, sd = hmm.gauss
        obs = [float(rng.normal(means[x], sd)) for x in states]
    return states, obs


@dataclass(frozen=True)
class ExactFilter:
    """Predictors ``pred[n]``, filters ``filt[n]``, normalisers ``norm[n] = pred[n] . g_n``."""

    pred: np.ndarray
    filt: np.ndarray
    norm: np.ndarray
    weights: np.ndarray

    @property
    def horizon(self) -> int:
        return self.pred.shape[0] - 1

    def pred_value(self, phi, n: int) -> float:
        return float(self.pred[n] @ np.asarray(phi, dtype=float))

    def filt_value(self, phi, n: int) -> float:
        return float(self.filt[n] @ np.asarray(phi, dtype=float))


def exact_filter(hmm: FiniteHmm, obs) -> ExactFilter:
    g = hmm.weight_table(obs)
    steps, n = g.shape
    pred = np.empty((steps, n))
    filt = np.empty((steps, n))
    norm = np.empty(steps)
    p = hmm.pi0.copy()
    for t in range(steps):
        pred[t] = p
        z = p @ g[t]
        if not z > 0:
            raise ButterflyError(f"zero normaliser at step {t}")
        norm[t] = z
        filt[t] = p * g[t] / z
        p = filt[t] @ hmm.trans
    return ExactFilter(pred, filt, norm, g)


def trajectory_filter(hmm: FiniteHmm, obs) -> tuple:
    """Predictors and filters by summing over every state path (small models only)."""
    g = hmm.weight_table(obs)
    steps, n = g.shape
    if n ** steps > 10**6:
        raise ButterflyError("too many trajectories to enumerate")
    pred = np.zeros((steps, n))
    filt = np.zeros((steps, n))
    for t in range(steps):
        for path in product(range(n), repeat=t + 1):
            w = hmm.pi0[path[0]]
            for k in range(1, t + 1):
                w *= g[k - 1, path[k - 1]] * hmm.trans[path[k - 1], path[k]]
            pred[t, path[-1]] += w
            filt[t, path[-1]] += w * g[t, path[-1]]
        pred[t] /= pred[t].sum()
        filt[t] /= filt[t].sum()
    return pred, filt
