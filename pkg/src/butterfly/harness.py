"""Monte Carlo experiments: CLT variances, bias, LLN rates and block moments.

An experiment is a pure function of its :class:`ExperimentConfig`: the
observation path, each grid point's seed and every replicate's random
streams derive from the master seed, so reruns and thread counts never
change an emitted number.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ButterflyError
from .filter import run_filter_batch
from .graph import build_partition
from .hmm import FiniteHmm, binary_symmetric, exact_filter, load_model, load_observations, \
    random_model, simulate
from .resample import ParticleSystem, lack_of_bias_check
from .schedule import Schedule, build_schedule
from .variance import variance_for

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

BUDGET = 5 * 10**9
CLT_COLUMNS = ("family", "r", "m_or_c", "N", "n", "functional", "kind", "scale",
               "emp_var", "emp_se", "theo_var", "pass")
SCHEMA_PATH = Path(__file__).with_name("summary.schema.json")
_DEGENERATE = 1e-14


# configuration --------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment depends on.

    ``grid`` lists ``m`` values for radix, ``c`` values for mixed radix and
    ``N`` values for multinomial.  ``model`` is a zoo entry
    (``{"zoo": "binary_symmetric", "p": .., "q": ..}``), a path
    (``{"path": ..}``) or an inline model table.  Observations come from
    ``obs_path`` if given, otherwise they are simulated from ``obs_seed``.
    """

    family: str
    grid: tuple
    r: int | None = None
    replicates: int = 1000
    horizon: int = 5
    functionals: tuple = ("indicator:1",)
    seed: int = 1
    model: dict = field(default_factory=lambda: {"zoo": "binary_symmetric"})
    obs_seed: int = 0
    obs_path: str | None = None
    rel_tol: float = 0.10
    eval_step: int | None = None
    workers: int = 1
    force: bool = False

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(x) for x in self.grid))
        object.__setattr__(self, "functionals", tuple(self.functionals))
        if self.family not in ("multinomial", "radix", "mixed"):
            raise ButterflyError(f"unknown family {self.family!r}")
        if self.family != "multinomial" and self.r is None:
            raise ButterflyError(f"{self.family} needs r")
        if not self.grid or min(self.grid) < 1:
            raise ButterflyError("grid values must be positive integers")
        if self.replicates < 2:
            raise ButterflyError("need at least two replicates")
        if self.eval_step is None:
            object.__setattr__(self, "eval_step", min(3, self.horizon))
        if not 0 <= self.eval_step <= self.horizon:
            raise ButterflyError("eval_step must lie in 0..horizon")

    def schedule(self, x: int) -> Schedule:
        if self.family == "radix":
            return build_schedule("radix", r=self.r, m=x)
        if self.family == "mixed":
            return build_schedule("mixed", r=self.r, c=x)
        return build_schedule("multinomial", n=x)

    def work(self) -> int:
        return sum(self.replicates * self.schedule(x).n_particles * (self.horizon + 1)
                   for x in self.grid)

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(d: dict, env=os.environ) -> ExperimentConfig:
    d = dict(d)
    if "BUTTERFLY_SEED" in env:
        d["seed"] = int(env["BUTTERFLY_SEED"])
    return ExperimentConfig(**d)


CONFIG_DIR = Path(__file__).with_name("configs")


def config_path(name: str) -> Path:
    """A shipped config, e.g. ``config_path("clt_radix")``."""
    path = CONFIG_DIR / f"{name}.toml"
    if not path.exists():
        raise ButterflyError(f"no shipped config {name!r}")
    return path


def load_config(path, env=os.environ) -> ExperimentConfig:
    path = Path(path)
    if path.suffix == ".toml":
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    else:
        data = json.loads(path.read_text())
    return config_from_dict(data, env)


def build_model(entry: dict) -> FiniteHmm:
    entry = dict(entry)
    if "path" in entry:
        return load_model(entry["path"])
    zoo = entry.pop("zoo", None)
    if zoo == "binary_symmetric":
        return binary_symmetric(**entry)
    if zoo == "random":
        return random_model(**entry)
    if zoo is not None:
        raise ButterflyError(f"unknown model {zoo!r}")
    return FiniteHmm.from_dict(entry)


def observations(cfg: ExperimentConfig, hmm: FiniteHmm) -> list:
    if cfg.obs_path:
        obs = load_observations(cfg.obs_path)
        if len(obs) < cfg.horizon + 1:
            raise ButterflyError("observation file shorter than the horizon")
        return list(obs[:cfg.horizon + 1])
    return simulate(hmm, cfg.horizon, cfg.obs_seed)[1]


def parse_phi(text: str, n_states: int) -> np.ndarray:
    """Test function from a short description.

    ``indicator:k`` (states numbered from 1), ``identity`` (the 0-based state
    number), ``constant:c`` or ``values:a,b,...``.
    """
    name, _, arg = text.partition(":")
    if name == "indicator":
        k = int(arg)
        if not 1 <= k <= n_states:
            raise ButterflyError(f"indicator state {k} outside 1..{n_states}")
        out = np.zeros(n_states)
        out[k - 1] = 1.0
        return out
    if name == "identity":
        return np.arange(n_states, dtype=float)
    if name == "constant":
        return np.full(n_states, float(arg or 1))
    if name == "values":
        out = np.array([float(x) for x in arg.split(",")])
        if out.shape != (n_states,):
            raise ButterflyError(f"values: needs {n_states} entries")
        return out
    raise ButterflyError(f"unknown test function {text!r}")


def point_seed(master: int, x: int) -> int:
    """Seed of one grid point, so grid points use unrelated streams."""
    return int(np.random.SeedSequence([master, x]).generate_state(1, np.uint64)[0])


def _check_budget(cfg: ExperimentConfig) -> None:
    if cfg.work() > BUDGET and not cfg.force:
        raise ButterflyError(f"{cfg.work():.3g} particle-steps exceed the budget of {BUDGET:.0e};"
                             " pass force to run anyway")


def scale_factor(family: str, n: int, r: int | None, kind: str, step: int) -> float:
    """``sqrt(N / log_r N)`` for radix (except the initial predictor), ``sqrt(N)`` otherwise."""
    if family == "radix" and not (kind == "pred" and step == 0):
        return math.sqrt(n / (math.log(n) / math.log(r)))
    return math.sqrt(n)


def variance_with_se(x: np.ndarray) -> tuple:
    """Sample variance and its standard error from the fourth central moment."""
    dev = x - x.mean()
    v = float(np.mean(dev**2))
    m4 = float(np.mean(dev**4))
    return v, math.sqrt(max(m4 - v * v, 0.0) / len(x))


# experiment context shared by the runners -----------------------------------

@dataclass(frozen=True)
class _Context:
    hmm: FiniteHmm
    obs: list
    phis: np.ndarray
    exact_pred: np.ndarray
    exact_filt: np.ndarray


def _context(cfg: ExperimentConfig) -> _Context:
    hmm = build_model(cfg.model)
    obs = observations(cfg, hmm)
    phis = np.array([parse_phi(f, hmm.n_states) for f in cfg.functionals])
    ef = exact_filter(hmm, obs)
    return _Context(hmm, obs, phis, ef.pred @ phis.T, ef.filt @ phis.T)


def _batch(cfg: ExperimentConfig, ctx: _Context, x: int, blocks=None):
    s = cfg.schedule(x)
    return s, run_filter_batch(ctx.hmm, ctx.obs, s, cfg.horizon, ctx.phis, point_seed(cfg.seed, x),
                               cfg.replicates, blocks=blocks, workers=cfg.workers)


def _version() -> str:
    from . import __version__
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                             cwd=Path(__file__).parent, capture_output=True, text=True,
                             timeout=5, check=True)
        return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        return __version__


# CLT ------------------------------------------------------------------------

@dataclass(frozen=True)
class CltRow:
    family: str
    r: int | None
    m_or_c: int
    N: int
    n: int
    functional: str
    kind: str
    scale: float
    emp_var: float
    emp_se: float
    theo_var: float
    status: str

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def csv_row(self) -> list:
        return [self.family, "" if self.r is None else self.r, self.m_or_c, self.N, self.n,
                self.functional, self.kind, repr(self.scale), repr(self.emp_var),
                repr(self.emp_se), repr(self.theo_var), self.status]


@dataclass
class CltResult:
    config: ExperimentConfig
    rows: list
    errors: dict
    wall_time: float = 0.0

    def row(self, x: int, n: int, functional: str, kind: str) -> CltRow:
        for row in self.rows:
            if (row.m_or_c, row.n, row.functional, row.kind) == (x, n, functional, kind):
                return row
        raise KeyError((x, n, functional, kind))

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def compare(emp: float, se: float, theo: float, rel_tol: float) -> str:
    if theo <= _DEGENERATE:
        return "skip"
    return "pass" if abs(emp - theo) <= max(3 * se, rel_tol * theo) else "fail"


def run_clt_experiment(cfg: ExperimentConfig) -> CltResult:
    """Scaled-error variances at every grid point against the asymptotic variances.

    ``errors[x]`` keeps the raw errors, shape ``(2, R, T + 1, F)`` with
    predictor first, for follow-up analyses.
    """
    _check_budget(cfg)
    start = time.perf_counter()
    ctx = _context(cfg)
    ef = exact_filter(ctx.hmm, ctx.obs)
    theo = [variance_for(cfg.family, ef, ctx.hmm, phi, cfg.horizon, cfg.r) for phi in ctx.phis]
    rows, errors = [], {}
    for x in cfg.grid:
        s, batch = _batch(cfg, ctx, x)
        err = np.stack([batch.pred - ctx.exact_pred[None], batch.filt - ctx.exact_filt[None]])
        errors[x] = err
        for n in range(cfg.horizon + 1):
            for f, name in enumerate(cfg.functionals):
                for k, kind in enumerate(("pred", "filt")):
                    scale = scale_factor(cfg.family, s.n_particles, cfg.r, kind, n)
                    v, se = variance_with_se(scale * err[k, :, n, f])
                    t = theo[f].value(kind, n)
                    rows.append(CltRow(cfg.family, cfg.r, x, s.n_particles, n, name, kind, scale,
                                       v, se, t, compare(v, se, t, cfg.rel_tol)))
    return CltResult(cfg, rows, errors, time.perf_counter() - start)


@dataclass(frozen=True)
class ScalingReport:
    """Regressions of scaled variances on ``m`` over a radix grid."""

    grid: tuple
    root_n: tuple
    root_n_log: tuple
    slope_root_n: float
    p_root_n: float
    slope_root_n_log: float
    p_root_n_log: float

    @property
    def passed(self) -> bool:
        return self.slope_root_n > 0 and self.p_root_n < 0.01 and self.p_root_n_log > 0.05


def scaling_discrimination(result: CltResult, n: int, functional: int = 0) -> ScalingReport:
    """Contrast ``sqrt(N)`` with ``sqrt(N / log_r N)`` scaling of filtered errors."""
    cfg = result.config
    if cfg.family != "radix" or len(cfg.grid) < 3:
        raise ButterflyError("scaling discrimination needs a radix grid of at least 3 points")
    root_n, root_n_log = [], []
    for m in cfg.grid:
        e = result.errors[m][1, :, n, functional]
        nn = cfg.r**m
        root_n.append(variance_with_se(math.sqrt(nn) * e)[0])
        root_n_log.append(variance_with_se(math.sqrt(nn / m) * e)[0])
    a = stats.linregress(cfg.grid, root_n)
    b = stats.linregress(cfg.grid, root_n_log)
    return ScalingReport(cfg.grid, tuple(root_n), tuple(root_n_log), float(a.slope),
                         float(a.pvalue), float(b.slope), float(b.pvalue))


# bias -----------------------------------------------------------------------

@dataclass(frozen=True)
class BiasRow:
    m_or_c: int
    N: int
    functional: str
    lhs: float
    rhs: float
    se: float
    passed: bool


def fixed_inputs(cfg: ExperimentConfig, ctx: _Context, n: int) -> ParticleSystem:
    """``N`` states drawn from the initial law, weighted by the first observation."""
    rng = np.random.default_rng([cfg.seed, n])
    states = rng.choice(ctx.hmm.n_states, size=n, p=ctx.hmm.pi0)
    g = ctx.hmm.weights(ctx.obs[0])
    return ParticleSystem(states, lambda x: g[x])


def run_bias_experiment(cfg: ExperimentConfig) -> list:
    """One resampling of fixed inputs, repeated ``replicates`` times per grid point."""
    ctx = _context(cfg)
    rows = []
    for x in cfg.grid:
        s = cfg.schedule(x)
        ps = fixed_inputs(cfg, ctx, s.n_particles)
        for f, name in enumerate(cfg.functionals):
            phi = ctx.phis[f]
            rep = lack_of_bias_check(ps, s, lambda v: phi[v], exact=False,
                                     seed=point_seed(cfg.seed, x), replicates=cfg.replicates)
            rows.append(BiasRow(x, s.n_particles, name, rep.lhs, rep.rhs, rep.se,
                                rep.diff <= 4 * rep.se or rep.diff == 0.0))
    return rows


# LLN ------------------------------------------------------------------------

@dataclass(frozen=True)
class LlnReport:
    config: ExperimentConfig
    sizes: tuple
    rmse: np.ndarray  # [grid, n, f] for filtered estimates
    slopes: np.ndarray  # [n, f]

    @property
    def passed(self) -> bool:
        s = self.slopes[self.config.eval_step]
        return bool(np.all((s >= -0.65) & (s <= -0.35)))

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["family", "r", "m_or_c", "N", "n", "functional", "rmse"])
        cfg = self.config
        for i, x in enumerate(cfg.grid):
            for n in range(cfg.horizon + 1):
                for f, name in enumerate(cfg.functionals):
                    w.writerow([cfg.family, cfg.r or "", x, cfg.schedule(x).n_particles, n, name,
                                repr(float(self.rmse[i, n, f]))])
        return buf.getvalue()


def effective_size(family: str, n: int, r: int | None) -> float:
    """``N / log_r N`` for radix, ``N`` otherwise."""
    return n / (math.log(n) / math.log(r)) if family == "radix" else float(n)


def run_lln_experiment(cfg: ExperimentConfig) -> LlnReport:
    """Root-mean-square filter error over the grid and its log-log slope."""
    _check_budget(cfg)
    ctx = _context(cfg)
    sizes, rmse = [], []
    for x in cfg.grid:
        s, batch = _batch(cfg, ctx, x)
        sizes.append(s.n_particles)
        rmse.append(np.sqrt(np.mean((batch.filt - ctx.exact_filt[None]) ** 2, axis=0)))
    rmse = np.array(rmse)
    xs = np.log([effective_size(cfg.family, n, cfg.r) for n in sizes])
    slopes = np.empty(rmse.shape[1:])
    for n in range(rmse.shape[1]):
        for f in range(rmse.shape[2]):
            slopes[n, f] = stats.linregress(xs, np.log(rmse[:, n, f])).slope
    return LlnReport(cfg, tuple(sizes), rmse, slopes)


# sub-population moments -----------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    config: ExperimentConfig
    d: int
    p: float
    sizes: tuple
    normalized: np.ndarray  # [grid, n, f]
    tau: np.ndarray  # [n, f]
    pvalue: np.ndarray  # [n, f]
    alpha: float = 0.05

    def upward(self) -> np.ndarray:
        return (self.tau > 0) & (self.pvalue < self.alpha)

    @property
    def passed(self) -> bool:
        return not bool(np.any(self.upward()[self.config.eval_step]))

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["family", "r", "m_or_c", "N", "d", "p", "n", "functional",
                    "normalized_moment"])
        cfg = self.config
        for i, x in enumerate(cfg.grid):
            for n in range(cfg.horizon + 1):
                for f, name in enumerate(cfg.functionals):
                    w.writerow([cfg.family, cfg.r, x, self.sizes[i], self.d, repr(self.p), n,
                                name, repr(float(self.normalized[i, n, f]))])
        return buf.getvalue()


def run_moment_decay(cfg: ExperimentConfig, d: int, p: float = 2.0) -> MomentReport:
    """Block-average filter errors, their ``p``-th moments, and a trend test.

    One representative per partition block (its first member) enters the
    block average; moments are divided by ``((m - d) / N + 1 / |I|)^(p/2)``
    and tested for an upward trend over the grid with Kendall's tau.
    """
    if cfg.family not in ("radix", "mixed"):
        raise ButterflyError("moment decay needs a radix or mixed family")
    _check_budget(cfg)
    ctx = _context(cfg)
    sizes, normalized = [], []
    for x in cfg.grid:
        s = cfg.schedule(x)
        part = build_partition(s, d)
        reps = part.representatives()
        _, batch = _batch(cfg, ctx, x, blocks=reps[None, :])
        err = batch.block_filt[:, :, 0, :] - ctx.exact_filt[None]
        moment = np.mean(np.abs(err) ** p, axis=0)
        norm = ((s.n_stages - d) / s.n_particles + 1 / len(reps)) ** (p / 2)
        sizes.append(s.n_particles)
        normalized.append(moment / norm)
    normalized = np.array(normalized)
    tau = np.empty(normalized.shape[1:])
    pval = np.empty(normalized.shape[1:])
    for n in range(normalized.shape[1]):
        for f in range(normalized.shape[2]):
            res = stats.kendalltau(cfg.grid, normalized[:, n, f])
            tau[n, f] = res.statistic if np.isfinite(res.statistic) else 0.0
            pval[n, f] = res.pvalue if np.isfinite(res.pvalue) else 1.0
    return MomentReport(cfg, d, p, tuple(sizes), normalized, tau, pval)


# output ---------------------------------------------------------------------

def clt_csv_text(result: CltResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CLT_COLUMNS)
    for row in result.rows:
        w.writerow(row.csv_row())
    return buf.getvalue()


def summary(result: CltResult) -> dict:
    counts = {"pass": 0, "fail": 0, "skip": 0}
    for row in result.rows:
        counts[row.status] += 1
    return {"kind": "clt", "version": _version(), "config": result.config.to_dict(),
            "wall_time": result.wall_time, "counts": counts, "passed": result.passed}


def emit_results(result: CltResult, csv_path=None, json_path=None) -> dict:
    """Write the CLT table and the JSON summary; returns the summary."""
    info = summary(result)
    if csv_path:
        Path(csv_path).write_text(clt_csv_text(result))
    if json_path:
        Path(json_path).write_text(json.dumps(info, indent=2, default=str) + "\n")
    return info


def with_workers(cfg: ExperimentConfig, workers: int) -> ExperimentConfig:
    return replace(cfg, workers=workers)
