"""Posterior-predictive tests of a zero variance component.

The test of sigma2_m = 0 never puts a prior on the component under test:
the model is refit with source m deleted outright, replicate datasets
are simulated from the constrained fit's predictive distribution, and a
statistic monotone in sigma2_m (by default the classical sum of squares
for that source) is compared against its replicate distribution.  The
p-value uses the add-one convention (1 + #{rep >= obs}) / (R + 1), so it
lives in (0, 1] and is reproducible from the stored replicate values.

Two replication schemes are provided: ``marginal`` re-draws every batch
of effects from its fitted variance, ``conditional`` keeps the drawn
effects and re-draws only the residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import seeds
from .anova import DesignDecomposition
from .design import RESIDUAL, Dataset
from .errors import ConfigError, StatisticUndefinedError
from .model import PriorSpec
from .sampler import PosteriorDraws, SamplerConfig, fit

STATISTIC_NAMES = ("ss", "f_ratio", "mean_range", "max_abs_mean")
SCHEMES = ("marginal", "conditional")


@dataclass(frozen=True)
class PpcReport:
    """One posterior-predictive test: observed statistic vs replicates."""

    source: str
    statistic: str
    observed: float
    replicated: np.ndarray
    p_value: float
    scheme: str
    replicate_count: int
    with_replacement: bool
    constrained_summary: Mapping[str, float]

    def recomputed_p(self) -> float:
        return ppp_value(self.observed, self.replicated)


@dataclass(frozen=True)
class ReplicateSet:
    """R replicate datasets sharing the observed design.

    Responses are stored as one (R, n) matrix; ``dataset(r)`` materializes
    a full Dataset when one is needed.
    """

    base: Dataset
    responses: np.ndarray
    scheme: str
    with_replacement: bool

    @property
    def count(self) -> int:
        return self.responses.shape[0]

    def dataset(self, r: int) -> Dataset:
        return self.base.with_response(self.responses[r])


def constrained_fit(
    dataset: Dataset, prior: PriorSpec, source: str, config: SamplerConfig
) -> PosteriorDraws:
    """Fit with ``source`` deleted entirely (effects and variance removed).

    Under the Dirichlet-relative prior the simplex automatically shrinks
    to the remaining components, so no prior is ever placed on the
    component under test.
    """
    if source == RESIDUAL:
        raise ConfigError("the residual component cannot be tested against zero")
    dataset.layout.source(source)  # raises on unknown names
    return fit(dataset, prior, config, exclude=(source,))


def replicate(
    draws: PosteriorDraws,
    dataset: Dataset,
    scheme: str,
    count: int,
    seed: int,
) -> ReplicateSet:
    """Simulate ``count`` datasets from the predictive distribution.

    Uses ``count`` evenly thinned retained draws; if more replicates than
    retained draws are requested the draws are resampled with
    replacement and the result is flagged.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown replication scheme {scheme!r}")
    if count < 1:
        raise ConfigError("replicate count must be >= 1")
    rng = seeds.generator(seed, "replicate")
    d = draws.draw_count
    if count <= d:
        sel = np.floor(np.linspace(0, d - 1, count)).astype(int)
        with_replacement = False
    else:
        sel = rng.integers(0, d, size=count)
        with_replacement = True

    n = dataset.n
    mean = np.tile(draws.mu[sel][:, None], (1, n))
    for name in draws.source_names[:-1]:
        idx = dataset.membership(name)
        if scheme == "marginal":
            sd = np.sqrt(draws.sigma2_for(name)[sel])
            j = draws.effect_counts[name]
            eff = rng.standard_normal((count, j)) * sd[:, None]
        else:
            eff = draws.eta[name][sel]
        mean += eff[:, idx]
    sd_e = np.sqrt(draws.sigma2_for(RESIDUAL)[sel])
    responses = mean + rng.standard_normal((count, n)) * sd_e[:, None]
    return ReplicateSet(dataset, responses, scheme, with_replacement)


class StatisticEvaluator:
    """Evaluates the registered statistics for one (design, source) pair.

    Projection bases and group-membership matrices are precomputed so a
    whole matrix of replicate responses is a few matrix products.  The
    classical decomposition (needed for ss and f_ratio only) is built
    lazily, so the mean-based statistics also work on designs the anova
    module rejects.
    """

    def __init__(self, dataset: Dataset, source: str):
        if source == RESIDUAL:
            raise ConfigError("statistics are defined for non-residual sources")
        self.source = source
        self._dataset = dataset
        dataset.layout.source(source)  # raises on unknown names
        idx = dataset.membership(source)
        j = int(idx.max()) + 1
        self.indicator = np.zeros((dataset.n, j))
        self.indicator[np.arange(dataset.n), idx] = 1.0
        self.group_counts = self.indicator.sum(axis=0)
        self._decomp: DesignDecomposition | None = None
        self._denominator: str | None = None

    def _decomposition(self) -> DesignDecomposition:
        if self._decomp is None:
            self._decomp = DesignDecomposition(self._dataset)
            self._denominator = self._f_denominator()
        return self._decomp

    def _f_denominator(self) -> str:
        """Source whose EMS matches E(MS_m) minus the tested component."""
        ems, _ = self._decomp.ems
        names = list(self._decomp.layout.source_names())
        i = names.index(self.source)
        target = ems[i].copy()
        target[i] = 0.0
        for k, name in enumerate(names):
            if k != i and np.allclose(ems[k], target, rtol=1e-9, atol=1e-12):
                return name
        return RESIDUAL

    def evaluate_matrix(
        self, responses: np.ndarray, names: Sequence[str] = STATISTIC_NAMES
    ) -> dict[str, np.ndarray]:
        for name in names:
            if name not in STATISTIC_NAMES:
                raise ConfigError(
                    f"unknown statistic {name!r}; choose from {STATISTIC_NAMES}"
                )
        yy = np.atleast_2d(np.asarray(responses, dtype=float))
        out: dict[str, np.ndarray] = {}
        if "ss" in names or "f_ratio" in names:
            decomp = self._decomposition()
            ss = decomp.ss_matrix(yy)
            out["ss"] = ss[self.source]
            if "f_ratio" in names:
                den = self._denominator
                ms_num = ss[self.source] / decomp.df[self.source]
                ms_den = ss[den] / decomp.df[den]
                with np.errstate(divide="ignore", invalid="ignore"):
                    out["f_ratio"] = ms_num / ms_den
        if "mean_range" in names or "max_abs_mean" in names:
            means = (yy @ self.indicator) / self.group_counts
            if "mean_range" in names:
                out["mean_range"] = means.max(axis=1) - means.min(axis=1)
            if "max_abs_mean" in names:
                grand = yy.mean(axis=1)
                out["max_abs_mean"] = np.abs(means - grand[:, None]).max(axis=1)
        return {name: out[name] for name in names}

    def evaluate(self, y: np.ndarray, names: Sequence[str]) -> dict[str, float]:
        mat = self.evaluate_matrix(np.asarray(y, dtype=float)[None, :], names)
        out = {}
        for name in names:
            val = float(mat[name][0])
            if name == "f_ratio" and not np.isfinite(val):
                raise StatisticUndefinedError(
                    "F ratio is 0/0 on these data (constant responses?)"
                )
            out[name] = val
        return out


def statistic(dataset: Dataset, source: str, name: str) -> float:
    """One registered statistic of the observed data for ``source``.

    ``ss`` and ``f_ratio`` come from the classical decomposition (the F
    denominator is the EMS-matched mean square, the residual for one-way
    layouts); ``mean_range`` and ``max_abs_mean`` are computed from the
    per-effect group means.  All are monotone in sigma2_m in expectation.
    """
    if name not in STATISTIC_NAMES:
        raise ConfigError(
            f"unknown statistic {name!r}; choose from {STATISTIC_NAMES}"
        )
    return StatisticEvaluator(dataset, source).evaluate(dataset.response, [name])[name]


def ppp_value(observed: float, replicated: np.ndarray) -> float:
    """Add-one posterior-predictive p-value; ties count as extreme."""
    rep = np.asarray(replicated, dtype=float)
    if rep.size < 1:
        raise ConfigError("at least one replicate statistic is required")
    exceed = int(np.sum(rep >= observed))
    return (1.0 + exceed) / (rep.size + 1.0)


def run_ppc(
    dataset: Dataset,
    prior: PriorSpec,
    source: str,
    config: SamplerConfig,
    *,
    stat: str = "ss",
    scheme: str = "marginal",
    replicates: int = 200,
) -> PpcReport:
    """Full pipeline: constrained fit, replication, statistic, p-value."""
    draws = constrained_fit(dataset, prior, source, config)
    rep_seed = seeds.derive_seed(config.seed, "ppc", source, scheme)
    reps = replicate(draws, dataset, scheme, replicates, rep_seed)
    evaluator = StatisticEvaluator(dataset, source)
    observed = evaluator.evaluate(dataset.response, [stat])[stat]
    rep_stats = evaluator.evaluate_matrix(reps.responses, [stat])[stat]
    bad = ~np.isfinite(rep_stats)
    if bad.any():
        if stat != "f_ratio":
            raise StatisticUndefinedError(f"non-finite replicate {stat} values")
        rep_stats = np.where(bad, math.inf, rep_stats)  # degenerate 0/0 counts as extreme
    summary = {
        "mu_mean": float(draws.mu.mean()),
        **{
            f"sigma2.{name}_mean": float(draws.sigma2_for(name).mean())
            for name in draws.source_names
        },
    }
    return PpcReport(
        source=source,
        statistic=stat,
        observed=observed,
        replicated=rep_stats,
        p_value=ppp_value(observed, rep_stats),
        scheme=scheme,
        replicate_count=reps.count,
        with_replacement=reps.with_replacement,
        constrained_summary=summary,
    )
