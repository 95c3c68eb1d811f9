"""Additive normal variance-components model and its prior families.

The model for a response vector y is

    y = mu * 1 + sum_m Z_m eta_m + eps,   eta_mj ~ N(0, sigma2_m),
    eps ~ N(0, sigma2_e I),

with Z_m the membership incidence of source m.  Three proper prior
families are supported for the variance components:

* ``IndependentUniform``  -- uniform on [0, U_m] for each SD sigma_m
  (density taken with respect to the SD coordinates);
* ``DirichletRelative``   -- Dirichlet(delta) on the relative components
  phi_m = sigma2_m / T plus uniform on [0, T_max] for the total T
  (density with respect to (T, phi), which factorizes, so the prior on
  the total is specified separately from the prior on the ratios);
* ``ModelMixing``         -- independent point masses at sigma2_m = 0 for
  the non-residual components, with DirichletRelative(delta) over the
  included set (the density reported is with respect to the continuous
  part on the included coordinates).

Improper settings (infinite bounds, nonpositive concentrations) are
rejected at construction; no improper variant exists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, logsumexp

from .design import RESIDUAL, Dataset
from .errors import (
    ConfigError,
    DegenerateInputError,
    EnumerationCapError,
    SingularModelError,
)
from . import seeds

SUBMODEL_ENUMERATION_CAP = 8  # max non-residual components for exhaustive mixing

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# variance vectors


@dataclass(frozen=True)
class VarianceVector:
    """Per-source variances with their total and relative (simplex) form."""

    sigma2: np.ndarray
    total: float
    phi: np.ndarray

    def __post_init__(self):
        s2 = np.asarray(self.sigma2, dtype=float)
        object.__setattr__(self, "sigma2", s2)
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))
        if np.any(s2 < 0) or self.total < 0:
            raise DegenerateInputError("variance components must be nonnegative")
        if self.total > 0:
            if abs(self.phi.sum() - 1.0) > 1e-12:
                raise DegenerateInputError("phi must sum to 1")
            if np.max(np.abs(self.phi * self.total - s2)) > 1e-12 * max(1.0, self.total):
                raise DegenerateInputError("sigma2 inconsistent with total * phi")

    @classmethod
    def from_sigma2(cls, sigma2: Sequence[float]) -> "VarianceVector":
        total, phi = relative_components(sigma2)
        return cls(np.asarray(sigma2, dtype=float), total, phi)


def relative_components(sigma2: Sequence[float]) -> tuple[float, np.ndarray]:
    """Split absolute components into (total, simplex of relative components)."""
    s2 = np.asarray(sigma2, dtype=float)
    if np.any(s2 < 0) or not np.all(np.isfinite(s2)):
        raise DegenerateInputError("variance components must be finite and >= 0")
    total = float(s2.sum())
    if total == 0.0:
        raise DegenerateInputError("all variance components are zero")
    return total, s2 / total


# ---------------------------------------------------------------------------
# prior specifications


def _validate_positive(value: float, name: str, allow_zero: bool = False) -> None:
    if value is None:
        return
    if not np.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(f"{name} must be finite and positive, got {value!r}")


def _mapping_or_scalar(value, name: str) -> None:
    if value is None:
        return
    if isinstance(value, Mapping):
        for k, v in value.items():
            _validate_positive(float(v), f"{name}[{k}]")
    else:
        _validate_positive(float(value), name)


@dataclass(frozen=True)
class IndependentUniform:
    """Uniform prior on [0, U_m] for each component SD.

    ``sd_upper`` may be a scalar (shared bound), a mapping source -> bound,
    or None for the data-driven default 10 * sd(y).
    """

    sd_upper: Union[float, Mapping[str, float], None] = None
    mu_mean: float | None = None
    mu_sd: float | None = None

    def __post_init__(self):
        _mapping_or_scalar(self.sd_upper, "sd_upper")
        if self.mu_mean is not None and not np.isfinite(self.mu_mean):
            raise ConfigError("mu_mean must be finite")
        _validate_positive(self.mu_sd, "mu_sd")


@dataclass(frozen=True)
class DirichletRelative:
    """Dirichlet(delta) on relative variances plus uniform on [0, T_max] for the total.

    ``delta`` may be a shared scalar or a mapping source -> concentration
    for prior information about relative magnitudes.  ``t_max=None``
    means the data-driven default 10 * var(y).
    """

    delta: Union[float, Mapping[str, float]] = 1.0
    t_max: float | None = None
    mu_mean: float | None = None
    mu_sd: float | None = None

    def __post_init__(self):
        _mapping_or_scalar(self.delta, "delta")
        _validate_positive(self.t_max, "t_max")
        if self.mu_mean is not None and not np.isfinite(self.mu_mean):
            raise ConfigError("mu_mean must be finite")
        _validate_positive(self.mu_sd, "mu_sd")

    def delta_for(self, sources: Sequence[str]) -> np.ndarray:
        if isinstance(self.delta, Mapping):
            missing = [s for s in sources if s not in self.delta]
            if missing:
                raise ConfigError(f"delta mapping missing sources {missing}")
            return np.array([float(self.delta[s]) for s in sources])
        return np.full(len(sources), float(self.delta))


@dataclass(frozen=True)
class ModelMixing:
    """Point mass at zero per non-residual component, Dirichlet over the rest.

    ``null_prob`` is the prior probability pi0_m of sigma2_m = 0, scalar or
    per-source mapping; the residual is never subject to a point mass.
    """

    null_prob: Union[float, Mapping[str, float]] = 0.5
    delta: Union[float, Mapping[str, float]] = 1.0
    t_max: float | None = None
    mu_mean: float | None = None
    mu_sd: float | None = None

    def __post_init__(self):
        probs = (
            self.null_prob.values()
            if isinstance(self.null_prob, Mapping)
            else [self.null_prob]
        )
        for p in probs:
            if not np.isfinite(p) or not (0.0 <= float(p) <= 1.0):
                raise ConfigError(f"null_prob must lie in [0, 1], got {p!r}")
        _mapping_or_scalar(self.delta, "delta")
        _validate_positive(self.t_max, "t_max")
        if self.mu_mean is not None and not np.isfinite(self.mu_mean):
            raise ConfigError("mu_mean must be finite")
        _validate_positive(self.mu_sd, "mu_sd")

    def null_prob_for(self, source: str) -> float:
        if isinstance(self.null_prob, Mapping):
            if source not in self.null_prob:
                raise ConfigError(f"null_prob mapping missing source {source!r}")
            return float(self.null_prob[source])
        return float(self.null_prob)

    def conditional_prior(self) -> DirichletRelative:
        return DirichletRelative(
            delta=self.delta, t_max=self.t_max, mu_mean=self.mu_mean, mu_sd=self.mu_sd
        )


PriorSpec = Union[IndependentUniform, DirichletRelative, ModelMixing]


def resolve_prior(prior: PriorSpec, dataset: Dataset) -> PriorSpec:
    """Fill data-driven defaults (bounds, T_max, mu prior) from the dataset.

    Defaults: U_m = 10 sd(y), T_max = 10 var(y), mu ~ N(mean(y), (10 sd(y))^2).
    Constant data would make these degenerate, so the scale falls back to 1.
    """
    y = dataset.response
    scale = float(np.std(y, ddof=1))
    if scale == 0.0:
        scale = 1.0
    updates: dict = {}
    if prior.mu_mean is None:
        updates["mu_mean"] = float(np.mean(y))
    if prior.mu_sd is None:
        updates["mu_sd"] = 10.0 * scale
    if isinstance(prior, IndependentUniform):
        if prior.sd_upper is None:
            updates["sd_upper"] = 10.0 * scale
    else:
        if prior.t_max is None:
            updates["t_max"] = 10.0 * scale**2
    return replace(prior, **updates) if updates else prior


def sd_bounds(prior: IndependentUniform, sources: Sequence[str]) -> np.ndarray:
    if prior.sd_upper is None:
        raise ConfigError("sd_upper unresolved; call resolve_prior() first")
    if isinstance(prior.sd_upper, Mapping):
        missing = [s for s in sources if s not in prior.sd_upper]
        if missing:
            raise ConfigError(f"sd_upper mapping missing sources {missing}")
        return np.array([float(prior.sd_upper[s]) for s in sources])
    return np.full(len(sources), float(prior.sd_upper))


# ---------------------------------------------------------------------------
# prior densities


def dirichlet_log_density(phi: np.ndarray, delta: np.ndarray) -> float:
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0.0):
        return -math.inf
    return float(
        gammaln(delta.sum()) - gammaln(delta).sum() + ((delta - 1.0) * np.log(phi)).sum()
    )


def prior_log_density(
    prior: PriorSpec,
    variances: VarianceVector,
    sources: Sequence[str] | None = None,
) -> float:
    """Log prior density of a variance vector, -inf outside the support.

    The reference coordinates differ by family (see the module docstring):
    SDs for IndependentUniform, (T, phi) for DirichletRelative and for the
    continuous part of ModelMixing.  ``sources`` is required only when the
    prior carries per-source mappings.
    """
    m = len(variances.sigma2)
    if sources is None:
        sources = [f"component{i}" for i in range(m - 1)] + [RESIDUAL]
        _require_scalar_hyperparams(prior)
    if len(sources) != m:
        raise ConfigError("sources length does not match the variance vector")

    if isinstance(prior, IndependentUniform):
        bounds = sd_bounds(prior, sources)
        sd = np.sqrt(variances.sigma2)
        if np.any(sd > bounds):
            return -math.inf
        return float(-np.log(bounds).sum())

    if isinstance(prior, DirichletRelative):
        if prior.t_max is None:
            raise ConfigError("t_max unresolved; call resolve_prior() first")
        t = variances.total
        if not (0.0 < t <= prior.t_max):
            return -math.inf
        delta = prior.delta_for(sources)
        return dirichlet_log_density(variances.phi, delta) - math.log(prior.t_max)

    if isinstance(prior, ModelMixing):
        if prior.t_max is None:
            raise ConfigError("t_max unresolved; call resolve_prior() first")
        included = [i for i in range(m) if variances.sigma2[i] > 0.0]
        if (m - 1) not in included:
            return -math.inf  # residual must be positive
        log_mass = 0.0
        for i, name in enumerate(sources[:-1]):
            pi0 = prior.null_prob_for(name)
            if i in included:
                if pi0 >= 1.0:
                    return -math.inf
                log_mass += math.log1p(-pi0)
            else:
                if pi0 <= 0.0:
                    return -math.inf
                log_mass += math.log(pi0)
        t = variances.total
        if not (0.0 < t <= prior.t_max):
            return -math.inf
        sub_sources = [sources[i] for i in included]
        sub_prior = prior.conditional_prior()
        delta = sub_prior.delta_for(sub_sources)
        phi_sub = variances.sigma2[included] / t
        return log_mass + dirichlet_log_density(phi_sub, delta) - math.log(prior.t_max)

    raise TypeError(f"unknown prior type {type(prior).__name__}")


def _require_scalar_hyperparams(prior: PriorSpec) -> None:
    for attr in ("sd_upper", "delta", "null_prob"):
        if isinstance(getattr(prior, attr, None), Mapping):
            raise ConfigError(
                f"{attr} is a per-source mapping; pass the source list explicitly"
            )


def sample_prior_variances(
    prior: PriorSpec, sources: Sequence[str], rng: np.random.Generator
) -> VarianceVector:
    """One draw of the variance components from the (resolved) prior."""
    m = len(sources)
    if isinstance(prior, IndependentUniform):
        bounds = sd_bounds(prior, sources)
        sd = rng.uniform(0.0, bounds)
        return VarianceVector.from_sigma2(sd**2)
    if isinstance(prior, DirichletRelative):
        if prior.t_max is None:
            raise ConfigError("t_max unresolved; call resolve_prior() first")
        total = rng.uniform(0.0, prior.t_max)
        while total == 0.0:
            total = rng.uniform(0.0, prior.t_max)
        phi = rng.dirichlet(prior.delta_for(sources)) if m > 1 else np.ones(1)
        return VarianceVector(phi * total, total, phi)
    raise ConfigError("direct prior sampling supports the non-mixing families only")


# ---------------------------------------------------------------------------
# marginal likelihood (effects integrated out)


def _covariance(
    memberships: Sequence[np.ndarray], sigma2: np.ndarray, n: int
) -> np.ndarray:
    cov = np.zeros((n, n))
    for idx, s2 in zip(memberships, sigma2[:-1]):
        if s2 > 0.0:
            same = idx[:, None] == idx[None, :]
            cov += s2 * same
    cov[np.diag_indices(n)] += sigma2[-1]
    return cov


def _mvn_logpdf(y: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    n = y.size
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularModelError(f"covariance not positive definite: {exc}") from exc
    z = solve_triangular(chol, y - mean, lower=True, check_finite=False)
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    return -0.5 * (n * _LOG_2PI + logdet + float(z @ z))


def marginal_log_likelihood(
    dataset: Dataset, variances: VarianceVector, mu: float
) -> float:
    """Log density of y with effects integrated out analytically.

    Computed via dense Cholesky of sigma2_e I + sum_m sigma2_m Z_m Z_m';
    intended for desk-scale data (n up to a couple thousand).
    """
    names = dataset.layout.source_names()
    if len(variances.sigma2) != len(names):
        raise ConfigError("variance vector length does not match layout sources")
    if variances.sigma2[-1] <= 0.0:
        raise SingularModelError("residual variance must be positive")
    memberships = [dataset.membership(s) for s in names[:-1]]
    cov = _covariance(memberships, variances.sigma2, dataset.n)
    mean = np.full(dataset.n, float(mu))
    return _mvn_logpdf(dataset.response, mean, cov)


# ---------------------------------------------------------------------------
# submodel posteriors under model mixing


@dataclass(frozen=True)
class IntegrationConfig:
    """Monte-Carlo settings for the submodel marginal likelihoods."""

    draws: int = 8192
    seed: int = 0
    stratify_total: bool = True

    def __post_init__(self):
        if self.draws < 2:
            raise ConfigError("integration needs at least 2 draws")


@dataclass(frozen=True)
class SubmodelRow:
    included: tuple[str, ...]
    prior_prob: float
    log_marginal: float
    log_marginal_se: float
    posterior_prob: float
    posterior_se: float


@dataclass(frozen=True)
class SubmodelPosterior:
    rows: tuple[SubmodelRow, ...]
    draws_per_subset: int
    seed: int

    def row(self, included: Sequence[str]) -> SubmodelRow:
        key = tuple(included)
        for r in self.rows:
            if r.included == key:
                return r
        raise KeyError(key)


def submodel_posterior(
    dataset: Dataset, prior: ModelMixing, config: IntegrationConfig
) -> SubmodelPosterior:
    """Posterior over all inclusion sets of non-residual components.

    Marginal likelihoods are estimated by Monte-Carlo integration over
    (T, phi_S) under the conditional Dirichlet prior, with the grand mean
    integrated analytically and the total variance stratified across its
    uniform prior range.  Enumeration is capped at 2^8 subsets.
    """
    prior = resolve_prior(prior, dataset)
    names = dataset.layout.source_names()
    non_resid = list(names[:-1])
    if len(non_resid) > SUBMODEL_ENUMERATION_CAP:
        raise EnumerationCapError(
            f"{len(non_resid)} non-residual components exceed the enumeration cap "
            f"({SUBMODEL_ENUMERATION_CAP}); use posterior-predictive checks instead"
        )
    y = dataset.response
    memberships = {s: dataset.membership(s) for s in non_resid}

    subsets: list[tuple[str, ...]] = []
    for size in range(len(non_resid) + 1):
        for combo in combinations(non_resid, size):
            subsets.append(combo)

    log_prior = np.empty(len(subsets))
    log_ml = np.full(len(subsets), -np.inf)
    log_se = np.zeros(len(subsets))
    delta_all = prior.conditional_prior()
    for i, included in enumerate(subsets):
        lp = 0.0
        for s in non_resid:
            pi0 = prior.null_prob_for(s)
            if s in included:
                lp += math.log1p(-pi0) if pi0 < 1.0 else -math.inf
            else:
                lp += math.log(pi0) if pi0 > 0.0 else -math.inf
        log_prior[i] = lp
        if not np.isfinite(lp):
            continue
        rng = seeds.generator(config.seed, "submodel", i)
        sub_sources = list(included) + [RESIDUAL]
        delta = delta_all.delta_for(sub_sources)
        log_ml[i], log_se[i] = _subset_marginal(
            y,
            [memberships[s] for s in included],
            delta,
            float(prior.t_max),
            float(prior.mu_mean),
            float(prior.mu_sd),
            config,
            rng,
        )

    post, post_se = _normalize_posterior(log_prior, log_ml, log_se)
    rows = tuple(
        SubmodelRow(
            included=subsets[i],
            prior_prob=float(np.exp(log_prior[i])),
            log_marginal=float(log_ml[i]),
            log_marginal_se=float(log_se[i]),
            posterior_prob=float(post[i]),
            posterior_se=float(post_se[i]),
        )
        for i in range(len(subsets))
    )
    total = sum(r.posterior_prob for r in rows)
    assert abs(total - 1.0) < 1e-9
    return SubmodelPosterior(rows=rows, draws_per_subset=config.draws, seed=config.seed)


def _subset_marginal(
    y: np.ndarray,
    memberships: Sequence[np.ndarray],
    delta: np.ndarray,
    t_max: float,
    mu_mean: float,
    mu_sd: float,
    config: IntegrationConfig,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """MC estimate of log p(y | subset) with its standard error."""
    n = y.size
    draws = config.draws
    if config.stratify_total:
        u = rng.uniform(size=draws)
        totals = (np.arange(draws) + u) / draws * t_max
    else:
        totals = rng.uniform(0.0, t_max, size=draws)
    k = len(memberships) + 1
    if k > 1:
        phis = rng.dirichlet(delta, size=draws)
    else:
        phis = np.ones((draws, 1))

    mean = np.full(n, mu_mean)
    v0 = mu_sd**2
    lls = np.empty(draws)
    base = np.full((n, n), v0)
    for r in range(draws):
        sigma2 = phis[r] * totals[r]
        cov = base.copy()
        for idx, s2 in zip(memberships, sigma2[:-1]):
            if s2 > 0.0:
                cov += s2 * (idx[:, None] == idx[None, :])
        cov[np.diag_indices(n)] += sigma2[-1]
        try:
            lls[r] = _mvn_logpdf(y, mean, cov)
        except SingularModelError:
            lls[r] = -np.inf
    finite = np.isfinite(lls)
    if not finite.any():
        return -math.inf, math.inf
    log_mean = float(logsumexp(lls[finite]) - math.log(draws))
    w = np.exp(lls[finite] - lls[finite].max())
    w_full = np.zeros(draws)
    w_full[finite] = w
    rel_se = float(np.std(w_full, ddof=1) / (math.sqrt(draws) * np.mean(w_full)))
    return log_mean, rel_se


def _normalize_posterior(
    log_prior: np.ndarray, log_ml: np.ndarray, log_se: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Normalized posterior probabilities with delta-method standard errors."""
    score = log_prior + log_ml
    if not np.any(np.isfinite(score)):
        raise DegenerateInputError("no submodel has positive posterior mass")
    log_z = logsumexp(score[np.isfinite(score)])
    post = np.where(np.isfinite(score), np.exp(score - log_z), 0.0)
    var = np.empty_like(post)
    for i in range(post.size):
        grad = -post[i] * post
        grad[i] += post[i]
        var[i] = float((grad**2) @ (log_se**2))
    return post, np.sqrt(var)
