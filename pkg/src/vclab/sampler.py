"""Posterior sampling for the additive variance-components model.

The sampler is Gibbs with exact conjugate updates for the grand mean and
the effect batches, and prior-specific updates for the variances:

* IndependentUniform: the conditional of sigma2_m given its effects is a
  scaled-inverse-chi-square truncated to [0, U_m^2]; it is drawn exactly
  by inverse-CDF sampling of the underlying chi-square tail.
* DirichletRelative: a Metropolis-within-Gibbs random walk on
  (log T, logit-simplex phi) with the Jacobian log T + sum log phi_m in
  the acceptance ratio; step sizes adapt during burn-in only and are
  frozen afterwards to preserve detailed balance.

Both families additionally interweave two kinds of reparameterized
moves, gated by ``SamplerConfig.interweave``:

* scale: effects rescaled to unit variance, then the variance updated
  conditionally on the rescaled effects.  Without it the chain sticks
  near sigma_m = 0 whenever a component collapses, which shows up
  immediately in simulation-based calibration.  Exact (truncated
  normal) for the uniform family, a second Metropolis step for the
  Dirichlet family.
* translation: exact Gibbs draws along the likelihood-invariant ridges
  between each batch mean and the grand mean, and between nested or
  refined batches.  Without them nested hierarchies mix at a crawl.

Everything is deterministic given the root seed: each chain draws from
its own counter-split substream and chains are merged by index, so the
thread count never affects results.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaincc, gammainccinv, ndtr, ndtri

from . import seeds
from .design import RESIDUAL, Dataset
from .errors import ConfigError, SamplerError, StepSizeError
from .model import (
    DirichletRelative,
    IndependentUniform,
    PriorSpec,
    dirichlet_log_density,
    resolve_prior,
    sd_bounds,
)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SamplerConfig:
    """Budget and tuning knobs for one MCMC run."""

    chains: int = 4
    iterations: int = 5000
    burnin: int = 2500
    thin: int = 5
    seed: int = 0
    step_log_t: float = 0.4
    step_logit_phi: float = 0.4
    interweave: bool = True
    mh_sweeps: int = 5
    adapt_window: int = 50
    stall_window: int = 500
    threads: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.iterations < 1:
            raise ConfigError("chains and iterations must be positive")
        if not (0 <= self.burnin < self.iterations):
            raise ConfigError("burn-in must be smaller than the iteration count")
        if self.thin < 1:
            raise ConfigError("thinning stride must be >= 1")
        if self.step_log_t <= 0 or self.step_logit_phi <= 0:
            raise ConfigError("MH step sizes must be positive")
        if self.mh_sweeps < 1:
            raise ConfigError("mh_sweeps must be >= 1")

    @property
    def retained_per_chain(self) -> int:
        return len(range(self.burnin, self.iterations, self.thin))


@dataclass
class PosteriorDraws:
    """Retained draws from all chains, merged chain-major.

    ``eta[name]`` has shape (draws, J_name); scalar series have shape
    (draws,).  ``finite_sd`` holds the realized per-batch standard
    deviations s_m, including the residual batch.  ``diagnostics`` is
    populated by ``fit`` whenever at least two chains with enough draws
    are available.
    """

    source_names: tuple[str, ...]
    effect_counts: Mapping[str, int]
    chain_count: int
    retained_per_chain: int
    mu: np.ndarray
    eta: dict[str, np.ndarray]
    sigma2: np.ndarray
    total: np.ndarray
    phi: np.ndarray
    finite_sd: dict[str, np.ndarray]
    log_joint: np.ndarray
    chain_index: np.ndarray
    acceptance: dict[str, float]
    config: SamplerConfig
    diagnostics: "SamplerDiagnostics | None" = None

    @property
    def draw_count(self) -> int:
        return self.mu.size

    def _source_pos(self, name: str) -> int:
        try:
            return self.source_names.index(name)
        except ValueError:
            raise KeyError(f"unknown source {name!r}") from None

    def sigma2_for(self, name: str) -> np.ndarray:
        return self.sigma2[:, self._source_pos(name)]

    def phi_for(self, name: str) -> np.ndarray:
        return self.phi[:, self._source_pos(name)]

    def scalar_series(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"mu": self.mu, "T": self.total}
        for name in self.source_names:
            out[f"sigma2.{name}"] = self.sigma2_for(name)
            out[f"phi.{name}"] = self.phi_for(name)
        for name, series in self.finite_sd.items():
            out[f"s.{name}"] = series
        return out

    def summary(self) -> dict[str, dict[str, float]]:
        qs = (0.025, 0.25, 0.5, 0.75, 0.975)
        out = {}
        for name, series in self.scalar_series().items():
            quants = np.quantile(series, qs)
            out[name] = {
                "mean": float(series.mean()),
                "sd": float(series.std(ddof=1)) if series.size > 1 else 0.0,
                **{f"q{int(q * 1000):03d}": float(v) for q, v in zip(qs, quants)},
            }
        return out


# ---------------------------------------------------------------------------
# model structure shared by the chain workers


@dataclass(frozen=True)
class _Structure:
    y: np.ndarray
    names: tuple[str, ...]  # non-residual active sources
    indices: tuple[np.ndarray, ...]
    counts: tuple[np.ndarray, ...]
    effect_counts: tuple[int, ...]
    # (coarse source, fine source, fine-effect -> coarse-effect map) for every
    # refinement pair; these index the translation-recentering moves
    pairs: tuple[tuple[int, int, np.ndarray], ...]

    @property
    def n(self) -> int:
        return self.y.size


def _child_to_parent(fine: np.ndarray, coarse: np.ndarray) -> np.ndarray | None:
    """Map fine-effect index -> coarse-effect index, or None if not refined."""
    j = int(fine.max()) + 1
    lo = np.full(j, np.iinfo(np.intp).max, dtype=np.intp)
    hi = np.full(j, -1, dtype=np.intp)
    np.minimum.at(lo, fine, coarse)
    np.maximum.at(hi, fine, coarse)
    if np.any(lo != hi):
        return None
    return hi


def _structure(dataset: Dataset, exclude: Sequence[str]) -> _Structure:
    layout = dataset.layout
    exclude = set(exclude)
    for name in exclude:
        if name == RESIDUAL:
            raise ConfigError("the residual component cannot be removed")
        layout.source(name)  # raises on unknown names
    names, indices, counts, jm = [], [], [], []
    for s in layout.sources:
        if s.is_residual or s.name in exclude:
            continue
        idx = dataset.membership(s)
        j = int(idx.max()) + 1
        names.append(s.name)
        indices.append(idx)
        counts.append(np.bincount(idx, minlength=j).astype(float))
        jm.append(j)
    pairs = []
    for k in range(len(names)):
        for m in range(len(names)):
            if k == m:
                continue
            cp = _child_to_parent(indices[m], indices[k])
            if cp is not None and jm[m] > jm[k]:
                pairs.append((k, m, cp))
    return _Structure(
        y=dataset.response,
        names=tuple(names),
        indices=tuple(indices),
        counts=tuple(counts),
        effect_counts=tuple(jm),
        pairs=tuple(pairs),
    )


# ---------------------------------------------------------------------------
# numerical kernels


def _trunc_scaled_inv_chi2(
    s: float, nu: float, upper_sq: float, rng: np.random.Generator
) -> float:
    """Draw sigma2 from p ~ x^-((nu+2)/2) exp(-s/2x) on (0, upper_sq].

    Equivalent to sigma2 = s / g with g ~ chi-square(nu) restricted to
    g >= s/upper_sq, drawn by inverting the chi-square survival function
    (regularized upper incomplete gamma), which stays accurate deep in
    the tail where the naive CDF approach loses all precision.
    """
    g_lo = s / upper_sq
    sf_lo = float(gammaincc(0.5 * nu, 0.5 * g_lo))
    if sf_lo <= 0.0:
        # all conditional mass is within rounding of the bound
        return upper_sq
    u = rng.uniform(0.0, sf_lo)
    if u <= 0.0:
        u = 0.5 * sf_lo
    g = 2.0 * float(gammainccinv(0.5 * nu, u))
    if not np.isfinite(g) or g <= 0.0:
        return upper_sq
    return s / g


def _trunc_normal(
    loc: float, scale: float, lo: float, hi: float, rng: np.random.Generator
) -> float | None:
    """Exact draw from N(loc, scale^2) restricted to [lo, hi].

    Works in whichever normal tail keeps the probabilities away from 1 so
    the interval never collapses by cancellation; returns None when the
    interval mass underflows entirely (caller keeps the current state).
    """
    a = (lo - loc) / scale
    b = (hi - loc) / scale
    u = rng.uniform()
    if a > 0.0:  # right tail: work with survival probabilities
        sf_a = float(ndtr(-a))
        sf_b = float(ndtr(-b))
        sf = sf_b + u * (sf_a - sf_b)
        if sf <= 0.0:
            return None
        z = -float(ndtri(sf))
    else:
        cdf_a = float(ndtr(a))
        cdf_b = float(ndtr(b))
        p = cdf_a + u * (cdf_b - cdf_a)
        if p <= 0.0 or p >= 1.0:
            return None
        z = float(ndtri(p))
    val = loc + scale * z
    if not np.isfinite(val):
        return None
    return min(max(val, lo), hi)


def _softmax_with_last_zero(v: np.ndarray) -> np.ndarray:
    full = np.concatenate([v, [0.0]])
    full -= full.max()
    e = np.exp(full)
    return e / e.sum()


def _u_from(total: float, phi: np.ndarray) -> tuple[float, np.ndarray]:
    return math.log(total), np.log(phi[:-1]) - math.log(phi[-1])


class _DirichletKernel:
    """Shared pieces of the centered and interweaved (T, phi) updates."""

    def __init__(self, struct: _Structure, delta: np.ndarray, t_max: float,
                 config: SamplerConfig):
        self.struct = struct
        self.delta = delta
        self.t_max = t_max
        self.log_t_max = math.log(t_max)
        self.base_step = np.concatenate(
            [[config.step_log_t], np.full(len(struct.names), config.step_logit_phi)]
        )

    def centered_target(self, t: float, v: np.ndarray, s_eff: np.ndarray,
                        j_eff: np.ndarray) -> tuple[float, np.ndarray, float]:
        if t > self.log_t_max:
            return -math.inf, np.empty(0), 0.0
        phi = _softmax_with_last_zero(v)
        if np.any(phi <= 0.0):
            return -math.inf, phi, 0.0
        total = math.exp(t)
        sigma2 = phi * total
        with np.errstate(over="ignore", divide="ignore"):
            val = float(
                -0.5 * (j_eff * np.log(sigma2)).sum()
                - 0.5 * (s_eff / sigma2).sum()
                + ((self.delta - 1.0) * np.log(phi)).sum()
                + t
                + np.log(phi).sum()
            )
        return val, phi, total

    def noncentered_target(self, t: float, v: np.ndarray, centered_resid: np.ndarray,
                           xis: Sequence[np.ndarray],
                           lik_weight: float) -> tuple[float, np.ndarray, float]:
        if t > self.log_t_max:
            return -math.inf, np.empty(0), 0.0
        phi = _softmax_with_last_zero(v)
        if np.any(phi <= 0.0):
            return -math.inf, phi, 0.0
        total = math.exp(t)
        mean = np.zeros(self.struct.n)
        for m, xi in enumerate(xis):
            sd = math.sqrt(phi[m] * total)
            mean += sd * xi[self.struct.indices[m]]
        resid_var = phi[-1] * total
        ssr = float(((centered_resid - mean) ** 2).sum())
        with np.errstate(over="ignore", divide="ignore"):
            val = float(
                lik_weight * (-0.5 * self.struct.n * math.log(resid_var)
                              - 0.5 * ssr / resid_var)
                + ((self.delta - 1.0) * np.log(phi)).sum()
                + t
                + np.log(phi).sum()
            )
        return val, phi, total


# ---------------------------------------------------------------------------
# single-chain worker


class _Chain:
    def __init__(
        self,
        struct: _Structure,
        prior: PriorSpec,
        config: SamplerConfig,
        chain_id: int,
        likelihood: bool,
        fix_variances: np.ndarray | None,
    ):
        self.struct = struct
        self.prior = prior
        self.config = config
        self.chain_id = chain_id
        self.lik = 1.0 if likelihood else 0.0
        self.fix = fix_variances
        self.rng = seeds.generator(config.seed, chain_id)
        self.m0 = float(prior.mu_mean)
        self.v0 = float(prior.mu_sd) ** 2
        names = list(struct.names) + [RESIDUAL]
        self.all_names = tuple(names)
        if isinstance(prior, IndependentUniform):
            self.bounds = sd_bounds(prior, names)
            self.kernel = None
        elif isinstance(prior, DirichletRelative):
            self.bounds = None
            self.kernel = _DirichletKernel(
                struct, prior.delta_for(names), float(prior.t_max), config
            )
        else:
            raise ConfigError(
                "fit() handles IndependentUniform and DirichletRelative priors; "
                "use submodel_posterior() for model mixing"
            )
        self.scale_centered = 1.0
        self.scale_asis = 1.0
        self.accept_centered = 0
        self.accept_asis = 0
        self.window_centered = 0
        self.window_asis = 0
        self.window_iters = 0
        self.post_accepts = 0
        self.post_iters = 0

    # -- state initialization ------------------------------------------------

    def init_state(self) -> None:
        s = self.struct
        m = len(s.names)
        if self.fix is not None:
            self.sigma2 = np.asarray(self.fix, dtype=float).copy()
        elif isinstance(self.prior, IndependentUniform):
            sd = self.bounds * self.rng.uniform(0.05, 0.95, size=m + 1)
            self.sigma2 = sd**2
        else:
            total = float(self.prior.t_max) * self.rng.uniform(0.05, 0.95)
            alpha = np.maximum(self.kernel.delta, 1.0)
            phi = self.rng.dirichlet(alpha) if m + 1 > 1 else np.ones(1)
            phi = (phi + 0.01) / (1.0 + 0.01 * (m + 1))
            self.sigma2 = phi * total
        self.mu = self.m0 + math.sqrt(self.v0) * self.rng.standard_normal()
        self.eta = [
            math.sqrt(self.sigma2[m_]) * self.rng.standard_normal(s.effect_counts[m_])
            for m_ in range(m)
        ]
        self.total_effects = np.zeros(s.n)
        for m_, idx in enumerate(s.indices):
            self.total_effects += self.eta[m_][idx]

    # -- conjugate updates ---------------------------------------------------

    def update_mu(self) -> None:
        sig_e = self.sigma2[-1]
        r = self.struct.y - self.total_effects
        prec = self.lik * self.struct.n / sig_e + 1.0 / self.v0
        mean = (self.lik * r.sum() / sig_e + self.m0 / self.v0) / prec
        self.mu = mean + self.rng.standard_normal() / math.sqrt(prec)

    def update_effects(self) -> None:
        s = self.struct
        sig_e = self.sigma2[-1]
        for m, idx in enumerate(s.indices):
            var_m = self.sigma2[m]
            old = self.eta[m]
            if var_m <= 0.0:
                new = np.zeros_like(old)
            else:
                r = s.y - self.mu - (self.total_effects - old[idx])
                sums = np.bincount(idx, weights=r, minlength=s.effect_counts[m])
                prec = self.lik * s.counts[m] / sig_e + 1.0 / var_m
                mean = (self.lik * sums / sig_e) / prec
                new = mean + self.rng.standard_normal(old.size) / np.sqrt(prec)
            self.total_effects += (new - old)[idx]
            self.eta[m] = new

    # -- variance updates ----------------------------------------------------

    def residual_ss(self) -> float:
        r = self.struct.y - self.mu - self.total_effects
        return float(r @ r)

    def update_variances_uniform(self) -> None:
        for m in range(len(self.struct.names)):
            s_m = float(self.eta[m] @ self.eta[m])
            j_m = self.struct.effect_counts[m]
            if s_m <= 0.0 or j_m < 2:
                continue
            self.sigma2[m] = _trunc_scaled_inv_chi2(
                s_m, j_m - 1, self.bounds[m] ** 2, self.rng
            )
        if self.lik > 0.0:
            s_e = self.residual_ss()
            if s_e > 0.0:
                self.sigma2[-1] = _trunc_scaled_inv_chi2(
                    s_e, self.struct.n - 1, self.bounds[-1] ** 2, self.rng
                )
        else:
            self.sigma2[-1] = (self.bounds[-1] * self.rng.uniform()) ** 2

    def _dirichlet_state(self) -> tuple[float, np.ndarray]:
        total = float(self.sigma2.sum())
        if not np.isfinite(total) or total <= 0.0 or np.any(self.sigma2 <= 0.0):
            raise SamplerError(
                "non-finite or degenerate variance state",
                state=self._state_dump(),
            )
        phi = self.sigma2 / total
        return _u_from(total, phi)

    def update_variances_dirichlet(self, burnin_phase: bool) -> None:
        # the sufficient statistics are fixed during the sweep, so extra
        # Metropolis repeats cost O(M) each and sharpen simplex mixing
        s = self.struct
        s_eff = np.array(
            [float(e @ e) for e in self.eta] + [self.lik * self.residual_ss()]
        )
        j_eff = np.array(
            [float(j) for j in s.effect_counts] + [self.lik * s.n]
        )
        t, v = self._dirichlet_state()
        cur, _, _ = self.kernel.centered_target(t, v, s_eff, j_eff)
        if not np.isfinite(cur):
            raise SamplerError(
                "non-finite log density in the centered variance update",
                state=self._state_dump(),
            )
        step = self.kernel.base_step * self.scale_centered
        accepted = False
        for _ in range(self.config.mh_sweeps):
            z = self.rng.standard_normal(step.size)
            t_new = t + step[0] * z[0]
            v_new = v + step[1:] * z[1:]
            prop, phi_new, total_new = self.kernel.centered_target(
                t_new, v_new, s_eff, j_eff
            )
            self.window_iters += 1
            if math.log(self.rng.uniform()) < prop - cur:
                t, v, cur = t_new, v_new, prop
                self.sigma2 = phi_new * total_new
                accepted = True
                self.window_centered += 1
        if accepted:
            self.accept_centered += 1
            if not burnin_phase:
                self.post_accepts += 1

    def interweave_uniform(self) -> None:
        s = self.struct
        sig_e = self.sigma2[-1]
        for m, idx in enumerate(s.indices):
            sd_old = math.sqrt(self.sigma2[m])
            if sd_old <= 0.0:
                continue
            xi = self.eta[m] / sd_old
            x = xi[idx]
            r = s.y - self.mu - (self.total_effects - self.eta[m][idx])
            a = float(x @ x) / sig_e
            if a <= 0.0:
                continue
            loc = float(x @ r) / sig_e / a
            scale = 1.0 / math.sqrt(a)
            sd_new = _trunc_normal(loc, scale, 0.0, float(self.bounds[m]), self.rng)
            if sd_new is None or sd_new <= 0.0:
                continue
            new_eta = sd_new * xi
            self.total_effects += (new_eta - self.eta[m])[idx]
            self.eta[m] = new_eta
            self.sigma2[m] = sd_new**2

    def interweave_dirichlet(self, burnin_phase: bool) -> None:
        s = self.struct
        total = float(self.sigma2.sum())
        phi = self.sigma2 / total
        sds = np.sqrt(self.sigma2[:-1])
        if np.any(sds <= 0.0):
            return
        xis = [self.eta[m] / sds[m] for m in range(len(s.names))]
        centered_resid = s.y - self.mu
        t, v = _u_from(total, phi)
        cur, _, _ = self.kernel.noncentered_target(t, v, centered_resid, xis, self.lik)
        if not np.isfinite(cur):
            raise SamplerError(
                "non-finite log density in the interweaved variance update",
                state=self._state_dump(),
            )
        step = self.kernel.base_step * self.scale_asis
        accepted = False
        for _ in range(self.config.mh_sweeps):
            z = self.rng.standard_normal(step.size)
            t_new = t + step[0] * z[0]
            v_new = v + step[1:] * z[1:]
            prop, phi_new, total_new = self.kernel.noncentered_target(
                t_new, v_new, centered_resid, xis, self.lik
            )
            if math.log(self.rng.uniform()) < prop - cur:
                t, v, cur = t_new, v_new, prop
                self.sigma2 = phi_new * total_new
                accepted = True
                self.window_asis += 1
        if accepted:
            self.accept_asis += 1
            if not burnin_phase:
                self.post_accepts += 1
            self.total_effects = np.zeros(s.n)
            for m, idx in enumerate(s.indices):
                self.eta[m] = math.sqrt(self.sigma2[m]) * xis[m]
                self.total_effects += self.eta[m][idx]

    def recenter(self) -> None:
        """Exact Gibbs draws along likelihood-invariant translation ridges.

        Each batch mean trades against the grand mean, and each refined
        batch trades against the batch it refines (per coarse effect);
        the likelihood is constant along these directions, so the
        conditionals involve only the normal priors.  Without these
        moves the sampler crawls across nested hierarchies.
        """
        s = self.struct
        for m in range(len(s.names)):
            var_m = self.sigma2[m]
            prec = s.effect_counts[m] / var_m + 1.0 / self.v0
            mean = (self.eta[m].sum() / var_m + (self.m0 - self.mu) / self.v0) / prec
            c = mean + self.rng.standard_normal() / math.sqrt(prec)
            self.eta[m] -= c
            self.mu += c
        for k, m, cp in s.pairs:
            var_k, var_m = self.sigma2[k], self.sigma2[m]
            j_k = s.effect_counts[k]
            child_counts = np.bincount(cp, minlength=j_k).astype(float)
            child_sums = np.bincount(cp, weights=self.eta[m], minlength=j_k)
            prec = 1.0 / var_k + child_counts / var_m
            mean = (-self.eta[k] / var_k + child_sums / var_m) / prec
            c = mean + self.rng.standard_normal(j_k) / np.sqrt(prec)
            self.eta[k] += c
            self.eta[m] -= c[cp]
        self.total_effects = np.zeros(s.n)
        for m, idx in enumerate(s.indices):
            self.total_effects += self.eta[m][idx]

    # -- adaptation and bookkeeping -------------------------------------------

    def adapt(self) -> None:
        rate_c = self.window_centered / max(self.window_iters, 1)
        self.scale_centered = float(
            np.clip(self.scale_centered * math.exp(1.2 * (rate_c - 0.3)), 1e-3, 1e3)
        )
        if self.config.interweave:
            rate_a = self.window_asis / max(self.window_iters, 1)
            self.scale_asis = float(
                np.clip(self.scale_asis * math.exp(1.2 * (rate_a - 0.3)), 1e-3, 1e3)
            )
        self.window_centered = 0
        self.window_asis = 0
        self.window_iters = 0

    def _state_dump(self) -> dict:
        return {
            "chain": self.chain_id,
            "mu": float(self.mu),
            "sigma2": self.sigma2.tolist(),
            "effect_ss": [float(e @ e) for e in self.eta],
            "scale_centered": self.scale_centered,
            "scale_asis": self.scale_asis,
        }

    def log_joint(self) -> float:
        s = self.struct
        val = 0.0
        sig_e = self.sigma2[-1]
        if self.lik > 0.0:
            val += -0.5 * s.n * (_LOG_2PI + math.log(sig_e))
            val += -0.5 * self.residual_ss() / sig_e
        for m in range(len(s.names)):
            j = s.effect_counts[m]
            s_m = float(self.eta[m] @ self.eta[m])
            val += -0.5 * j * (_LOG_2PI + math.log(self.sigma2[m]))
            val += -0.5 * s_m / self.sigma2[m]
        val += -0.5 * (_LOG_2PI + math.log(self.v0))
        val += -0.5 * (self.mu - self.m0) ** 2 / self.v0
        if isinstance(self.prior, IndependentUniform):
            if np.any(np.sqrt(self.sigma2) > self.bounds):
                return -math.inf
            val += -float(np.log(self.bounds).sum())
        else:
            total = float(self.sigma2.sum())
            phi = self.sigma2 / total
            val += dirichlet_log_density(phi, self.kernel.delta)
            val += -self.kernel.log_t_max if total <= self.kernel.t_max else -math.inf
        return val

    # -- main loop -------------------------------------------------------------

    def run(self) -> dict:
        cfg = self.config
        self.init_state()
        s = self.struct
        retained = cfg.retained_per_chain
        m = len(s.names)
        rec_mu = np.empty(retained)
        rec_eta = [np.empty((retained, j)) for j in s.effect_counts]
        rec_sigma2 = np.empty((retained, m + 1))
        rec_logj = np.empty(retained)
        rec_s = {name: np.empty(retained) for name in self.all_names}
        keep = 0
        is_dirichlet = isinstance(self.prior, DirichletRelative)
        for it in range(cfg.iterations):
            burnin_phase = it < cfg.burnin
            self.update_mu()
            self.update_effects()
            if cfg.interweave and s.names:
                self.recenter()
            if self.fix is None:
                if is_dirichlet:
                    self.update_variances_dirichlet(burnin_phase)
                else:
                    self.update_variances_uniform()
                if cfg.interweave and self.lik > 0.0:
                    if is_dirichlet:
                        self.interweave_dirichlet(burnin_phase)
                    else:
                        self.interweave_uniform()
            if (
                burnin_phase
                and is_dirichlet
                and self.fix is None
                and (it + 1) % cfg.adapt_window == 0
            ):
                self.adapt()
            if not burnin_phase and is_dirichlet and self.fix is None:
                self.post_iters += 1
                if self.post_iters % cfg.stall_window == 0:
                    if self.post_accepts == 0:
                        raise StepSizeError(
                            f"no Metropolis acceptance in {cfg.stall_window} "
                            "post-burn-in iterations; adjust step sizes",
                            state=self._state_dump(),
                        )
                    self.post_accepts = 0
            if not burnin_phase and (it - cfg.burnin) % cfg.thin == 0:
                rec_mu[keep] = self.mu
                for m_ in range(m):
                    rec_eta[m_][keep] = self.eta[m_]
                rec_sigma2[keep] = self.sigma2
                rec_logj[keep] = self.log_joint()
                for m_, name in enumerate(s.names):
                    e = self.eta[m_]
                    rec_s[name][keep] = e.std(ddof=1) if e.size > 1 else 0.0
                resid = s.y - self.mu - self.total_effects
                rec_s[RESIDUAL][keep] = resid.std(ddof=1)
                keep += 1
        denom = max(cfg.iterations, 1)
        return {
            "mu": rec_mu,
            "eta": rec_eta,
            "sigma2": rec_sigma2,
            "log_joint": rec_logj,
            "finite_sd": rec_s,
            "accept_centered": self.accept_centered / denom,
            "accept_asis": self.accept_asis / denom,
        }


# ---------------------------------------------------------------------------
# public operations


def fit(
    dataset: Dataset,
    prior: PriorSpec,
    config: SamplerConfig,
    *,
    exclude: Sequence[str] = (),
    likelihood: bool = True,
    fix_variances: Sequence[float] | None = None,
) -> PosteriorDraws:
    """MCMC fit of the full (non-mixing) model.

    ``exclude`` removes sources entirely (used by the constrained fits of
    the posterior-predictive tests).  ``likelihood=False`` samples the
    prior through the same kernels (a validation mode).  ``fix_variances``
    freezes the variance vector at the given values (aligned with the
    active sources, residual last) and skips all variance updates.
    """
    struct = _structure(dataset, exclude)
    prior = resolve_prior(prior, dataset)
    fix = None if fix_variances is None else np.asarray(fix_variances, dtype=float)
    if fix is not None and fix.size != len(struct.names) + 1:
        raise ConfigError("fix_variances length must match the active sources")

    def run_one(chain_id: int) -> dict:
        chain = _Chain(struct, prior, config, chain_id, likelihood, fix)
        return chain.run()

    if config.threads > 1 and config.chains > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(run_one, range(config.chains)))
    else:
        results = [run_one(c) for c in range(config.chains)]

    names = struct.names + (RESIDUAL,)
    retained = config.retained_per_chain
    mu = np.concatenate([r["mu"] for r in results])
    sigma2 = np.vstack([r["sigma2"] for r in results])
    eta = {
        name: np.vstack([r["eta"][m] for r in results])
        for m, name in enumerate(struct.names)
    }
    finite_sd = {
        name: np.concatenate([r["finite_sd"][name] for r in results]) for name in names
    }
    log_joint = np.concatenate([r["log_joint"] for r in results])
    total = sigma2.sum(axis=1)
    phi = sigma2 / total[:, None]
    chain_index = np.repeat(np.arange(config.chains), retained)
    counts = {name: j for name, j in zip(struct.names, struct.effect_counts)}
    counts[RESIDUAL] = struct.n
    draws = PosteriorDraws(
        source_names=names,
        effect_counts=counts,
        chain_count=config.chains,
        retained_per_chain=retained,
        mu=mu,
        eta=eta,
        sigma2=sigma2,
        total=total,
        phi=phi,
        finite_sd=finite_sd,
        log_joint=log_joint,
        chain_index=chain_index,
        acceptance={
            "centered": float(np.mean([r["accept_centered"] for r in results])),
            "interweaved": float(np.mean([r["accept_asis"] for r in results])),
        },
        config=config,
    )
    if config.chains >= 2 and retained >= 50:
        draws.diagnostics = diagnostics(draws)
    return draws


def finite_pop_summaries(draws: PosteriorDraws) -> dict[str, np.ndarray]:
    """Per-draw finite-population SD s_m for every source with J_m >= 2.

    The residual batch uses the realized residual SDs stored at sampling
    time (re-deriving them would require the full residual vectors).
    """
    out: dict[str, np.ndarray] = {}
    for name in draws.source_names:
        if name == RESIDUAL:
            out[name] = draws.finite_sd[name]
            continue
        if draws.effect_counts[name] < 2:
            warnings.warn(f"source {name!r} has fewer than 2 effects; skipped")
            continue
        out[name] = draws.eta[name].std(axis=1, ddof=1)
    return out


def sign_probability(draws: PosteriorDraws, functional) -> float:
    """Posterior probability that a scalar functional is positive.

    ``functional`` is ``"mu"``, ``("effect", source, j)`` for a single
    effect, or ``("contrast", source, j, k)`` for eta_j - eta_k.
    """
    if functional == "mu" or functional == ("mu",):
        vals = draws.mu
    elif isinstance(functional, tuple) and functional[0] == "effect":
        _, source, j = functional
        vals = draws.eta[source][:, j]
    elif isinstance(functional, tuple) and functional[0] == "contrast":
        _, source, j, k = functional
        vals = draws.eta[source][:, j] - draws.eta[source][:, k]
    else:
        raise ConfigError(f"unsupported functional {functional!r}")
    return float(np.mean(vals > 0.0))


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class DiagnosticRow:
    parameter: str
    ess: float | None
    rhat: float | None
    flagged: bool
    note: str = ""


@dataclass(frozen=True)
class SamplerDiagnostics:
    rows: tuple[DiagnosticRow, ...]

    @property
    def flagged(self) -> bool:
        return any(r.flagged for r in self.rows)

    def row(self, parameter: str) -> DiagnosticRow:
        for r in self.rows:
            if r.parameter == parameter:
                return r
        raise KeyError(parameter)


RHAT_FLAG = 1.05


def diagnostics(draws: PosteriorDraws) -> SamplerDiagnostics:
    """Autocorrelation ESS and split-chain dispersion per scalar parameter."""
    if draws.chain_count < 2:
        raise ConfigError("diagnostics need at least 2 chains")
    if draws.retained_per_chain < 50:
        raise ConfigError("diagnostics need at least 50 retained draws per chain")
    rows = []
    for name, series in draws.scalar_series().items():
        mat = series.reshape(draws.chain_count, draws.retained_per_chain)
        ess = _ess(mat)
        rhat = _split_rhat(mat)
        if ess is None or rhat is None:
            rows.append(
                DiagnosticRow(name, None, None, flagged=False, note="degenerate")
            )
            continue
        rows.append(
            DiagnosticRow(name, ess, rhat, flagged=bool(rhat > RHAT_FLAG))
        )
    return SamplerDiagnostics(tuple(rows))


def _ess(mat: np.ndarray) -> float | None:
    """Geyer initial-positive-sequence ESS over chains of equal length."""
    c, n = mat.shape
    centered = mat - mat.mean(axis=1, keepdims=True)
    var = centered.var(axis=1, ddof=0).mean()
    if var == 0.0 or not np.isfinite(var):
        return None

    def rho(t: int) -> float:
        cov = float(np.einsum("ij,ij->", centered[:, t:], centered[:, : n - t]))
        return cov / (c * n * var)

    tau = 1.0
    t = 1
    while t + 1 <= n - 1:
        pair = rho(t) + rho(t + 1)
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        t += 2
    tau = max(tau, 1e-3)
    return float(c * n / tau)


def _split_rhat(mat: np.ndarray) -> float | None:
    """Between/within dispersion ratio over split half-chains."""
    c, n = mat.shape
    half = n // 2
    if half < 2:
        return None
    halves = np.vstack([mat[:, :half], mat[:, half : 2 * half]])
    within = halves.var(axis=1, ddof=1)
    w = within.mean()
    if w == 0.0 or not np.isfinite(w):
        return None
    means = halves.mean(axis=1)
    b = half * means.var(ddof=1)
    var_plus = (half - 1) / half * w + b / half
    return float(math.sqrt(var_plus / w))
