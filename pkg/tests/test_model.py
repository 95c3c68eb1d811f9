"""Priors, variance vectors, marginal likelihood, submodel posteriors.

Claims under test:
    - relative_components splits variances into (total, simplex) and
      rejects the all-zero vector
    - prior log densities match closed forms (Dirichlet normalizing
      constants, Beta(2,2) at 1/2) and are -inf outside support
    - improper hyperparameters are rejected at construction
    - Dirichlet(1) prior draws are uniform on the simplex (Beta(1, M-1)
      marginals) and the (T, phi) factorization separates T_max from phi
    - the analytic marginal likelihood agrees with brute-force quadrature
      over the effects and reduces to the iid likelihood at sigma_a = 0
    - submodel posteriors normalize, respect point masses, have symmetric
      ties, and are stable in the integration size
"""

import math

import numpy as np
import pytest
from scipy import integrate, stats

from vclab.design import Dataset, Observation, build_layout
from vclab.errors import ConfigError, DegenerateInputError, EnumerationCapError
from vclab.lab import simulate_one_way
from vclab.model import (
    DirichletRelative,
    IndependentUniform,
    IntegrationConfig,
    ModelMixing,
    VarianceVector,
    _mvn_logpdf,
    _normalize_posterior,
    marginal_log_likelihood,
    prior_log_density,
    relative_components,
    resolve_prior,
    sample_prior_variances,
    submodel_posterior,
)


def one_way_two_groups(values_a, values_b):
    rows = [Observation(float(v), {"g": "a"}) for v in values_a]
    rows += [Observation(float(v), {"g": "b"}) for v in values_b]
    return Dataset(tuple(rows), build_layout(["g"], rows))


# -- relative components ------------------------------------------------------


def test_relative_components_examples():
    t, phi = relative_components([3.0, 1.0])
    assert t == 4.0 and phi.tolist() == [0.75, 0.25]
    _, phi = relative_components([2.0, 2.0, 2.0])
    np.testing.assert_allclose(phi, [1 / 3] * 3)
    _, phi = relative_components([0.0, 5.0])
    assert phi.tolist() == [0.0, 1.0]


def test_relative_components_all_zero_rejected():
    with pytest.raises(DegenerateInputError):
        relative_components([0.0, 0.0])


def test_variance_vector_consistency_enforced():
    with pytest.raises(DegenerateInputError):
        VarianceVector(np.array([1.0, 1.0]), 2.0, np.array([0.9, 0.2]))
    vv = VarianceVector.from_sigma2([1.0, 3.0])
    assert vv.total == 4.0
    np.testing.assert_allclose(vv.phi, [0.25, 0.75])


# -- prior densities ----------------------------------------------------------


def test_dirichlet_delta1_density_is_log_gamma_m():
    prior = DirichletRelative(delta=1.0, t_max=2.0)
    vv = VarianceVector.from_sigma2([0.5, 0.3, 0.2])
    expected = math.lgamma(3) - math.log(2.0)  # log Gamma(M) plus T factor
    assert prior_log_density(prior, vv) == pytest.approx(expected, abs=1e-12)


def test_dirichlet_delta2_beta_density():
    prior = DirichletRelative(delta=2.0, t_max=1.0)
    vv = VarianceVector.from_sigma2([0.25, 0.25])
    # Beta(2,2) density at 1/2 is 1.5; T factor is log(1) = 0
    assert prior_log_density(prior, vv) == pytest.approx(math.log(1.5), abs=1e-12)


def test_dirichlet_outside_total_support():
    prior = DirichletRelative(delta=1.0, t_max=1.0)
    vv = VarianceVector.from_sigma2([1.0, 1.0])
    assert prior_log_density(prior, vv) == -math.inf


def test_uniform_support_and_density():
    prior = IndependentUniform(sd_upper=2.0)
    inside = VarianceVector.from_sigma2([1.0, 1.0])
    assert prior_log_density(prior, inside) == pytest.approx(-2 * math.log(2.0))
    outside = VarianceVector.from_sigma2([9.0, 1.0])
    assert prior_log_density(prior, outside) == -math.inf


def test_model_mixing_continuous_part():
    prior = ModelMixing(null_prob=0.3, delta=1.0, t_max=2.0)
    vv = VarianceVector.from_sigma2([0.0, 1.0])
    expected = math.log(0.3) - math.log(2.0)  # atom at A=0, flat over T
    assert prior_log_density(prior, vv) == pytest.approx(expected, abs=1e-12)
    vv_in = VarianceVector.from_sigma2([1.0, 1.0])
    expected_in = math.log(0.7) + math.lgamma(2) - math.log(2.0)
    assert prior_log_density(prior, vv_in) == pytest.approx(expected_in, abs=1e-12)


@pytest.mark.parametrize(
    "bad",
    [
        lambda: IndependentUniform(sd_upper=float("inf")),
        lambda: IndependentUniform(sd_upper=-1.0),
        lambda: DirichletRelative(delta=0.0),
        lambda: DirichletRelative(delta=1.0, t_max=float("nan")),
        lambda: ModelMixing(null_prob=1.5),
        lambda: DirichletRelative(delta=1.0, mu_sd=-2.0),
    ],
)
def test_improper_hyperparameters_rejected(bad):
    with pytest.raises(ConfigError):
        bad()


def test_prior_draws_uniform_on_simplex():
    prior = DirichletRelative(delta=1.0, t_max=4.0)
    rng = np.random.default_rng(21)
    draws = np.array(
        [
            sample_prior_variances(prior, ["a", "b", "residual"], rng).phi
            for _ in range(20_000)
        ]
    )
    for m in range(3):
        ks = stats.kstest(draws[:, m], stats.beta(1, 2).cdf).statistic
        assert ks < 0.02


def test_total_and_simplex_priors_separate():
    rng1, rng2 = np.random.default_rng(5), np.random.default_rng(99)
    small = DirichletRelative(delta=0.7, t_max=1.0)
    large = DirichletRelative(delta=0.7, t_max=100.0)
    phi_small = np.array(
        [sample_prior_variances(small, ["a", "residual"], rng1).phi[0]
         for _ in range(20_000)]
    )
    phi_large = np.array(
        [sample_prior_variances(large, ["a", "residual"], rng2).phi[0]
         for _ in range(20_000)]
    )
    ks = stats.ks_2samp(phi_small, phi_large).statistic
    assert ks < 0.02


# -- marginal likelihood ------------------------------------------------------


def test_univariate_normal_density_building_block():
    val = _mvn_logpdf(np.zeros(1), np.zeros(1), np.eye(1))
    assert val == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)


def test_two_obs_shared_batch_closed_form():
    cov = np.array([[2.0, 1.0], [1.0, 2.0]])
    val = _mvn_logpdf(np.zeros(2), np.zeros(2), cov)
    expected = -math.log(2 * math.pi) - 0.5 * math.log(3.0)
    assert val == pytest.approx(expected, abs=1e-12)


def test_zero_batch_variance_reduces_to_iid():
    ds = one_way_two_groups([0.3, -0.4], [1.2, 0.8])
    vv = VarianceVector.from_sigma2([0.0, 1.7])
    got = marginal_log_likelihood(ds, vv, 0.5)
    iid = stats.norm(0.5, math.sqrt(1.7)).logpdf(ds.response).sum()
    assert got == pytest.approx(iid, abs=1e-10)


def _quadrature_marginal(y_a, y_b, sigma_a2, sigma_e2, mu):
    """Brute-force double integral over the two group effects."""

    def norm_pdf(x, var):
        return math.exp(-0.5 * x * x / var) / math.sqrt(2 * math.pi * var)

    def integrand(eta_b, eta_a):
        val = norm_pdf(eta_a, sigma_a2) * norm_pdf(eta_b, sigma_a2)
        for v in y_a:
            val *= norm_pdf(v - mu - eta_a, sigma_e2)
        for v in y_b:
            val *= norm_pdf(v - mu - eta_b, sigma_e2)
        return val

    lim = 7 * math.sqrt(sigma_a2)
    value, _ = integrate.dblquad(
        integrand, -lim, lim, -lim, lim, epsabs=1e-13, epsrel=1e-9
    )
    return math.log(value)


@pytest.mark.parametrize("trial", range(6))
def test_marginal_likelihood_matches_quadrature(trial):
    rng = np.random.default_rng(300 + trial)
    y_a, y_b = rng.normal(size=2), rng.normal(size=2)
    sigma_a2 = float(rng.uniform(0.2, 2.0))
    sigma_e2 = float(rng.uniform(0.3, 2.0))
    mu = float(rng.normal())
    ds = one_way_two_groups(y_a, y_b)
    vv = VarianceVector.from_sigma2([sigma_a2, sigma_e2])
    got = marginal_log_likelihood(ds, vv, mu)
    want = _quadrature_marginal(y_a, y_b, sigma_a2, sigma_e2, mu)
    assert got == pytest.approx(want, abs=1e-6)


def test_zero_residual_variance_rejected():
    ds = one_way_two_groups([0.0, 1.0], [2.0, 3.0])
    vv = VarianceVector.from_sigma2([1.0, 0.0])
    from vclab.errors import SingularModelError

    with pytest.raises(SingularModelError):
        marginal_log_likelihood(ds, vv, 0.0)


# -- submodel posteriors ------------------------------------------------------


def _null_dataset(seed=5):
    rng = np.random.default_rng(seed)
    return simulate_one_way([10] * 10, 0.0, 1.0, rng)


def test_submodel_probabilities_normalize():
    ds = _null_dataset()
    post = submodel_posterior(
        ds, ModelMixing(null_prob=0.5), IntegrationConfig(draws=1000, seed=3)
    )
    assert sum(r.posterior_prob for r in post.rows) == pytest.approx(1.0, abs=1e-9)
    assert len(post.rows) == 2


def test_null_data_favors_exclusion():
    ds = _null_dataset()
    post = submodel_posterior(
        ds, ModelMixing(null_prob=0.5), IntegrationConfig(draws=3000, seed=3)
    )
    assert post.row(()).posterior_prob > 0.5


def test_point_mass_one_forces_null():
    ds = _null_dataset()
    post = submodel_posterior(
        ds, ModelMixing(null_prob=1.0), IntegrationConfig(draws=500, seed=3)
    )
    assert post.row(()).posterior_prob == pytest.approx(1.0)
    assert post.row(("group",)).posterior_prob == 0.0


def test_equal_inputs_give_equal_posteriors():
    log_prior = np.log(np.array([0.5, 0.5]))
    log_ml = np.array([-10.0, -10.0])
    se = np.array([0.1, 0.1])
    post, post_se = _normalize_posterior(log_prior, log_ml, se)
    np.testing.assert_allclose(post, [0.5, 0.5])
    assert post_se[0] == pytest.approx(post_se[1])


def test_integration_size_stability():
    ds = _null_dataset()
    prior = ModelMixing(null_prob=0.5)
    small = submodel_posterior(ds, prior, IntegrationConfig(draws=1500, seed=17))
    big = submodel_posterior(ds, prior, IntegrationConfig(draws=3000, seed=23))
    p1, p2 = small.row(()), big.row(())
    tol = 3 * math.hypot(p1.posterior_se, p2.posterior_se)
    assert abs(p1.posterior_prob - p2.posterior_prob) <= tol


def test_enumeration_cap():
    rng = np.random.default_rng(8)
    rows = []
    for i in range(512):
        labels = {f"f{k}": f"l{(i >> k) & 1}" for k in range(9)}
        rows.append(Observation(float(rng.normal()), labels))
    layout = build_layout([f"f{k}" for k in range(9)], rows, interactions=[])
    ds = Dataset(tuple(rows), layout)
    with pytest.raises(EnumerationCapError):
        submodel_posterior(ds, ModelMixing(), IntegrationConfig(draws=10, seed=0))


def test_resolve_prior_fills_data_defaults():
    ds = one_way_two_groups([0.0, 1.0], [2.0, 3.0])
    prior = resolve_prior(DirichletRelative(), ds)
    y = ds.response
    assert prior.t_max == pytest.approx(10 * y.var(ddof=1))
    assert prior.mu_mean == pytest.approx(y.mean())
    assert prior.mu_sd == pytest.approx(10 * y.std(ddof=1))
