"""Posterior-predictive machinery: constrained fits, replication, p-values.

Claims under test:
    - the constrained fit deletes exactly the tested source and is
      seed-deterministic
    - replication schemes agree when there is nothing to re-draw, scale
      with the fitted variances, and match closed-form expectations of
      SS_total for a frozen parameter draw
    - the statistic registry matches the worked values and refuses the
      degenerate 0/0 F ratio
    - the add-one p-value conventions hold and are monotone in the
      observed value
"""

import math

import numpy as np
import pytest

from vclab.anova import one_way_dataset
from vclab.design import Dataset, Observation, build_layout
from vclab.errors import ConfigError, StatisticUndefinedError
from vclab.lab import simulate_one_way, simulate_two_way
from vclab.model import IndependentUniform, DirichletRelative
from vclab.ppc import (
    constrained_fit,
    ppp_value,
    replicate,
    run_ppc,
    statistic,
)
from vclab.sampler import SamplerConfig, fit

QUICK = SamplerConfig(chains=1, iterations=500, burnin=200, thin=3, seed=31)


# -- constrained fits -----------------------------------------------------------


def test_one_way_constrained_keeps_residual_only():
    ds = simulate_one_way([4] * 5, 1.0, 1.0, np.random.default_rng(0))
    draws = constrained_fit(ds, IndependentUniform(), "group", QUICK)
    assert draws.source_names == ("residual",)


def test_two_way_constrained_drops_only_interaction():
    ds = simulate_two_way(2, 3, 2, {"a": 1, "b": 1, "ab": 1, "e": 1},
                          np.random.default_rng(1))
    draws = constrained_fit(ds, DirichletRelative(), "a:b", QUICK)
    assert draws.source_names == ("a", "b", "residual")


def test_constrained_fit_deterministic():
    ds = simulate_one_way([4] * 5, 1.0, 1.0, np.random.default_rng(2))
    a = constrained_fit(ds, IndependentUniform(), "group", QUICK)
    b = constrained_fit(ds, IndependentUniform(), "group", QUICK)
    assert np.array_equal(a.mu, b.mu)
    assert np.array_equal(a.sigma2, b.sigma2)


def test_residual_cannot_be_tested():
    ds = simulate_one_way([4] * 5, 1.0, 1.0, np.random.default_rng(3))
    with pytest.raises(ConfigError):
        constrained_fit(ds, IndependentUniform(), "residual", QUICK)


# -- replication -----------------------------------------------------------------


def test_schemes_coincide_without_batches():
    ds = simulate_one_way([4] * 5, 0.0, 1.0, np.random.default_rng(4))
    draws = constrained_fit(ds, IndependentUniform(), "group", QUICK)
    marginal = replicate(draws, ds, "marginal", 50, seed=9)
    conditional = replicate(draws, ds, "conditional", 50, seed=9)
    assert np.array_equal(marginal.responses, conditional.responses)


def test_near_zero_variances_give_near_zero_replicates():
    rows = [Observation(0.0, {"g": "a"}) for _ in range(5)]
    rows += [Observation(0.0, {"g": "b"}) for _ in range(5)]
    ds = Dataset(tuple(rows), build_layout(["g"], rows))
    draws = fit(ds, IndependentUniform(sd_upper=1e-8), QUICK)
    reps = replicate(draws, ds, "marginal", 20, seed=1)
    assert np.max(np.abs(reps.responses)) < 1e-4


def test_replacement_flag_when_overdrawn():
    ds = simulate_one_way([4] * 5, 1.0, 1.0, np.random.default_rng(5))
    draws = constrained_fit(ds, IndependentUniform(), "group", QUICK)
    reps = replicate(draws, ds, "marginal", draws.draw_count + 50, seed=2)
    assert reps.with_replacement and reps.count == draws.draw_count + 50


def test_replicate_sstotal_matches_expectation_both_schemes():
    """Freeze one posterior draw; E[SS_total] has a closed form."""
    ds = simulate_one_way([5, 3, 4], 1.2, 0.9, np.random.default_rng(6))
    full = fit(ds, IndependentUniform(), QUICK)
    one = _single_draw(full, index=7)
    r = 4000
    for scheme in ("marginal", "conditional"):
        reps = replicate(one, ds, scheme, r, seed=3)
        ss_tot = ((reps.responses - reps.responses.mean(axis=1, keepdims=True)) ** 2).sum(axis=1)
        n = ds.n
        idx = ds.membership("group")
        n_j = np.bincount(idx).astype(float)
        sigma_a2 = float(one.sigma2_for("group")[0])
        sigma_e2 = float(one.sigma2_for("residual")[0])
        if scheme == "marginal":
            expected = sigma_a2 * (n - float(n_j @ n_j) / n) + sigma_e2 * (n - 1)
        else:
            eta = one.eta["group"][0]
            c = eta[idx]
            expected = float(((c - c.mean()) ** 2).sum()) + sigma_e2 * (n - 1)
        se = ss_tot.std(ddof=1) / math.sqrt(r)
        assert abs(ss_tot.mean() - expected) < 3 * se, scheme


def _single_draw(draws, index):
    from dataclasses import replace as dc_replace

    sel = slice(index, index + 1)
    return dc_replace(
        draws,
        mu=draws.mu[sel],
        eta={k: v[sel] for k, v in draws.eta.items()},
        sigma2=draws.sigma2[sel],
        total=draws.total[sel],
        phi=draws.phi[sel],
        finite_sd={k: v[sel] for k, v in draws.finite_sd.items()},
        log_joint=draws.log_joint[sel],
        chain_index=draws.chain_index[sel],
        chain_count=1,
        retained_per_chain=1,
        diagnostics=None,
    )


# -- statistics -------------------------------------------------------------------


def test_statistic_worked_values():
    assert statistic(one_way_dataset([[0, 2], [1, 3]]), "group", "ss") == pytest.approx(1.0)
    assert statistic(one_way_dataset([[1, 1], [3, 3]]), "group", "mean_range") == pytest.approx(2.0)
    assert statistic(one_way_dataset([[1, 1], [3, 3]]), "group", "max_abs_mean") == pytest.approx(1.0)


def test_constant_data_statistics():
    ds = one_way_dataset([[5, 5], [5, 5]])
    assert statistic(ds, "group", "ss") == pytest.approx(0.0)
    assert statistic(ds, "group", "mean_range") == pytest.approx(0.0)
    with pytest.raises(StatisticUndefinedError):
        statistic(ds, "group", "f_ratio")


def test_f_ratio_one_way_uses_residual_denominator():
    ds = one_way_dataset([[0, 2], [1, 3]])
    # MS_A / MS_E = 1 / 2
    assert statistic(ds, "group", "f_ratio") == pytest.approx(0.5)


def test_f_ratio_main_effect_uses_interaction_denominator():
    rng = np.random.default_rng(7)
    ds = simulate_two_way(3, 3, 2, {"a": 1, "b": 1, "ab": 1, "e": 1}, rng)
    from vclab.anova import sums_of_squares

    table = sums_of_squares(ds)
    want = table.row("a").ms / table.row("a:b").ms
    assert statistic(ds, "a", "f_ratio") == pytest.approx(want)


def test_unknown_statistic_rejected():
    ds = one_way_dataset([[0, 2], [1, 3]])
    with pytest.raises(ConfigError, match="unknown statistic"):
        statistic(ds, "group", "median_sweep")


def test_mean_statistics_work_on_unbalanced_two_way():
    rows = []
    cells = {(0, 0): [1.0, 2.0], (0, 1): [0.5], (1, 0): [1.5], (1, 1): [2.5, 0.0]}
    for (i, j), vals in cells.items():
        rows.extend(
            Observation(v, {"a": f"a{i}", "b": f"b{j}"}) for v in vals
        )
    ds = Dataset(tuple(rows), build_layout(["a", "b"], rows))
    assert statistic(ds, "a", "mean_range") > 0.0


# -- p-values --------------------------------------------------------------------


def test_ppp_conventions():
    reps = np.arange(1.0, 100.0)  # 99 replicates
    assert ppp_value(1000.0, reps) == pytest.approx(1 / 100)
    assert ppp_value(-5.0, reps) == pytest.approx(1.0)


def test_ppp_median_tie_counting():
    # 101 distinct values with the observed value tying the median:
    # 51 replicates are >= it, so the add-one convention gives 52/102
    reps = np.arange(101, dtype=float)
    assert ppp_value(50.0, reps) == pytest.approx(52 / 102)


def test_ppp_monotone_nonincreasing():
    rng = np.random.default_rng(8)
    reps = rng.normal(size=200)
    grid = np.linspace(-3, 3, 61)
    ps = [ppp_value(t, reps) for t in grid]
    assert all(a >= b for a, b in zip(ps, ps[1:]))


def test_ppp_requires_replicates():
    with pytest.raises(ConfigError):
        ppp_value(0.0, np.array([]))


# -- full pipeline ----------------------------------------------------------------


def test_run_ppc_deterministic_and_recomputable():
    ds = simulate_one_way([5] * 6, 1.5, 1.0, np.random.default_rng(9))
    rep1 = run_ppc(ds, IndependentUniform(), "group", QUICK, replicates=60)
    rep2 = run_ppc(ds, IndependentUniform(), "group", QUICK, replicates=60)
    assert rep1.p_value == rep2.p_value
    assert np.array_equal(rep1.replicated, rep2.replicated)
    assert rep1.recomputed_p() == rep1.p_value
    assert 0.0 < rep1.p_value <= 1.0


def test_run_ppc_under_dirichlet_prior():
    ds = simulate_one_way([5] * 6, 0.0, 1.0, np.random.default_rng(10))
    rep = run_ppc(
        ds, DirichletRelative(), "group", QUICK, stat="f_ratio", replicates=60,
        scheme="conditional",
    )
    assert rep.scheme == "conditional"
    assert 0.0 < rep.p_value <= 1.0
