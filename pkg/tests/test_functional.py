import math

import numpy as np
import pytest

from spinlab.ensemble import CanonicalEnsemble, sample_canonical
from spinlab.errors import DomainError, EmptyFamilyError, LipschitzError
from spinlab.functional import (DiscretizedMeasure, bakry_emery,
                                concentration_check, default_tilt_family,
                                dual_exponent, entropy,
                                entropy_decomposition_check, estimate_best_rho,
                                exp_tilt, gaussian_1d, holley_stroock,
                                holley_stroock_literal, laplace_bound_check,
                                mlsi_energy, pair_difference_family,
                                talagrand_check, tensorize)
from spinlab.potential import make_gaussian


def test_discretized_measure_validation():
    with pytest.raises(ValueError):
        DiscretizedMeasure(support=np.arange(3.0), weights=np.array([0.5, 0.5, 0.5]))
    with pytest.raises(ValueError):
        DiscretizedMeasure(support=np.arange(2.0), weights=np.array([1.5, -0.5]))


def test_dual_exponent_bookkeeping():
    assert dual_exponent(2.0) == pytest.approx(2.0, abs=1e-15)
    assert dual_exponent(4.0) == pytest.approx(4.0 / 3.0, abs=1e-15)
    with pytest.raises(ValueError):
        dual_exponent(1.5)


def test_entropy_of_constants_vanishes():
    mu = gaussian_1d(-4, 4, 0.01)
    assert entropy(np.full(mu.weights.size, 3.0), mu) == pytest.approx(0.0, abs=1e-14)


def test_entropy_two_point_formula():
    mu = DiscretizedMeasure(support=np.array([0.0, 1.0]), weights=np.array([0.5, 0.5]))
    val = entropy(np.array([1.0, math.e]), mu)
    expected = 0.5 * math.e - (0.5 + 0.5 * math.e) * math.log(0.5 + 0.5 * math.e)
    assert val == pytest.approx(expected, abs=1e-15)


def test_entropy_nonnegative_on_random_functions():
    rng = np.random.default_rng(0)
    mu = gaussian_1d(-4, 4, 0.05)
    for _ in range(50):
        f = rng.random(mu.weights.size) + 0.05
        assert entropy(f, mu) >= -1e-14


def test_entropy_rejects_nonpositive_f():
    mu = gaussian_1d(-2, 2, 0.1)
    f = np.ones(mu.weights.size)
    f[0] = 0.0
    with pytest.raises(DomainError):
        entropy(f, mu)


def test_entropy_jackknife_se_for_batches():
    ens = CanonicalEnsemble(2, 0.0, make_gaussian())
    batch = sample_canonical(ens, 500, seed=1)
    f = np.exp(0.3 * batch.data[:, 0])
    val, se = entropy(f, batch, return_se=True)
    assert val > 0 and se > 0


def test_mlsi_energy_zero_for_constants():
    mu = gaussian_1d(-4, 4, 0.01)
    f = np.full(mu.weights.size, 2.0)
    g = np.zeros((mu.weights.size, 1))
    assert mlsi_energy(f, g, mu, 2.0) == 0.0


def test_mlsi_energy_exponential_identity():
    # ||grad e^g||^2 / e^g == |g'|^2 e^g
    mu = gaussian_1d(-6, 6, 0.005)
    x = mu.points()[:, 0]
    g = 0.3 * np.sin(x)
    f = np.exp(g)
    grad_f = (0.3 * np.cos(x) * f)[:, None]
    direct = float(np.sum(mu.weights * (0.3 * np.cos(x)) ** 2 * f))
    assert mlsi_energy(f, grad_f, mu, 2.0) == pytest.approx(direct, rel=1e-12)


def test_energy_entropy_ratio_scale_invariant():
    mu = gaussian_1d(-6, 6, 0.01)
    x = mu.points()[:, 0]
    f = np.exp(0.4 * x)
    grad = (0.4 * f)[:, None]
    r1 = mlsi_energy(f, grad, mu, 2.0) / entropy(f, mu)
    lam = 7.3
    r2 = mlsi_energy(lam * f, lam * grad, mu, 2.0) / entropy(lam * f, mu)
    assert r1 == pytest.approx(r2, rel=1e-12)


def test_estimate_best_rho_gaussian_saturates_at_two():
    mu = gaussian_1d(-8, 8, 2e-3)
    est = estimate_best_rho(mu, 2.0, default_tilt_family(1), "default-tilts")
    assert 1.9 <= est.rho_hat <= 2.1
    assert est.q == 2.0
    assert est.n_functions > 0


def test_estimate_best_rho_monotone_in_family():
    mu = gaussian_1d(-6, 6, 5e-3)
    fam = default_tilt_family(1)
    small = estimate_best_rho(mu, 2.0, fam[:10], "small")
    full = estimate_best_rho(mu, 2.0, fam, "full")
    assert full.rho_hat <= small.rho_hat + 1e-12


def test_estimate_best_rho_rejects_degenerate_family():
    mu = gaussian_1d(-4, 4, 0.01)
    constant = exp_tilt("zero", lambda x: np.zeros(len(x)),
                        lambda x: np.zeros_like(x), 1.0)
    with pytest.raises(EmptyFamilyError):
        estimate_best_rho(mu, 2.0, [constant], "constants")


def test_tensorization_direction_on_product_measure():
    # marginal test functions see exactly the marginal ratios, so the product
    # estimate cannot exceed the smaller marginal estimate
    xs = np.linspace(-5, 5, 201)
    wa = np.exp(-0.5 * xs**2)
    wb = np.exp(-xs**4)
    mu_a = DiscretizedMeasure(support=xs, weights=wa / wa.sum())
    mu_b = DiscretizedMeasure(support=xs, weights=wb / wb.sum())
    grid = np.array([(a, b) for a in xs for b in xs])
    w = np.outer(wa / wa.sum(), wb / wb.sum()).ravel()
    prod = DiscretizedMeasure(support=grid, weights=w)

    lambdas = [0.3, 0.7]
    fam_a = [exp_tilt("x0", lambda x: x[:, 0],
                      lambda x: np.column_stack([np.ones(len(x)), np.zeros(len(x))]), l)
             for l in lambdas]
    fam_b = [exp_tilt("x1", lambda x: x[:, 1],
                      lambda x: np.column_stack([np.zeros(len(x)), np.ones(len(x))]), l)
             for l in lambdas]
    marg_a = [exp_tilt("x", lambda x: x[:, 0],
                       lambda x: np.ones((len(x), 1)), l) for l in lambdas]
    rho_a = estimate_best_rho(mu_a, 2.0, marg_a, "a").rho_hat
    rho_b = estimate_best_rho(mu_b, 2.0, marg_a, "b").rho_hat
    rho_prod = estimate_best_rho(prod, 2.0, fam_a + fam_b, "prod").rho_hat
    assert rho_prod <= min(rho_a, rho_b) + 1e-9


def test_power_law_measure_has_positive_estimate():
    xs = np.linspace(-3, 3, 1201)
    mu = DiscretizedMeasure.from_log_density(xs, -np.abs(xs) ** 4)
    est = estimate_best_rho(mu, 4.0, default_tilt_family(1), "default-tilts")
    assert est.rho_hat > 0


def test_bakry_emery_formula():
    assert bakry_emery(2.0, 2.0) == pytest.approx(1.0, abs=1e-15)
    assert bakry_emery(3.0, 2.0) == pytest.approx(1.5, abs=1e-15)  # rho/2 at p=2
    q = 4.0 / 3.0
    assert bakry_emery(2.0, 4.0) == pytest.approx((2.0 / q) ** (q - 1.0), rel=1e-15)
    with pytest.raises(DomainError):
        bakry_emery(0.0, 2.0)


def test_tensorize_is_min():
    assert tensorize(1.0, 2.0) == 1.0
    assert tensorize(5.0, 0.5) == 0.5


def test_holley_stroock_directions():
    assert holley_stroock(1.7, 0.0) == pytest.approx(1.7, abs=1e-15)
    assert holley_stroock(2.0, 0.5) == pytest.approx(2.0 * math.exp(-1.0), rel=1e-15)
    assert holley_stroock_literal(2.0, 0.5) == pytest.approx(2.0 * math.e, rel=1e-15)
    assert holley_stroock(1.0, 0.3) <= 1.0  # perturbation never strengthens


def test_laplace_bound_gaussian_equality_case():
    mu = gaussian_1d(-10, 10, 1e-3)
    table = laplace_bound_check(mu, lambda x: x, rho=2.0, q=2.0,
                                lambda_grid=np.linspace(0.0, 3.0, 13))
    assert table.passed
    assert np.max(np.abs(table.margins)) <= 1e-8
    assert table.margins[0] == pytest.approx(0.0, abs=1e-15)


def test_laplace_bound_detects_false_constant():
    xs = np.linspace(-1, 1, 2001)
    mu = DiscretizedMeasure(support=xs, weights=np.full(xs.size, 1.0 / xs.size))
    table = laplace_bound_check(mu, lambda x: x, rho=100.0, q=2.0,
                                lambda_grid=np.linspace(0.0, 3.0, 7))
    assert not table.passed
    assert table.worst()[1] < 0


def test_laplace_bound_rejects_steep_functions():
    mu = gaussian_1d(-4, 4, 0.01)
    with pytest.raises(LipschitzError):
        laplace_bound_check(mu, lambda x: 2.0 * x, rho=2.0, q=2.0,
                            lambda_grid=[0.0, 1.0])


def test_concentration_gaussian_tail():
    rng = np.random.default_rng(2)
    from spinlab.ensemble import SampleBatch
    batch = SampleBatch(data=rng.normal(size=(20000, 1)), seed=2, ess=20000,
                        thinning=1)
    table = concentration_check(batch, lambda x: x[:, 0], c=1.0, p=2.0,
                                r_grid=np.linspace(0.0, 3.0, 13))
    assert table.passed
    assert table.rhs[0] == 1.0  # r = 0 bound is trivial


def test_concentration_canonical_ensemble_with_estimated_constant():
    # Herbst at p = 2 turns an inequality constant rho into the tail constant
    # c = rho/2: P(f >= mean + r) <= exp(-rho r^2 / 4) = exp(-c r^2 / 2)
    ens = CanonicalEnsemble(4, 0.3, make_gaussian())
    batch = sample_canonical(ens, 8000, thinning=2, seed=7)
    est = estimate_best_rho(batch, 2.0, pair_difference_family(), "pair-tilts")
    # f = x_0 - m is 1-Lipschitz on the hyperplane (tangent gradient sqrt(3)/2)
    table = concentration_check(batch, lambda x: x[:, 0] - 0.3,
                                c=est.rho_hat / 2.0, p=2.0,
                                r_grid=np.linspace(0.0, 2.5, 11))
    assert table.passed


def test_talagrand_equal_measures_zero_margin():
    rng = np.random.default_rng(3)
    from spinlab.ensemble import SampleBatch
    data = rng.normal(size=(400, 1))
    a = SampleBatch(data=data, seed=3, ess=400, thinning=1)
    rep = talagrand_check(a, a, p=2.0, rho_tilde=1.0, entropy_value=0.0)
    assert rep.wpp == 0.0
    assert rep.margin == 0.0
    assert rep.passed


def test_talagrand_gaussian_shift_equality_structure():
    # sharp transport-entropy equality for mean-shifted Gaussians:
    # W2^2 = a^2 = 2 * KL at rho_tilde = 1
    rng = np.random.default_rng(4)
    from spinlab.ensemble import SampleBatch
    a = 1.0
    mu = SampleBatch(data=rng.normal(0, 1, size=(4000, 1)), seed=4, ess=4000, thinning=1)
    nu = SampleBatch(data=rng.normal(a, 1, size=(4000, 1)), seed=5, ess=4000, thinning=1)
    rep = talagrand_check(mu, nu, p=2.0, rho_tilde=1.0, entropy_value=a**2 / 2)
    assert rep.passed
    assert abs(rep.margin) <= 4 * rep.margin_se + 0.05


def test_talagrand_canonical_ensemble_against_tilted_density():
    # nu = exp(g) mu / Z with g = 0.6 (x_0 - x_1) on the gaussian mu_{4,m};
    # both sides by Monte Carlo: the entropy from sample averages of g, the
    # nu-samples by importance resampling of the mu-batch. On the tangent
    # space this is a mean shift of 0.6 (e0 - e1), so W2^2 = 2 KL = 0.72 and
    # the bound saturates at rho_tilde = 1.
    from spinlab.ensemble import SampleBatch
    ens = CanonicalEnsemble(4, 0.3, make_gaussian())
    mu = sample_canonical(ens, 8000, thinning=3, seed=17)
    g = 0.6 * (mu.data[:, 0] - mu.data[:, 1])
    log_mean_exp = float(np.log(np.mean(np.exp(g))))
    rng = np.random.default_rng(18)
    w = np.exp(g - g.max())
    idx = rng.choice(len(g), size=4000, p=w / w.sum())
    nu = SampleBatch(data=mu.data[idx], seed=18, ess=4000, thinning=1)
    mu_small = SampleBatch(data=mu.data[rng.permutation(len(g))[:4000]], seed=17,
                           ess=4000, thinning=1)
    ent = float(np.mean(g[idx])) - log_mean_exp  # E_nu[g] - log E_mu[e^g]
    assert ent == pytest.approx(0.36, abs=0.05)
    rep = talagrand_check(mu_small, nu, p=2.0, rho_tilde=1.0, entropy_value=ent,
                          entropy_se=0.01)
    assert rep.wpp == pytest.approx(0.72, abs=0.1)
    assert rep.margin >= -3 * rep.margin_se


def test_entropy_decomposition_trivial_partition():
    mu = DiscretizedMeasure(support=np.arange(6.0), weights=np.full(6, 1 / 6))
    f = np.array([1.0, 2.0, 3.0, 1.0, 0.5, 0.25])
    res = entropy_decomposition_check(mu, np.zeros(6, dtype=int), f)
    assert abs(res) <= 1e-14


def test_entropy_decomposition_constant_function():
    mu = DiscretizedMeasure(support=np.arange(4.0), weights=np.full(4, 0.25))
    res = entropy_decomposition_check(mu, np.array([0, 0, 1, 1]), np.full(4, 2.0))
    assert abs(res) <= 1e-14


def test_entropy_decomposition_random_tables_exact():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        n = 36
        w = rng.random(n)
        mu = DiscretizedMeasure(support=np.arange(float(n)), weights=w / w.sum())
        f = rng.random(n) + 0.1
        labels = rng.integers(0, 6, n)
        worst = max(worst, abs(entropy_decomposition_check(mu, labels, f)))
    assert worst <= 1e-12


def test_entropy_decomposition_rejects_bad_partition():
    from spinlab.errors import PartitionError
    mu = DiscretizedMeasure(support=np.arange(4.0), weights=np.full(4, 0.25))
    with pytest.raises(PartitionError):
        entropy_decomposition_check(mu, np.array([0, 0, 1]), np.ones(4))


def test_equivalent_inequality_forms_are_identical_statements():
    # Ent(f) <= (1/rho) E_q(f)  <=>  Ent(g^q) <= (q^q/rho) int ||grad g||_q^q
    # under g = f^(1/q); both sides map onto each other exactly
    mu = gaussian_1d(-6, 6, 0.01)
    x = mu.points()[:, 0]
    q = 4.0 / 3.0
    f = np.exp(0.5 * np.tanh(x))
    grad_f = (0.5 / np.cosh(x) ** 2 * f)[:, None]
    lhs_energy = mlsi_energy(f, grad_f, mu, q)
    g = f ** (1.0 / q)
    grad_g = grad_f * (1.0 / q) * f[:, None] ** (1.0 / q - 1.0)
    rhs_energy = q**q * float(np.sum(mu.weights * np.abs(grad_g[:, 0]) ** q))
    assert lhs_energy == pytest.approx(rhs_energy, rel=1e-12)
    assert entropy(f, mu) == pytest.approx(entropy(g**q, mu), rel=1e-12)


def test_pair_difference_family_is_tangent():
    fam = pair_difference_family()
    x = np.random.default_rng(6).normal(size=(10, 4))
    for tf in fam[:4]:
        g = tf.grad(x)
        assert np.allclose(g.sum(axis=1), 0.0, atol=1e-12)
