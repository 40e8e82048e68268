import numpy as np
import pytest

from spinlab.ensemble import CanonicalEnsemble, sample_canonical
from spinlab.errors import ShapeError
from spinlab.kawasaki import (KawasakiConfig, decay_experiment,
                              discrete_laplacian, operator_sqrt, simulate)
from spinlab.potential import make_double_well, make_gaussian


def test_laplacian_eigenvalues_n4():
    vals = sorted(np.linalg.eigvalsh(discrete_laplacian(4)))
    assert np.allclose(vals, [0.0, 2.0, 2.0, 4.0], atol=1e-12)


def test_laplacian_kills_constants():
    for n in (2, 3, 4, 8):
        assert np.allclose(discrete_laplacian(n) @ np.ones(n), 0.0, atol=1e-14)


def test_laplacian_n2_periodic_doubling():
    assert np.array_equal(discrete_laplacian(2), np.array([[2.0, -2.0], [-2.0, 2.0]]))


def test_operator_sqrt_identity():
    assert np.allclose(operator_sqrt(np.eye(3)), np.eye(3), atol=1e-14)


def test_operator_sqrt_shares_kernel():
    S = operator_sqrt(discrete_laplacian(4))
    assert np.max(np.abs(S @ np.ones(4))) <= 1e-12


@pytest.mark.parametrize("n", [2, 4, 8, 16])
def test_operator_sqrt_reconstruction(n):
    A = discrete_laplacian(n)
    S = operator_sqrt(A)
    assert np.max(np.abs(S @ S - A)) <= 1e-10


def test_operator_sqrt_rejects_asymmetric():
    with pytest.raises(ShapeError):
        operator_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_config_rejects_large_step():
    with pytest.raises(ValueError):
        KawasakiConfig(N=4, h=0.05, T=1.0, n_paths=4)


def test_config_rejects_unknown_initial_law():
    with pytest.raises(ValueError):
        KawasakiConfig(N=4, h=0.01, T=1.0, n_paths=4, initial_law="whatever")


def test_drift_vanishes_on_constant_configurations():
    # A grad H(m * ones) = m * A * ones = 0 for the gaussian potential
    g = make_gaussian()
    A = discrete_laplacian(4)
    x = np.full(4, 0.7)
    assert np.allclose(A @ g.d1(x), 0.0, atol=1e-14)
    ens = CanonicalEnsemble(4, 0.7, g)
    cfg = KawasakiConfig(N=4, h=0.01, T=0.5, n_paths=3,
                         initial_law="shifted-point", shift_scale=0.0,
                         noise_scale=0.0, seed=0, checkpoint_times=(0.5,))
    sim = simulate(ens, cfg)
    assert np.max(np.abs(sim.batches[-1].data - 0.7)) <= 1e-14


def test_mean_conserved_before_projection():
    ens = CanonicalEnsemble(8, 0.5, make_gaussian())
    cfg = KawasakiConfig(N=8, h=0.02, T=20.0, n_paths=4,
                         initial_law="hyperplane-gaussian", seed=1,
                         checkpoint_times=(20.0,))
    sim = simulate(ens, cfg)
    assert sim.mean_drift_max <= 1e-12


def test_blow_up_guard():
    from spinlab.errors import BlowUpError
    ens = CanonicalEnsemble(4, 0.0, make_gaussian())
    cfg = KawasakiConfig(N=4, h=0.025, T=1.0, n_paths=2,
                         initial_law="shifted-point", shift_scale=2000.0, seed=2)
    with pytest.raises(BlowUpError):
        simulate(ens, cfg)


def test_equilibrium_moments_preserved():
    dw = make_double_well()
    ens = CanonicalEnsemble(4, 0.0, dw)
    eq = sample_canonical(ens, 1200, thinning=4, seed=3)
    cfg = KawasakiConfig(N=4, h=0.0025, T=4.0, n_paths=1000,
                         initial_law="equilibrium", seed=4, checkpoint_times=(4.0,))
    sim = simulate(ens, cfg, equilibrium_batch=eq)
    x0 = eq.data[:1000]
    xt = sim.batches[-1].data
    for k in (1, 2):
        a, b = (x0**k).mean(axis=0), (xt**k).mean(axis=0)
        se = np.sqrt((x0**k).var(axis=0) / len(x0) + (xt**k).var(axis=0) / len(xt))
        assert np.all(np.abs(a - b) <= 3.5 * se)


def test_generator_consistency_quadratic_observable():
    # d/dt E[phi] at t=0 equals E[-<A grad H, grad phi> + sum A_ij d_ij phi]
    g = make_gaussian()
    ens = CanonicalEnsemble(2, 0.0, g)
    A = discrete_laplacian(2)
    n_paths = 200000
    h = 0.005
    cfg = KawasakiConfig(N=2, h=h, T=h, n_paths=n_paths,
                         initial_law="hyperplane-gaussian", initial_spread=0.6,
                         seed=5, checkpoint_times=(h,))
    rng = np.random.default_rng(5)
    from spinlab.kawasaki import initial_configurations
    x0 = initial_configurations(ens, cfg, rng)
    x0 += 0.0 - x0.mean(axis=1, keepdims=True)
    sim = simulate(ens, cfg)
    x1 = sim.batches[-1].data
    phi0 = x0[:, 0] ** 2
    phi1 = x1[:, 0] ** 2
    slope = (phi1 - phi0) / h
    gen = -2.0 * x0[:, 0] * (g.d1(x0) @ A)[:, 0] + 2.0 * A[0, 0]
    diff = slope.mean() - gen.mean()
    se = np.sqrt(slope.var() / n_paths + gen.var() / n_paths)
    assert abs(diff) <= 3 * se + 0.05 * abs(gen.mean())


def test_decay_from_equilibrium_sits_at_noise_floor():
    g = make_gaussian()
    ens = CanonicalEnsemble(2, 0.0, g)
    eq = sample_canonical(ens, 1024, seed=6)
    cfg = KawasakiConfig(N=2, h=0.01, T=0.5, n_paths=512,
                         initial_law="equilibrium", seed=7,
                         checkpoint_times=(0.1, 0.3, 0.5))
    trace = decay_experiment(ens, cfg, 2.0, eq)
    assert trace.inconclusive
    assert np.all(trace.wp_values**2 <= 6.0 * trace.noise_floor_wpp)


def test_decay_rate_matches_ou_for_two_sites():
    # N=2 gaussian Kawasaki is a 1D Ornstein-Uhlenbeck with rate 4 (the
    # nonzero laplacian eigenvalue); W_2^2 then decays like exp(-8 t)
    g = make_gaussian()
    ens = CanonicalEnsemble(2, 0.0, g)
    eq = sample_canonical(ens, 1024, seed=8)
    cfg = KawasakiConfig(N=2, h=0.01, T=0.6, n_paths=1024,
                         initial_law="shifted-point", shift_scale=1.0, seed=9,
                         checkpoint_times=tuple(np.arange(0.05, 0.65, 0.05)))
    trace = decay_experiment(ens, cfg, 2.0, eq)
    assert not trace.inconclusive
    assert trace.fit_r2 >= 0.9
    assert abs(trace.fitted_rate) == pytest.approx(8.0, rel=0.2)


def test_halving_h_changes_wp_within_noise():
    dw = make_double_well()
    ens = CanonicalEnsemble(4, 0.0, dw)
    eq = sample_canonical(ens, 768, thinning=3, seed=10)
    traces = []
    for h in (0.02, 0.01):
        cfg = KawasakiConfig(N=4, h=h, T=0.4, n_paths=768,
                             initial_law="shifted-point", shift_scale=1.0,
                             seed=11, checkpoint_times=(0.2, 0.4))
        traces.append(decay_experiment(ens, cfg, 2.0, eq))
    for k in range(2):
        a, b = traces[0], traces[1]
        se = np.hypot(a.wp_se[k], b.wp_se[k])
        assert abs(a.wp_values[k] ** 2 - b.wp_values[k] ** 2) <= 3 * se + 5e-3


def test_trace_csv_and_header():
    import json
    g = make_gaussian()
    ens = CanonicalEnsemble(2, 0.0, g)
    eq = sample_canonical(ens, 256, seed=12)
    cfg = KawasakiConfig(N=2, h=0.01, T=0.2, n_paths=256,
                         initial_law="hyperplane-gaussian", seed=13,
                         checkpoint_times=(0.1, 0.2))
    trace = decay_experiment(ens, cfg, 2.0, eq)
    lines = trace.to_csv().strip().splitlines()
    assert lines[0] == "t,wp,wp_se"
    assert len(lines) == 3
    head = json.loads(trace.header_json(N=2, m=0.0, h=0.01, seed=13))
    assert head["p"] == 2.0 and head["N"] == 2
    assert head["initial_entropy"] is not None  # gaussian-on-hyperplane start
