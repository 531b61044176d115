import pytest

from relaylab.errors import DegenerateEstimation
from relaylab.mimo import (
    LemmaIdentity,
    LemmaParams,
    MimoConfig,
    Scheme,
    decomposition_residual,
    esnr_s2_analytic,
    lemma1_analytic,
    lemma1_mc,
    noise_uncorrelatedness,
    partition_relays,
    s2_terms,
    simulate_mimo,
    simulate_mimo_all,
)
from relaylab.protocols import Protocol, SingleAntennaConfig, esnr_analytic
from relaylab.stats import McPlan

# Frozen from simulate_mimo_all(M=2, N=2, K=7, est 0.9/0.9), 1e6 trials, seed 2024.
S2_GOLDEN = 2.3547814839363626
S2_GOLDEN_CI = 0.004619140212014908


def test_partition():
    assert partition_relays(1, 5) == (tuple(range(5)),)
    groups = partition_relays(2, 7)
    assert len(set(groups[0]) | set(groups[1])) == 14 and not set(groups[0]) & set(groups[1])
    assert [len(g) for g in partition_relays(3, 2)] == [2, 2, 2]
    with pytest.raises(ValueError):
        partition_relays(0, 2)


def test_scheme_parse():
    assert Scheme.parse("s2") is Scheme.S2
    with pytest.raises(ValueError):
        Scheme.parse("S3")


def test_config_validation():
    with pytest.raises(ValueError):
        MimoConfig.homogeneous(0, 1, 1, 0.5, 0.5)
    with pytest.raises(ValueError):
        MimoConfig.homogeneous(2, 1, 1, 0.5, 0.5, sigma_zf_sq=-1)
    assert MimoConfig.homogeneous(2, 1, 1, 0.5, 0.5, sigma_z_sq=2).sigma_zf_sq == pytest.approx(0.2)


@pytest.mark.parametrize(
    "identity,N,params,expected",
    [
        (LemmaIdentity.SELF_PRODUCT, 2, LemmaParams(), 6.0),
        (LemmaIdentity.SELF_PRODUCT, 1, LemmaParams(), 2.0),
        (LemmaIdentity.INDEPENDENT_PRODUCT, 3, LemmaParams(h=0.5, h_est=0.5, h_prime=2.0), 3.0),
        (LemmaIdentity.ESTIMATE_PRODUCT, 2, LemmaParams(h=1.0, h_est=0.9), 5.04),
        (LemmaIdentity.PRODUCT_FACTORIZATION, 1, LemmaParams(), 4.0),
    ],
)
def test_lemma_closed_forms(identity, N, params, expected):
    assert lemma1_analytic(identity, N, params) == pytest.approx(expected)


@pytest.mark.parametrize(
    "identity,N,params",
    [
        (LemmaIdentity.ESTIMATE_PRODUCT, 2, LemmaParams(h=1.0, h_est=0.9)),
        (LemmaIdentity.PRODUCT_FACTORIZATION, 1, LemmaParams()),
        (LemmaIdentity.INDEPENDENT_PRODUCT, 3, LemmaParams(h=0.5, h_est=0.5, h_prime=2.0)),
        (LemmaIdentity.NOISE_FACTORIZATION, 2, LemmaParams(g_bar="estimate", g_est=0.6, T_d=2)),
    ],
)
def test_lemma_mc_contains_closed_form(identity, N, params):
    m = lemma1_mc(identity, N, params, McPlan(1_000_000, 17))
    assert m.contains(lemma1_analytic(identity, N, params))


def test_lemma_all_zero_variances():
    zero = LemmaParams(h=0, g=0, h_est=0, g_est=0, h_prime=0, g_prime=0, s=0, n=0)
    for identity in LemmaIdentity:
        assert lemma1_analytic(identity, 2, zero) == 0
        assert lemma1_mc(identity, 2, zero, McPlan(100)).mean == 0


def test_lemma_params_validation():
    with pytest.raises(ValueError):
        LemmaParams(h=0.5, h_est=0.9)
    with pytest.raises(ValueError):
        LemmaParams(h_bar="other")


def test_theorem_terms_at_one_antenna_pair():
    t = s2_terms(MimoConfig.homogeneous(1, 1, 7, 0.9, 0.9))
    assert t["D2"] == 0 and t["D4"] == 0


def test_exact_form_reduces_to_single_antenna_p3():
    # One antenna pair, one antenna per relay, no noise anywhere.
    cfg = MimoConfig.homogeneous(1, 1, 7, 0.9, 0.9, sigma_n_sq=0.0, sigma_z_sq=0.0, sigma_zf_sq=0.0)
    single = esnr_analytic(Protocol.P3, SingleAntennaConfig.unit(7, 0.9, 0.9)).value
    assert esnr_s2_analytic(cfg, exact=True).value == pytest.approx(single, rel=0.01)


def test_degenerate_normalization():
    with pytest.raises(DegenerateEstimation):
        simulate_mimo(Scheme.S1b, MimoConfig.homogeneous(2, 1, 3, 0.0, 0.9), McPlan(100))


def test_s2_golden_value():
    cfg = MimoConfig.homogeneous(2, 2, 7, 0.9, 0.9)
    e = simulate_mimo(Scheme.S2, cfg, McPlan(100_000, 5))
    assert abs(e.value - S2_GOLDEN) <= e.ci95_half_width + S2_GOLDEN_CI


def test_exact_theorem_form_inside_golden_interval():
    cfg = MimoConfig.homogeneous(2, 2, 7, 0.9, 0.9)
    # The frozen run sits about two standard errors above the exact value.
    assert abs(esnr_s2_analytic(cfg, exact=True).value - S2_GOLDEN) <= 2 * S2_GOLDEN_CI


def test_all_schemes_share_draws_with_single_calls():
    cfg = MimoConfig.homogeneous(2, 1, 3, 0.9, 0.5)
    plan = McPlan(4000, 8)
    both = simulate_mimo_all(cfg, plan)
    for s in Scheme:
        assert simulate_mimo(s, cfg, plan) == both[s]


def test_ordering_at_default_settings():
    r = simulate_mimo_all(MimoConfig.homogeneous(2, 2, 7, 0.9, 0.9), McPlan(50_000, 1))
    assert r[Scheme.S1a].interval[0] > r[Scheme.S1b].interval[1]
    assert r[Scheme.S1b].interval[0] > r[Scheme.S2].interval[1]


def test_perfect_estimates_collapse_s1b_onto_s1a():
    cfg = MimoConfig.homogeneous(2, 2, 7, 1.0, 1.0, sigma_zf_sq=0.0)
    r = simulate_mimo_all(cfg, McPlan(20_000, 2))
    assert r[Scheme.S1b].value == pytest.approx(r[Scheme.S1a].value, rel=1e-12)
    # S2 still treats the leak of s^i through other subgroups as interference.
    assert r[Scheme.S2].value < r[Scheme.S1a].value


def test_perfect_estimates_single_pair_s2_deficit_is_feedforward_noise():
    cfg = MimoConfig.homogeneous(1, 2, 7, 1.0, 1.0, sigma_zf_sq=0.0)
    r = simulate_mimo_all(cfg, McPlan(20_000, 2))
    assert r[Scheme.S2].value == pytest.approx(r[Scheme.S1a].value, rel=1e-12)
    noisy = simulate_mimo(Scheme.S2, cfg.with_(sigma_zf_sq=0.5), McPlan(20_000, 2))
    assert noisy.value < r[Scheme.S2].value


@pytest.mark.parametrize("M,N", [(1, 1), (2, 3), (3, 2)])
def test_decomposition_identity(M, N):
    assert decomposition_residual(MimoConfig.homogeneous(M, N, 4, 0.7, 0.6), McPlan(5000, M)) <= 1e-12


def test_data_and_overall_noise_uncorrelated():
    re, im = noise_uncorrelatedness(MimoConfig.homogeneous(2, 2, 5, 0.9, 0.9), McPlan(200_000, 4))
    assert abs(re.mean) <= 3 * re.ci95_half_width
    assert abs(im.mean) <= 3 * im.ci95_half_width


def test_workers_do_not_change_results():
    cfg = MimoConfig.homogeneous(2, 2, 3, 0.9, 0.5)
    a = simulate_mimo_all(cfg, McPlan(6000, 3, 1000), workers=1)
    b = simulate_mimo_all(cfg, McPlan(6000, 3, 700), workers=3)
    assert a == b


def test_feedforward_power_matches_monte_carlo():
    import numpy as np

    from relaylab.mimo import feedforward_power
    from relaylab.stats import standard_draws

    N, n = 3, 400_000
    cfg = MimoConfig.homogeneous(2, N, 7, 0.7, 0.6)
    z = standard_draws(5, 0, n, 3 * N).reshape(n, 3, N)
    h_hat = np.sqrt(0.7) * z[:, 0]
    g_hat = np.sqrt(0.6) * z[:, 1]
    g = g_hat + np.sqrt(0.4) * z[:, 2]
    p = np.abs(np.sum(np.abs(h_hat) ** 2, axis=1)) ** 2 * np.abs(np.sum(g_hat.conj() * g, axis=1)) ** 2
    target = feedforward_power(cfg)
    assert abs(p.mean() - target) <= 3 * 1.96 * p.std() / np.sqrt(n)
