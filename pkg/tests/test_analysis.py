import itertools
import math
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from relaycov import analysis as A
from relaycov.model import LinkKind, link_spec, nakagami_alpha, reference_params

TAU_10DB = 10.0


# -- oracles --------------------------------------------------------------------

def brute_compositions(m, kappa):
    return sorted(p for p in itertools.product(range(kappa + 1), repeat=m) if sum(p) == kappa)


def brute_beta(parts):
    """Expand prod_{n<=kappa} sum_q C(m,q)(-1)^(q+1) y^q term by term.

    Every antenna picks an index q; the composition counts how often each q
    was picked. Summing the products over all picks with those counts gives
    the composition's coefficient.
    """
    m, kappa = len(parts), sum(parts)
    total = 0
    for picks in itertools.product(range(1, m + 1), repeat=kappa):
        counts = Counter(picks)
        if tuple(counts.get(q, 0) for q in range(1, m + 1)) == tuple(parts):
            total += math.prod(math.comb(m, q) * (-1) ** (q + 1) for q in picks)
    return total


def literal_selection(params, kind, n_antennas, tau):
    """Direct/RD coverage transcribed term by term, integrated adaptively."""
    if kind is LinkKind.DIRECT:
        lam, lam_i, radius = params.bs_density, params.bs_density, params.bs_los_radius
        power, g_main, g_side = params.bs_power, params.bs_antennas, 1 / params.bs_antennas
        p_main, m = 102 / (360 * params.bs_antennas), params.m_bd
    else:
        lam, lam_i, radius = params.relay_density, params.interferer_density, params.ue_los_radius
        power, g_main, g_side = params.ue_power, params.ue_antennas, 1 / params.ue_antennas
        p_main, m = 102 / (360 * params.ue_antennas), params.m_rd
    eta, noise = params.pathloss_exp, params.noise_power
    alpha = nakagami_alpha(m)
    xi = 1 - math.exp(-math.pi * lam * radius**2)

    def pdf(x):
        return 2 * math.pi * lam * x * math.exp(-math.pi * lam * x * x) / xi

    total = 0.0
    for kappa in range(1, n_antennas + 1):
        inner_sum = 0.0
        for parts in brute_compositions(m, kappa):
            omega = sum(q * j for q, j in enumerate(parts, 1))
            beta = brute_beta(parts)

            def outer(x):
                delta = alpha * tau / (power * g_main * x**-eta)

                def v(ell):
                    out = 0.0
                    for g, p in ((g_main, p_main), (g_side, 1 - p_main)):
                        out += p * math.prod((1 + q * delta * power * g * ell**-eta / m) ** (-m * j)
                                             for q, j in enumerate(parts, 1))
                    return out

                lower = x if kind is LinkKind.DIRECT else 0.0
                inner, _ = integrate.quad(lambda ell: ell * (1 - v(ell)), lower, radius,
                                          epsabs=1e-12, epsrel=1e-11, limit=200)
                noise_term = tau * alpha * omega * noise / (power * g_main * x**-eta)
                return math.exp(-noise_term - 2 * math.pi * lam_i * inner) * pdf(x)

            val, _ = integrate.quad(outer, 0.0, radius, epsabs=1e-12, epsrel=1e-11, limit=200)
            inner_sum += beta * val
        total += (-1) ** (kappa + 1) * math.comb(n_antennas, kappa) * inner_sum
    return xi * total


def literal_br(params, tau):
    """BR coverage with the four-branch interference kernel written out."""
    lam, radius, m = params.bs_density, params.bs_los_radius, params.m_br
    eta, noise, power = params.pathloss_exp, params.noise_power, params.bs_power
    n_b, n_u = params.bs_antennas, params.ue_antennas
    gb_main, gb_side, gu_main, gu_side = n_b, 1 / n_b, n_u, 1 / n_u
    pb, pu = 102 / (360 * n_b), 102 / (360 * n_u)
    alpha = nakagami_alpha(m)
    xi = 1 - math.exp(-math.pi * lam * radius**2)
    total = 0.0
    for j in range(1, m + 1):
        psi = j * alpha * tau / (power * gb_main * gu_main)

        def kernel(ell, x):
            def bracket(g):
                return 1 - (1 + psi * x**eta * power * g / (m * ell**eta)) ** -m
            return (pu * (1 - pb) * bracket(gb_side * gu_main)
                    + (1 - pb) * (1 - pu) * bracket(gb_side * gu_side)
                    + pb * (1 - pu) * bracket(gb_main * gu_side)
                    + pb * pu * bracket(gb_main * gu_main))

        def outer(x):
            inner, _ = integrate.quad(lambda ell: ell * kernel(ell, x), x, radius,
                                      epsabs=1e-12, epsrel=1e-11, limit=200)
            pdf = 2 * math.pi * lam * x * math.exp(-math.pi * lam * x * x) / xi
            return math.exp(-psi * x**eta * noise - 2 * math.pi * lam * inner) * pdf

        val, _ = integrate.quad(outer, 0.0, radius, epsabs=1e-12, epsrel=1e-11, limit=200)
        total += (-1) ** (j + 1) * math.comb(m, j) * val
    return xi * total


# -- compositions and weights ---------------------------------------------------

@pytest.mark.parametrize("m, kappa, expected", [
    (2, 2, [(0, 2), (1, 1), (2, 0)]),
    (1, 5, [(5,)]),
])
def test_enumerate_compositions_examples(m, kappa, expected):
    assert [c.parts for c in A.enumerate_compositions(m, kappa)] == expected


@given(st.integers(1, 5), st.integers(1, 7))
def test_enumerate_compositions_matches_brute_force(m, kappa):
    comps = [c.parts for c in A.enumerate_compositions(m, kappa)]
    assert comps == brute_compositions(m, kappa)
    assert len(comps) == math.comb(kappa + m - 1, m - 1)


def test_three_part_count():
    assert len(A.enumerate_compositions(3, 2)) == 6


def test_composition_blowup_guard():
    with pytest.raises(A.CombinatorialBlowup):
        A.enumerate_compositions(8, 40)


@given(st.integers(1, 4), st.integers(1, 5))
def test_omega_bounds(m, kappa):
    for c in A.enumerate_compositions(m, kappa):
        assert kappa <= c.omega <= m * kappa


@pytest.mark.parametrize("parts, expected", [((1,), 1), ((1, 0), 2), ((0, 1), -1), ((1, 1), -4)])
def test_beta_examples(parts, expected):
    assert A.beta_coefficient(A.Composition(parts), len(parts)) == expected
    assert brute_beta(parts) == expected


@settings(max_examples=30)
@given(st.integers(1, 4), st.integers(1, 5))
def test_beta_matches_expansion(m, kappa):
    for c in A.enumerate_compositions(m, kappa):
        assert A.beta_coefficient(c, m) == brute_beta(c.parts)


def test_beta_sum_is_one():
    # setting every exponential to 1 turns each factor into 1 - (1-1)^m = 1
    for m, kappa in [(2, 3), (3, 2), (4, 4)]:
        assert sum(A.beta_coefficient(c, m) for c in A.enumerate_compositions(m, kappa)) == 1


# -- kernel ---------------------------------------------------------------------

def _unit_link(m):
    link = link_spec(reference_params(m_bd=m), LinkKind.DIRECT)
    return link


def test_v_kernel_zero_delta():
    link = _unit_link(2)
    assert A.v_kernel(link, A.Composition((1, 1)), 0.0, 10.0) == pytest.approx(1.0)


def test_v_kernel_far_field():
    link = _unit_link(2)
    assert A.v_kernel(link, A.Composition((2, 1)), 1.0, 1e9) == pytest.approx(1.0, abs=1e-12)


def test_v_kernel_hand_value():
    link = _unit_link(2)
    comp = A.Composition((1, 1))
    # choose delta so that delta * P * G * ell^-eta = 1 for each gain value
    per_gain = []
    for gain, prob in link.interference_gains.entries:
        ell = 10.0
        delta = 1.0 / (link.tx_power * gain * ell ** -link.pathloss_exp)
        single = replace(link, interference_gains=type(link.interference_gains)(((gain, 1.0),)))
        per_gain.append(A.v_kernel(single, comp, delta, ell))
    assert per_gain == pytest.approx([1.5**-2 * 2.0**-2] * 2)
    assert per_gain[0] == pytest.approx(0.111111111, abs=1e-9)


@settings(max_examples=40)
@given(st.floats(1e-6, 1e3), st.floats(0.5, 200.0))
def test_v_kernel_in_unit_interval(delta, ell):
    v = A.v_kernel(_unit_link(2), A.Composition((1, 2)), delta, ell)
    assert 0.0 < v <= 1.0


# -- link formulas against literal transcriptions ---------------------------------

@pytest.mark.parametrize("n_u", [1, 2, 3])
def test_direct_matches_literal(n_u):
    p = reference_params(ue_antennas=n_u)
    got = A.coverage_direct_correlated(p, TAU_10DB)
    assert got == pytest.approx(literal_selection(p, LinkKind.DIRECT, n_u, TAU_10DB), abs=1e-7)


@pytest.mark.parametrize("n_u", [1, 2, 3])
def test_rd_matches_literal(n_u):
    p = reference_params(ue_antennas=n_u)
    got = A.coverage_rd_correlated(p, TAU_10DB)
    assert got == pytest.approx(literal_selection(p, LinkKind.RD, n_u, TAU_10DB), abs=1e-7)


@pytest.mark.parametrize("n_u, tau", [(4, TAU_10DB), (8, 10**1.4), (2, 10**0.6)])
def test_br_matches_four_branch_form(n_u, tau):
    p = reference_params(ue_antennas=n_u)
    assert A.coverage_br(p, tau) == pytest.approx(literal_br(p, tau), abs=1e-7)


def test_direct_m3_matches_literal():
    p = reference_params(ue_antennas=2, m_bd=3)
    got = A.coverage_direct_correlated(p, TAU_10DB)
    assert got == pytest.approx(literal_selection(p, LinkKind.DIRECT, 2, TAU_10DB), abs=1e-7)


# -- limits and algebra -----------------------------------------------------------

def test_direct_tends_to_nonempty_prob_without_noise_or_threshold():
    p = reference_params(noise_power=1e-12, ue_antennas=3)
    link = link_spec(p, LinkKind.DIRECT)
    assert A.coverage_direct_correlated(p, 1e-9) == pytest.approx(link.nonempty_prob, abs=1e-6)


def test_br_without_noise_or_interference():
    p = reference_params(noise_power=1e-12, bs_density=1e-9, ue_antennas=8)
    link = link_spec(p, LinkKind.BR)
    assert A.coverage_br(p, TAU_10DB) == pytest.approx(link.nonempty_prob, rel=1e-4)


def test_rd_without_interferers_or_noise():
    p = reference_params(multiplexing_factor=0.0, noise_power=1e-12)
    link = link_spec(p, LinkKind.RD)
    assert A.coverage_rd_correlated(p, TAU_10DB) == pytest.approx(link.nonempty_prob, abs=1e-6)


def test_combine_direct_certain():
    assert A.combine(1.0, 0.3, 0.2) == 1.0
    assert A.combine(0.4, 0.0, 0.9) == pytest.approx(0.4)


@pytest.mark.parametrize("overrides", [
    dict(), dict(bs_antennas=4), dict(m_bd=3, m_rd=1), dict(bs_density=1e-3, pathloss_exp=3.0),
    dict(bs_power=10.0**4.5, ue_power=10.0**2.0),
])
@pytest.mark.parametrize("tau_db", [0.0, 10.0, 16.0])
def test_single_antenna_modes_coincide(overrides, tau_db):
    p = reference_params(ue_antennas=1, **overrides)
    tau = 10 ** (tau_db / 10)
    corr = A.coverage_total(p, tau, A.Mode.CORRELATED)
    uncorr = A.coverage_total(p, tau, A.Mode.UNCORRELATED)
    assert abs(corr - uncorr) < 1e-9


def test_total_at_least_direct():
    for n_u in (1, 4, 8):
        b = A.coverage_breakdown(reference_params(ue_antennas=n_u), TAU_10DB)
        assert b.total >= b.direct


def test_monotone_in_threshold():
    p = reference_params()
    values = [A.coverage_total(p, 10 ** (t / 10)) for t in range(0, 21, 2)]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_monotone_in_antennas():
    values = [A.coverage_total(reference_params(ue_antennas=n), TAU_10DB) for n in range(1, 13)]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_uncorrelated_overestimates_at_reference_point():
    p = reference_params(ue_antennas=8)
    for t in range(0, 21, 2):
        tau = 10 ** (t / 10)
        assert A.coverage_total(p, tau, A.Mode.UNCORRELATED) >= A.coverage_total(p, tau) - 1e-12


def test_uncorrelated_rd_uses_single_antenna_network():
    p = reference_params(ue_antennas=8)
    p1 = A.coverage_rd_correlated(replace(p, ue_antennas=1), TAU_10DB)
    assert A.coverage_rd_uncorrelated(p, TAU_10DB) == pytest.approx(1 - (1 - p1) ** 8, rel=1e-13)


# -- numerical guards -------------------------------------------------------------

def test_node_doubling_stable_at_default():
    p = reference_params(ue_antennas=8)
    base = A.coverage_breakdown(p, TAU_10DB, quad=A.QuadratureConfig(self_check=False))
    fine = A.coverage_breakdown(p, TAU_10DB, quad=A.QuadratureConfig(256, 256, self_check=False))
    for name in ("direct", "br", "rd", "total"):
        assert abs(getattr(base, name) - getattr(fine, name)) < 1e-6


def test_coarse_grid_flagged():
    with pytest.raises(A.NumericalInstability, match="node doubling"):
        A.coverage_direct_correlated(reference_params(ue_antennas=4), TAU_10DB,
                                     A.QuadratureConfig(outer_nodes=8, inner_nodes=8))


def test_cancellation_flagged_for_many_antennas():
    with pytest.raises(A.NumericalInstability, match="cancels"):
        A.coverage_direct_correlated(reference_params(ue_antennas=24), TAU_10DB)


def test_quadrature_config_minimum_nodes():
    with pytest.raises(ValueError):
        A.QuadratureConfig(outer_nodes=4)


# -- searches ---------------------------------------------------------------------

def test_min_antennas_trivial_target():
    assert A.min_antennas(reference_params(), TAU_10DB, 0.01) == 1


def test_min_antennas_not_achievable():
    with pytest.raises(A.NotAchievable):
        A.min_antennas(reference_params(), TAU_10DB, 0.95, cap=3)


def test_min_antennas_rejects_bad_target():
    with pytest.raises(ValueError):
        A.min_antennas(reference_params(), TAU_10DB, 1.0)


def test_optimal_density_single_point():
    assert A.optimal_bs_density(reference_params(), TAU_10DB, [1e-3])[0] == 1e-3


def test_optimal_density_prefers_interior_maximum():
    grid = list(np.logspace(-4, -2, 9))
    density, prob = A.optimal_bs_density(reference_params(bs_antennas=8), TAU_10DB, grid)
    assert grid[0] < density < grid[-1]
    assert prob == pytest.approx(A.coverage_total(reference_params(bs_antennas=8).with_bs_density(density),
                                                  TAU_10DB))


def test_optimal_density_rejects_unsorted_grid():
    with pytest.raises(ValueError):
        A.optimal_bs_density(reference_params(), TAU_10DB, [1e-3, 1e-4])
