"""Cycle-type combinatorics and the moment <-> collision-average maps."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collisim import oracle
from collisim.inversion import (
    MAX_GAMMA_ORDER,
    MAX_ORDER,
    MomentSet,
    PTMomentSet,
    cycle_type_sum,
    enumerate_cycle_types,
    gamma_expansion_coefficients,
    moments_from_zeta,
    observable_powers_from_xi,
    pt_moments_from_zeta,
    xi_from,
    zeta_from_moments,
)
from helpers import ginibre_density, random_hermitian


def test_cycle_type_counts_sum_to_factorial():
    for k in range(MAX_ORDER + 1):
        types = enumerate_cycle_types(k)
        assert sum(ct.perm_count for ct in types) == math.factorial(k)
        for ct in types:
            assert sum(ct.parts) == k


def test_cycle_type_census_matches_direct_enumeration():
    for k in (3, 4, 5):
        direct: dict[tuple[int, ...], int] = {}
        for perm in itertools.permutations(range(k)):
            key = tuple(sorted((len(c) for c in oracle.cycles_of(perm)), reverse=True))
            direct[key] = direct.get(key, 0) + 1
        generated = {
            tuple(sorted(ct.parts, reverse=True)): ct.perm_count
            for ct in enumerate_cycle_types(k)
        }
        assert generated == direct


def test_enumerate_rejects_out_of_range_order():
    with pytest.raises(ValueError):
        enumerate_cycle_types(MAX_ORDER + 1)
    with pytest.raises(ValueError):
        enumerate_cycle_types(-1)


def test_cycle_type_sum_matches_permutation_enumeration():
    rng = np.random.default_rng(3)
    p = (1.0, *rng.uniform(0.0, 1.0, size=5).tolist())
    for m in range(2, 6):
        direct = 0.0
        for perm in itertools.permutations(range(m)):
            direct += math.prod(p[len(c) - 1] for c in oracle.cycles_of(perm))
        assert cycle_type_sum(p, m) == pytest.approx(direct, abs=1e-10)


def test_zeta_closed_forms_low_orders():
    p = (1.0, 0.61, 0.37, 0.22)
    assert zeta_from_moments(p, 2) == pytest.approx(0.5 + p[1] / 2, abs=1e-13)
    assert zeta_from_moments(p, 3) == pytest.approx(
        1 / 6 + p[1] / 2 + p[2] / 3, abs=1e-13
    )
    assert zeta_from_moments(p, 4) == pytest.approx(
        1 / 24 + p[1] ** 2 / 8 + p[1] / 4 + p[2] / 3 + p[3] / 4, abs=1e-13
    )


def test_zeta_order_three_is_not_the_swapped_variant():
    """At order three the p2 weight is 1/2 and the p3 weight 1/3."""
    p = (1.0, 0.8, 0.2)
    value = zeta_from_moments(p, 3)
    assert value == pytest.approx(1 / 6 + 0.8 / 2 + 0.2 / 3, abs=1e-13)
    assert abs(value - (1 / 6 + 0.8 / 3 + 0.2 / 2)) > 1e-2


def test_zeta_agrees_with_permutation_sum_oracle():
    rng = np.random.default_rng(7)
    rho = ginibre_density(rng, 6)
    eig = np.linalg.eigvalsh(rho)
    p = [1.0] + [float(np.sum(eig ** k)) for k in range(2, 6)]
    for k in (2, 3, 4, 5):
        assert zeta_from_moments(p, k) == pytest.approx(
            oracle.permutation_sum_zeta(rho, k), abs=1e-12
        )


def test_moment_round_trip_bell_pt_values():
    """zeta^PT = (1, 3/4) for a Bell pair inverts to p^PT = (1, 1, 1/4)."""
    pt = pt_moments_from_zeta([1.0, 0.75])
    assert pt.values == pytest.approx((1.0, 1.0, 0.25), abs=1e-12)
    assert pt.p(2) ** 2 - pt.p(3) == pytest.approx(0.75, abs=1e-12)


def test_moments_from_zeta_inverts_forward_map():
    rng = np.random.default_rng(13)
    eig = rng.dirichlet(np.ones(8))
    p_true = [1.0] + [float(np.sum(eig ** k)) for k in range(2, 7)]
    zeta = [zeta_from_moments(p_true, k) for k in range(2, 7)]
    recovered = moments_from_zeta(zeta)
    assert recovered.values == pytest.approx(p_true, abs=1e-10)
    assert not recovered.estimated


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2.0, 2.0), min_size=1, max_size=6))
def test_zeta_round_trip_is_a_polynomial_identity(zeta):
    """Inversion then the forward map reproduces any zeta sequence, physical
    or not."""
    p = moments_from_zeta(zeta)
    for k in range(2, len(zeta) + 2):
        assert zeta_from_moments(p, k) == pytest.approx(zeta[k - 2], abs=1e-8)


def test_xi_round_trip_direct_mode():
    rng = np.random.default_rng(17)
    d = 6
    rho = ginibre_density(rng, d)
    obs = random_hermitian(rng, d)
    p = [1.0] + oracle.matrix_power_traces(rho, 5)[2:]
    o = oracle.observable_power_traces(rho, obs, 5)
    xi = [xi_from(p, o, k) for k in range(1, 6)]
    recovered = observable_powers_from_xi(xi, p, o[0], d, mode="direct")
    assert recovered == pytest.approx(o[1:], abs=1e-9)


def test_xi_round_trip_traceless_mode():
    rng = np.random.default_rng(19)
    d = 4
    rho = ginibre_density(rng, d)
    obs = random_hermitian(rng, d)
    obs0 = obs - np.trace(obs) / d * np.eye(d)
    p = [1.0] + oracle.matrix_power_traces(rho, 5)[2:]
    o_full = oracle.observable_power_traces(rho, obs, 5)
    o_traceless = oracle.observable_power_traces(rho, obs0, 5)
    xi = [xi_from(p, o_traceless, k) for k in range(1, 6)]
    recovered = observable_powers_from_xi(
        xi, p, np.trace(obs).real, d, mode="traceless"
    )
    assert recovered == pytest.approx(o_full[1:], abs=1e-9)


def test_xi_forward_matches_permutation_sum():
    rng = np.random.default_rng(23)
    d = 4
    rho = ginibre_density(rng, d)
    obs = random_hermitian(rng, d)
    p = [1.0] + oracle.matrix_power_traces(rho, 4)[2:]
    o = oracle.observable_power_traces(rho, obs, 4)
    for k in (1, 2, 3, 4):
        assert xi_from(p, o, k) == pytest.approx(
            oracle.permutation_sum_xi(rho, obs, k), abs=1e-12
        )


def test_gamma_coefficients_low_orders():
    p = (1.0, 0.44, 0.31)
    assert gamma_expansion_coefficients(1, p) == pytest.approx(
        [0.5, 0.5], abs=1e-13
    )
    assert gamma_expansion_coefficients(2, p) == pytest.approx(
        [(1 + p[1]) / 6, 1 / 3, 1 / 3], abs=1e-13
    )


def test_gamma_coefficients_rebuild_the_operator():
    """Summing c_ell rho^ell reproduces the open-slot permutation sum."""
    rng = np.random.default_rng(29)
    d = 4
    rho = ginibre_density(rng, d)
    p = [1.0] + oracle.matrix_power_traces(rho, MAX_GAMMA_ORDER)[2:]
    powers = [np.eye(d, dtype=complex)]
    for _ in range(MAX_GAMMA_ORDER):
        powers.append(powers[-1] @ rho)
    for k in range(1, MAX_GAMMA_ORDER + 1):
        coeffs = gamma_expansion_coefficients(k, p)
        rebuilt = sum(c * powers[ell] for ell, c in enumerate(coeffs))
        np.testing.assert_allclose(
            rebuilt, oracle.gamma_operator(rho, k), atol=1e-12
        )


def test_gamma_coefficients_symbolic_shape():
    symbolic = gamma_expansion_coefficients(2)
    assert len(symbolic) == 3
    assert symbolic[2] == [(pytest.approx(1 / 3), ())]
    with pytest.raises(ValueError):
        gamma_expansion_coefficients(MAX_GAMMA_ORDER + 1)


def test_moment_set_validation():
    ms = MomentSet.from_higher_orders([0.5, 0.3], standard_errors=[0.01, 0.02])
    assert ms.values == (1.0, 0.5, 0.3)
    assert ms.standard_errors == (0.0, 0.01, 0.02)
    assert ms.order == 3
    assert ms.p(2) == 0.5
    with pytest.raises(ValueError):
        MomentSet((0.9, 0.5))
    with pytest.raises(ValueError):
        MomentSet((1.0, 0.5), standard_errors=(0.0,))
    with pytest.raises(ValueError):
        ms.p(4)


def test_moment_set_physicality():
    assert MomentSet((1.0, 0.5, 0.3)).is_physical()
    assert not MomentSet((1.0, 1.2)).is_physical()
    assert not MomentSet((1.0, 0.5, 0.6)).is_physical()
    assert MomentSet((1.0, 0.2)).is_physical(d=8)
    assert not MomentSet((1.0, 0.1)).is_physical(d=8)
    assert PTMomentSet((1.0, 1.0, -0.5)).is_physical()
    assert not PTMomentSet((1.0, 1.2)).is_physical()


def test_order_caps():
    with pytest.raises(ValueError):
        moments_from_zeta([0.5] * (MAX_ORDER))
    with pytest.raises(ValueError):
        zeta_from_moments((1.0, 0.5), 3)
    with pytest.raises(ValueError):
        xi_from((1.0,) * 8, (0.0,) * 9, 8)
    with pytest.raises(ValueError):
        observable_powers_from_xi([0.1], (1.0,), 0.0, 4, t=2)
    with pytest.raises(ValueError):
        observable_powers_from_xi([0.1], (1.0,), 0.0, 4, mode="other")
