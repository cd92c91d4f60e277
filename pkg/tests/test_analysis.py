"""Witness hierarchy, error propagation, and the moment-ratio estimates."""

import numpy as np
import pytest

from collisim import oracle
from collisim.analysis import (
    DEFAULT_DENOMINATOR_FLOOR,
    WitnessReport,
    hankel_criteria,
    newton_witnesses,
    p3_ppt_test,
    pce_estimate,
    qvc_fidelity,
    witness_report,
)
from collisim.inversion import MomentSet, PTMomentSet
from collisim.models import HamiltonianSpec, build_hamiltonian, gibbs_state, ground_state
from collisim.qcore import BipartitionSpec, QuantumState, partial_transpose
from helpers import ginibre_density, random_pure

BELL_PT_SPECTRUM = np.array([0.5, 0.5, 0.5, -0.5])


def _moments_of(spectrum, k_max):
    return tuple([1.0] + [float(np.sum(np.asarray(spectrum) ** k)) for k in range(2, k_max + 1)])


def test_newton_matches_spectrum_oracle():
    """D_k from moments alone equals D_k from the eigenvalues directly."""
    rng = np.random.default_rng(3)
    psi = QuantumState.from_vector(random_pure(rng, 4))
    part = BipartitionSpec.contiguous(1, 1)
    spectrum = np.linalg.eigvalsh(partial_transpose(psi, part))
    report = newton_witnesses(_moments_of(spectrum, 5))
    for k in range(1, 6):
        assert report.d_values[k] == pytest.approx(
            oracle.d_k_from_eigenvalues(spectrum, k), abs=1e-12
        )


def test_newton_low_order_closed_forms():
    p = (1.0, 0.7, 0.4)
    report = newton_witnesses(p)
    assert report.d_values[1] == pytest.approx(-1.0, abs=1e-14)
    assert report.d_values[2] == pytest.approx(p[1] - 1.0, abs=1e-14)
    assert report.d_values[3] == pytest.approx(
        -(1.0 - 3.0 * p[1] + 2.0 * p[2]) / 2.0, abs=1e-14
    )


def test_bell_witness_values():
    p = _moments_of(BELL_PT_SPECTRUM, 3)
    assert p == pytest.approx((1.0, 1.0, 0.25), abs=1e-15)
    report = witness_report(p)
    assert report.d_values[3] == pytest.approx(0.75, abs=1e-12)
    assert report.d_detected[3]
    assert report.hankel_dets[1] == pytest.approx(-0.75, abs=1e-12)
    assert report.hankel_detected[1]
    assert report.p3ppt_value == pytest.approx(0.75, abs=1e-12)
    assert report.p3ppt_detected
    assert report.detected_any


def test_separable_mixtures_trigger_nothing():
    rng = np.random.default_rng(5)
    part = BipartitionSpec.contiguous(1, 1)
    for _ in range(10):
        weights = rng.dirichlet(np.ones(3))
        rho = sum(
            w * np.kron(ginibre_density(rng, 2), ginibre_density(rng, 2))
            for w in weights
        )
        spectrum = np.linalg.eigvalsh(
            partial_transpose(QuantumState.from_matrix(rho), part)
        )
        report = witness_report(_moments_of(spectrum, 5))
        # values sit on the separable side within round-off; the strict-sign
        # detection flags are a coin flip at exact zero, so only the values
        # are asserted here
        assert all(v <= 1e-9 for v in report.d_values.values())
        assert all(v >= -1e-9 for v in report.hankel_min_eigenvalues.values())
        assert report.p3ppt_value <= 1e-9
        for k, value in report.d_values.items():
            if abs(value) > 1e-12:
                assert not report.d_detected[k]


def test_maximally_mixed_hankel_is_borderline():
    p = tuple(4.0 ** (1 - k) for k in range(1, 6))
    report = witness_report(p)
    assert report.hankel_dets[2] == pytest.approx(0.0, abs=1e-12)
    assert all(v >= -1e-12 for v in report.hankel_min_eigenvalues.values())
    # the four-fold degenerate spectrum has e_5 = 0, so D_5 is round-off
    assert all(report.d_values[k] < 0 for k in (1, 2, 3, 4))
    assert abs(report.d_values[5]) < 1e-12
    assert not any(report.d_detected[k] for k in (1, 2, 3, 4))
    assert not report.p3ppt_detected


def _finite_difference(fn, values, index, h=1e-7):
    bumped_up = list(values)
    bumped_up[index] += h
    bumped_down = list(values)
    bumped_down[index] -= h
    return (fn(tuple(bumped_up)) - fn(tuple(bumped_down))) / (2 * h)


def _propagated(fn, values, errors):
    total = 0.0
    for i in range(1, len(values)):
        if errors[i] == 0.0:
            continue
        total += (_finite_difference(fn, values, i) * errors[i]) ** 2
    return np.sqrt(total)


def test_newton_error_propagation_matches_finite_differences():
    values = (1.0, 0.8, 0.5, 0.3, 0.22)
    errors = (0.0, 0.01, 0.02, 0.015, 0.01)
    report = newton_witnesses(MomentSet(values, estimated=True, standard_errors=errors))
    for k in (2, 3, 4, 5):
        expected = _propagated(
            lambda v, k=k: newton_witnesses(v).d_values[k], values, errors
        )
        assert report.d_standard_errors[k] == pytest.approx(expected, rel=1e-4)


def test_hankel_error_propagation_matches_finite_differences():
    values = (1.0, 0.7, 0.52, 0.4, 0.33)
    errors = (0.0, 0.012, 0.02, 0.01, 0.016)
    report = hankel_criteria(PTMomentSet(values, estimated=True, standard_errors=errors))
    for k in (1, 2):
        expected_det = _propagated(
            lambda v, k=k: hankel_criteria(v).hankel_dets[k], values, errors
        )
        expected_eig = _propagated(
            lambda v, k=k: hankel_criteria(v).hankel_min_eigenvalues[k], values, errors
        )
        assert report.hankel_det_standard_errors[k] == pytest.approx(expected_det, rel=1e-4)
        assert report.hankel_min_eig_standard_errors[k] == pytest.approx(
            expected_eig, rel=1e-3
        )


def test_p3ppt_error_propagation():
    values = (1.0, 0.9, 0.6)
    errors = (0.0, 0.05, 0.04)
    report = p3_ppt_test(PTMomentSet(values, estimated=True, standard_errors=errors))
    expected = np.sqrt((2 * 0.9 * 0.05) ** 2 + 0.04 ** 2)
    assert report.p3ppt_standard_error == pytest.approx(expected, abs=1e-12)


def test_z_gate_demands_margin():
    noisy = PTMomentSet(
        (1.0, 1.0, 0.25), estimated=True, standard_errors=(0.0, 0.5, 0.5)
    )
    stderr = np.sqrt((2 * 1.0 * 0.5) ** 2 + 0.5 ** 2)
    assert p3_ppt_test(noisy, z_gate=0.5).p3ppt_detected == (0.75 > 0.5 * stderr)
    assert not p3_ppt_test(noisy, z_gate=1.0).p3ppt_detected
    assert p3_ppt_test(noisy).p3ppt_detected


def test_z_gate_requires_errors():
    with pytest.raises(ValueError):
        newton_witnesses((1.0, 1.0, 0.25), z_gate=2.0)


def test_witness_input_validation():
    with pytest.raises(ValueError):
        newton_witnesses((0.5, 0.2))
    with pytest.raises(ValueError):
        newton_witnesses((1.0, 0.5), k_max=0)
    with pytest.raises(ValueError):
        newton_witnesses((1.0, 0.5), k_max=3)
    with pytest.raises(ValueError):
        hankel_criteria((1.0, 0.5), m=4)
    with pytest.raises(ValueError):
        p3_ppt_test((1.0, 0.5))


def test_merged_report_unions_families():
    newton = newton_witnesses((1.0, 1.0, 0.25))
    hankel = hankel_criteria((1.0, 1.0, 0.25))
    merged = newton.merged_with(hankel)
    assert set(merged.d_values) == {1, 2, 3}
    assert set(merged.hankel_dets) == {0, 1}
    assert merged.p3ppt_value is None
    both = merged.merged_with(p3_ppt_test((1.0, 1.0, 0.25)))
    assert both.p3ppt_value == pytest.approx(0.75)
    assert both.detected_any


def test_pce_estimate_ratio_and_floors():
    assert pce_estimate(0.3, 0.5) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        pce_estimate(0.3, DEFAULT_DENOMINATOR_FLOOR / 10)
    with pytest.raises(ValueError):
        pce_estimate(0.3, 0.05, p_t_stderr=0.01)
    assert pce_estimate(0.3, 0.05, floor=1e-3) == pytest.approx(6.0)


def _tfim_fixture(n=3, beta=1.0):
    ham = build_hamiltonian(HamiltonianSpec("tfim", n, coupling=1.0, field=1.0))
    return gibbs_state(ham, beta), ground_state(ham)


def test_qvc_exact_first_power_is_plain_overlap():
    rho, gs = _tfim_fixture(beta=0.8)
    direct = (gs.vector.conj() @ rho.matrix @ gs.vector).real
    assert qvc_fidelity(rho, gs, 1) == pytest.approx(direct, abs=1e-12)


def test_qvc_exact_increases_with_beta_and_power():
    _, gs = _tfim_fixture(beta=1.0)
    fidelities = {}
    for beta in (0.5, 1.0, 2.0):
        rho, _ = _tfim_fixture(beta=beta)
        fidelities[beta] = qvc_fidelity(rho, gs, 2)
    assert fidelities[0.5] < fidelities[1.0] < fidelities[2.0]

    rho, _ = _tfim_fixture(beta=1.0)
    powered = [qvc_fidelity(rho, gs, t) for t in (1, 2, 3, 4)]
    assert all(a < b for a, b in zip(powered, powered[1:]))
    cold, _ = _tfim_fixture(beta=40.0)
    assert qvc_fidelity(cold, gs, 3) == pytest.approx(1.0, abs=1e-9)


def test_qvc_estimated_mode_runs_the_pipeline():
    rho, gs = _tfim_fixture(n=2, beta=1.0)
    exact = qvc_fidelity(rho, gs, 2)
    estimated = qvc_fidelity(
        rho, gs, 2, mode="estimated", n_shots=4000, n_unitaries=4, seed=77
    )
    assert abs(estimated - exact) < 0.25
    repeat = qvc_fidelity(
        rho, gs, 2, mode="estimated", n_shots=4000, n_unitaries=4, seed=77
    )
    assert repeat == estimated


def test_qvc_validation():
    rho, gs = _tfim_fixture(n=2)
    with pytest.raises(ValueError):
        qvc_fidelity(rho, gs, 0)
    with pytest.raises(ValueError):
        qvc_fidelity(rho, rho, 2)
    with pytest.raises(ValueError):
        qvc_fidelity(rho, gs, 2, mode="other")
    with pytest.raises(ValueError):
        qvc_fidelity(rho, gs, 2, mode="estimated", n_shots=100)
