"""Born probabilities, outcome sampling, and the paired-measurement table."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collisim.qcore import (
    BipartitionSpec,
    ObservableSpec,
    QuantumState,
    exact_observable_powers,
    exact_spectral_moments,
)
from collisim.randomness import UnitaryEnsembleConfig, sample_circuit
from collisim.sampler import (
    born_probabilities,
    extend_with_ancillas,
    ptme_joint_probabilities,
    quasi_probabilities,
    sample_outcomes,
)
from helpers import bell_state, ginibre_density, random_pure


def _circuit(n_qubits, seed, depth=None):
    config = UnitaryEnsembleConfig("brickwork", n_qubits, depth=depth)
    return sample_circuit(config, np.random.default_rng(seed))


def test_born_probabilities_pure_state():
    rng = np.random.default_rng(2)
    state = QuantumState.from_vector(random_pure(rng, 8))
    circuit = _circuit(3, 11)
    table = born_probabilities(state, circuit)
    expected = np.abs(circuit.to_matrix() @ state.vector) ** 2
    np.testing.assert_allclose(table.probs, expected, atol=1e-10)
    assert table.probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_born_probabilities_spectral_vs_dense():
    """The low-rank path and the dense-density path give the same table."""
    rng = np.random.default_rng(3)
    rho = ginibre_density(rng, 16)
    state = QuantumState.from_matrix(rho)
    circuit = _circuit(4, 13)
    table = born_probabilities(state, circuit)
    u = circuit.to_matrix()
    expected = np.diag(u @ rho @ u.conj().T).real
    np.testing.assert_allclose(table.probs, expected, atol=1e-10)


def test_sample_outcomes_deterministic():
    state = bell_state()
    circuit = _circuit(2, 5)
    table = born_probabilities(state, circuit)
    a = sample_outcomes(table, 100, np.random.default_rng(7))
    b = sample_outcomes(table, 100, np.random.default_rng(7))
    np.testing.assert_array_equal(a.b_values, b.b_values)
    assert a.b_values.min() >= 0
    assert a.b_values.max() < 4
    assert a.r_signs is None


def test_sample_outcomes_frequencies_track_probabilities():
    probs = np.array([0.7, 0.2, 0.1, 0.0])
    from collisim.sampler import ProbabilityTable

    table = ProbabilityTable(probs)
    batch = sample_outcomes(table, 200000, np.random.default_rng(12))
    freq = np.bincount(batch.b_values, minlength=4) / 200000
    np.testing.assert_allclose(freq, probs, atol=5e-3)
    assert np.all(batch.b_values != 3)


def test_quasi_probabilities_match_rotated_diagonal():
    rng = np.random.default_rng(21)
    circuit = _circuit(3, 23)
    obs = ObservableSpec.pauli_sum([(1.0, "XZI"), (0.4, "IYZ")], 3)
    b_values = np.array([0, 3, 5, 7])
    got = quasi_probabilities(obs, circuit, b_values)
    u = circuit.to_matrix()
    rotated = u @ obs.to_matrix() @ u.conj().T
    expected = np.diag(rotated).real[b_values]
    np.testing.assert_allclose(got, expected, atol=1e-10)


def test_quasi_probabilities_traceless_shift():
    circuit = _circuit(2, 31)
    obs = ObservableSpec.pauli_sum([(1.0, "II"), (0.5, "ZZ")], 2)
    b_values = np.arange(4)
    plain = quasi_probabilities(obs, circuit, b_values)
    shifted = quasi_probabilities(obs, circuit, b_values, traceless=True)
    np.testing.assert_allclose(shifted, plain - obs.trace / 4.0, atol=1e-12)


def test_ptme_joint_routes_agree():
    """Swap-diagonalization and Bell-parity constructions give one table."""
    rng = np.random.default_rng(41)
    state = QuantumState.from_matrix(ginibre_density(rng, 16))
    part = BipartitionSpec.contiguous(2, 2)
    circuit = _circuit(2, 43)
    swap = ptme_joint_probabilities(state, circuit, part, method="swap")
    bellp = ptme_joint_probabilities(state, circuit, part, method="bell")
    np.testing.assert_allclose(swap.probs, bellp.probs, atol=1e-10)
    assert swap.probs.sum() == pytest.approx(1.0, abs=1e-9)
    assert swap.outcome_space == "ptme_joint"


def test_ptme_joint_sampling_layout():
    """Joint outcomes split into a + block then a - block of d_a1 bins each."""
    rng = np.random.default_rng(47)
    state = QuantumState.from_matrix(ginibre_density(rng, 16))
    part = BipartitionSpec.contiguous(2, 2)
    circuit = _circuit(2, 53)
    table = ptme_joint_probabilities(state, circuit, part)
    assert table.d_a1 == part.dim_a1
    batch = sample_outcomes(table, 500, np.random.default_rng(1))
    assert batch.r_signs is not None
    assert set(np.unique(batch.r_signs)) <= {-1, 1}
    assert batch.b_values.max() < part.dim_a1


def test_extend_with_ancillas_preserves_moments():
    rng = np.random.default_rng(61)
    state = QuantumState.from_matrix(ginibre_density(rng, 8))
    extended, _ = extend_with_ancillas(state, None, 2)
    assert extended.n_qubits == 5
    np.testing.assert_allclose(
        exact_spectral_moments(extended, 4),
        exact_spectral_moments(state, 4),
        atol=1e-12,
    )


def test_extend_with_ancillas_observable_matrix():
    """The extended observable is the original on a zero-projected register."""
    obs = ObservableSpec.pauli_sum([(0.8, "XZ"), (0.1, "II")], 2)
    state = QuantumState.computational_zero(2)
    _, extended = extend_with_ancillas(state, obs, 1)
    zero = np.array([[1.0, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(
        extended.to_matrix(), np.kron(obs.to_matrix(), zero), atol=1e-12
    )


def test_extend_with_ancillas_preserves_observable_powers():
    rng = np.random.default_rng(67)
    state = QuantumState.from_matrix(ginibre_density(rng, 8))
    obs = ObservableSpec.pauli_sum([(1.0, "ZZZ"), (-0.5, "XIX")], 3)
    ext_state, ext_obs = extend_with_ancillas(state, obs, 2)
    np.testing.assert_allclose(
        exact_observable_powers(ext_state, ext_obs, 3),
        exact_observable_powers(state, obs, 3),
        atol=1e-12,
    )


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2 ** 31))
def test_born_probabilities_always_normalized(seed):
    rng = np.random.default_rng(seed)
    state = QuantumState.from_matrix(ginibre_density(rng, 8))
    circuit = _circuit(3, seed)
    table = born_probabilities(state, circuit)
    assert np.all(table.probs >= 0)
    assert table.probs.sum() == pytest.approx(1.0, abs=1e-9)
