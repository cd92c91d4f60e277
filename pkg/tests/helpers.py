"""Shared state and matrix factories for the test suite."""

import numpy as np

from collisim.qcore import ObservableSpec, QuantumState


def ginibre_density(rng, dim):
    """Random full-rank density matrix, Ginibre-distributed."""
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_pure(rng, dim):
    vec = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return vec / np.linalg.norm(vec)


def bell_state():
    vec = np.zeros(4, dtype=complex)
    vec[0] = vec[3] = 1.0 / np.sqrt(2.0)
    return QuantumState.from_vector(vec)


def random_hermitian(rng, dim):
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (g + g.conj().T) / 2.0


def dense_observable(rng, n_qubits):
    return ObservableSpec.dense(random_hermitian(rng, 1 << n_qubits))
