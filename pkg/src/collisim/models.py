"""Benchmark Hamiltonians and reference states.

Dense, exact constructions of the spin chains and fixture states used by the
experiment runner: transverse-field Ising and Heisenberg chains with open
boundaries, their ground and Gibbs states, globally depolarized pure states,
and a few named states for the entanglement-witness paths.

Everything here is dense linear algebra on at most ``MAX_HAMILTONIAN_QUBITS``
qubits; there is deliberately no sparse solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qcore import (
    MAX_DENSITY_QUBITS,
    MAX_PURE_QUBITS,
    QuantumState,
    SizeCapError,
    SpectralDecomposition,
    _pauli_phases,
)
from .randomness import haar_unitary

MAX_HAMILTONIAN_QUBITS = 14

_KINDS = ("tfim", "heisenberg")


@dataclass(frozen=True)
class HamiltonianSpec:
    """Open-boundary spin chain description.

    ``kind`` selects the model: ``"tfim"`` is
    ``-coupling * sum_i X_i X_{i+1} - field * sum_i Z_i`` and
    ``"heisenberg"`` is ``-coupling * sum_i (XX + YY + ZZ)_{i,i+1}``;
    ``field`` is ignored for the Heisenberg chain.
    """

    kind: str
    n_qubits: int
    coupling: float = 1.0
    field: float = 1.0
    boundary: str = "open"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown Hamiltonian kind {self.kind!r}; expected one of {_KINDS}")
        if self.boundary != "open":
            raise ValueError("only open boundary conditions are supported")
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if self.n_qubits > MAX_HAMILTONIAN_QUBITS:
            raise SizeCapError(
                f"{self.n_qubits} qubits exceeds the dense Hamiltonian cap "
                f"{MAX_HAMILTONIAN_QUBITS}"
            )


def _site_string(n_qubits: int, assignment: dict[int, str]) -> str:
    return "".join(assignment.get(q, "I") for q in range(n_qubits))


def _add_pauli_term(ham: np.ndarray, coeff: float, string: str) -> None:
    """Accumulate ``coeff * P`` into a real dense matrix.

    Restricted to strings with an even number of Y factors, which is every
    term of the chains built here, so the accumulator stays real symmetric.
    """
    phases, flip = _pauli_phases(string)
    if float(np.max(np.abs(phases.imag))) > 0.0:
        raise ValueError(f"Pauli string {string!r} is not real")
    idx = np.arange(phases.size)
    ham[idx ^ flip, idx] += coeff * phases.real


def build_hamiltonian(spec: HamiltonianSpec) -> np.ndarray:
    """Dense real symmetric matrix of the chain described by ``spec``."""
    n = spec.n_qubits
    dim = 1 << n
    ham = np.zeros((dim, dim))
    if spec.kind == "tfim":
        for q in range(n):
            _add_pauli_term(ham, -spec.field, _site_string(n, {q: "Z"}))
        for q in range(n - 1):
            _add_pauli_term(ham, -spec.coupling, _site_string(n, {q: "X", q + 1: "X"}))
    else:
        for q in range(n - 1):
            for axis in "XYZ":
                _add_pauli_term(ham, -spec.coupling, _site_string(n, {q: axis, q + 1: axis}))
    return ham


def ground_state(hamiltonian: np.ndarray) -> QuantumState:
    """Lowest-eigenvalue eigenvector as a pure state.

    In a degenerate ground space the solver's first basis vector is used, so
    the result is deterministic for identical input. The global phase is
    fixed by making the largest-magnitude amplitude real and positive.
    """
    eigenvalues, eigenvectors = np.linalg.eigh(hamiltonian)
    vec = np.asarray(eigenvectors[:, 0], dtype=complex)
    pivot = int(np.argmax(np.abs(vec)))
    vec = vec * (abs(vec[pivot]) / vec[pivot])
    vec = vec / np.linalg.norm(vec)
    return QuantumState.from_vector(vec)


def gibbs_state(hamiltonian: np.ndarray, beta: float) -> QuantumState:
    """Thermal state exp(-beta H) / Tr exp(-beta H).

    Computed through the eigendecomposition, shifting by the smallest
    eigenvalue before exponentiating so large beta cannot overflow. The
    eigenbasis is attached to the returned state, which keeps later spectral
    queries and measurement sampling from re-diagonalizing.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    eigenvalues, eigenvectors = np.linalg.eigh(hamiltonian)
    weights = np.exp(-beta * (eigenvalues - eigenvalues[0]))
    weights /= weights.sum()
    basis = eigenvectors.astype(complex)
    rho = (basis * weights) @ basis.conj().T
    rho = (rho + rho.conj().T) / 2.0
    spectral = SpectralDecomposition(0.0, weights, basis)
    return QuantumState.from_matrix(rho, spectral=spectral)


def depolarize(psi: QuantumState, p: float) -> QuantumState:
    """Global depolarization of a pure state: (1-p)|psi><psi| + p/d * I."""
    if not psi.is_pure:
        raise ValueError("depolarize expects a pure state")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"depolarizing strength {p} outside [0, 1]")
    dim = psi.dim
    rho = np.outer(psi.vector, psi.vector.conj()) * (1.0 - p)
    rho.flat[:: dim + 1] += p / dim
    spectral = SpectralDecomposition(
        p / dim,
        np.array([1.0 - p + p / dim]),
        psi.vector.reshape(-1, 1),
    )
    return QuantumState.from_matrix(rho, spectral=spectral)


def named_states(kind: str, n_qubits: int, rng: np.random.Generator | None = None) -> QuantumState:
    """Fixture states: ``"bell"``, ``"ghz"``, or ``"product_random"``.

    ``product_random`` draws each qubit independently from the single-qubit
    Haar measure and requires ``rng``.
    """
    key = kind.lower()
    if n_qubits > MAX_PURE_QUBITS:
        raise SizeCapError(
            f"{n_qubits} qubits exceeds the {MAX_PURE_QUBITS}-qubit pure-state cap"
        )
    if key == "bell":
        if n_qubits != 2:
            raise ValueError("the Bell state lives on exactly 2 qubits")
        vec = np.zeros(4, dtype=complex)
        vec[0] = vec[3] = 1.0 / np.sqrt(2.0)
        return QuantumState.from_vector(vec)
    if key == "ghz":
        if n_qubits < 2:
            raise ValueError("a GHZ state needs at least 2 qubits")
        vec = np.zeros(1 << n_qubits, dtype=complex)
        vec[0] = vec[-1] = 1.0 / np.sqrt(2.0)
        return QuantumState.from_vector(vec)
    if key == "product_random":
        if rng is None:
            raise ValueError("product_random requires an rng")
        vec = np.ones(1, dtype=complex)
        for _ in range(n_qubits):
            local = rng.normal(size=2) + 1j * rng.normal(size=2)
            local /= np.linalg.norm(local)
            vec = np.kron(vec, local)
        return QuantumState.from_vector(vec)
    raise ValueError(f"unknown named state {kind!r}")


def gapped_random_state(
    n_qubits: int,
    gap: float,
    top_weight: float,
    rng: np.random.Generator,
) -> QuantumState:
    """Mixed state with a prescribed gap below its largest eigenvalue.

    The spectrum is ``top_weight``, then ``top_weight - gap``, then the
    leftover probability mass spread uniformly; the eigenbasis is Haar
    random. The dominant eigenvector is the first column of the attached
    spectral decomposition, which is what ratio-based principal component
    estimates converge to.
    """
    if n_qubits > MAX_DENSITY_QUBITS:
        raise SizeCapError(
            f"{n_qubits} qubits exceeds the {MAX_DENSITY_QUBITS}-qubit density cap"
        )
    dim = 1 << n_qubits
    second = top_weight - gap
    if second < 0.0:
        raise ValueError("gap exceeds the top eigenvalue")
    tail_mass = 1.0 - top_weight - second
    if tail_mass < -1e-12 or dim == 1:
        raise ValueError("top two eigenvalues already exceed unit trace")
    tail = max(tail_mass, 0.0) / (dim - 2) if dim > 2 else 0.0
    if tail > second + 1e-12:
        raise ValueError("uniform tail would overtake the second eigenvalue")
    weights = np.concatenate(([top_weight, second], np.full(dim - 2, tail)))
    basis = haar_unitary(dim, rng)
    rho = (basis * weights) @ basis.conj().T
    rho = (rho + rho.conj().T) / 2.0
    spectral = SpectralDecomposition(0.0, weights, basis)
    return QuantumState.from_matrix(rho, spectral=spectral)
