"""Measurement-layer simulation: exact probability tables and sampling.

The protocols measure a randomly rotated state in the computational basis
(optionally with a Bell-parity POVM on matched qubit pairs), so everything
here reduces to building an exact outcome distribution and drawing i.i.d.
samples from it.  Tables are computed in the state's eigenbasis: rotating r
eigenvectors costs O(r * gates * d), which for the low-rank states used in
the experiments is far below dense conjugation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qcore import (
    BipartitionSpec,
    ObservableSpec,
    QuantumState,
    SpectralDecomposition,
    diag_quadratic_forms,
)
from .randomness import CircuitDescription, apply_circuit_to_columns, embed_circuit

#: probabilities in [NEGATIVE_CLAMP, 0) are treated as conjugation round-off
NEGATIVE_CLAMP = -1e-10
#: tolerated deviation of a probability table's sum from 1
SUM_RESIDUE = 1e-9

#: Bell-basis change on one (A2_i, B_i) qubit pair; rows are, in order,
#: (|00>+|11>)/sqrt2, (|00>-|11>)/sqrt2, (|01>+|10>)/sqrt2, (|01>-|10>)/sqrt2,
#: so the singlet sits at index 3 = bits (1,1).
_BELL_ROTATION = np.array(
    [
        [1, 0, 0, 1],
        [1, 0, 0, -1],
        [0, 1, 1, 0],
        [0, 1, -1, 0],
    ],
    dtype=complex,
) / np.sqrt(2)


@dataclass(frozen=True)
class ProbabilityTable:
    """Exact outcome distribution, either computational or PTME joint.

    For the joint space the index layout is r = +1 outcomes first:
    index = b for r = +1 and index = d_A1 + b for r = -1.
    """

    probs: np.ndarray
    outcome_space: str = "computational"  # or "ptme_joint"
    d_a1: int | None = None

    @property
    def n_outcomes(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class OutcomeBatch:
    """One unitary's worth of measurement records."""

    b_values: np.ndarray
    r_signs: np.ndarray | None = None
    unitary_index: int = 0

    @property
    def n_shots(self) -> int:
        return self.b_values.size


def _clean_probabilities(raw: np.ndarray) -> np.ndarray:
    probs = np.asarray(raw, dtype=float)
    worst = float(np.min(probs, initial=0.0))
    if worst < NEGATIVE_CLAMP:
        raise ValueError(f"probability {worst} below round-off clamp {NEGATIVE_CLAMP}")
    if worst < 0:
        probs = np.where(probs < 0, 0.0, probs)
    total = float(probs.sum())
    if abs(total - 1.0) > SUM_RESIDUE:
        raise ValueError(f"probability table sums to {total}, residue above {SUM_RESIDUE}")
    return probs / total


def _diagonal_of_rotated(state: QuantumState, circuit: CircuitDescription) -> np.ndarray:
    """diag(U rho U') from the spectral form: the flat background is
    unitarily invariant, so only the listed eigenvectors are rotated."""
    spec = state.spectral()
    cols = apply_circuit_to_columns(spec.vectors, circuit)
    deviation = (np.abs(cols) ** 2) @ (spec.weights - spec.background)
    return spec.background + deviation


def born_probabilities(state: QuantumState, circuit: CircuitDescription) -> ProbabilityTable:
    """Computational-basis outcome distribution of the rotated state."""
    if state.n_qubits != circuit.n_qubits:
        raise ValueError("circuit size does not match state")
    if state.is_pure:
        amps = apply_circuit_to_columns(state.vector, circuit)
        raw = np.abs(amps) ** 2
    else:
        raw = _diagonal_of_rotated(state, circuit)
    return ProbabilityTable(_clean_probabilities(raw))


def sample_outcomes(table: ProbabilityTable, n_samples: int,
                    rng: np.random.Generator, unitary_index: int = 0) -> OutcomeBatch:
    """Draw i.i.d. outcomes by inverse-CDF lookup.

    For a PTME joint table the raw indices are decoded into (b, r) pairs.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    cdf = np.cumsum(table.probs)
    cdf[-1] = 1.0
    draws = np.searchsorted(cdf, rng.random(n_samples), side="right")
    draws = np.asarray(draws, dtype=np.int64)
    if table.outcome_space == "computational":
        return OutcomeBatch(draws, None, unitary_index)
    d_a1 = table.d_a1
    b_values = draws % d_a1
    r_signs = np.where(draws < d_a1, 1, -1).astype(np.int64)
    return OutcomeBatch(b_values, r_signs, unitary_index)


def quasi_probabilities(obs: ObservableSpec, circuit: CircuitDescription,
                        b_values, traceless: bool = False) -> np.ndarray:
    """<b|UOU'|b> for each outcome in ``b_values``.

    Each distinct outcome costs one adjoint-circuit application of a basis
    vector plus one quadratic form; repeats are served from the distinct set.
    """
    values = np.atleast_1d(np.asarray(b_values, dtype=np.int64))
    distinct, inverse = np.unique(values, return_inverse=True)
    d = obs.dim
    if np.any(distinct < 0) or np.any(distinct >= d):
        raise ValueError("outcome index out of range for observable dimension")
    basis = np.zeros((d, distinct.size), dtype=complex)
    basis[distinct, np.arange(distinct.size)] = 1.0
    cols = apply_circuit_to_columns(basis, circuit.adjoint())
    vals = diag_quadratic_forms(obs, cols)
    if traceless:
        vals = vals - obs.trace / d
    return vals[inverse]


def quasi_probability(obs: ObservableSpec, circuit: CircuitDescription, b: int,
                      traceless: bool = False) -> float:
    """Single-outcome convenience wrapper around :func:`quasi_probabilities`."""
    return float(quasi_probabilities(obs, circuit, [int(b)], traceless)[0])


def rotated_basis_columns(circuit: CircuitDescription, b_values) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """U' e_b for the distinct outcomes in ``b_values``.

    Returns (distinct outcomes, inverse index map, column stack); used by the
    operator-valued and two-copy estimators, which need the vectors rather
    than a scalar quadratic form.
    """
    values = np.atleast_1d(np.asarray(b_values, dtype=np.int64))
    distinct, inverse = np.unique(values, return_inverse=True)
    d = 2 ** circuit.n_qubits
    basis = np.zeros((d, distinct.size), dtype=complex)
    basis[distinct, np.arange(distinct.size)] = 1.0
    cols = apply_circuit_to_columns(basis, circuit.adjoint())
    return distinct, inverse, cols


# -- PTME joint distribution ----------------------------------------------------


def _rotated_pair_tensor(state: QuantumState, circuit_on_a: CircuitDescription,
                         part: BipartitionSpec) -> tuple[np.ndarray, SpectralDecomposition]:
    """Listed eigenvectors rotated by the A-local circuit, reshaped to
    (d_A1, d_A2, d_B, rank) with the partition's qubit ordering."""
    n = part.n_qubits
    if state.n_qubits != n:
        raise ValueError("partition does not match state size")
    if circuit_on_a.n_qubits != len(part.qubits_a):
        raise ValueError("circuit must act on the A subsystem")
    spec = state.spectral()
    embedded = embed_circuit(circuit_on_a, part.qubits_a, n)
    cols = apply_circuit_to_columns(spec.vectors, embedded)
    order = list(part.qubits_a1) + list(part.qubits_a2) + list(part.qubits_b)
    tensor = cols.reshape((2,) * n + (-1,)).transpose(order + [n])
    return tensor.reshape(part.dim_a1, part.dim_a2, part.dim_b, -1), spec


def _ptme_swap_table(state, circuit_on_a, part) -> np.ndarray:
    """Pr(r, b) through the POVM (|b><b| x (I +/- S)/2) with S the pair swap."""
    tensor, spec = _rotated_pair_tensor(state, circuit_on_a, part)
    lam = spec.weights - spec.background
    marginal = np.einsum("axyr,axyr->ar", tensor.conj(), tensor).real @ lam
    swapped = np.einsum("axyr,ayxr->ar", tensor.conj(), tensor).real @ lam
    d_b = part.dim_b
    # background contributions: Tr(|b><b| x I) = d_B^2 and Tr(|b><b| x S) = d_B
    marginal = marginal + spec.background * d_b * d_b
    swapped = swapped + spec.background * d_b
    return np.concatenate([(marginal + swapped) / 2, (marginal - swapped) / 2])


def _ptme_bell_table(state, circuit_on_a, part) -> np.ndarray:
    """Pr(r, b) by measuring every (A2_i, B_i) pair in the Bell basis and
    taking r as the parity of the singlet count."""
    n = part.n_qubits
    spec = state.spectral()
    embedded = embed_circuit(circuit_on_a, part.qubits_a, n)
    cols = apply_circuit_to_columns(spec.vectors, embedded)
    bell_layer = tuple(
        ((a2, b), _BELL_ROTATION) for a2, b in zip(part.qubits_a2, part.qubits_b)
    )
    bell_circuit = CircuitDescription(n, (bell_layer,), validate=False)
    cols = apply_circuit_to_columns(cols, bell_circuit)
    full = (np.abs(cols) ** 2) @ (spec.weights - spec.background) + spec.background

    outcomes = np.arange(2 ** n)
    singlets = np.zeros(2 ** n, dtype=np.int64)
    for a2, b in zip(part.qubits_a2, part.qubits_b):
        bit_a2 = (outcomes >> (n - 1 - a2)) & 1
        bit_b = (outcomes >> (n - 1 - b)) & 1
        singlets += bit_a2 & bit_b
    b_index = np.zeros(2 ** n, dtype=np.int64)
    for q in part.qubits_a1:
        b_index = (b_index << 1) | ((outcomes >> (n - 1 - q)) & 1)

    d_a1 = part.dim_a1
    joint = b_index + d_a1 * (singlets & 1)
    return np.bincount(joint, weights=full, minlength=2 * d_a1)


def ptme_joint_probabilities(state: QuantumState, circuit_on_a: CircuitDescription,
                             part: BipartitionSpec, method: str = "swap") -> ProbabilityTable:
    """Joint distribution Pr(r = +/-1, b) of the pair-parity measurement.

    Two constructions are available and agree to round-off: "swap" evaluates
    the POVM elements (I +/- S)/2 directly in the rotated eigenbasis, while
    "bell" measures each matched pair in the Bell basis and classifies
    outcomes by singlet parity.
    """
    if method == "swap":
        raw = _ptme_swap_table(state, circuit_on_a, part)
    elif method == "bell":
        raw = _ptme_bell_table(state, circuit_on_a, part)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ProbabilityTable(_clean_probabilities(raw), "ptme_joint", part.dim_a1)


# -- ancilla extension ----------------------------------------------------------


def extend_with_ancillas(state: QuantumState, obs: ObservableSpec | None,
                         n_a: int) -> tuple[QuantumState, ObservableSpec | None]:
    """Append n_a ancilla qubits in |0...0> to the state, and project the
    observable onto the ancilla-zero block so that Tr(O~ rho~^t) = Tr(O rho^t).

    The observable keeps its structured representation where possible:
    Pauli sums pick up (I+Z)/2 factors expanded into 2^{n_a} Z-patterns,
    rank-one projectors extend their vector, dense matrices are kronned.
    """
    if n_a < 0:
        raise ValueError("ancilla count must be nonnegative")
    if n_a == 0:
        return state, obs
    dim_a = 2 ** n_a
    zero = np.zeros(dim_a)
    zero[0] = 1.0

    if state.is_pure:
        new_state = QuantumState.from_vector(np.kron(state.vector, zero.astype(complex)))
    else:
        new_matrix = np.kron(state.matrix, np.outer(zero, zero).astype(complex))
        spectral = None
        old = state._spectral
        if old is not None and old.background == 0.0:
            spectral = SpectralDecomposition(
                0.0, old.weights, np.kron(old.vectors, zero.reshape(-1, 1))
            )
        new_state = QuantumState.from_matrix(new_matrix, spectral=spectral)

    if obs is None:
        return new_state, None
    n_new = obs.n_qubits + n_a
    if obs.kind == "rank_one":
        new_obs = ObservableSpec.rank_one_projector(np.kron(obs.state_vector, zero))
    elif obs.kind in ("pauli_sum", "identity"):
        if obs.kind == "identity":
            terms = [(1.0, "I" * obs.n_qubits)]
        else:
            terms = list(obs.terms)
        scale = 1.0 / dim_a
        extended = []
        for coeff, string in terms:
            for pattern in range(dim_a):
                suffix = "".join(
                    "Z" if (pattern >> (n_a - 1 - i)) & 1 else "I" for i in range(n_a)
                )
                extended.append((coeff * scale, string + suffix))
        new_obs = ObservableSpec.pauli_sum(extended, n_new)
    else:
        projector = np.outer(zero, zero).astype(complex)
        new_obs = ObservableSpec.dense(np.kron(obs.matrix, projector))
    return new_state, new_obs
