"""Random unitary ensembles, circuit application, and RNG stream management.

Two ensembles are supported: a global Haar unitary on the whole register and
brickwork circuits of alternating nearest-neighbor layers of Haar two-qubit
gates.  Reproducibility is organized around a counter-based Philox generator:
each (unitary index, trial index) pair owns an independent substream, so work
units can be evaluated in any order, or in parallel, without changing a
single sampled byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .qcore import QuantumState, SizeCapError

MAX_GLOBAL_HAAR_QUBITS = 12
MAX_DENSE_CIRCUIT_QUBITS = 12

#: gates at or below this dimension get a full U'U = I check on construction;
#: larger ones (global Haar) get a cheaper random-vector round-trip probe
_FULL_UNITARITY_CHECK_DIM = 16
_UNITARITY_ATOL = 1e-10


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary via Ginibre + QR with phase correction.

    The raw QR decomposition is not Haar: the distribution of Q depends on
    sign conventions of R.  Multiplying each column of Q by the phase of the
    corresponding diagonal entry of R removes that dependence.
    """
    if dim < 2:
        raise ValueError("haar_unitary needs dim >= 2")
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r)
    return q * (diag / np.abs(diag))


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus the (unitary, trial) -> substream derivation rule."""

    master_seed: int

    def __post_init__(self):
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must fit in 64 bits")

    def stream(self, unitary_index: int, trial_index: int) -> np.random.Generator:
        """Independent generator for one (unitary, trial) work unit."""
        if not 0 <= unitary_index < 2 ** 32 or not 0 <= trial_index < 2 ** 31:
            raise ValueError("stream indices out of range")
        word = (np.uint64(unitary_index) << np.uint64(32)) | np.uint64(trial_index)
        key = np.array([self.master_seed, word], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def setup_stream(self) -> np.random.Generator:
        """Generator for one-off setup draws (model states, sweeps).

        Uses a counter word no (unitary, trial) pair can reach, so setup
        randomness never collides with work-unit randomness.
        """
        key = np.array([self.master_seed, 2 ** 64 - 1], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class UnitaryEnsembleConfig:
    """Which unitary ensemble to draw from, and at what size."""

    kind: str  # "global_haar" or "brickwork"
    n_qubits: int
    depth: int | None = None

    def __post_init__(self):
        if self.kind not in ("global_haar", "brickwork"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.n_qubits < 1:
            raise ValueError("n_qubits must be positive")
        if self.kind == "global_haar":
            if self.n_qubits > MAX_GLOBAL_HAAR_QUBITS:
                raise SizeCapError(
                    f"global Haar capped at {MAX_GLOBAL_HAAR_QUBITS} qubits"
                )
            if self.depth is not None:
                raise ValueError("depth only applies to brickwork circuits")
        else:
            if self.n_qubits < 2:
                raise ValueError("brickwork needs at least 2 qubits")
            if self.depth is not None and self.depth < 1:
                raise ValueError("brickwork depth must be >= 1")

    @property
    def effective_depth(self) -> int:
        """Configured depth, defaulting to 2 * n_qubits layers."""
        if self.kind == "global_haar":
            return 1
        return self.depth if self.depth is not None else 2 * self.n_qubits


def brickwork_layer_pairs(n_qubits: int, layer_number: int) -> list[tuple[int, int]]:
    """Qubit pairs of one brickwork layer (layer numbers start at 1).

    Odd-numbered layers couple (0,1), (2,3), ...; even-numbered layers couple
    (1,2), (3,4), ....  A boundary qubit without a partner idles.
    """
    start = 0 if layer_number % 2 == 1 else 1
    return [(i, i + 1) for i in range(start, n_qubits - 1, 2)]


def _check_gate_unitary(gate: np.ndarray, rng_free_probe: bool = False):
    dim = gate.shape[0]
    if gate.ndim != 2 or gate.shape[1] != dim:
        raise ValueError("gate must be square")
    if dim <= _FULL_UNITARITY_CHECK_DIM:
        dev = np.max(np.abs(gate.conj().T @ gate - np.eye(dim)))
        if dev > _UNITARITY_ATOL:
            raise ValueError(f"gate deviates from unitarity by {dev}")
    else:
        # full check is cubic in a potentially 4096-dim gate; probe instead
        probe = np.ones(dim) / np.sqrt(dim)
        dev = np.max(np.abs(gate.conj().T @ (gate @ probe) - probe))
        if dev > 1e-9:
            raise ValueError(f"gate deviates from unitarity by {dev} (probe)")


@dataclass(frozen=True)
class CircuitDescription:
    """Layered circuit: each layer is a sequence of (qubit tuple, gate).

    Brickwork circuits hold 4x4 gates on adjacent pairs; a global Haar
    unitary is represented as a single layer with one whole-register gate.
    Gates within one layer act on disjoint qubits.
    """

    n_qubits: int
    layers: tuple[tuple[tuple[tuple[int, ...], np.ndarray], ...], ...]
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        if not self.validate:
            return
        for layer in self.layers:
            used: set[int] = set()
            for qubits, gate in layer:
                if len(set(qubits)) != len(qubits):
                    raise ValueError("gate qubits must be distinct")
                if any(not 0 <= q < self.n_qubits for q in qubits):
                    raise ValueError("gate qubit index out of range")
                if used & set(qubits):
                    raise ValueError("overlapping gates within a layer")
                used |= set(qubits)
                if gate.shape[0] != 2 ** len(qubits):
                    raise ValueError("gate dimension does not match its qubits")
                _check_gate_unitary(gate)

    @property
    def n_gates(self) -> int:
        return sum(len(layer) for layer in self.layers)

    def adjoint(self) -> "CircuitDescription":
        """Circuit implementing the inverse unitary (reversed layers,
        conjugate-transposed gates)."""
        layers = tuple(
            tuple((qubits, gate.conj().T) for qubits, gate in layer)
            for layer in reversed(self.layers)
        )
        return CircuitDescription(self.n_qubits, layers, validate=False)

    def to_matrix(self) -> np.ndarray:
        return circuit_to_matrix(self)


def sample_circuit(config: UnitaryEnsembleConfig, rng: np.random.Generator) -> CircuitDescription:
    """Draw one circuit from the configured ensemble.

    Brickwork gates are sampled layer by layer, left to right, so a fixed
    generator state determines the circuit uniquely.
    """
    if config.kind == "global_haar":
        gate = haar_unitary(2 ** config.n_qubits, rng)
        layer = ((tuple(range(config.n_qubits)), gate),)
        return CircuitDescription(config.n_qubits, (layer,), validate=False)
    layers = []
    for layer_number in range(1, config.effective_depth + 1):
        layer = tuple(
            (pair, haar_unitary(4, rng))
            for pair in brickwork_layer_pairs(config.n_qubits, layer_number)
        )
        layers.append(layer)
    return CircuitDescription(config.n_qubits, tuple(layers), validate=False)


# -- circuit application -------------------------------------------------------


def _apply_gate_to_axes(tensor: np.ndarray, gate: np.ndarray, axes: Sequence[int],
                        conjugate: bool = False) -> np.ndarray:
    """Contract a gate into the given qubit axes of a (2,)*m [+ extra] tensor."""
    m = len(axes)
    g = (gate.conj() if conjugate else gate).reshape((2,) * (2 * m))
    moved = np.tensordot(g, tensor, axes=(list(range(m, 2 * m)), list(axes)))
    return np.moveaxis(moved, list(range(m)), list(axes))


def apply_circuit_to_columns(columns: np.ndarray, circuit: CircuitDescription,
                             n_qubits: int | None = None) -> np.ndarray:
    """Apply the circuit to a (d, r) stack of vectors, returning (d, r).

    This is the workhorse behind pure-state evolution, eigenbasis evolution
    of cached spectral data, and dense circuit materialization.
    """
    n = circuit.n_qubits if n_qubits is None else n_qubits
    cols = np.asarray(columns, dtype=complex)
    single = cols.ndim == 1
    if single:
        cols = cols.reshape(-1, 1)
    if cols.shape[0] != 2 ** n:
        raise ValueError("column dimension does not match circuit size")
    r = cols.shape[1]
    tensor = cols.reshape((2,) * n + (r,))
    for layer in circuit.layers:
        for qubits, gate in layer:
            tensor = _apply_gate_to_axes(tensor, gate, qubits)
    out = tensor.reshape(2 ** n, r)
    return out[:, 0] if single else out


def apply_circuit(state: QuantumState, circuit: CircuitDescription) -> QuantumState:
    """Evolve a state through the circuit.

    Pure states evolve by tensor contraction, O(d) per two-qubit gate.
    Density operators are conjugated gate by gate; any cached spectral
    decomposition is carried along by evolving its eigenvectors, since the
    eigenvalues (and the flat background) are unitarily invariant.
    """
    if state.n_qubits != circuit.n_qubits:
        raise ValueError("circuit size does not match state")
    if state.is_pure:
        return QuantumState.from_vector(apply_circuit_to_columns(state.vector, circuit))
    n = state.n_qubits
    tensor = state.matrix.reshape((2,) * (2 * n))
    for layer in circuit.layers:
        for qubits, gate in layer:
            tensor = _apply_gate_to_axes(tensor, gate, qubits)
            tensor = _apply_gate_to_axes(tensor, gate, [n + q for q in qubits],
                                         conjugate=True)
    evolved = tensor.reshape(state.dim, state.dim)
    evolved = 0.5 * (evolved + evolved.conj().T)  # scrub round-off skew
    spectral = None
    if state._spectral is not None:
        old = state._spectral
        spectral = type(old)(
            old.background,
            old.weights,
            apply_circuit_to_columns(old.vectors, circuit),
        )
    return QuantumState.from_matrix(evolved, spectral=spectral)


def embed_circuit(circuit: CircuitDescription, qubits: Sequence[int],
                  n_qubits: int) -> CircuitDescription:
    """Re-address a circuit so its qubit i becomes ``qubits[i]`` of a larger
    register; used to apply subsystem-local unitaries to the full state."""
    qubits = tuple(qubits)
    if len(qubits) != circuit.n_qubits:
        raise ValueError("qubit map length must match circuit size")
    if any(not 0 <= q < n_qubits for q in qubits):
        raise ValueError("qubit map index out of range")
    layers = tuple(
        tuple((tuple(qubits[q] for q in gate_qubits), gate)
              for gate_qubits, gate in layer)
        for layer in circuit.layers
    )
    return CircuitDescription(n_qubits, layers, validate=False)


def circuit_to_matrix(circuit: CircuitDescription) -> np.ndarray:
    """Dense unitary of the whole circuit (capped at 12 qubits)."""
    if circuit.n_qubits > MAX_DENSE_CIRCUIT_QUBITS:
        raise SizeCapError(
            f"dense circuit matrix capped at {MAX_DENSE_CIRCUIT_QUBITS} qubits"
        )
    eye = np.eye(2 ** circuit.n_qubits, dtype=complex)
    return apply_circuit_to_columns(eye, circuit)
