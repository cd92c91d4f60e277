"""Dense quantum-state primitives: states, observables, bipartitions.

Everything downstream (sampling, estimation, inversion, witnesses) is built on
the small set of exact linear-algebra operations in this module.  All arrays
are dense numpy arrays; the size caps below keep every operation feasible on a
single workstation.

Index convention
----------------
Qubit 0 is the *most significant* bit of a computational-basis index: the
basis state |q0 q1 ... q_{n-1}> has index sum(q_i << (n - 1 - i)).  Every
module in this package relies on this single convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MAX_PURE_QUBITS = 22
MAX_DENSITY_QUBITS = 12

#: absolute tolerance for state invariants (norm, Hermiticity, trace)
ATOL_STATE = 1e-10
#: eigenvalues in [EIG_CLAMP_FLOOR, 0) are clamped to zero before moments
EIG_CLAMP_FLOOR = -1e-8


class SizeCapError(ValueError):
    """A requested object exceeds the configured dense-size caps."""


def _require_power_of_two(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim <= 0 or (1 << n) != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenstructure of a density operator in deviation-from-background form.

    The operator equals ``background * (I - V V^dag) + V diag(weights) V^dag``
    where ``V`` holds orthonormal columns.  Listing only the eigenpairs whose
    eigenvalue differs from a single repeated "background" value keeps the
    rank small for the states that dominate the experiments (pure states,
    globally depolarized pure states, Gibbs states padded with ancillas).
    """

    background: float
    weights: np.ndarray  # shape (r,), real
    vectors: np.ndarray  # shape (d, r), orthonormal columns

    @property
    def rank_listed(self) -> int:
        return self.weights.size

    def eigenvalues(self, dim: int) -> np.ndarray:
        """Full spectrum: listed weights plus (dim - r) background copies."""
        out = np.full(dim, self.background, dtype=float)
        out[: self.weights.size] = self.weights
        return out

    def trace(self, dim: int) -> float:
        return float(np.sum(self.weights) + self.background * (dim - self.weights.size))


class QuantumState:
    """An n-qubit state stored as a statevector or a density operator.

    Use :meth:`from_vector` / :meth:`from_matrix` rather than the raw
    constructor; both validate the state invariants (unit norm, Hermiticity,
    unit trace, positivity) at tolerance ``ATOL_STATE``.
    """

    __slots__ = ("n_qubits", "vector", "matrix", "_spectral")

    def __init__(
        self,
        n_qubits: int,
        vector: np.ndarray | None,
        matrix: np.ndarray | None,
        spectral: SpectralDecomposition | None = None,
    ):
        self.n_qubits = n_qubits
        self.vector = vector
        self.matrix = matrix
        self._spectral = spectral

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_vector(cls, vector: Sequence[complex]) -> "QuantumState":
        vec = np.asarray(vector, dtype=complex)
        if vec.ndim != 1:
            raise ValueError("statevector must be one-dimensional")
        n = _require_power_of_two(vec.size)
        if n > MAX_PURE_QUBITS:
            raise SizeCapError(f"statevector on {n} qubits exceeds cap {MAX_PURE_QUBITS}")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > ATOL_STATE:
            raise ValueError(f"statevector norm {norm} differs from 1 beyond {ATOL_STATE}")
        vec = vec.copy()
        vec.setflags(write=False)
        return cls(n, vec, None)

    @classmethod
    def from_matrix(
        cls,
        matrix: np.ndarray,
        spectral: SpectralDecomposition | None = None,
    ) -> "QuantumState":
        mat = np.asarray(matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("density operator must be a square matrix")
        n = _require_power_of_two(mat.shape[0])
        if n > MAX_DENSITY_QUBITS:
            raise SizeCapError(f"density operator on {n} qubits exceeds cap {MAX_DENSITY_QUBITS}")
        herm = float(np.max(np.abs(mat - mat.conj().T)))
        if herm > ATOL_STATE:
            raise ValueError(f"density operator deviates from Hermitian by {herm}")
        tr = complex(np.trace(mat))
        if abs(tr - 1.0) > ATOL_STATE:
            raise ValueError(f"density operator trace {tr} differs from 1 beyond {ATOL_STATE}")
        if spectral is not None:
            min_eig = min(float(np.min(spectral.weights, initial=np.inf)), spectral.background)
        else:
            min_eig = float(np.min(np.linalg.eigvalsh(mat)))
        if min_eig < -ATOL_STATE:
            raise ValueError(f"density operator has eigenvalue {min_eig} below -{ATOL_STATE}")
        mat = mat.copy()
        mat.setflags(write=False)
        return cls(n, None, mat, spectral)

    @classmethod
    def computational_zero(cls, n_qubits: int) -> "QuantumState":
        vec = np.zeros(1 << n_qubits, dtype=complex)
        vec[0] = 1.0
        return cls.from_vector(vec)

    # -- basic queries -----------------------------------------------------

    @property
    def is_pure(self) -> bool:
        return self.vector is not None

    @property
    def dim(self) -> int:
        return 1 << self.n_qubits

    def density(self) -> np.ndarray:
        """Dense density operator (materializes |psi><psi| for pure states)."""
        if self.matrix is not None:
            return self.matrix
        if self.n_qubits > MAX_DENSITY_QUBITS:
            raise SizeCapError(
                f"cannot materialize a density operator on {self.n_qubits} qubits"
            )
        return np.outer(self.vector, self.vector.conj())

    def spectral(self) -> SpectralDecomposition:
        """Eigendecomposition, computed lazily and cached.

        Pure states resolve without any linear algebra; density operators
        fall back to a full Hermitian eigendecomposition.
        """
        if self._spectral is None:
            if self.is_pure:
                vec = self.vector.reshape(-1, 1)
                spectral = SpectralDecomposition(0.0, np.array([1.0]), vec)
            else:
                w, v = np.linalg.eigh(self.matrix)
                spectral = SpectralDecomposition(0.0, w.astype(float), v)
            self._spectral = spectral
        return self._spectral


class ObservableSpec:
    """Hermitian observable in one of four structured forms.

    Variants: ``dense`` (explicit matrix), ``pauli_sum`` (real-weighted Pauli
    strings), ``rank_one`` (|psi><psi|), ``identity``.  Construction caches
    the three scalars every estimator budget needs:

    - ``trace``       : Tr(O)
    - ``frobenius_sq``: Tr(O_0^2) of the traceless part O_0 = O - Tr(O) I / d
    - ``op_norm_bound``: an upper bound on the operator norm of O
    """

    __slots__ = ("kind", "n_qubits", "matrix", "terms", "state_vector",
                 "trace", "frobenius_sq", "op_norm_bound")

    def __init__(self, kind, n_qubits, matrix=None, terms=None, state_vector=None,
                 trace=0.0, frobenius_sq=0.0, op_norm_bound=0.0):
        self.kind = kind
        self.n_qubits = n_qubits
        self.matrix = matrix
        self.terms = terms
        self.state_vector = state_vector
        self.trace = trace
        self.frobenius_sq = frobenius_sq
        self.op_norm_bound = op_norm_bound

    # -- constructors ------------------------------------------------------

    @classmethod
    def dense(cls, matrix: np.ndarray) -> "ObservableSpec":
        mat = np.asarray(matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("observable must be a square matrix")
        n = _require_power_of_two(mat.shape[0])
        herm = float(np.max(np.abs(mat - mat.conj().T)))
        if herm > ATOL_STATE:
            raise ValueError(f"observable deviates from Hermitian by {herm}")
        d = mat.shape[0]
        tr = float(np.trace(mat).real)
        frob_full = float(np.vdot(mat, mat).real)
        frob0 = frob_full - tr * tr / d
        norm_bound = float(np.max(np.abs(np.linalg.eigvalsh(mat))))
        mat = mat.copy()
        mat.setflags(write=False)
        return cls("dense", n, matrix=mat, trace=tr,
                   frobenius_sq=frob0, op_norm_bound=norm_bound)

    @classmethod
    def pauli_sum(cls, terms: Iterable[tuple[float, str]], n_qubits: int) -> "ObservableSpec":
        merged: dict[str, float] = {}
        for coeff, string in terms:
            string = string.upper()
            if len(string) != n_qubits:
                raise ValueError(f"Pauli string {string!r} has length != {n_qubits}")
            if any(ch not in "IXYZ" for ch in string):
                raise ValueError(f"Pauli string {string!r} contains non-Pauli letters")
            coeff = float(coeff)
            merged[string] = merged.get(string, 0.0) + coeff
        clean = tuple((c, s) for s, c in merged.items() if c != 0.0)
        d = 1 << n_qubits
        identity_string = "I" * n_qubits
        tr = d * merged.get(identity_string, 0.0)
        # Pauli strings are orthogonal under the trace inner product:
        # Tr(P_a P_b) = d * delta_ab, so Tr(O_0^2) drops only the identity term.
        frob0 = d * sum(c * c for c, s in clean if s != identity_string)
        norm_bound = sum(abs(c) for c, _ in clean)
        return cls("pauli_sum", n_qubits, terms=clean, trace=tr,
                   frobenius_sq=frob0, op_norm_bound=norm_bound)

    @classmethod
    def rank_one_projector(cls, vector: Sequence[complex]) -> "ObservableSpec":
        vec = np.asarray(vector, dtype=complex)
        n = _require_power_of_two(vec.size)
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > ATOL_STATE:
            raise ValueError(f"projector state norm {norm} differs from 1 beyond {ATOL_STATE}")
        d = vec.size
        vec = vec.copy()
        vec.setflags(write=False)
        return cls("rank_one", n, state_vector=vec, trace=1.0,
                   frobenius_sq=1.0 - 1.0 / d, op_norm_bound=1.0)

    @classmethod
    def identity(cls, n_qubits: int) -> "ObservableSpec":
        return cls("identity", n_qubits, trace=float(1 << n_qubits),
                   frobenius_sq=0.0, op_norm_bound=1.0)

    # -- queries -----------------------------------------------------------

    @property
    def dim(self) -> int:
        return 1 << self.n_qubits

    def to_matrix(self) -> np.ndarray:
        """Materialize the observable as a dense Hermitian matrix."""
        d = self.dim
        if self.kind == "dense":
            return self.matrix
        if self.kind == "identity":
            return np.eye(d, dtype=complex)
        if self.kind == "rank_one":
            return np.outer(self.state_vector, self.state_vector.conj())
        out = np.zeros((d, d), dtype=complex)
        for coeff, string in self.terms:
            out += coeff * pauli_string_matrix(string)
        return out

    def mathfrak_b(self) -> float:
        """The budget scalar max{Tr(O_0^2), 1} used by setting-count rules."""
        return max(self.frobenius_sq, 1.0)


# -- Pauli-string machinery --------------------------------------------------


def _pauli_masks(string: str) -> tuple[int, int, int]:
    """Bit masks (flip, phase, n_y) for a Pauli string under the MSB convention."""
    n = len(string)
    flip = 0
    phase = 0
    n_y = 0
    for q, ch in enumerate(string):
        bit = 1 << (n - 1 - q)
        if ch == "X":
            flip |= bit
        elif ch == "Y":
            flip |= bit
            phase |= bit
            n_y += 1
        elif ch == "Z":
            phase |= bit
    return flip, phase, n_y


def _pauli_phases(string: str) -> tuple[np.ndarray, int]:
    """Per-source-index phases ph(b) with P|b> = ph(b) |b XOR flip>."""
    flip, phase_mask, n_y = _pauli_masks(string)
    d = 1 << len(string)
    idx = np.arange(d, dtype=np.int64)
    signs = 1 - 2 * (np.bitwise_count(idx & phase_mask).astype(np.int64) & 1)
    phases = (1j ** n_y) * signs
    return phases, flip


def pauli_string_matrix(string: str) -> np.ndarray:
    """Dense matrix of a Pauli string (MSB qubit ordering)."""
    phases, flip = _pauli_phases(string)
    d = phases.size
    idx = np.arange(d)
    out = np.zeros((d, d), dtype=complex)
    out[idx ^ flip, idx] = phases
    return out


def _pauli_expectations(string: str, columns: np.ndarray) -> np.ndarray:
    """<v|P|v> for every column v of ``columns`` (shape (d, r)), vectorized."""
    phases, flip = _pauli_phases(string)
    idx = np.arange(columns.shape[0])
    src = idx ^ flip
    return np.einsum("ir,i,ir->r", columns.conj(), phases[src], columns[src, :])


# -- bipartitions -------------------------------------------------------------


@dataclass(frozen=True)
class BipartitionSpec:
    """Partition of the register into A = A1 + A2 and B with |A2| = |B|.

    Qubit index lists are ordered; the i-th qubit of A2 is paired with the
    i-th qubit of B for swap / Bell-parity purposes.
    """

    qubits_a: tuple[int, ...]
    qubits_b: tuple[int, ...]
    qubits_a1: tuple[int, ...]
    qubits_a2: tuple[int, ...]

    def __post_init__(self):
        a, b = set(self.qubits_a), set(self.qubits_b)
        a1, a2 = set(self.qubits_a1), set(self.qubits_a2)
        n = len(self.qubits_a) + len(self.qubits_b)
        if len(a) != len(self.qubits_a) or len(b) != len(self.qubits_b):
            raise ValueError("duplicate qubit indices in partition")
        if a & b or (a | b) != set(range(n)):
            raise ValueError("A and B must partition {0..n-1}")
        if a1 & a2 or (a1 | a2) != a:
            raise ValueError("A1 and A2 must partition A")
        if len(self.qubits_a2) != len(self.qubits_b):
            raise ValueError("|A2| must equal |B| (dimensional matching)")
        if len(self.qubits_a) < len(self.qubits_b):
            raise ValueError("|A| must be at least |B|")

    @classmethod
    def contiguous(cls, n_a: int, n_b: int) -> "BipartitionSpec":
        """A = first n_a qubits (A2 = its trailing n_b qubits), B = the rest."""
        if n_b > n_a:
            raise ValueError("|A| must be at least |B|")
        a = tuple(range(n_a))
        return cls(
            qubits_a=a,
            qubits_b=tuple(range(n_a, n_a + n_b)),
            qubits_a1=a[: n_a - n_b],
            qubits_a2=a[n_a - n_b:],
        )

    @property
    def n_qubits(self) -> int:
        return len(self.qubits_a) + len(self.qubits_b)

    @property
    def dim_a(self) -> int:
        return 1 << len(self.qubits_a)

    @property
    def dim_b(self) -> int:
        return 1 << len(self.qubits_b)

    @property
    def dim_a1(self) -> int:
        return 1 << len(self.qubits_a1)

    @property
    def dim_a2(self) -> int:
        return 1 << len(self.qubits_a2)


# -- operations ---------------------------------------------------------------


def tensor_product(a: QuantumState, b: QuantumState) -> QuantumState:
    """Combined state on the concatenated register (a's qubits first)."""
    n = a.n_qubits + b.n_qubits
    if a.is_pure and b.is_pure:
        if n > MAX_PURE_QUBITS:
            raise SizeCapError(f"{n}-qubit statevector exceeds cap {MAX_PURE_QUBITS}")
        return QuantumState.from_vector(np.kron(a.vector, b.vector))
    if n > MAX_DENSITY_QUBITS:
        raise SizeCapError(f"{n}-qubit density operator exceeds cap {MAX_DENSITY_QUBITS}")
    return QuantumState.from_matrix(np.kron(a.density(), b.density()))


def partial_transpose(rho: QuantumState, part: BipartitionSpec) -> np.ndarray:
    """Transpose the B indices of the density operator.

    Returns a plain Hermitian matrix: the partial transpose of an entangled
    state is generally not positive, so it is not wrapped as a QuantumState.
    The operation is a pure permutation of matrix entries, so Hermiticity and
    trace are preserved exactly.
    """
    n = rho.n_qubits
    if part.n_qubits != n:
        raise ValueError("partition does not match state size")
    mat = rho.density()
    tensor = mat.reshape((2,) * (2 * n))
    axes = list(range(2 * n))
    for q in part.qubits_b:
        axes[q], axes[n + q] = axes[n + q], axes[q]
    return tensor.transpose(axes).reshape(mat.shape)


def partial_trace(rho: QuantumState | np.ndarray, keep: Sequence[int], n_qubits: int | None = None) -> np.ndarray:
    """Reduced density matrix on ``keep`` (in their original relative order)."""
    if isinstance(rho, QuantumState):
        mat = rho.density()
        n = rho.n_qubits
    else:
        mat = np.asarray(rho)
        n = _require_power_of_two(mat.shape[0]) if n_qubits is None else n_qubits
    keep = sorted(keep)
    traced = [q for q in range(n) if q not in keep]
    tensor = mat.reshape((2,) * (2 * n))
    for offset, q in enumerate(traced):
        ax = q - offset  # axes shift left as earlier qubits are traced out
        n_rem = n - offset
        tensor = np.trace(tensor, axis1=ax, axis2=n_rem + ax)
    d_keep = 1 << len(keep)
    return tensor.reshape(d_keep, d_keep)


def exact_spectral_moments(rho: QuantumState, t_max: int) -> np.ndarray:
    """Moments p_t = Tr(rho^t) for t = 1..t_max via eigendecomposition.

    Eigenvalues in [-1e-8, 0) are clamped to zero first; Gibbs and
    ground-state constructions routinely produce such round-off negatives.
    """
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    eig = rho.spectral().eigenvalues(rho.dim)
    eig = np.where((eig < 0) & (eig >= EIG_CLAMP_FLOOR), 0.0, eig)
    return np.array([float(np.sum(eig ** t)) for t in range(1, t_max + 1)])


def diag_quadratic_forms(obs: ObservableSpec, columns: np.ndarray) -> np.ndarray:
    """<v|O|v> for every column v, specialized per observable variant.

    Costs: identity O(r), rank-one O(d r), pauli_sum O(terms d r),
    dense O(d^2 r).  Imaginary residues are checked then discarded.
    """
    columns = np.asarray(columns, dtype=complex)
    if columns.ndim == 1:
        columns = columns.reshape(-1, 1)
    if columns.shape[0] != obs.dim:
        raise ValueError("column dimension does not match observable")
    if obs.kind == "identity":
        vals = np.einsum("ir,ir->r", columns.conj(), columns)
    elif obs.kind == "rank_one":
        overlaps = obs.state_vector.conj() @ columns
        vals = np.abs(overlaps) ** 2
    elif obs.kind == "pauli_sum":
        vals = np.zeros(columns.shape[1], dtype=complex)
        for coeff, string in obs.terms:
            vals = vals + coeff * _pauli_expectations(string, columns)
    else:
        vals = np.einsum("ir,ir->r", columns.conj(), obs.matrix @ columns)
    residue = float(np.max(np.abs(vals.imag), initial=0.0))
    if residue > 1e-6:
        raise ValueError(f"imaginary residue {residue} signals a non-Hermitian observable")
    return vals.real


def quadratic_form(obs: ObservableSpec, v: Sequence[complex]) -> float:
    """The real number <v|O|v>."""
    return float(diag_quadratic_forms(obs, np.asarray(v, dtype=complex).reshape(-1, 1))[0])


def exact_observable_powers(rho: QuantumState, obs: ObservableSpec, t_max: int) -> np.ndarray:
    """Tr(O rho^k) for k = 1..t_max, exact via the state's eigenbasis."""
    if obs.dim != rho.dim:
        raise ValueError("observable dimension does not match state")
    spec = rho.spectral()
    lam = np.where(
        (spec.weights < 0) & (spec.weights >= EIG_CLAMP_FLOOR), 0.0, spec.weights
    )
    q = diag_quadratic_forms(obs, spec.vectors)
    bg = spec.background
    if EIG_CLAMP_FLOOR <= bg < 0:
        bg = 0.0
    q_rest = obs.trace - float(np.sum(q))
    out = np.empty(t_max, dtype=float)
    for t in range(1, t_max + 1):
        out[t - 1] = float(np.sum((lam ** t) * q) + (bg ** t) * q_rest)
    return out
