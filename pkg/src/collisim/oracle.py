"""Brute-force ground truth for estimators and moment identities.

Every function here favors directness over speed: permutation sums are
literal loops over S_k, expectations are dense linear algebra, estimator
references enumerate index subsets one tuple at a time.  Nothing in this
module is shared with the estimation or inversion code beyond the primitives
in :mod:`collisim.qcore`; agreement between the two sides is what the test
suite certifies.

Size caps are tight (k <= 6, d <= 16 for permutation sums, N_M <= 25 for
tuple enumeration) so the whole reference layer stays fast.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .qcore import (
    BipartitionSpec,
    ObservableSpec,
    QuantumState,
    SizeCapError,
    partial_transpose,
)

MAX_PERMSUM_K = 6
MAX_PERMSUM_DIM = 16
MAX_BRUTE_SHOTS = 25
MAX_WIRING_K = 3
MAX_WIRING_QUBITS = 6


# -- small utilities ----------------------------------------------------------


def _as_density(rho) -> np.ndarray:
    if isinstance(rho, QuantumState):
        return rho.density()
    return np.asarray(rho, dtype=complex)


def _as_observable_matrix(obs) -> np.ndarray:
    if isinstance(obs, ObservableSpec):
        return obs.to_matrix()
    return np.asarray(obs, dtype=complex)


def _as_unitary(circuit) -> np.ndarray:
    if hasattr(circuit, "to_matrix"):
        return np.asarray(circuit.to_matrix(), dtype=complex)
    return np.asarray(circuit, dtype=complex)


def cycles_of(perm: Sequence[int]) -> list[tuple[int, ...]]:
    """Cycle decomposition of a permutation given as the image list pi(m)."""
    seen = [False] * len(perm)
    out = []
    for start in range(len(perm)):
        if seen[start]:
            continue
        cyc = []
        m = start
        while not seen[m]:
            seen[m] = True
            cyc.append(m)
            m = perm[m]
        out.append(tuple(cyc))
    return out


def permutation_operator(perm: Sequence[int], d: int) -> np.ndarray:
    """Dense copy-permutation operator R_pi on (C^d)^{tensor N}.

    Convention: R_pi |i_0, ..., i_{N-1}> = |j_0, ..., j_{N-1}> with
    j_m = i_{pi^{-1}(m)}, i.e. the content of slot m moves to slot pi(m).
    Only intended for tiny N and d; used to pin down the cycle-trace rule.
    """
    n_slots = len(perm)
    inv = [0] * n_slots
    for m, target in enumerate(perm):
        inv[target] = m
    dim = d ** n_slots
    op = np.zeros((dim, dim))
    for col in range(dim):
        digits = []
        x = col
        for _ in range(n_slots):
            digits.append(x % d)
            x //= d
        digits.reverse()
        row = 0
        for m in range(n_slots):
            row = row * d + digits[inv[m]]
        op[row, col] = 1.0
    return op


def matrix_power_traces(mat: np.ndarray, k_max: int) -> list[float]:
    """[Tr(M^0), Tr(M^1), ..., Tr(M^k_max)] by repeated multiplication."""
    traces = [float(mat.shape[0])]
    power = np.eye(mat.shape[0], dtype=complex)
    for _ in range(k_max):
        power = power @ mat
        traces.append(complex(np.trace(power)).real)
    return traces


def observable_power_traces(mat: np.ndarray, obs_mat: np.ndarray, k_max: int) -> list[float]:
    """[Tr(O M^0), ..., Tr(O M^k_max)], the ell = 0 entry being Tr(O)."""
    out = [complex(np.trace(obs_mat)).real]
    power = np.eye(mat.shape[0], dtype=complex)
    for _ in range(k_max):
        power = power @ mat
        out.append(complex(np.trace(obs_mat @ power)).real)
    return out


def swap_operator(d: int) -> np.ndarray:
    """Swap on C^d tensor C^d: S |i,j> = |j,i>."""
    s = np.zeros((d * d, d * d))
    idx = np.arange(d * d)
    i, j = idx // d, idx % d
    s[idx, j * d + i] = 1.0
    return s


# -- permutation sums ---------------------------------------------------------


def permutation_sum_zeta(rho, k: int) -> float:
    """(1/k!) sum over S_k of the per-cycle trace products of rho.

    Each permutation contributes the product over its cycles of
    Tr(rho^{cycle length}); no d^k-dimensional operator is ever built.
    """
    rho_mat = _as_density(rho)
    if k > MAX_PERMSUM_K:
        raise SizeCapError(f"permutation sum order {k} exceeds cap {MAX_PERMSUM_K}")
    if rho_mat.shape[0] > MAX_PERMSUM_DIM:
        raise SizeCapError(f"dimension {rho_mat.shape[0]} exceeds cap {MAX_PERMSUM_DIM}")
    tr_pow = matrix_power_traces(rho_mat, k)
    total = 0.0
    for perm in itertools.permutations(range(k)):
        term = 1.0
        for cyc in cycles_of(perm):
            term *= tr_pow[len(cyc)]
        total += term
    return total / math.factorial(k)


def permutation_sum_xi(rho, obs, k: int) -> float:
    """(1/(k+1)!) sum over S_{k+1} with the last slot carrying the observable.

    The cycle through the distinguished slot, of length ell + 1, contributes
    Tr(O rho^ell); every other cycle contributes Tr(rho^{length}).
    """
    rho_mat = _as_density(rho)
    obs_mat = _as_observable_matrix(obs)
    if k + 1 > MAX_PERMSUM_K + 1:
        raise SizeCapError(f"permutation sum order {k + 1} exceeds cap {MAX_PERMSUM_K + 1}")
    if rho_mat.shape[0] > MAX_PERMSUM_DIM:
        raise SizeCapError(f"dimension {rho_mat.shape[0]} exceeds cap {MAX_PERMSUM_DIM}")
    tr_pow = matrix_power_traces(rho_mat, k + 1)
    obs_pow = observable_power_traces(rho_mat, obs_mat, k)
    total = 0.0
    distinguished = k
    for perm in itertools.permutations(range(k + 1)):
        term = 1.0
        for cyc in cycles_of(perm):
            if distinguished in cyc:
                term *= obs_pow[len(cyc) - 1]
            else:
                term *= tr_pow[len(cyc)]
        total += term
    return total / math.factorial(k + 1)


def _abab_tensor(rho_mat: np.ndarray, part: BipartitionSpec) -> np.ndarray:
    """rho reshaped to indices (a, b, a', b') with A-major qubit ordering."""
    n = part.n_qubits
    t = rho_mat.reshape((2,) * (2 * n))
    order = list(part.qubits_a) + list(part.qubits_b)
    t = t.transpose(order + [n + q for q in order])
    return t.reshape(part.dim_a, part.dim_b, part.dim_a, part.dim_b)


def permutation_sum_zeta_pt(rho, part: BipartitionSpec, k: int, method: str = "cycle") -> float:
    """Permutation sum with the copy permutation transposed on the B factor.

    method="cycle" evaluates each term as a cycle product of partial-transpose
    power traces.  method="wiring" contracts k copies of rho against the
    (R_pi)_A x (R_pi^T)_B index wiring directly, without forming rho^{T_B};
    it is capped at k <= 3 and n <= 6 and exists to cross-check the first path.
    """
    if isinstance(rho, np.ndarray):
        rho = QuantumState.from_matrix(rho)
    if k > MAX_PERMSUM_K:
        raise SizeCapError(f"permutation sum order {k} exceeds cap {MAX_PERMSUM_K}")
    if method == "cycle":
        pt = partial_transpose(rho, part)
        tr_pow = matrix_power_traces(pt, k)
        total = 0.0
        for perm in itertools.permutations(range(k)):
            term = 1.0
            for cyc in cycles_of(perm):
                term *= tr_pow[len(cyc)]
            total += term
        return total / math.factorial(k)
    if method != "wiring":
        raise ValueError(f"unknown method {method!r}")
    if k > MAX_WIRING_K or part.n_qubits > MAX_WIRING_QUBITS:
        raise SizeCapError(
            f"wiring path capped at k <= {MAX_WIRING_K}, n <= {MAX_WIRING_QUBITS}"
        )
    tensor = _abab_tensor(rho.density(), part)
    total = 0.0
    for perm in itertools.permutations(range(k)):
        inv = [0] * k
        for m, target in enumerate(perm):
            inv[target] = m
        operands = []
        # copy m carries row indices (a_m, b_m) and column indices wired to
        # a_{pi^{-1}(m)} and b_{pi(m)}; a-labels are 0..k-1, b-labels k..2k-1
        for m in range(k):
            operands.append(tensor)
            operands.append([m, k + m, inv[m], k + perm[m]])
        operands.append([])
        total += complex(np.einsum(*operands, optimize=True)).real
    return total / math.factorial(k)


def gamma_operator(rho, k: int) -> np.ndarray:
    """Partial-trace permutation sum over S_{k+1}, leaving one slot open.

    For each permutation the cycle through the open slot, of length ell + 1,
    contributes the operator rho^ell; the remaining cycles contribute scalar
    trace factors.  Returns the (1/(k+1)!)-normalized sum as a dense matrix.
    """
    rho_mat = _as_density(rho)
    if k + 1 > MAX_PERMSUM_K + 1:
        raise SizeCapError(f"permutation sum order {k + 1} exceeds cap {MAX_PERMSUM_K + 1}")
    d = rho_mat.shape[0]
    powers = [np.eye(d, dtype=complex)]
    for _ in range(k):
        powers.append(powers[-1] @ rho_mat)
    tr_pow = [complex(np.trace(p)).real for p in powers]
    tr_pow[0] = float(d)
    total = np.zeros((d, d), dtype=complex)
    open_slot = k
    for perm in itertools.permutations(range(k + 1)):
        scale = 1.0
        op_power = 0
        for cyc in cycles_of(perm):
            if open_slot in cyc:
                op_power = len(cyc) - 1
            else:
                scale *= tr_pow[len(cyc)]
        total += scale * powers[op_power]
    return total / math.factorial(k + 1)


# -- exact conditional expectations ------------------------------------------


def conditional_expectation_m(rho, circuit, k: int, d: int) -> float:
    """E[M_hat_k | U] = (kappa_k / d) * sum_b Pr(b|U)^k, computed densely."""
    u = _as_unitary(circuit)
    rho_mat = _as_density(rho)
    q = np.einsum("ij,jk,ik->i", u, rho_mat, u.conj()).real
    kappa = math.comb(k + d - 1, k)
    return kappa / d * float(np.sum(q ** k))


def conditional_expectation_gamma(rho, circuit, obs, k: int, d: int,
                                  traceless: bool = False) -> float:
    """E[Gamma_hat_k | U] = (kappa_{k+1} / d) * sum_b Pr(b|U)^k <b|UOU'|b>."""
    u = _as_unitary(circuit)
    rho_mat = _as_density(rho)
    obs_mat = _as_observable_matrix(obs)
    q = np.einsum("ij,jk,ik->i", u, rho_mat, u.conj()).real
    w = np.einsum("ij,jk,ik->i", u, obs_mat, u.conj()).real
    if traceless:
        w = w - complex(np.trace(obs_mat)).real / d
    kappa = math.comb(k + d, k + 1)
    return kappa / d * float(np.sum((q ** k) * w))


def ptme_probability_table(state: QuantumState, circuit_on_a,
                           part: BipartitionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Exact Pr(r = +1, b | U_A) and Pr(r = -1, b | U_A) over b in A1's basis.

    Works in the state's eigenbasis: each eigenvector is rotated by U_A on
    the A qubits, and for every A1 outcome b the remaining (A2, B) block W
    yields Pr(+/-) through (|W|^2 +/- <W|S|W>) / 2 with S the pair swap.  The
    flat background part of the spectrum enters through Tr(G_{+/-}) =
    (d_B^2 +/- d_B) / 2.
    """
    u_a = _as_unitary(circuit_on_a)
    if u_a.shape[0] != part.dim_a:
        raise ValueError("circuit dimension does not match the A subsystem")
    n = part.n_qubits
    if state.n_qubits != n:
        raise ValueError("partition does not match state size")
    spec = state.spectral()
    order = list(part.qubits_a1) + list(part.qubits_a2) + list(part.qubits_b)
    cols = spec.vectors.reshape((2,) * n + (-1,)).transpose(order + [n])
    cols = cols.reshape(part.dim_a, part.dim_b, -1)
    rotated = np.einsum("ij,jbr->ibr", u_a, cols)
    rotated = rotated.reshape(part.dim_a1, part.dim_a2, part.dim_b, -1)
    norms = np.einsum("axyr,axyr->ar", rotated.conj(), rotated).real
    swaps = np.einsum("axyr,ayxr->ar", rotated.conj(), rotated).real
    d_b = part.dim_b
    lam = spec.weights - spec.background
    q_plus = 0.5 * (norms + swaps) @ lam + spec.background * (d_b * d_b + d_b) / 2
    q_minus = 0.5 * (norms - swaps) @ lam + spec.background * (d_b * d_b - d_b) / 2
    return q_plus, q_minus


def conditional_expectation_lambda(state: QuantumState, circuit_on_a,
                                   part: BipartitionSpec, k: int) -> float:
    """E[Lambda_hat_k | U_A] = d_A^k / (k! d_A1) * sum_b (q_+(b) - q_-(b))^k."""
    q_plus, q_minus = ptme_probability_table(state, circuit_on_a, part)
    diff = q_plus - q_minus
    scale = part.dim_a ** k / (math.factorial(k) * part.dim_a1)
    return scale * float(np.sum(diff ** k))


def exp_delta_rhs(rho, obs_twobody) -> float:
    """Right-hand side of the pair-collision estimator's expectation.

    Assembles the full linear combination of Tr(O rho x rho), its swapped
    counterpart, the identity-weighted pieces, and the eight reduced-operator
    terms Tr(X_s rho^m) for X in {O, SO}, s in {1, 2}, m in {1, 2}.
    """
    rho_mat = _as_density(rho)
    obs_mat = _as_observable_matrix(obs_twobody)
    d = rho_mat.shape[0]
    if obs_mat.shape[0] != d * d:
        raise ValueError("two-copy observable must act on dimension d^2")
    swap = swap_operator(d)
    rho2 = rho_mat @ rho_mat
    p2 = complex(np.trace(rho2)).real
    rho_pair = np.kron(rho_mat, rho_mat)
    swapped = swap @ obs_mat
    total = 2 * np.trace(obs_mat @ rho_pair) + 2 * np.trace(swapped @ rho_pair)
    total += (1 + p2) * (np.trace(obs_mat) + np.trace(swapped))
    for x in (obs_mat, swapped):
        xt = x.reshape(d, d, d, d)
        x1 = np.trace(xt, axis1=1, axis2=3)
        x2 = np.trace(xt, axis1=0, axis2=2)
        total += 2 * np.trace(x1 @ rho_mat) + 2 * np.trace(x2 @ rho_mat)
        total += 2 * np.trace(x1 @ rho2) + 2 * np.trace(x2 @ rho2)
    return complex(total).real


# -- exhaustive tuple-enumeration references ----------------------------------


def _check_brute_size(n_shots: int):
    if n_shots > MAX_BRUTE_SHOTS:
        raise SizeCapError(f"brute-force enumeration capped at N_M = {MAX_BRUTE_SHOTS}")


def brute_force_m(b_values: Sequence[int], k: int, d: int) -> float:
    """M_hat_k by enumerating every index k-subset and testing for collision."""
    b = list(b_values)
    _check_brute_size(len(b))
    hits = 0
    for combo in itertools.combinations(range(len(b)), k):
        if all(b[i] == b[combo[0]] for i in combo[1:]):
            hits += 1
    kappa = math.comb(k + d - 1, k)
    return kappa / d * hits / math.comb(len(b), k)


def brute_force_gamma(b_values: Sequence[int], k: int, d: int,
                      weight_fn: Callable[[int], float]) -> float:
    """Gamma_hat_k by tuple enumeration; weight_fn(b) supplies <b|UOU'|b>."""
    b = list(b_values)
    _check_brute_size(len(b))
    total = 0.0
    for combo in itertools.combinations(range(len(b)), k):
        if all(b[i] == b[combo[0]] for i in combo[1:]):
            total += weight_fn(b[combo[0]])
    kappa = math.comb(k + d, k + 1)
    return kappa / d * total / math.comb(len(b), k)


def brute_force_lambda(b_values: Sequence[int], r_signs: Sequence[int], k: int,
                       d_a: int, d_a1: int) -> float:
    """Lambda_hat_k by enumerating k-subsets of signed, collided outcomes."""
    b = list(b_values)
    r = list(r_signs)
    _check_brute_size(len(b))
    total = 0
    for combo in itertools.combinations(range(len(b)), k):
        if all(b[i] == b[combo[0]] for i in combo[1:]):
            prod = 1
            for i in combo:
                prod *= r[i]
            total += prod
    scale = d_a ** k / (math.factorial(k) * d_a1)
    return scale * total / math.comb(len(b), k)


def brute_force_delta(b_values: Sequence[int], d: int,
                      pair_weight_fn: Callable[[int], float]) -> float:
    """Delta_hat by enumerating collided pairs; pair_weight_fn(b) supplies
    Tr[(U'|b><b|U)^{x2} O]."""
    b = list(b_values)
    _check_brute_size(len(b))
    total = 0.0
    for i, j in itertools.combinations(range(len(b)), 2):
        if b[i] == b[j]:
            total += pair_weight_fn(b[i])
    kappa4 = math.comb(4 + d - 1, 4)
    return 24 * kappa4 / d * total / math.comb(len(b), 2)


def brute_force_upsilon(b_values: Sequence[int], k: int, d: int,
                        column_fn: Callable[[int], np.ndarray]) -> np.ndarray:
    """Upsilon_hat_k by tuple enumeration; column_fn(b) supplies U' e_b."""
    b = list(b_values)
    _check_brute_size(len(b))
    total = np.zeros((d, d), dtype=complex)
    for combo in itertools.combinations(range(len(b)), k):
        if all(b[i] == b[combo[0]] for i in combo[1:]):
            v = column_fn(b[combo[0]])
            total += np.outer(v, v.conj())
    kappa = math.comb(k + d, k + 1)
    return kappa / d * total / math.comb(len(b), k)


def brute_force_estimators(batch, k: int, d: int, *,
                           weight_fn: Callable[[int], float] | None = None,
                           pair_weight_fn: Callable[[int], float] | None = None,
                           column_fn: Callable[[int], np.ndarray] | None = None,
                           d_a: int | None = None,
                           d_a1: int | None = None) -> dict:
    """Every estimator reference computable from the given batch, as a dict.

    ``batch`` is either a plain integer sequence or an object with
    ``b_values`` (and optionally ``r_signs``) attributes.  Keys "gamma",
    "delta", "upsilon" appear when the matching weight callables are given;
    "lambda" appears when signs and subsystem dimensions are present.
    """
    b_values = getattr(batch, "b_values", batch)
    r_signs = getattr(batch, "r_signs", None)
    out = {"m": brute_force_m(b_values, k, d)}
    if weight_fn is not None:
        out["gamma"] = brute_force_gamma(b_values, k, d, weight_fn)
    if r_signs is not None and d_a is not None and d_a1 is not None:
        out["lambda"] = brute_force_lambda(b_values, r_signs, k, d_a, d_a1)
    if pair_weight_fn is not None:
        out["delta"] = brute_force_delta(b_values, d, pair_weight_fn)
    if column_fn is not None:
        out["upsilon"] = brute_force_upsilon(b_values, k, d, column_fn)
    return out


# -- witness references -------------------------------------------------------


def elementary_symmetric(eigenvalues: Sequence[float], k: int) -> float:
    """e_k of the given numbers, read off the characteristic polynomial."""
    eig = np.asarray(eigenvalues, dtype=float)
    if k == 0:
        return 1.0
    if k > eig.size:
        return 0.0
    coeffs = np.poly(eig)
    return float((-1) ** k * coeffs[k])


def d_k_from_eigenvalues(eigenvalues: Sequence[float], k: int) -> float:
    """Witness value D_k = -k * e_k over the partial-transpose spectrum."""
    return -k * elementary_symmetric(eigenvalues, k)
