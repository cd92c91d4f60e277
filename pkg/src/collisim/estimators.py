"""Collision estimators over measurement histograms.

All estimators share one structure: group the N_M outcomes by value, count
k-wise collisions inside each group with binomial coefficients, and rescale
by kappa_k / (d * C(N_M, k)).  The binomial sums are done in Python integers
(exact at any N_M) and the normalization is applied as one final division of
big integers, which rounds correctly to float; nothing is accumulated in
floating point except genuinely real-valued weights.

The per-group counts are further compressed to distinct count values before
the binomial sums: since the group sizes add up to N_M, there are at most
O(sqrt(N_M)) distinct sizes, which keeps postprocessing at 10^7+ shots cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .qcore import ObservableSpec, quadratic_form
from .sampler import OutcomeBatch, quasi_probabilities, rotated_basis_columns

#: outcome values below this use bincount; sparser spaces fall back to sorting
_BINCOUNT_LIMIT = 1 << 23


def kappa(k: int, d: int) -> int:
    """Symmetric-subspace dimension C(k + d - 1, k), exact."""
    return math.comb(k + d - 1, k)


class CollisionHistogram:
    """Outcome multiplicities of one measurement batch, grouped by value.

    ``values[i]`` occurred ``theta[i]`` times; for signed (PTME) batches
    ``plus[i]`` and ``minus[i]`` split each group by the parity outcome.
    """

    __slots__ = ("values", "theta", "plus", "minus", "total", "_theta_groups",
                 "_sign_groups")

    def __init__(self, values: np.ndarray, theta: np.ndarray,
                 plus: np.ndarray | None, minus: np.ndarray | None, total: int):
        self.values = values
        self.theta = theta
        self.plus = plus
        self.minus = minus
        self.total = total
        self._theta_groups = None
        self._sign_groups = None

    @property
    def has_signs(self) -> bool:
        return self.plus is not None

    def theta_groups(self) -> tuple[np.ndarray, np.ndarray]:
        """(distinct group sizes, how many groups have each size)."""
        if self._theta_groups is None:
            self._theta_groups = np.unique(self.theta, return_counts=True)
        return self._theta_groups

    def sign_groups(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(distinct (plus, minus) pairs as columns, multiplicities)."""
        if self._sign_groups is None:
            pairs = np.stack([self.plus, self.minus], axis=1)
            distinct, counts = np.unique(pairs, axis=0, return_counts=True)
            self._sign_groups = (distinct[:, 0], distinct[:, 1], counts)
        return self._sign_groups


def build_histogram(batch: OutcomeBatch) -> CollisionHistogram:
    """Group a batch by outcome value in a single pass."""
    b = np.asarray(batch.b_values)
    if b.size == 0:
        raise ValueError("empty batch")
    top = int(b.max())
    if top < _BINCOUNT_LIMIT:
        counts = np.bincount(b)
        values = np.flatnonzero(counts)
        theta = counts[values]
        plus = minus = None
        if batch.r_signs is not None:
            plus_all = np.bincount(b[batch.r_signs > 0], minlength=top + 1)
            plus = plus_all[values]
            minus = theta - plus
    else:
        values, theta = np.unique(b, return_counts=True)
        plus = minus = None
        if batch.r_signs is not None:
            order = np.searchsorted(values, b[batch.r_signs > 0])
            plus = np.bincount(order, minlength=values.size)
            minus = theta - plus
    return CollisionHistogram(values, theta.astype(np.int64), plus, minus, int(b.size))


def _collision_count(hist: CollisionHistogram, k: int) -> int:
    """sum_j C(theta_j, k) as an exact integer."""
    sizes, multiplicity = hist.theta_groups()
    total = 0
    for size, mult in zip(sizes.tolist(), multiplicity.tolist()):
        if size >= k:
            total += math.comb(size, k) * mult
    return total


def _check_order(k: int, n_shots: int, minimum: int):
    if k < minimum:
        raise ValueError(f"estimator order k={k} below minimum {minimum}")
    if k > n_shots:
        raise ValueError(f"estimator order k={k} exceeds batch size {n_shots}")


def m_hat(hist: CollisionHistogram, k: int, d: int, n_shots: int | None = None) -> float:
    """Moment-collision estimator: (kappa_k / d) * C(N_M, k)^{-1} * sum_j C(theta_j, k)."""
    n = hist.total if n_shots is None else n_shots
    _check_order(k, n, 2)
    numerator = kappa(k, d) * _collision_count(hist, k)
    return numerator / (d * math.comb(n, k))


def gamma_hat(hist: CollisionHistogram, k: int, obs: ObservableSpec, circuit,
              d: int, n_shots: int | None = None, traceless: bool = False) -> float:
    """Observable-weighted collision estimator.

    Each collided group j contributes C(theta_j, k) times the quasi-outcome
    weight <j|UOU'|j>, evaluated once per distinct value.  With
    ``traceless`` the weight uses the traceless part of the observable.
    """
    n = hist.total if n_shots is None else n_shots
    _check_order(k, n, 1)
    mask = hist.theta >= k
    total = 0.0
    if np.any(mask):
        weights = quasi_probabilities(obs, circuit, hist.values[mask], traceless)
        for size, weight in zip(hist.theta[mask].tolist(), weights.tolist()):
            total += math.comb(size, k) * weight
    scale = kappa(k + 1, d) / (d * math.comb(n, k))
    return scale * total


def signed_collision_sum(a: int, b: int, k: int) -> int:
    """E_k(a, b) = sum_l C(a, k-l) C(b, l) (-1)^l, exact.

    This is the elementary symmetric polynomial of degree k evaluated on a
    multiset of a plus-ones and b minus-ones: the signed k-wise collision
    count inside one outcome group.
    """
    total = 0
    for l in range(k + 1):
        if l <= b and k - l <= a:
            total += math.comb(a, k - l) * math.comb(b, l) * (-1) ** l
    return total


def lambda_hat(hist: CollisionHistogram, k: int, d_a: int, d_a1: int,
               n_shots: int | None = None) -> float:
    """Signed collision estimator for partial-transpose moments."""
    if not hist.has_signs:
        raise ValueError("lambda_hat needs a batch with parity signs")
    n = hist.total if n_shots is None else n_shots
    _check_order(k, n, 2)
    plus, minus, multiplicity = hist.sign_groups()
    total = 0
    for a, b, mult in zip(plus.tolist(), minus.tolist(), multiplicity.tolist()):
        if a + b >= 1:
            total += signed_collision_sum(a, b, k) * int(mult)
    numerator = d_a ** k * total
    return numerator / (math.factorial(k) * d_a1 * math.comb(n, k))


def delta_hat(batch: OutcomeBatch, circuit, obs_twobody: ObservableSpec) -> float:
    """Two-copy pair-collision estimator.

    Every collided pair of outcomes b contributes Tr[(U'|b><b|U)^{x2} O],
    grouped by distinct value so each weight is computed once.
    """
    hist = build_histogram(batch)
    d = 2 ** circuit.n_qubits
    if obs_twobody.dim != d * d:
        raise ValueError("two-copy observable must act on dimension d^2")
    n = hist.total
    if n < 2:
        raise ValueError("delta_hat needs at least two shots")
    mask = hist.theta >= 2
    total = 0.0
    if np.any(mask):
        _, _, cols = rotated_basis_columns(circuit, hist.values[mask])
        for i, size in enumerate(hist.theta[mask].tolist()):
            pair_vec = np.kron(cols[:, i], cols[:, i])
            total += math.comb(size, 2) * quadratic_form(obs_twobody, pair_vec)
    scale = 24 * kappa(4, d) / (d * math.comb(n, 2))
    return scale * total


def upsilon_hat(hist: CollisionHistogram, k: int, circuit, d: int,
                n_shots: int | None = None) -> np.ndarray:
    """Operator-valued collision estimator, a Hermitian d x d matrix."""
    n = hist.total if n_shots is None else n_shots
    _check_order(k, n, 1)
    out = np.zeros((d, d), dtype=complex)
    mask = hist.theta >= k
    if np.any(mask):
        _, _, cols = rotated_basis_columns(circuit, hist.values[mask])
        weights = np.array(
            [math.comb(size, k) for size in hist.theta[mask].tolist()], dtype=float
        )
        out = (cols * weights) @ cols.conj().T
    scale = kappa(k + 1, d) / (d * math.comb(n, k))
    out = scale * out
    return 0.5 * (out + out.conj().T)


@dataclass(frozen=True)
class EstimatorSet:
    """Per-unitary estimator values over a range of orders.

    ``m`` covers k = 2..t, ``gamma`` covers k = 1..t, ``lam`` covers
    k = 2..t; absent families are None.
    """

    d: int
    n_shots: int
    max_order: int
    unitary_index: int
    m: tuple[float, ...] | None = None
    gamma: tuple[float, ...] | None = None
    lam: tuple[float, ...] | None = None

    def __post_init__(self):
        for name, seq, lowest in (("m", self.m, 2), ("gamma", self.gamma, 1),
                                  ("lam", self.lam, 2)):
            if seq is not None and len(seq) != self.max_order - lowest + 1:
                raise ValueError(f"{name} must cover orders {lowest}..{self.max_order}")
            if seq is not None and any(not math.isfinite(v) for v in seq):
                raise ValueError(f"{name} contains non-finite values")
