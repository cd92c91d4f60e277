"""Cycle-type combinatorics and the polynomial systems between collision
averages and state moments.

The forward maps (moments -> zeta, moments -> xi, moments -> gamma
coefficients) all reduce to sums over integer partitions of k weighted by
the number of permutations realizing each cycle type.  Those weights are
always generated here at runtime by :func:`enumerate_cycle_types`; none of
the low-order closed forms are transcribed as literals anywhere in this
package, which protects against copying errors in displayed equations and
makes every order up to :data:`MAX_ORDER` uniform.

The inverse maps are sequential: the top cycle (the unique partition with a
part of size k, realized by (k-1)! permutations) isolates the new unknown at
each order, and all lower-order terms are already known.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

MAX_ORDER = 8
MAX_GAMMA_ORDER = 5


@dataclass(frozen=True)
class CycleType:
    """One conjugacy class of S_k: cycle-length multiplicities and its size."""

    multiplicities: tuple[tuple[int, int], ...]  # (cycle length i, m_i), i desc
    perm_count: int

    @property
    def parts(self) -> tuple[int, ...]:
        out: list[int] = []
        for length, mult in self.multiplicities:
            out.extend([length] * mult)
        return tuple(out)

    def moment_product(self, p: Sequence[float]) -> float:
        """prod_i p_i^{m_i} with p given as (p_1, p_2, ..., p_t)."""
        prod = 1.0
        for length, mult in self.multiplicities:
            prod *= p[length - 1] ** mult
        return prod


def _partitions(k: int, max_part: int) -> list[tuple[int, ...]]:
    if k == 0:
        return [()]
    out = []
    for first in range(min(k, max_part), 0, -1):
        for rest in _partitions(k - first, first):
            out.append((first,) + rest)
    return out


@lru_cache(maxsize=None)
def enumerate_cycle_types(k: int) -> tuple[CycleType, ...]:
    """All cycle types of S_k with their permutation counts.

    The counts are k! / prod_i (i^{m_i} m_i!) and always sum to k!.
    """
    if not 0 <= k <= MAX_ORDER:
        raise ValueError(f"order {k} outside supported range 0..{MAX_ORDER}")
    types = []
    for parts in _partitions(k, k):
        mult: dict[int, int] = {}
        for part in parts:
            mult[part] = mult.get(part, 0) + 1
        denom = 1
        for length, m in mult.items():
            denom *= length ** m * math.factorial(m)
        count = math.factorial(k) // denom
        types.append(CycleType(tuple(sorted(mult.items(), reverse=True)), count))
    return tuple(types)


def cycle_type_sum(p: Sequence[float], m: int) -> float:
    """sum over S_m of the per-cycle moment products, i.e. m! * zeta_m."""
    return float(sum(ct.perm_count * ct.moment_product(p) for ct in enumerate_cycle_types(m)))


@dataclass(frozen=True)
class MomentSet:
    """Moments p_1..p_t with p_1 = 1, plus estimation metadata.

    Estimated values are deliberately left unclamped: statistical noise can
    push them outside [d^{1-t}, 1], and truncating would bias everything
    built on top.  Use :meth:`is_physical` to flag such sets instead.
    """

    values: tuple[float, ...]
    estimated: bool = False
    standard_errors: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.values or self.values[0] != 1.0:
            raise ValueError("a MomentSet starts at p_1 = 1")
        if self.standard_errors is not None and len(self.standard_errors) != len(self.values):
            raise ValueError("standard_errors length must match values")

    @classmethod
    def from_higher_orders(cls, higher: Sequence[float], estimated: bool = False,
                           standard_errors: Sequence[float] | None = None) -> "MomentSet":
        """Build from (p_2, ..., p_t), prepending the exact p_1 = 1."""
        errs = None if standard_errors is None else (0.0, *standard_errors)
        return cls((1.0, *map(float, higher)), estimated, errs)

    @property
    def order(self) -> int:
        return len(self.values)

    def p(self, k: int) -> float:
        if not 1 <= k <= self.order:
            raise ValueError(f"moment order {k} not in 1..{self.order}")
        return self.values[k - 1]

    def is_physical(self, d: int | None = None, atol: float = 1e-9) -> bool:
        """True when the values could be moments of a d-dimensional state."""
        prev = 1.0
        for t, value in enumerate(self.values[1:], start=2):
            lower = d ** (1 - t) if d is not None else 0.0
            if value > prev + atol or value < lower - atol:
                return False
            prev = value
        return True


class PTMomentSet(MomentSet):
    """Moments of a partial transpose; values may legitimately be negative
    at odd orders, so only the upper bound is meaningful here."""

    def is_physical(self, d: int | None = None, atol: float = 1e-9) -> bool:
        return all(v <= 1.0 + atol for v in self.values)


def _moment_values(p) -> tuple[float, ...]:
    if isinstance(p, MomentSet):
        return p.values
    values = tuple(float(x) for x in p)
    if not values or values[0] != 1.0:
        raise ValueError("moment sequence must start at p_1 = 1")
    return values


# -- forward maps --------------------------------------------------------------


def zeta_from_moments(p, k: int) -> float:
    """zeta_k = (1/k!) * sum over cycle types of perm_count * prod p_i^{m_i}."""
    values = _moment_values(p)
    if k > len(values):
        raise ValueError(f"zeta_{k} needs moments up to order {k}")
    return cycle_type_sum(values, k) / math.factorial(k)


def xi_from(p, o: Sequence[float], k: int) -> float:
    """Forward map from moments and observable powers to xi_k.

    ``o`` is (Tr(O rho^0), ..., Tr(O rho^k)) with o[0] = Tr(O).  The slot
    carrying O sits on a cycle of length ell + 1 chosen in C(k, ell) * ell!
    ways; the remaining k - ell slots contribute a free cycle-type sum.
    """
    values = _moment_values(p)
    if len(o) < k + 1:
        raise ValueError(f"xi_{k} needs observable powers 0..{k}")
    if k + 1 > MAX_ORDER:
        raise ValueError(f"order {k} outside supported range")
    total = 0.0
    for ell in range(k + 1):
        weight = math.comb(k, ell) * math.factorial(ell) * cycle_type_sum(values, k - ell)
        total += weight * o[ell]
    return total / math.factorial(k + 1)


def gamma_expansion_coefficients(k: int, p=None):
    """Expansion of the operator gamma_k(rho) over the basis {rho^0..rho^k}.

    Without ``p``: returns, per power ell, the list of (rational weight,
    partition) monomials making up the coefficient c_ell as a polynomial in
    the moments.  With ``p``: returns the numeric coefficients directly.
    """
    if not 1 <= k <= MAX_GAMMA_ORDER:
        raise ValueError(f"gamma expansion supported for k in 1..{MAX_GAMMA_ORDER}")
    symbolic = []
    for ell in range(k + 1):
        scale = math.comb(k, ell) * math.factorial(ell) / math.factorial(k + 1)
        monomials = [
            (scale * ct.perm_count, ct.parts) for ct in enumerate_cycle_types(k - ell)
        ]
        symbolic.append(monomials)
    if p is None:
        return symbolic
    values = _moment_values(p)
    numeric = []
    for monomials in symbolic:
        coeff = 0.0
        for weight, parts in monomials:
            prod = weight
            for part in parts:
                prod *= values[part - 1]
            coeff += prod
        numeric.append(coeff)
    return numeric


# -- inverse maps ---------------------------------------------------------------


def moments_from_zeta(zeta: Sequence[float], estimated: bool = False,
                      standard_errors: Sequence[float] | None = None) -> MomentSet:
    """Recover (p_2, ..., p_t) from (zeta_2, ..., zeta_t), sequentially.

    At order k the single-k-cycle type contributes (k-1)! * p_k and every
    other cycle type involves only lower orders, so
    p_k = k * zeta_k - (1/(k-1)!) * sum over the remaining types.
    """
    t = len(zeta) + 1
    if t > MAX_ORDER:
        raise ValueError(f"order {t} outside supported range 1..{MAX_ORDER}")
    p = [1.0] * t
    for k in range(2, t + 1):
        rest = 0.0
        for ct in enumerate_cycle_types(k):
            if ct.parts == (k,):
                continue
            rest += ct.perm_count * ct.moment_product(p)
        p[k - 1] = k * float(zeta[k - 2]) - rest / math.factorial(k - 1)
    errs = None
    if standard_errors is not None:
        errs = (0.0, *standard_errors)
    return MomentSet(tuple(p), estimated=estimated, standard_errors=errs)


def pt_moments_from_zeta(zeta_pt: Sequence[float], estimated: bool = False,
                         standard_errors: Sequence[float] | None = None) -> PTMomentSet:
    """Same polynomial system as :func:`moments_from_zeta`, PT-flavored.

    The partial transpose preserves the trace, so p_1^PT = 1 and the
    cycle-type coefficients are identical; only the interpretation (and the
    physicality range) differs.
    """
    base = moments_from_zeta(zeta_pt, estimated=estimated, standard_errors=standard_errors)
    return PTMomentSet(base.values, base.estimated, base.standard_errors)


def observable_powers_from_xi(xi: Sequence[float], p, trace_o: float, d: int,
                              t: int | None = None, mode: str = "traceless") -> list[float]:
    """Recover (Tr(O rho), ..., Tr(O rho^t)) from xi_1..xi_t and moments.

    mode="traceless": the xi values belong to the traceless part O_0, so the
    chain starts at Tr(O_0) = 0 and each solution is shifted back by
    Tr(O) p_k / d at the end.  mode="direct": the xi values belong to O
    itself and the chain starts at Tr(O).
    """
    values = _moment_values(p)
    if t is None:
        t = len(xi)
    if t > len(xi):
        raise ValueError(f"need xi values up to order {t}")
    if t + 1 > MAX_ORDER:
        raise ValueError(f"order {t} outside supported range")
    if len(values) < t:
        raise ValueError(f"need moments up to order {t}")
    if mode not in ("traceless", "direct"):
        raise ValueError(f"unknown mode {mode!r}")
    o = [0.0 if mode == "traceless" else float(trace_o)]
    for k in range(1, t + 1):
        acc = 0.0
        for ell in range(k):
            weight = math.comb(k, ell) * math.factorial(ell) * cycle_type_sum(values, k - ell)
            acc += weight * o[ell]
        o.append((math.factorial(k + 1) * float(xi[k - 1]) - acc) / math.factorial(k))
    out = o[1:]
    if mode == "traceless":
        out = [ok + float(trace_o) * values[k - 1] / d for k, ok in enumerate(out, start=1)]
    return out
