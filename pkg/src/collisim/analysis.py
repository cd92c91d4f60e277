"""Entanglement witnesses and ratio-based spectral applications.

Two families of downstream consumers live here. The witness side turns
partial-transpose moments into entanglement tests: the Newton-identity
``D_k`` hierarchy, Hankel moment-matrix positivity, and the ``p3``-PPT
inequality. The ratio side divides an observable moment by a state moment,
which is principal component estimation, and with a ground-state projector
as the observable, virtual-cooling fidelity.

All detection flags default to strict sign tests against zero. When the
input moments carry standard errors, first-order error propagation
(covariances ignored) attaches a standard error to every derived quantity,
and a ``z_gate`` can be supplied to demand a z-score instead of a bare sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .qcore import (
    ObservableSpec,
    QuantumState,
    exact_observable_powers,
    exact_spectral_moments,
)

DEFAULT_DENOMINATOR_FLOOR = 1e-6
EXACT_DENOMINATOR_FLOOR = 1e-12


@dataclass(frozen=True)
class WitnessReport:
    """Witness values, their detection flags, and optional standard errors.

    ``d_values[k]`` holds the Newton witness ``D_k``; ``hankel_dets[k]`` and
    ``hankel_min_eigenvalues[k]`` describe the moment matrix ``B_k`` whose
    entries are the partial-transpose moments ``p[i+j+1]``. Standard-error
    maps are ``None`` when the inputs were exact.
    """

    d_values: dict[int, float] = field(default_factory=dict)
    d_detected: dict[int, bool] = field(default_factory=dict)
    d_standard_errors: dict[int, float] | None = None
    hankel_dets: dict[int, float] = field(default_factory=dict)
    hankel_min_eigenvalues: dict[int, float] = field(default_factory=dict)
    hankel_detected: dict[int, bool] = field(default_factory=dict)
    hankel_det_standard_errors: dict[int, float] | None = None
    hankel_min_eig_standard_errors: dict[int, float] | None = None
    p3ppt_value: float | None = None
    p3ppt_detected: bool | None = None
    p3ppt_standard_error: float | None = None

    @property
    def detected_any(self) -> bool:
        flags = list(self.d_detected.values()) + list(self.hankel_detected.values())
        if self.p3ppt_detected is not None:
            flags.append(self.p3ppt_detected)
        return any(flags)

    def merged_with(self, other: "WitnessReport") -> "WitnessReport":
        """Union of two reports filled in from disjoint witness families."""
        return WitnessReport(
            d_values={**self.d_values, **other.d_values},
            d_detected={**self.d_detected, **other.d_detected},
            d_standard_errors=_merge_optional(self.d_standard_errors, other.d_standard_errors),
            hankel_dets={**self.hankel_dets, **other.hankel_dets},
            hankel_min_eigenvalues={
                **self.hankel_min_eigenvalues,
                **other.hankel_min_eigenvalues,
            },
            hankel_detected={**self.hankel_detected, **other.hankel_detected},
            hankel_det_standard_errors=_merge_optional(
                self.hankel_det_standard_errors, other.hankel_det_standard_errors
            ),
            hankel_min_eig_standard_errors=_merge_optional(
                self.hankel_min_eig_standard_errors, other.hankel_min_eig_standard_errors
            ),
            p3ppt_value=self.p3ppt_value if other.p3ppt_value is None else other.p3ppt_value,
            p3ppt_detected=(
                self.p3ppt_detected if other.p3ppt_detected is None else other.p3ppt_detected
            ),
            p3ppt_standard_error=(
                self.p3ppt_standard_error
                if other.p3ppt_standard_error is None
                else other.p3ppt_standard_error
            ),
        )


def _merge_optional(a: dict | None, b: dict | None) -> dict | None:
    if a is None and b is None:
        return None
    return {**(a or {}), **(b or {})}


def _moment_arrays(p) -> tuple[np.ndarray, np.ndarray | None]:
    """Values (index k-1 is the order-k moment) and aligned standard errors."""
    if hasattr(p, "values"):
        values = np.asarray(p.values, dtype=float)
        errors = p.standard_errors
        errors = None if errors is None else np.asarray(errors, dtype=float)
    else:
        values = np.asarray(tuple(p), dtype=float)
        errors = None
    if values.size == 0 or values[0] != 1.0:
        raise ValueError("moment sequence must start with the unit first moment")
    return values, errors


def _threshold(z_gate: float, stderr: float | None) -> float:
    if z_gate == 0.0:
        return 0.0
    if stderr is None:
        raise ValueError("z-gated detection requires standard errors on the input moments")
    return z_gate * stderr


def _elementary_symmetric_chain(values: np.ndarray, k_max: int):
    """e_0..e_k of the underlying spectrum plus gradients wrt each moment.

    Newton's identities give k e_k = sum_{i=1..k} (-1)^(i-1) e_{k-i} p_i,
    and differentiating the same recursion yields the gradients, so both
    come out of one pass.
    """
    elem = [1.0]
    grads = [np.zeros(k_max)]
    for k in range(1, k_max + 1):
        total = 0.0
        grad = np.zeros(k_max)
        for i in range(1, k + 1):
            sign = 1.0 if i % 2 == 1 else -1.0
            total += sign * elem[k - i] * values[i - 1]
            grad += sign * grads[k - i] * values[i - 1]
            grad[i - 1] += sign * elem[k - i]
        elem.append(total / k)
        grads.append(grad / k)
    return elem, grads


def newton_witnesses(p_pt, k_max: int | None = None, z_gate: float = 0.0) -> WitnessReport:
    """Witnesses D_k = -k e_k of the partial-transpose spectrum, k = 1..k_max.

    A PPT state has a genuine probability spectrum on the transposed side,
    so every elementary symmetric polynomial is nonnegative and D_k <= 0;
    D_k > 0 therefore certifies entanglement. D_1 = -1 identically.
    """
    values, errors = _moment_arrays(p_pt)
    if k_max is None:
        k_max = values.size
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if k_max > values.size:
        raise ValueError(
            f"k_max={k_max} exceeds the {values.size} available moment orders"
        )
    elem, grads = _elementary_symmetric_chain(values, k_max)
    d_values: dict[int, float] = {}
    d_detected: dict[int, bool] = {}
    d_errors: dict[int, float] | None = None if errors is None else {}
    for k in range(1, k_max + 1):
        value = -k * elem[k]
        stderr = None
        if errors is not None:
            gradient = -k * grads[k]
            stderr = float(np.sqrt(np.sum((gradient * errors[: gradient.size]) ** 2)))
            d_errors[k] = stderr
        d_values[k] = value
        d_detected[k] = value > _threshold(z_gate, stderr)
    return WitnessReport(
        d_values=d_values, d_detected=d_detected, d_standard_errors=d_errors
    )


def _adjugate(mat: np.ndarray) -> np.ndarray:
    n = mat.shape[0]
    if n == 1:
        return np.ones((1, 1))
    adj = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(mat, i, axis=0), j, axis=1)
            adj[j, i] = (-1.0) ** (i + j) * np.linalg.det(minor)
    return adj


def hankel_criteria(p_pt, m: int | None = None, z_gate: float = 0.0) -> WitnessReport:
    """Hankel moment-matrix tests from partial-transpose moments up to order m.

    B_k has entries p[i+j+1] for i, j = 0..k, so the largest matrix that
    order budget m supports is k = (m-1)//2. A separable state's
    partial-transpose moments are the moments of a probability measure on
    [0, 1], which forces every B_k positive semidefinite; a negative
    determinant or minimum eigenvalue certifies entanglement.
    """
    values, errors = _moment_arrays(p_pt)
    if m is None:
        m = values.size
    if m < 1:
        raise ValueError("m must be at least 1")
    if m > values.size:
        raise ValueError(f"m={m} exceeds the {values.size} available moment orders")
    k_top = (m - 1) // 2
    dets: dict[int, float] = {}
    min_eigs: dict[int, float] = {}
    detected: dict[int, bool] = {}
    det_errors: dict[int, float] | None = None if errors is None else {}
    eig_errors: dict[int, float] | None = None if errors is None else {}
    for k in range(k_top + 1):
        idx = np.arange(k + 1)
        matrix = values[idx[:, None] + idx[None, :]]
        det = float(np.linalg.det(matrix))
        eigenvalues, eigenvectors = np.linalg.eigh(matrix)
        min_eig = float(eigenvalues[0])
        det_err = eig_err = None
        if errors is not None:
            adj = _adjugate(matrix)
            vec = eigenvectors[:, 0]
            det_grad = np.zeros(values.size)
            eig_grad = np.zeros(values.size)
            for i in range(k + 1):
                for j in range(k + 1):
                    det_grad[i + j] += adj[j, i]
                    eig_grad[i + j] += vec[i] * vec[j]
            det_err = float(np.sqrt(np.sum((det_grad * errors) ** 2)))
            eig_err = float(np.sqrt(np.sum((eig_grad * errors) ** 2)))
            det_errors[k] = det_err
            eig_errors[k] = eig_err
        dets[k] = det
        min_eigs[k] = min_eig
        detected[k] = det < -_threshold(z_gate, det_err) or min_eig < -_threshold(
            z_gate, eig_err
        )
    return WitnessReport(
        hankel_dets=dets,
        hankel_min_eigenvalues=min_eigs,
        hankel_detected=detected,
        hankel_det_standard_errors=det_errors,
        hankel_min_eig_standard_errors=eig_errors,
    )


def p3_ppt_test(p_pt, z_gate: float = 0.0) -> WitnessReport:
    """The inequality (p2^PT)^2 > p3^PT, violated by no PPT state."""
    values, errors = _moment_arrays(p_pt)
    if values.size < 3:
        raise ValueError("the p3-PPT test needs moments up to order 3")
    value = values[1] ** 2 - values[2]
    stderr = None
    if errors is not None:
        stderr = float(np.sqrt((2.0 * values[1] * errors[1]) ** 2 + errors[2] ** 2))
    return WitnessReport(
        p3ppt_value=float(value),
        p3ppt_detected=value > _threshold(z_gate, stderr),
        p3ppt_standard_error=stderr,
    )


def witness_report(
    p_pt,
    k_max: int | None = None,
    m: int | None = None,
    z_gate: float = 0.0,
) -> WitnessReport:
    """All witness families evaluated on one set of partial-transpose moments."""
    report = newton_witnesses(p_pt, k_max=k_max, z_gate=z_gate)
    report = report.merged_with(hankel_criteria(p_pt, m=m, z_gate=z_gate))
    values, _ = _moment_arrays(p_pt)
    if values.size >= 3:
        report = report.merged_with(p3_ppt_test(p_pt, z_gate=z_gate))
    return report


def pce_estimate(
    o_t: float,
    p_t: float,
    floor: float | None = None,
    p_t_stderr: float | None = None,
) -> float:
    """The ratio o_t / p_t with a guard on the denominator.

    The default floor is max(10 * stderr(p_t), 1e-6); tripping it means the
    power t is too large for the sample budget that produced ``p_t``.
    """
    if floor is None:
        floor = DEFAULT_DENOMINATOR_FLOOR
        if p_t_stderr is not None:
            floor = max(floor, 10.0 * p_t_stderr)
    if abs(p_t) < floor:
        raise ValueError(
            f"moment denominator {p_t} is below the floor {floor}: "
            "the requested power is too deep for this sample budget"
        )
    return o_t / p_t


def qvc_fidelity(
    rho: QuantumState,
    ground: QuantumState,
    t: int,
    mode: str = "exact",
    *,
    n_shots: int | None = None,
    n_unitaries: int = 1,
    seed: int | None = None,
    ensemble=None,
    trial_index: int = 0,
) -> float:
    """Fidelity <gs| rho^t |gs> / Tr(rho^t) of the virtually cooled state.

    ``mode="exact"`` evaluates both moments spectrally. ``mode="estimated"``
    runs the full single-setting estimation pipeline on ``rho`` with the
    rank-one projector onto ``ground`` as the observable and divides the
    resulting estimates; it needs ``n_shots`` and ``seed``.
    """
    if t < 1:
        raise ValueError("t must be at least 1")
    if not ground.is_pure:
        raise ValueError("the reference state must be pure")
    obs = ObservableSpec.rank_one_projector(ground.vector)
    if mode == "exact":
        numerator = exact_observable_powers(rho, obs, t)[t - 1]
        denominator = exact_spectral_moments(rho, t)[t - 1]
        return pce_estimate(numerator, denominator, floor=EXACT_DENOMINATOR_FLOOR)
    if mode != "estimated":
        raise ValueError(f"unknown mode {mode!r}")
    if n_shots is None or seed is None:
        raise ValueError("estimated mode requires n_shots and seed")
    from .pipeline import single_cbne_estimate

    moments, powers = single_cbne_estimate(
        rho,
        [obs],
        t_max=t,
        n_shots=n_shots,
        n_unitaries=n_unitaries,
        seed=seed,
        ensemble=ensemble,
        trial_index=trial_index,
    )
    return pce_estimate(powers[0][t - 1], moments.p(t))
