"""End-to-end estimation engine.

One work unit is one (unitary, trial) pair: draw a circuit from the
ensemble, simulate the measurement record, build the collision estimators.
Per trial, unit results are averaged over the unitaries in ascending order
and pushed through the polynomial inversion, giving per-trial moment and
observable-power estimates. Everything is deterministic given the master
seed because each unit owns its own counter-based substream and the
reduction order is fixed regardless of how many worker threads run.

This module does no I/O and knows nothing about configuration files; the
command-line layer wraps it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .estimators import build_histogram, gamma_hat, lambda_hat, m_hat
from .inversion import (
    MomentSet,
    PTMomentSet,
    moments_from_zeta,
    observable_powers_from_xi,
    pt_moments_from_zeta,
    zeta_from_moments,
    xi_from,
)
from .qcore import (
    BipartitionSpec,
    ObservableSpec,
    QuantumState,
    exact_observable_powers,
    exact_spectral_moments,
    partial_transpose,
)
from .randomness import SeedSpec, UnitaryEnsembleConfig, sample_circuit
from .sampler import born_probabilities, ptme_joint_probabilities, sample_outcomes


@dataclass(frozen=True)
class CBNETrialData:
    """Per-trial estimates from collision estimation runs.

    Arrays are indexed by trial along the first axis. ``zeta_hat`` and
    ``p_hat`` hold orders 2..t_max (column k-2); ``xi_hat`` and ``o_hat``
    have one leading axis per observable and hold orders 1..t_max
    (column k-1).
    """

    t_max: int
    zeta_hat: np.ndarray
    p_hat: np.ndarray
    xi_hat: np.ndarray
    o_hat: np.ndarray

    @property
    def n_trials(self) -> int:
        return self.zeta_hat.shape[0]

    def moment_set(self, trial: int) -> MomentSet:
        return MomentSet((1.0, *self.p_hat[trial]), estimated=True)


@dataclass(frozen=True)
class PTMETrialData:
    """Per-trial partial-transpose moment estimates, orders 2..t_max."""

    t_max: int
    zeta_pt_hat: np.ndarray
    p_pt_hat: np.ndarray

    @property
    def n_trials(self) -> int:
        return self.zeta_pt_hat.shape[0]

    def moment_set(self, trial: int) -> PTMomentSet:
        return PTMomentSet((1.0, *self.p_pt_hat[trial]), estimated=True)


def default_ensemble(n_qubits: int, depth: int | None = None) -> UnitaryEnsembleConfig:
    """Brickwork at the default depth; single qubits fall back to Haar."""
    if n_qubits >= 2:
        return UnitaryEnsembleConfig("brickwork", n_qubits, depth)
    return UnitaryEnsembleConfig("global_haar", n_qubits)


def _run_units(fn, keys, threads: int):
    """Evaluate fn over keys, returning results in key order.

    Thread scheduling never reorders anything: results are collected by
    submission index, so any thread count yields identical output.
    """
    if threads <= 1:
        return [fn(*key) for key in keys]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, *key) for key in keys]
        return [future.result() for future in futures]


def _cbne_unit(state, ensemble, t_max, n_shots, observables, traceless, seed_spec,
               unitary_index, trial_index):
    rng = seed_spec.stream(unitary_index, trial_index)
    circuit = sample_circuit(ensemble, rng)
    table = born_probabilities(state, circuit)
    batch = sample_outcomes(table, n_shots, rng, unitary_index=unitary_index)
    hist = build_histogram(batch)
    d = state.dim
    m_values = np.array([m_hat(hist, k, d) for k in range(2, t_max + 1)])
    gamma_values = np.array([
        [gamma_hat(hist, k, obs, circuit, d, traceless=traceless)
         for k in range(1, t_max + 1)]
        for obs in observables
    ]).reshape(len(observables), t_max)
    return m_values, gamma_values


def run_cbne_trials(
    state: QuantumState,
    observables=(),
    *,
    t_max: int,
    n_shots: int,
    n_unitaries: int = 1,
    trials: int = 1,
    seed: int = 0,
    ensemble: UnitaryEnsembleConfig | None = None,
    traceless: bool = True,
    threads: int = 1,
    trial_offset: int = 0,
) -> CBNETrialData:
    """Collision estimation of state moments and observable powers.

    The measurement record of a unit is drawn before any observable is
    consulted, so adding or removing observables cannot change the sampled
    data, and every observable is postprocessed from the same record.
    """
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    if trials < 1 or n_unitaries < 1:
        raise ValueError("trials and n_unitaries must be positive")
    observables = list(observables)
    if ensemble is None:
        ensemble = default_ensemble(state.n_qubits)
    if ensemble.n_qubits != state.n_qubits:
        raise ValueError("ensemble size does not match the state")
    seed_spec = SeedSpec(seed)
    keys = [
        (trial_offset + t, u)
        for t in range(trials)
        for u in range(n_unitaries)
    ]

    def unit(trial_index, unitary_index):
        return _cbne_unit(state, ensemble, t_max, n_shots, observables,
                          traceless, seed_spec, unitary_index, trial_index)

    results = _run_units(unit, keys, threads)

    d = state.dim
    zeta_rows = np.empty((trials, t_max - 1))
    p_rows = np.empty((trials, t_max - 1))
    xi_rows = np.empty((len(observables), trials, t_max))
    o_rows = np.empty((len(observables), trials, t_max))
    for t in range(trials):
        block = results[t * n_unitaries:(t + 1) * n_unitaries]
        zeta = np.mean([m for m, _ in block], axis=0)
        moments = moments_from_zeta(zeta, estimated=True)
        zeta_rows[t] = zeta
        p_rows[t] = moments.values[1:]
        for i, obs in enumerate(observables):
            xi = np.mean([g[i] for _, g in block], axis=0)
            powers = observable_powers_from_xi(
                xi, moments, obs.trace, d,
                mode="traceless" if traceless else "direct",
            )
            xi_rows[i, t] = xi
            o_rows[i, t] = powers
    return CBNETrialData(t_max, zeta_rows, p_rows, xi_rows, o_rows)


def single_cbne_estimate(
    state: QuantumState,
    observables,
    *,
    t_max: int,
    n_shots: int,
    n_unitaries: int = 1,
    seed: int = 0,
    ensemble: UnitaryEnsembleConfig | None = None,
    trial_index: int = 0,
    traceless: bool = True,
):
    """One trial's moment set and observable powers (orders 1..t_max)."""
    data = run_cbne_trials(
        state,
        observables,
        t_max=t_max,
        n_shots=n_shots,
        n_unitaries=n_unitaries,
        trials=1,
        seed=seed,
        ensemble=ensemble,
        traceless=traceless,
        trial_offset=trial_index,
    )
    powers = [data.o_hat[i, 0] for i in range(data.o_hat.shape[0])]
    return data.moment_set(0), powers


def _ptme_unit(state, part, ensemble, t_max, n_shots, seed_spec,
               unitary_index, trial_index):
    rng = seed_spec.stream(unitary_index, trial_index)
    circuit_on_a = sample_circuit(ensemble, rng)
    table = ptme_joint_probabilities(state, circuit_on_a, part)
    batch = sample_outcomes(table, n_shots, rng, unitary_index=unitary_index)
    hist = build_histogram(batch)
    return np.array([
        lambda_hat(hist, k, part.dim_a, part.dim_a1) for k in range(2, t_max + 1)
    ])


def run_ptme_trials(
    state: QuantumState,
    part: BipartitionSpec,
    *,
    t_max: int,
    n_shots: int,
    n_unitaries: int = 1,
    trials: int = 1,
    seed: int = 0,
    ensemble: UnitaryEnsembleConfig | None = None,
    threads: int = 1,
    trial_offset: int = 0,
) -> PTMETrialData:
    """Partial-transpose moment estimation with subsystem-local unitaries."""
    if t_max < 2:
        raise ValueError("partial-transpose estimation starts at order 2")
    if trials < 1 or n_unitaries < 1:
        raise ValueError("trials and n_unitaries must be positive")
    n_a = len(part.qubits_a)
    if ensemble is None:
        ensemble = default_ensemble(n_a)
    if ensemble.n_qubits != n_a:
        raise ValueError("ensemble must act on the A subsystem")
    seed_spec = SeedSpec(seed)
    keys = [
        (trial_offset + t, u)
        for t in range(trials)
        for u in range(n_unitaries)
    ]

    def unit(trial_index, unitary_index):
        return _ptme_unit(state, part, ensemble, t_max, n_shots, seed_spec,
                          unitary_index, trial_index)

    results = _run_units(unit, keys, threads)

    zeta_rows = np.empty((trials, t_max - 1))
    p_rows = np.empty((trials, t_max - 1))
    for t in range(trials):
        block = results[t * n_unitaries:(t + 1) * n_unitaries]
        zeta_pt = np.mean(block, axis=0)
        moments = pt_moments_from_zeta(zeta_pt, estimated=True)
        zeta_rows[t] = zeta_pt
        p_rows[t] = moments.values[1:]
    return PTMETrialData(t_max, zeta_rows, p_rows)


# -- exact references ----------------------------------------------------------


def exact_cbne_references(state: QuantumState, observables, t_max: int) -> dict:
    """Spectrally exact values for everything the estimation run targets.

    Keys: ``p`` (orders 1..t), ``zeta`` (2..t), and per-observable lists
    ``o`` and ``xi`` (1..t each).
    """
    p = exact_spectral_moments(state, t_max)
    p_seq = (1.0, *p[1:].tolist())
    zeta = [zeta_from_moments(p_seq, k) for k in range(2, t_max + 1)]
    refs = {"p": p, "zeta": np.array(zeta), "o": [], "xi": []}
    for obs in observables:
        o = exact_observable_powers(state, obs, t_max)
        o_seq = (float(obs.trace), *o.tolist())
        xi = [xi_from(p_seq, o_seq, k) for k in range(1, t_max + 1)]
        refs["o"].append(o)
        refs["xi"].append(np.array(xi))
    return refs


def exact_pt_references(state: QuantumState, part: BipartitionSpec, t_max: int) -> dict:
    """Exact partial-transpose moments (``p_pt``, 1..t; ``zeta_pt``, 2..t)."""
    eigenvalues = np.linalg.eigvalsh(partial_transpose(state, part))
    p_pt = np.array([float(np.sum(eigenvalues ** k)) for k in range(1, t_max + 1)])
    p_seq = (1.0, *p_pt[1:].tolist())
    zeta_pt = [zeta_from_moments(p_seq, k) for k in range(2, t_max + 1)]
    return {"p_pt": p_pt, "zeta_pt": np.array(zeta_pt)}


def trial_statistics(values: np.ndarray) -> tuple[float, float, float]:
    """Mean, standard deviation (ddof=1), and standard error of the mean."""
    values = np.asarray(values, dtype=float)
    mean = float(np.mean(values))
    if values.size < 2:
        return mean, 0.0, 0.0
    std = float(np.std(values, ddof=1))
    return mean, std, std / float(np.sqrt(values.size))
