"""Config-driven experiment runner.

``collisim <task> --config FILE [--seed N] [--out PATH] [--threads N]
[--format csv|json] [--figures]`` reads one structured config file, runs the
requested estimation task through the pipeline engine, and writes a CSV of
per-trial results (columns: task, quantity, order, trial, estimate,
exact_value, n, N_U, N_M, seed) plus a JSON summary carrying aggregated
statistics, the resolved config, its hash, and the library version. With
``--figures`` the report step also renders plots from the freshly written
rows. Exit codes: 0 success, 2 config error, 3 size-cap violation.

Flags override file values; ``COLLISIM_THREADS`` sets the default worker
count. Identical config and seed produce byte-identical CSV regardless of
thread count.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from . import __version__, analysis, models, pipeline
from .qcore import BipartitionSpec, ObservableSpec, QuantumState, SizeCapError
from .randomness import SeedSpec, UnitaryEnsembleConfig
from .sampler import extend_with_ancillas

THREADS_ENV_VAR = "COLLISIM_THREADS"

CSV_COLUMNS = (
    "task", "quantity", "order", "trial", "estimate", "exact_value",
    "n", "N_U", "N_M", "seed",
)

TASKS = ("moments", "observable", "pce", "qvc", "pt_moments", "witness", "sweep")
_CBNE_TASKS = ("moments", "observable", "pce", "qvc")
_PTME_TASKS = ("pt_moments", "witness")

_STATE_KINDS = (
    "tfim_ground", "tfim_gibbs", "heisenberg_ground", "heisenberg_gibbs",
    "bell", "ghz", "product_random", "gapped_random", "computational_zero",
)

_SWEEP_KEYS = ("n", "n_shots", "n_unitaries", "t_max", "beta", "depolarize", "n_ancilla")
_SWEEP_COLUMN_KEYS = {"n": "n", "n_shots": "N_M", "n_unitaries": "N_U"}


class ConfigError(ValueError):
    """A configuration file or override that cannot be run."""


# -- config schema -------------------------------------------------------------


def _require_mapping(value, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a mapping")
    return value


def _reject_unknown(mapping: dict, allowed, where: str) -> None:
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _as_int(value, key: str, minimum=None, maximum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}")
    if maximum is not None and value > maximum:
        raise ConfigError(f"{key} must be <= {maximum}, got {value}")
    return value


def _as_float(value, key: str, lo=None, hi=None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    value = float(value)
    if lo is not None and value < lo:
        raise ConfigError(f"{key} must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(f"{key} must be <= {hi}, got {value}")
    return value


def _as_choice(value, key: str, choices) -> str:
    if value not in choices:
        raise ConfigError(f"{key} must be one of {', '.join(choices)}; got {value!r}")
    return value


@dataclass(frozen=True)
class StateConfig:
    kind: str
    n: int
    coupling: float = 1.0
    field: float = 1.0
    beta: float = 1.0
    depolarize: float = 0.0
    n_ancilla: int = 0
    gap: float = 0.3
    top_weight: float = 0.4


@dataclass(frozen=True)
class ObservableConfig:
    name: str
    kind: str
    terms: tuple = ()


@dataclass(frozen=True)
class PartitionConfig:
    n_a: int
    n_b: int


@dataclass(frozen=True)
class WitnessConfig:
    k_max: int | None = None
    z_gate: float = 0.0


@dataclass(frozen=True)
class SweepConfig:
    task: str
    grid: tuple = ()


@dataclass(frozen=True)
class OutputConfig:
    path: str | None = None
    format: str = "csv"
    figures: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully validated description of one experiment."""

    task: str
    state: StateConfig
    seed: int = 0
    trials: int = 1
    n_unitaries: int = 1
    n_shots: int = 1000
    t_max: int = 2
    mode: str = "traceless"
    threads: int | None = None
    ensemble_kind: str = "brickwork"
    ensemble_depth: int | None = None
    observables: tuple = ()
    pce_t: int | None = None
    qvc_t_values: tuple = ()
    partition: PartitionConfig | None = None
    witness: WitnessConfig = field(default_factory=WitnessConfig)
    sweep: SweepConfig | None = None
    output: OutputConfig = field(default_factory=OutputConfig)

    def resolved_threads(self) -> int:
        if self.threads is not None:
            return self.threads
        env = os.environ.get(THREADS_ENV_VAR)
        if env:
            try:
                value = int(env)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got {env!r}")
            if value < 1:
                raise ConfigError(f"{THREADS_ENV_VAR} must be positive")
            return value
        return 1

    def identity_dict(self) -> dict:
        """The config content that defines the experiment.

        Execution details (thread count, output destination) are excluded:
        they cannot change any estimate, so they do not change the hash.
        """
        doc = {
            "task": self.task,
            "seed": self.seed,
            "trials": self.trials,
            "n_unitaries": self.n_unitaries,
            "n_shots": self.n_shots,
            "t_max": self.t_max,
            "mode": self.mode,
            "ensemble": {"kind": self.ensemble_kind, "depth": self.ensemble_depth},
            "state": {
                "kind": self.state.kind,
                "n": self.state.n,
                "coupling": self.state.coupling,
                "field": self.state.field,
                "beta": self.state.beta,
                "depolarize": self.state.depolarize,
                "n_ancilla": self.state.n_ancilla,
                "gap": self.state.gap,
                "top_weight": self.state.top_weight,
            },
            "observables": [
                {"name": o.name, "kind": o.kind, "terms": [list(t) for t in o.terms]}
                for o in self.observables
            ],
        }
        if self.pce_t is not None:
            doc["pce"] = {"t": self.pce_t}
        if self.qvc_t_values:
            doc["qvc"] = {"t_values": list(self.qvc_t_values)}
        if self.partition is not None:
            doc["partition"] = {"n_a": self.partition.n_a, "n_b": self.partition.n_b}
        if self.task in _PTME_TASKS or self.witness != WitnessConfig():
            doc["witness"] = {"k_max": self.witness.k_max, "z_gate": self.witness.z_gate}
        if self.sweep is not None:
            doc["sweep"] = {
                "task": self.sweep.task,
                "grid": {key: list(values) for key, values in self.sweep.grid},
            }
        return doc

    def config_hash(self) -> str:
        canon = json.dumps(self.identity_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _parse_state(raw) -> StateConfig:
    raw = _require_mapping(raw, "state")
    _reject_unknown(raw, ("kind", "n", "coupling", "field", "beta", "depolarize",
                          "n_ancilla", "gap", "top_weight"), "state")
    if "kind" not in raw or "n" not in raw:
        raise ConfigError("state needs at least kind and n")
    kind = _as_choice(raw["kind"], "state.kind", _STATE_KINDS)
    cfg = StateConfig(
        kind=kind,
        n=_as_int(raw["n"], "state.n", minimum=1),
        coupling=_as_float(raw.get("coupling", 1.0), "state.coupling"),
        field=_as_float(raw.get("field", 1.0), "state.field"),
        beta=_as_float(raw.get("beta", 1.0), "state.beta", lo=0.0),
        depolarize=_as_float(raw.get("depolarize", 0.0), "state.depolarize", lo=0.0, hi=1.0),
        n_ancilla=_as_int(raw.get("n_ancilla", 0), "state.n_ancilla", minimum=0),
        gap=_as_float(raw.get("gap", 0.3), "state.gap", lo=0.0, hi=1.0),
        top_weight=_as_float(raw.get("top_weight", 0.4), "state.top_weight", lo=0.0, hi=1.0),
    )
    if cfg.depolarize > 0.0 and (kind.endswith("_gibbs") or kind == "gapped_random"):
        raise ConfigError("depolarize applies only to pure state kinds")
    if kind == "bell" and cfg.n != 2:
        raise ConfigError("the bell state needs state.n = 2")
    if kind == "ghz" and cfg.n < 2:
        raise ConfigError("a ghz state needs state.n >= 2")
    return cfg


def _parse_observables(raw, n_qubits: int) -> tuple:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise ConfigError("observables must be a list")
    seen = set()
    out = []
    for i, item in enumerate(raw):
        item = _require_mapping(item, f"observables[{i}]")
        _reject_unknown(item, ("name", "kind", "terms"), f"observables[{i}]")
        name = item.get("name", f"obs{i}")
        if not isinstance(name, str) or not name or any(c in name for c in ":,[]"):
            raise ConfigError(f"observables[{i}].name must be a plain string")
        if name in seen:
            raise ConfigError(f"duplicate observable name {name!r}")
        seen.add(name)
        kind = _as_choice(item.get("kind", "pauli_sum"), f"observables[{i}].kind",
                          ("pauli_sum", "identity"))
        terms = []
        if kind == "pauli_sum":
            raw_terms = item.get("terms")
            if not isinstance(raw_terms, list) or not raw_terms:
                raise ConfigError(f"observables[{i}] needs a nonempty terms list")
            for j, term in enumerate(raw_terms):
                if (not isinstance(term, list) or len(term) != 2
                        or not isinstance(term[1], str)):
                    raise ConfigError(
                        f"observables[{i}].terms[{j}] must be [coefficient, string]"
                    )
                coeff = _as_float(term[0], f"observables[{i}].terms[{j}][0]")
                string = term[1].upper()
                if len(string) != n_qubits or any(c not in "IXYZ" for c in string):
                    raise ConfigError(
                        f"observables[{i}].terms[{j}] string must be {n_qubits} "
                        "characters over I, X, Y, Z"
                    )
                terms.append((coeff, string))
        elif "terms" in item:
            raise ConfigError(f"observables[{i}]: identity takes no terms")
        out.append(ObservableConfig(name=name, kind=kind, terms=tuple(terms)))
    return tuple(out)


def _parse_sweep(raw) -> SweepConfig:
    raw = _require_mapping(raw, "sweep")
    _reject_unknown(raw, ("task", "grid"), "sweep")
    if "task" not in raw:
        raise ConfigError("sweep needs a task to run per cell")
    task = _as_choice(raw["task"], "sweep.task", tuple(t for t in TASKS if t != "sweep"))
    grid_raw = _require_mapping(raw.get("grid"), "sweep.grid")
    if not grid_raw:
        raise ConfigError("sweep.grid must name at least one parameter")
    grid = []
    for key, values in grid_raw.items():
        if key not in _SWEEP_KEYS:
            raise ConfigError(
                f"sweep.grid key {key!r} not supported; choose from {', '.join(_SWEEP_KEYS)}"
            )
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.grid.{key} must be a nonempty list")
        if key in ("beta", "depolarize"):
            values = [_as_float(v, f"sweep.grid.{key}") for v in values]
        else:
            values = [_as_int(v, f"sweep.grid.{key}", minimum=0) for v in values]
        grid.append((key, tuple(values)))
    return SweepConfig(task=task, grid=tuple(grid))


def parse_config(doc: dict, cli_task: str | None = None) -> ExperimentConfig:
    """Validate a raw config mapping into an :class:`ExperimentConfig`."""
    doc = _require_mapping(doc, "config")
    _reject_unknown(doc, ("task", "seed", "trials", "n_unitaries", "n_shots", "t_max",
                          "mode", "threads", "state", "ensemble", "observables",
                          "pce", "qvc", "partition", "witness", "sweep", "output"),
                    "config")
    task = doc.get("task")
    if task is not None:
        task = _as_choice(task, "task", TASKS)
    if cli_task is not None:
        if task is not None and task != cli_task:
            raise ConfigError(
                f"config file says task {task!r} but the command line says {cli_task!r}"
            )
        task = cli_task
    if task is None:
        raise ConfigError("no task given (config key 'task' or command line)")

    if "state" not in doc:
        raise ConfigError("config needs a state section")
    state = _parse_state(doc["state"])

    ensemble_raw = _require_mapping(doc.get("ensemble"), "ensemble")
    _reject_unknown(ensemble_raw, ("kind", "depth"), "ensemble")
    ensemble_kind = _as_choice(ensemble_raw.get("kind", "brickwork"), "ensemble.kind",
                               ("brickwork", "global_haar"))
    ensemble_depth = ensemble_raw.get("depth")
    if ensemble_depth is not None:
        ensemble_depth = _as_int(ensemble_depth, "ensemble.depth", minimum=1)

    t_max = _as_int(doc.get("t_max", 2), "t_max", minimum=1)
    n_shots = _as_int(doc.get("n_shots", 1000), "n_shots", minimum=1)
    if n_shots < t_max:
        raise ConfigError("n_shots must be at least t_max for order-t collisions to exist")

    observables = _parse_observables(doc.get("observables"), state.n)

    pce_raw = _require_mapping(doc.get("pce"), "pce")
    _reject_unknown(pce_raw, ("t",), "pce")
    pce_t = None
    if pce_raw:
        if "t" not in pce_raw:
            raise ConfigError("pce section needs t")
        pce_t = _as_int(pce_raw["t"], "pce.t", minimum=1, maximum=t_max)

    qvc_raw = _require_mapping(doc.get("qvc"), "qvc")
    _reject_unknown(qvc_raw, ("t_values",), "qvc")
    qvc_t_values = ()
    if qvc_raw:
        values = qvc_raw.get("t_values")
        if not isinstance(values, list) or not values:
            raise ConfigError("qvc.t_values must be a nonempty list")
        qvc_t_values = tuple(
            _as_int(v, "qvc.t_values", minimum=1, maximum=t_max) for v in values
        )

    partition = None
    if doc.get("partition") is not None:
        part_raw = _require_mapping(doc["partition"], "partition")
        _reject_unknown(part_raw, ("n_a", "n_b"), "partition")
        if "n_a" not in part_raw or "n_b" not in part_raw:
            raise ConfigError("partition needs n_a and n_b")
        partition = PartitionConfig(
            n_a=_as_int(part_raw["n_a"], "partition.n_a", minimum=1),
            n_b=_as_int(part_raw["n_b"], "partition.n_b", minimum=1),
        )

    witness_raw = _require_mapping(doc.get("witness"), "witness")
    _reject_unknown(witness_raw, ("k_max", "z_gate"), "witness")
    witness = WitnessConfig(
        k_max=None if witness_raw.get("k_max") is None
        else _as_int(witness_raw["k_max"], "witness.k_max", minimum=1),
        z_gate=_as_float(witness_raw.get("z_gate", 0.0), "witness.z_gate", lo=0.0),
    )

    sweep = _parse_sweep(doc["sweep"]) if doc.get("sweep") is not None else None

    output_raw = _require_mapping(doc.get("output"), "output")
    _reject_unknown(output_raw, ("path", "format", "figures"), "output")
    out_path = output_raw.get("path")
    if out_path is not None and not isinstance(out_path, str):
        raise ConfigError("output.path must be a string")
    out_format = _as_choice(output_raw.get("format", "csv"), "output.format",
                            ("csv", "json"))
    figures = output_raw.get("figures", False)
    if not isinstance(figures, bool):
        raise ConfigError("output.figures must be a boolean")

    threads = doc.get("threads")
    if threads is not None:
        threads = _as_int(threads, "threads", minimum=1)

    config = ExperimentConfig(
        task=task,
        state=state,
        seed=_as_int(doc.get("seed", 0), "seed", minimum=0, maximum=2 ** 64 - 1),
        trials=_as_int(doc.get("trials", 1), "trials", minimum=1),
        n_unitaries=_as_int(doc.get("n_unitaries", 1), "n_unitaries", minimum=1),
        n_shots=n_shots,
        t_max=t_max,
        mode=_as_choice(doc.get("mode", "traceless"), "mode", ("traceless", "direct")),
        threads=threads,
        ensemble_kind=ensemble_kind,
        ensemble_depth=ensemble_depth,
        observables=observables,
        pce_t=pce_t,
        qvc_t_values=qvc_t_values,
        partition=partition,
        witness=witness,
        sweep=sweep,
        output=OutputConfig(path=out_path, format=out_format, figures=figures),
    )
    _check_task_requirements(config)
    return config


def _check_task_requirements(config: ExperimentConfig) -> None:
    task = config.task
    if task in ("moments", "pt_moments", "witness") and config.t_max < 2:
        raise ConfigError(f"task {task} needs t_max >= 2")
    if task in ("observable", "pce") and not config.observables:
        raise ConfigError(f"task {task} needs at least one observable")
    if task in ("moments", "pt_moments", "witness", "qvc") and config.observables:
        raise ConfigError(f"task {task} does not take observables")
    if task == "pce" and config.pce_t is None:
        raise ConfigError("task pce needs pce.t")
    if task == "qvc" and not config.state.kind.endswith("_gibbs"):
        raise ConfigError("task qvc needs a Gibbs state kind (the reference is its "
                          "Hamiltonian's ground state)")
    if task in _PTME_TASKS:
        if config.partition is None:
            raise ConfigError(f"task {task} needs a partition section")
        part = config.partition
        if part.n_a + part.n_b != config.state.n:
            raise ConfigError("partition.n_a + partition.n_b must equal state.n")
        if part.n_a < part.n_b:
            raise ConfigError("partition needs n_a >= n_b")
        k_max = config.witness.k_max
        if k_max is not None and k_max > config.t_max:
            raise ConfigError("witness.k_max cannot exceed t_max")
    if task == "sweep":
        if config.sweep is None:
            raise ConfigError("task sweep needs a sweep section")
        probe = replace(config, task=config.sweep.task, sweep=None)
        for key, values in config.sweep.grid:
            probe = _apply_sweep_value(probe, key, values[0])
        _check_task_requirements(probe)


def load_config(
    path: str,
    cli_task: str | None = None,
    seed: int | None = None,
    out: str | None = None,
    threads: int | None = None,
    out_format: str | None = None,
    figures: bool | None = None,
) -> ExperimentConfig:
    """Read a YAML config file and apply command-line overrides."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            doc = yaml.safe_load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}")
    config = parse_config(doc, cli_task)
    if seed is not None:
        config = replace(config, seed=_as_int(seed, "--seed", minimum=0,
                                              maximum=2 ** 64 - 1))
    if threads is not None:
        config = replace(config, threads=_as_int(threads, "--threads", minimum=1))
    output = config.output
    if out is not None:
        output = replace(output, path=out)
    if out_format is not None:
        output = replace(output, format=_as_choice(out_format, "--format", ("csv", "json")))
    if figures is not None:
        output = replace(output, figures=figures)
    return replace(config, output=output)


# -- experiment assembly --------------------------------------------------------


def _config_stage(fn, *args, **kwargs):
    """Run a build step, converting its ValueErrors into config errors.

    Size-cap violations stay what they are so they keep exit code 3.
    """
    try:
        return fn(*args, **kwargs)
    except (SizeCapError, ConfigError):
        raise
    except ValueError as exc:
        raise ConfigError(str(exc))


def build_base_state(cfg: StateConfig, seed_spec: SeedSpec):
    """The configured state plus context (Hamiltonian, ground state)."""
    ctx = {}
    kind = cfg.kind
    if kind in ("tfim_ground", "tfim_gibbs", "heisenberg_ground", "heisenberg_gibbs"):
        model = "tfim" if kind.startswith("tfim") else "heisenberg"
        ham = models.build_hamiltonian(
            models.HamiltonianSpec(model, cfg.n, coupling=cfg.coupling, field=cfg.field)
        )
        ctx["hamiltonian"] = ham
        if kind.endswith("_ground"):
            state = models.ground_state(ham)
            ctx["ground"] = state
        else:
            state = models.gibbs_state(ham, cfg.beta)
            ctx["ground"] = models.ground_state(ham)
    elif kind in ("bell", "ghz", "product_random"):
        state = models.named_states(kind, cfg.n, seed_spec.setup_stream())
    elif kind == "gapped_random":
        state = models.gapped_random_state(cfg.n, cfg.gap, cfg.top_weight,
                                           seed_spec.setup_stream())
    else:
        state = QuantumState.computational_zero(cfg.n)
    if cfg.depolarize > 0.0:
        state = models.depolarize(state, cfg.depolarize)
    return state, ctx


def build_observable(ocfg: ObservableConfig, n_qubits: int) -> ObservableSpec:
    if ocfg.kind == "identity":
        return ObservableSpec.identity(n_qubits)
    return ObservableSpec.pauli_sum(list(ocfg.terms), n_qubits)


def _extend_for_run(state, observables, n_ancilla):
    """Ancilla extension of the state and every observable.

    The observable extension is independent of the state, so a one-qubit
    placeholder keeps the n-qubit density kron from being redone per
    observable.
    """
    if n_ancilla == 0:
        return state, list(observables)
    extended_state, _ = extend_with_ancillas(state, None, n_ancilla)
    placeholder = QuantumState.computational_zero(1)
    extended = [extend_with_ancillas(placeholder, obs, n_ancilla)[1]
                for obs in observables]
    return extended_state, extended


def build_partition(part: PartitionConfig, n_base: int, n_ancilla: int) -> BipartitionSpec:
    """Contiguous base split with appended ancillas folded into A1.

    Base qubits 0..n_a-1 form A (its trailing n_b qubits are A2, paired with
    B); ancillas appended at the end of the register extend A1.
    """
    base_a = tuple(range(part.n_a))
    qubits_b = tuple(range(part.n_a, part.n_a + part.n_b))
    ancillas = tuple(range(n_base, n_base + n_ancilla))
    qubits_a1 = tuple(range(part.n_a - part.n_b)) + ancillas
    qubits_a2 = tuple(range(part.n_a - part.n_b, part.n_a))
    return BipartitionSpec(base_a + ancillas, qubits_b, qubits_a1, qubits_a2)


def _build_ensemble(config: ExperimentConfig, n_qubits: int) -> UnitaryEnsembleConfig:
    kind = config.ensemble_kind
    if kind == "brickwork" and n_qubits < 2:
        kind = "global_haar"
    depth = config.ensemble_depth if kind == "brickwork" else None
    return _config_stage(UnitaryEnsembleConfig, kind, n_qubits, depth)


# -- reports ---------------------------------------------------------------------


@dataclass
class EstimateReport:
    """Rows, aggregates, and provenance for one completed run."""

    task: str
    rows: list
    quantities: dict
    config: dict
    config_sha256: str
    version: str
    runtime_seconds: float
    n_units: int
    extra_columns: tuple = ()
    witness_aggregate: dict | None = None
    cells: dict | None = None

    def summary_dict(self) -> dict:
        doc = {
            "task": self.task,
            "version": self.version,
            "config_sha256": self.config_sha256,
            "config": self.config,
            "n_rows": len(self.rows),
            "n_units": self.n_units,
            "runtime_seconds": self.runtime_seconds,
            "quantities": self.quantities,
        }
        if self.witness_aggregate is not None:
            doc["witness_aggregate"] = self.witness_aggregate
        if self.cells is not None:
            doc["cells"] = self.cells
        return doc


def _row(common: dict, quantity: str, order, trial: int, estimate: float, exact):
    row = dict(common)
    row["quantity"] = quantity
    row["order"] = "" if order is None else order
    row["trial"] = trial
    row["estimate"] = float(estimate)
    row["exact_value"] = None if exact is None else float(exact)
    return row


def _aggregate_rows(rows) -> dict:
    """Per-(quantity, order) mean, spread, and exact reference.

    The statistical error of a quantity is the standard deviation of its
    per-trial estimates; the standard error divides by sqrt(trials).
    """
    grouped: dict = {}
    for row in rows:
        key = (row["quantity"], row["order"])
        grouped.setdefault(key, []).append(row)
    out = {}
    for (quantity, order), bucket in grouped.items():
        estimates = np.array([r["estimate"] for r in bucket], dtype=float)
        finite = estimates[np.isfinite(estimates)]
        mean, std, stderr = pipeline.trial_statistics(finite) if finite.size else (
            float("nan"), float("nan"), float("nan"))
        label = quantity if order == "" else f"{quantity}[{order}]"
        exact = bucket[0]["exact_value"]
        out[label] = {
            "mean": mean,
            "std": std,
            "stderr": stderr,
            "exact": exact,
            "n_trials": int(estimates.size),
            "n_failed": int(estimates.size - finite.size),
        }
    return out


def _ratio_or_nan(numerator: float, denominator: float, floor: float) -> float:
    try:
        return analysis.pce_estimate(numerator, denominator, floor=floor)
    except ValueError:
        return float("nan")


# -- task runners -----------------------------------------------------------------


def run_cbne(config: ExperimentConfig) -> EstimateReport:
    """Tasks moments, observable, pce, and qvc: one shared estimation flow.

    Measurement records are sampled before any observable enters, so the
    same dataset serves every requested quantity; ratios (pce, qvc) are
    formed per trial from that trial's own estimates.
    """
    if config.task not in _CBNE_TASKS:
        raise ConfigError(f"run_cbne cannot run task {config.task!r}")
    start = time.perf_counter()
    seed_spec = _config_stage(SeedSpec, config.seed)
    state, ctx = _config_stage(build_base_state, config.state, seed_spec)

    observables = [
        _config_stage(build_observable, ocfg, config.state.n)
        for ocfg in config.observables
    ]
    obs_names = [ocfg.name for ocfg in config.observables]
    if config.task == "qvc":
        observables = [ObservableSpec.rank_one_projector(ctx["ground"].vector)]
        obs_names = ["ground_projector"]

    state, observables = _config_stage(_extend_for_run, state, observables,
                                       config.state.n_ancilla)
    ensemble = _build_ensemble(config, state.n_qubits)
    traceless = config.mode == "traceless"

    data = pipeline.run_cbne_trials(
        state,
        observables,
        t_max=config.t_max,
        n_shots=config.n_shots,
        n_unitaries=config.n_unitaries,
        trials=config.trials,
        seed=config.seed,
        ensemble=ensemble,
        traceless=traceless,
        threads=config.resolved_threads(),
    )
    refs = pipeline.exact_cbne_references(state, observables, config.t_max)

    common = {
        "task": config.task,
        "n": state.n_qubits,
        "N_U": config.n_unitaries,
        "N_M": config.n_shots,
        "seed": config.seed,
    }
    ratio_ts = ()
    if config.task == "pce":
        ratio_ts = (config.pce_t,)
    elif config.task == "qvc":
        ratio_ts = config.qvc_t_values or (config.t_max,)

    rows = []
    for trial in range(config.trials):
        for k in range(2, config.t_max + 1):
            rows.append(_row(common, "zeta", k, trial,
                             data.zeta_hat[trial, k - 2], refs["zeta"][k - 2]))
        for k in range(2, config.t_max + 1):
            rows.append(_row(common, "p", k, trial,
                             data.p_hat[trial, k - 2], refs["p"][k - 1]))
        for i, name in enumerate(obs_names):
            for k in range(1, config.t_max + 1):
                rows.append(_row(common, f"xi:{name}", k, trial,
                                 data.xi_hat[i, trial, k - 1], refs["xi"][i][k - 1]))
            for k in range(1, config.t_max + 1):
                rows.append(_row(common, f"o:{name}", k, trial,
                                 data.o_hat[i, trial, k - 1], refs["o"][i][k - 1]))
        for t in ratio_ts:
            denom = 1.0 if t == 1 else data.p_hat[trial, t - 2]
            for i, name in enumerate(obs_names):
                estimate = _ratio_or_nan(data.o_hat[i, trial, t - 1], denom,
                                         analysis.DEFAULT_DENOMINATOR_FLOOR)
                exact = refs["o"][i][t - 1] / refs["p"][t - 1]
                label = "qvc" if config.task == "qvc" else f"pce:{name}"
                rows.append(_row(common, label, t, trial, estimate, exact))

    quantities = _aggregate_rows(rows)
    quantities.update(_aggregated_ratios(config, data, refs, obs_names, ratio_ts))
    report = EstimateReport(
        task=config.task,
        rows=rows,
        quantities=quantities,
        config=config.identity_dict(),
        config_sha256=config.config_hash(),
        version=__version__,
        runtime_seconds=time.perf_counter() - start,
        n_units=config.trials * config.n_unitaries,
    )
    return report


def _aggregated_ratios(config, data, refs, obs_names, ratio_ts) -> dict:
    """Ratios of trial-mean numerator to trial-mean denominator.

    The aggregated denominator carries a standard error of its own, so its
    floor scales with that uncertainty; a run whose sample budget cannot
    pin the denominator away from zero reports the failure instead of an
    unstable number.
    """
    out = {}
    for t in ratio_ts:
        if t == 1:
            denom_mean, denom_stderr = 1.0, 0.0
        else:
            denom_mean, _, denom_stderr = pipeline.trial_statistics(
                data.p_hat[:, t - 2]
            )
        for i, name in enumerate(obs_names):
            num_mean, _, num_stderr = pipeline.trial_statistics(
                data.o_hat[i, :, t - 1]
            )
            label = "qvc" if config.task == "qvc" else f"pce:{name}"
            entry = {
                "numerator_mean": num_mean,
                "numerator_stderr": num_stderr,
                "denominator_mean": denom_mean,
                "denominator_stderr": denom_stderr,
                "exact": float(refs["o"][i][t - 1] / refs["p"][t - 1]),
            }
            try:
                entry["estimate"] = analysis.pce_estimate(
                    num_mean, denom_mean, p_t_stderr=denom_stderr
                )
            except ValueError as exc:
                entry["estimate"] = None
                entry["error"] = str(exc)
            out[f"{label}[{t}]:aggregated"] = entry
    return out


def _witness_rows_and_report(moment_set, k_max, z_gate):
    report = analysis.witness_report(moment_set, k_max=k_max, m=k_max, z_gate=z_gate)
    values = []
    for k in sorted(report.d_values):
        values.append(("d", k, report.d_values[k]))
    for k in sorted(report.hankel_dets):
        values.append(("hankel_det", k, report.hankel_dets[k]))
        values.append(("hankel_min_eig", k, report.hankel_min_eigenvalues[k]))
    if report.p3ppt_value is not None:
        values.append(("p3ppt", 3, report.p3ppt_value))
    values.append(("detected", None, 1.0 if report.detected_any else 0.0))
    return values, report


def _witness_report_dict(report) -> dict:
    doc = {
        "d_values": {str(k): float(v) for k, v in sorted(report.d_values.items())},
        "d_detected": {str(k): bool(v) for k, v in sorted(report.d_detected.items())},
        "hankel_dets": {str(k): float(v) for k, v in sorted(report.hankel_dets.items())},
        "hankel_min_eigenvalues": {
            str(k): float(v) for k, v in sorted(report.hankel_min_eigenvalues.items())
        },
        "hankel_detected": {
            str(k): bool(v) for k, v in sorted(report.hankel_detected.items())
        },
        "p3ppt_value": None if report.p3ppt_value is None else float(report.p3ppt_value),
        "p3ppt_detected": None if report.p3ppt_detected is None
        else bool(report.p3ppt_detected),
        "detected_any": bool(report.detected_any),
    }
    if report.d_standard_errors is not None:
        doc["d_standard_errors"] = {
            str(k): float(v) for k, v in sorted(report.d_standard_errors.items())
        }
    if report.p3ppt_standard_error is not None:
        doc["p3ppt_standard_error"] = float(report.p3ppt_standard_error)
    return doc


def run_ptme(config: ExperimentConfig) -> EstimateReport:
    """Tasks pt_moments and witness: subsystem unitaries, signed collisions."""
    if config.task not in _PTME_TASKS:
        raise ConfigError(f"run_ptme cannot run task {config.task!r}")
    start = time.perf_counter()
    seed_spec = _config_stage(SeedSpec, config.seed)
    state, _ = _config_stage(build_base_state, config.state, seed_spec)
    base_part = _config_stage(
        BipartitionSpec.contiguous, config.partition.n_a, config.partition.n_b
    )
    extended_state, _ = _config_stage(_extend_for_run, state, [],
                                      config.state.n_ancilla)
    part = _config_stage(build_partition, config.partition, config.state.n,
                         config.state.n_ancilla)
    ensemble = _build_ensemble(config, len(part.qubits_a))

    data = pipeline.run_ptme_trials(
        extended_state,
        part,
        t_max=config.t_max,
        n_shots=config.n_shots,
        n_unitaries=config.n_unitaries,
        trials=config.trials,
        seed=config.seed,
        ensemble=ensemble,
        threads=config.resolved_threads(),
    )
    refs = pipeline.exact_pt_references(state, base_part, config.t_max)

    k_max = config.witness.k_max or config.t_max
    exact_values = None
    exact_report = None
    if config.task == "witness":
        from .inversion import PTMomentSet

        exact_set = PTMomentSet((1.0, *refs["p_pt"][1:]))
        exact_values, exact_report = _witness_rows_and_report(exact_set, k_max, 0.0)

    common = {
        "task": config.task,
        "n": extended_state.n_qubits,
        "N_U": config.n_unitaries,
        "N_M": config.n_shots,
        "seed": config.seed,
    }
    rows = []
    for trial in range(config.trials):
        for k in range(2, config.t_max + 1):
            rows.append(_row(common, "zeta_pt", k, trial,
                             data.zeta_pt_hat[trial, k - 2], refs["zeta_pt"][k - 2]))
        for k in range(2, config.t_max + 1):
            rows.append(_row(common, "p_pt", k, trial,
                             data.p_pt_hat[trial, k - 2], refs["p_pt"][k - 1]))
        if config.task == "witness":
            trial_values, _ = _witness_rows_and_report(
                data.moment_set(trial), k_max, 0.0
            )
            exact_map = {(q, o): v for q, o, v in exact_values}
            for quantity, order, value in trial_values:
                rows.append(_row(common, quantity, order, trial, value,
                                 exact_map.get((quantity, order))))

    witness_aggregate = None
    if config.task == "witness":
        from .inversion import PTMomentSet

        means, stderrs = [1.0], [0.0]
        for col in range(config.t_max - 1):
            mean, _, stderr = pipeline.trial_statistics(data.p_pt_hat[:, col])
            means.append(mean)
            stderrs.append(stderr)
        aggregate_set = PTMomentSet(tuple(means), estimated=True,
                                    standard_errors=tuple(stderrs))
        gated = analysis.witness_report(aggregate_set, k_max=k_max, m=k_max,
                                        z_gate=config.witness.z_gate)
        witness_aggregate = {
            "z_gate": config.witness.z_gate,
            "aggregated": _witness_report_dict(gated),
            "exact": _witness_report_dict(exact_report),
        }

    quantities = _aggregate_rows(rows)
    return EstimateReport(
        task=config.task,
        rows=rows,
        quantities=quantities,
        config=config.identity_dict(),
        config_sha256=config.config_hash(),
        version=__version__,
        runtime_seconds=time.perf_counter() - start,
        n_units=config.trials * config.n_unitaries,
        witness_aggregate=witness_aggregate,
    )


def _apply_sweep_value(config: ExperimentConfig, key: str, value) -> ExperimentConfig:
    if key == "n":
        return replace(config, state=replace(config.state, n=value))
    if key == "beta":
        return replace(config, state=replace(config.state, beta=value))
    if key == "depolarize":
        return replace(config, state=replace(config.state, depolarize=value))
    if key == "n_ancilla":
        return replace(config, state=replace(config.state, n_ancilla=value))
    return replace(config, **{key: value})


def run_sweep(config: ExperimentConfig) -> EstimateReport:
    """Grid sweep: the sub-task runs once per cell, rows are concatenated.

    All cells share the master seed, so cells differing only in analysis
    parameters reuse the same random circuits (common random numbers).
    Sweep variables that are not CSV schema columns are appended as extra
    columns so rows from different cells stay distinguishable.
    """
    if config.task != "sweep" or config.sweep is None:
        raise ConfigError("run_sweep needs a sweep task")
    start = time.perf_counter()
    sub_task = config.sweep.task
    runner = run_cbne if sub_task in _CBNE_TASKS else run_ptme
    keys = [key for key, _ in config.sweep.grid]
    extra_columns = tuple(k for k in keys if k not in _SWEEP_COLUMN_KEYS)

    rows = []
    cells = {}
    n_units = 0
    for combo in itertools.product(*(values for _, values in config.sweep.grid)):
        cell_config = replace(config, task=sub_task, sweep=None,
                              output=OutputConfig())
        for key, value in zip(keys, combo):
            cell_config = _apply_sweep_value(cell_config, key, value)
        cell_report = runner(cell_config)
        label = ",".join(f"{key}={value}" for key, value in zip(keys, combo))
        extras = {key: value for key, value in zip(keys, combo)
                  if key in extra_columns}
        for row in cell_report.rows:
            row = dict(row)
            row["task"] = "sweep"
            row.update(extras)
            rows.append(row)
        cells[label] = cell_report.quantities
        n_units += cell_report.n_units

    return EstimateReport(
        task="sweep",
        rows=rows,
        quantities={},
        config=config.identity_dict(),
        config_sha256=config.config_hash(),
        version=__version__,
        runtime_seconds=time.perf_counter() - start,
        n_units=n_units,
        extra_columns=extra_columns,
        cells=cells,
    )


def run_task(config: ExperimentConfig) -> EstimateReport:
    if config.task == "sweep":
        return run_sweep(config)
    if config.task in _CBNE_TASKS:
        return run_cbne(config)
    return run_ptme(config)


# -- output -----------------------------------------------------------------------


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(report: EstimateReport, path: str) -> None:
    columns = CSV_COLUMNS + report.extra_columns
    lines = [",".join(columns)]
    for row in report.rows:
        lines.append(",".join(_format_cell(row.get(col)) for col in columns))
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(lines) + "\n")


def write_json(report: EstimateReport, path: str) -> None:
    doc = {"summary": report.summary_dict(), "rows": report.rows}
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, sort_keys=True, indent=1)
        handle.write("\n")


def write_outputs(report: EstimateReport, output: OutputConfig) -> list:
    """Write the primary output, the JSON summary, and optional figures."""
    extension = "csv" if output.format == "csv" else "json"
    path = output.path or f"collisim_{report.task}.{extension}"
    written = []
    if output.format == "csv":
        write_csv(report, path)
        written.append(path)
        summary_path = os.path.splitext(path)[0] + ".summary.json"
        with open(summary_path, "w", encoding="utf-8") as handle:
            json.dump(report.summary_dict(), handle, sort_keys=True, indent=1)
            handle.write("\n")
        written.append(summary_path)
    else:
        write_json(report, path)
        written.append(path)
    if output.figures:
        from . import plotting

        out_dir = os.path.dirname(os.path.abspath(path))
        stem = os.path.splitext(os.path.basename(path))[0]
        columns = CSV_COLUMNS + report.extra_columns
        written.extend(
            plotting.render_rows(report.rows, columns, out_dir, stem)
        )
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="collisim",
        description="Single-setting randomized-measurement estimation experiments.",
    )
    parser.add_argument("task", choices=TASKS, help="experiment task to run")
    parser.add_argument("--config", required=True, help="YAML config file")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--out", default=None, help="override the output path")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV_VAR} or 1)")
    parser.add_argument("--format", choices=("csv", "json"), default=None,
                        dest="out_format", help="primary output format")
    parser.add_argument("--figures", action="store_true", default=None,
                        help="render figures from the written rows")
    args = parser.parse_args(argv)
    try:
        config = load_config(
            args.config,
            cli_task=args.task,
            seed=args.seed,
            out=args.out,
            threads=args.threads,
            out_format=args.out_format,
            figures=args.figures,
        )
        report = run_task(config)
        written = write_outputs(report, config.output)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SizeCapError as exc:
        print(f"size cap violated: {exc}", file=sys.stderr)
        return 3
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
