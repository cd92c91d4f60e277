"""Config parsing, the command-line entry point, and its file outputs."""

import json
import os

import numpy as np
import pytest
import yaml

from collisim import plotting
from collisim.cli import (
    CSV_COLUMNS,
    THREADS_ENV_VAR,
    ConfigError,
    load_config,
    main,
    parse_config,
    run_task,
)

BASE_DOC = {
    "task": "moments",
    "seed": 0,
    "trials": 3,
    "n_unitaries": 2,
    "n_shots": 200,
    "t_max": 3,
    "state": {"kind": "bell", "n": 2},
}


def _write_config(tmp_path, doc, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return str(path)


def _run(tmp_path, doc, *args, name="config.yaml", out="results.csv"):
    cfg = _write_config(tmp_path, doc, name=name)
    out_path = tmp_path / out
    task = doc.get("task", "moments")
    rc = main([task, "--config", cfg, "--out", str(out_path), *args])
    return rc, out_path


def test_parse_defaults():
    config = parse_config({"task": "moments", "state": {"kind": "ghz", "n": 3}})
    assert config.trials == 1
    assert config.n_shots == 1000
    assert config.t_max == 2
    assert config.mode == "traceless"
    assert config.ensemble_kind == "brickwork"
    assert config.output.format == "csv"
    assert config.threads is None
    assert config.resolved_threads() == 1


@pytest.mark.parametrize("mangle,fragment", [
    (lambda d: d.update(frobnicate=1), "unknown"),
    (lambda d: d.pop("state"), "state"),
    (lambda d: d.pop("task"), "task"),
    (lambda d: d["state"].update(kind="w_state"), "state.kind"),
    (lambda d: d["state"].update(kind="bell", n=3), "bell"),
    (lambda d: d["state"].update(kind="tfim_gibbs", depolarize=0.5), "depolarize"),
    (lambda d: d.update(n_shots=2, t_max=3), "n_shots"),
    (lambda d: d.update(task="observable"), "observable"),
    (lambda d: d.update(observables=[{"name": "a", "terms": [[1.0, "XYZ"]]}]), "string"),
    (lambda d: d.update(observables={"name": "a"}), "list"),
    (lambda d: d.update(task="pce",
                        observables=[{"name": "a", "terms": [[1.0, "XX"]]}]), "pce"),
    (lambda d: d.update(task="qvc"), "qvc"),
    (lambda d: d.update(task="pt_moments"), "partition"),
    (lambda d: d.update(task="pt_moments", partition={"n_a": 1, "n_b": 2}), "n_a"),
    (lambda d: d.update(task="witness", partition={"n_a": 1, "n_b": 1},
                        witness={"k_max": 9}), "k_max"),
    (lambda d: d.update(task="sweep"), "sweep"),
    (lambda d: d.update(task="sweep",
                        sweep={"task": "moments", "grid": {"width": [2]}}), "width"),
    (lambda d: d.update(threads=0), "threads"),
    (lambda d: d.update(seed=True), "seed"),
    (lambda d: d.update(mode="plain"), "mode"),
])
def test_parse_rejections(mangle, fragment):
    doc = {
        "task": "moments",
        "n_shots": 200,
        "t_max": 3,
        "state": {"kind": "bell", "n": 2},
    }
    mangle(doc)
    with pytest.raises(ConfigError) as err:
        parse_config(doc)
    assert fragment.lower() in str(err.value).lower()


def test_task_mismatch_between_file_and_cli():
    doc = {"task": "moments", "state": {"kind": "bell", "n": 2}}
    with pytest.raises(ConfigError):
        parse_config(doc, cli_task="observable")
    assert parse_config(doc, cli_task="moments").task == "moments"
    assert parse_config({"state": {"kind": "bell", "n": 2}},
                        cli_task="moments").task == "moments"


def test_duplicate_observable_names_rejected():
    doc = {
        "task": "observable",
        "state": {"kind": "ghz", "n": 2},
        "observables": [
            {"name": "zz", "terms": [[1.0, "ZZ"]]},
            {"name": "zz", "terms": [[1.0, "XX"]]},
        ],
    }
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_config_hash_ignores_execution_details():
    base = parse_config(dict(BASE_DOC))
    with_output = parse_config({
        **BASE_DOC,
        "threads": 8,
        "output": {"path": "elsewhere.csv", "format": "json", "figures": True},
    })
    reseeded = parse_config({**BASE_DOC, "seed": 1})
    assert len(base.config_hash()) == 64
    assert base.config_hash() == with_output.config_hash()
    assert base.config_hash() != reseeded.config_hash()
    assert "output" not in base.identity_dict()
    assert "threads" not in base.identity_dict()


def test_load_config_applies_overrides(tmp_path):
    cfg = _write_config(tmp_path, dict(BASE_DOC))
    config = load_config(cfg, seed=42, out="o.csv", threads=2,
                         out_format="json", figures=True)
    assert config.seed == 42
    assert config.output.path == "o.csv"
    assert config.threads == 2
    assert config.output.format == "json"
    assert config.output.figures is True
    untouched = load_config(cfg)
    assert untouched.seed == 0
    assert untouched.output.path is None


def test_main_moments_end_to_end(tmp_path):
    rc, out = _run(tmp_path, BASE_DOC)
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    # 3 trials x (zeta + p at orders 2, 3)
    assert len(lines) == 1 + 3 * 4
    first = lines[1].split(",")
    assert first[0] == "moments"
    assert first[1] == "zeta"
    assert float(first[4]) != 0.0

    summary = json.loads((tmp_path / "results.summary.json").read_text())
    assert summary["task"] == "moments"
    assert summary["config_sha256"] == load_config(
        _write_config(tmp_path, BASE_DOC, name="again.yaml")
    ).config_hash()
    assert summary["n_units"] == 6
    assert "p[2]" in summary["quantities"]
    assert summary["quantities"]["p[2]"]["n_trials"] == 3
    version_parts = summary["version"].split(".")
    assert len(version_parts) == 3


def test_rerun_is_byte_identical(tmp_path):
    rc, out = _run(tmp_path, BASE_DOC)
    assert rc == 0
    first = out.read_bytes()
    rc, out = _run(tmp_path, BASE_DOC)
    assert rc == 0
    assert out.read_bytes() == first
    rc, out = _run(tmp_path, BASE_DOC, "--seed", "5")
    assert rc == 0
    assert out.read_bytes() != first


def test_thread_override_does_not_change_bytes(tmp_path, monkeypatch):
    rc, out = _run(tmp_path, BASE_DOC)
    serial = out.read_bytes()
    rc, out = _run(tmp_path, BASE_DOC, "--threads", "4")
    assert rc == 0
    assert out.read_bytes() == serial
    monkeypatch.setenv(THREADS_ENV_VAR, "3")
    rc, out = _run(tmp_path, BASE_DOC)
    assert rc == 0
    assert out.read_bytes() == serial


def test_bad_threads_env_var_is_a_config_error(tmp_path, monkeypatch):
    monkeypatch.setenv(THREADS_ENV_VAR, "lots")
    rc, _ = _run(tmp_path, BASE_DOC)
    assert rc == 2


def test_exit_code_on_config_errors(tmp_path):
    rc = main(["moments", "--config", str(tmp_path / "missing.yaml")])
    assert rc == 2
    rc, _ = _run(tmp_path, {**BASE_DOC, "frobnicate": True})
    assert rc == 2


def test_exit_code_on_size_cap(tmp_path):
    doc = {**BASE_DOC, "state": {"kind": "ghz", "n": 30}}
    rc, _ = _run(tmp_path, doc)
    assert rc == 3


def test_argparse_rejects_unknown_task():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", "--config", "x.yaml"])
    assert exc.value.code == 2


def test_observable_task_rows(tmp_path):
    doc = {
        "task": "observable",
        "trials": 2,
        "n_unitaries": 2,
        "n_shots": 300,
        "t_max": 2,
        "state": {"kind": "tfim_gibbs", "n": 2, "beta": 1.0},
        "observables": [{"name": "zz", "terms": [[1.0, "ZZ"]]}],
    }
    rc, out = _run(tmp_path, doc)
    assert rc == 0
    lines = out.read_text().splitlines()
    quantities = {line.split(",")[1] for line in lines[1:]}
    assert quantities == {"zeta", "p", "xi:zz", "o:zz"}
    for line in lines[1:]:
        cells = line.split(",")
        assert cells[5] != ""  # every quantity here has an exact reference


def test_pce_task_reports_ratio(tmp_path):
    doc = {
        "task": "pce",
        "trials": 3,
        "n_unitaries": 2,
        "n_shots": 500,
        "t_max": 2,
        "state": {"kind": "gapped_random", "n": 3, "gap": 0.3, "top_weight": 0.4},
        "observables": [{"name": "zed", "terms": [[1.0, "ZII"]]}],
        "pce": {"t": 2},
    }
    rc, out = _run(tmp_path, doc)
    assert rc == 0
    summary = json.loads((tmp_path / "results.summary.json").read_text())
    assert "pce:zed[2]" in summary["quantities"]
    agg = summary["quantities"]["pce:zed[2]:aggregated"]
    assert set(agg) >= {"numerator_mean", "denominator_mean", "exact"}
    if agg.get("estimate") is not None:
        assert np.isfinite(agg["estimate"])


def test_qvc_task_uses_ground_projector(tmp_path):
    doc = {
        "task": "qvc",
        "trials": 2,
        "n_unitaries": 2,
        "n_shots": 400,
        "t_max": 2,
        "state": {"kind": "tfim_gibbs", "n": 2, "beta": 2.0},
        "qvc": {"t_values": [1, 2]},
    }
    rc, out = _run(tmp_path, doc)
    assert rc == 0
    summary = json.loads((tmp_path / "results.summary.json").read_text())
    assert "qvc[1]" in summary["quantities"]
    assert "qvc[2]" in summary["quantities"]
    exact = summary["quantities"]["qvc[2]"]["exact"]
    assert 0.0 < exact <= 1.0 + 1e-9


def test_pt_moments_task(tmp_path):
    doc = {
        "task": "pt_moments",
        "trials": 2,
        "n_unitaries": 4,
        "n_shots": 300,
        "t_max": 3,
        "state": {"kind": "bell", "n": 2},
        "partition": {"n_a": 1, "n_b": 1},
        "ensemble": {"kind": "global_haar"},
    }
    rc, out = _run(tmp_path, doc)
    assert rc == 0
    summary = json.loads((tmp_path / "results.summary.json").read_text())
    assert summary["quantities"]["p_pt[2]"]["exact"] == pytest.approx(1.0)
    assert summary["quantities"]["p_pt[3]"]["exact"] == pytest.approx(0.25)


def test_witness_task_aggregate(tmp_path):
    doc = {
        "task": "witness",
        "trials": 4,
        "n_unitaries": 8,
        "n_shots": 2000,
        "t_max": 3,
        "state": {"kind": "bell", "n": 2, "n_ancilla": 4},
        "partition": {"n_a": 1, "n_b": 1},
        "witness": {"z_gate": 1.0},
    }
    rc, out = _run(tmp_path, doc)
    assert rc == 0
    summary = json.loads((tmp_path / "results.summary.json").read_text())
    aggregate = summary["witness_aggregate"]
    assert aggregate["z_gate"] == 1.0
    assert aggregate["exact"]["d_values"]["3"] == pytest.approx(0.75)
    assert aggregate["exact"]["detected_any"] is True
    assert "d_standard_errors" in aggregate["aggregated"]
    quantities = {line.split(",")[1] for line in out.read_text().splitlines()[1:]}
    assert {"zeta_pt", "p_pt", "d", "hankel_det", "hankel_min_eig",
            "p3ppt", "detected"} <= quantities


def test_sweep_single_cell_matches_direct_run(tmp_path):
    direct_doc = dict(BASE_DOC)
    rc, direct_out = _run(tmp_path, direct_doc, name="direct.yaml", out="direct.csv")
    assert rc == 0
    sweep_doc = {
        **{k: v for k, v in BASE_DOC.items() if k != "task"},
        "task": "sweep",
        "sweep": {"task": "moments", "grid": {"n_shots": [200]}},
    }
    del sweep_doc["n_shots"]
    rc, sweep_out = _run(tmp_path, sweep_doc, name="sweep.yaml", out="sweep.csv")
    assert rc == 0
    direct_lines = direct_out.read_text().splitlines()
    sweep_lines = sweep_out.read_text().splitlines()
    assert sweep_lines[0] == direct_lines[0]
    assert sweep_lines[1:] == [
        line.replace("moments", "sweep", 1) for line in direct_lines[1:]
    ]

    summary = json.loads((tmp_path / "sweep.summary.json").read_text())
    assert list(summary["cells"]) == ["n_shots=200"]


def test_sweep_grid_adds_extra_columns(tmp_path):
    doc = {
        "task": "sweep",
        "trials": 2,
        "n_unitaries": 1,
        "t_max": 2,
        "state": {"kind": "tfim_gibbs", "n": 2, "beta": 1.0},
        "sweep": {
            "task": "moments",
            "grid": {"n_shots": [100, 400], "beta": [0.5, 2.0]},
        },
    }
    rc, out = _run(tmp_path, doc)
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS + ("beta",))
    betas = {line.split(",")[-1] for line in lines[1:]}
    assert betas == {"0.5", "2.0"}
    shot_column = CSV_COLUMNS.index("N_M")
    shots = {line.split(",")[shot_column] for line in lines[1:]}
    assert shots == {"100", "400"}
    summary = json.loads((tmp_path / "results.summary.json").read_text())
    assert len(summary["cells"]) == 4
    assert "n_shots=100,beta=0.5" in summary["cells"]


def test_json_format_single_document(tmp_path):
    rc, out = _run(tmp_path, BASE_DOC, "--format", "json", out="results.json")
    assert rc == 0
    doc = json.loads(out.read_text())
    assert set(doc) == {"summary", "rows"}
    assert len(doc["rows"]) == 12
    assert doc["rows"][0]["quantity"] == "zeta"
    assert not (tmp_path / "results.summary.json").exists()


def test_figures_rendered_from_rows(tmp_path):
    rc, out = _run(tmp_path, BASE_DOC, "--figures")
    assert rc == 0
    assert (tmp_path / "results_estimates.png").exists()

    sweep_doc = {
        **{k: v for k, v in BASE_DOC.items() if k != "n_shots"},
        "task": "sweep",
        "sweep": {"task": "moments", "grid": {"n_shots": [100, 400]}},
    }
    rc, out = _run(tmp_path, sweep_doc, "--figures", name="s.yaml", out="scan.csv")
    assert rc == 0
    assert (tmp_path / "scan_estimates.png").exists()
    assert (tmp_path / "scan_scaling.png").exists()


def test_plotting_from_written_csv(tmp_path):
    rc, out = _run(tmp_path, BASE_DOC)
    assert rc == 0
    produced = plotting.render_csv(str(out))
    assert produced
    for path in produced:
        assert os.path.exists(path)
    assert plotting.main([str(out), str(tmp_path / "figs")]) == 0
    assert any(name.endswith(".png") for name in os.listdir(tmp_path / "figs"))


def test_run_task_rejects_mismatched_runner():
    config = parse_config(dict(BASE_DOC))
    report = run_task(config)
    assert report.task == "moments"
    assert report.n_units == 6
    assert report.rows[0]["N_M"] == 200
