"""End-to-end tests of the experiment runner.

Every test drives the real command entry point on a config file and reads
back the JSON report, CSV table, and figure it writes, so the exit-code
contract, the strict schema, and the replay comparison are exercised the
way a shell pipeline would see them.
"""

import csv
import json
import math
import subprocess
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest

from randmaps.cli import main

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"
GOLDEN = math.log((3.0 + math.sqrt(5.0)) / 2.0)
TWO_SLOPE_CENTER = 0.5 * (math.log(0.4) + math.log(0.6))


def write_config(tmp_path, text, name="experiment.yaml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return path


def read_report(out_dir, prefix):
    with open(Path(out_dir) / f"{prefix}.report.json") as fh:
        return json.load(fh)


def test_halves_certificate_run(tmp_path):
    code = main(["run", str(CONFIG_DIR / "halves_certificate.yaml"),
                 "--out", str(tmp_path)])
    assert code == 0
    report = read_report(tmp_path, "halves_certificate")
    assert report["verdict"] == "pass"
    assert report["results"]["passed"] is True
    assert report["results"]["worst_estimate"] == pytest.approx(-math.log(2.0), abs=1e-12)
    assert report["results"]["worst_stderr"] == 0.0
    for name in ("halves_certificate.report.json", "halves_certificate.csv",
                 "halves_certificate.png"):
        assert (tmp_path / name).stat().st_size > 0


def test_rotations_certificate_fails(tmp_path):
    code = main(["run", str(CONFIG_DIR / "rotations_certificate.yaml"),
                 "--out", str(tmp_path)])
    assert code == 2
    report = read_report(tmp_path, "rotations_certificate")
    assert report["verdict"] == "fail"
    assert max(abs(v) for v in report["results"]["estimates"]) <= 1e-12


def test_weights_sum_rejected(tmp_path, capsys):
    code = main(["run", str(CONFIG_DIR / "bad_weights.yaml"), "--out", str(tmp_path)])
    assert code == 1
    err = capsys.readouterr().err
    assert "system.weights" in err
    assert "0.9" in err
    assert list(tmp_path.iterdir()) == []


def test_unknown_top_level_field_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, """\
        kind: furstenberg
        seed: 3
        notes: remember to delete this
        system:
          matrices:
            - [[2.0, 1.0], [1.0, 1.0]]
        params: {burn_in: 100, samples: 500}
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 1
    assert "notes: unknown field" in capsys.readouterr().err


def test_unknown_param_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, """\
        kind: furstenberg
        seed: 3
        system:
          matrices:
            - [[2.0, 1.0], [1.0, 1.0]]
        params: {burn_in: 100, samples: 500, extra: 1}
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 1
    assert "params.extra: unknown field" in capsys.readouterr().err


def test_missing_param_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, """\
        kind: certificate
        seed: 1
        system:
          family: interval_affine
          atoms:
            - {a: 0.5, b: 0.0}
            - {a: 0.5, b: 0.5}
        params: {eps: 0.1, n: 10, margin: 0.0}
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 1
    assert "params.mc_samples: required field missing" in capsys.readouterr().err


def test_prefix_with_separator_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, """\
        kind: furstenberg
        seed: 3
        system:
          matrices:
            - [[2.0, 1.0], [1.0, 1.0]]
        params: {burn_in: 100, samples: 500}
        output: {prefix: sub/dir}
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 1
    assert "output.prefix" in capsys.readouterr().err


def test_prefix_defaults_to_config_stem(tmp_path):
    cfg = write_config(tmp_path, """\
        kind: furstenberg
        seed: 3
        system:
          matrices:
            - [[2.0, 1.0], [1.0, 1.0]]
        params: {burn_in: 100, samples: 500}
        """, name="exp7.yaml")
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "exp7.report.json").exists()
    assert (tmp_path / "out" / "exp7.csv").exists()
    assert (tmp_path / "out" / "exp7.png").exists()


def test_fresh_report_replays_clean(tmp_path, capsys):
    assert main(["run", str(CONFIG_DIR / "golden_furstenberg.yaml"),
                 "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    code = main(["replay", str(tmp_path / "golden_furstenberg.report.json")])
    assert code == 0
    assert "replay: pass" in capsys.readouterr().out


def test_edited_digit_fails_naming_field(tmp_path, capsys):
    assert main(["run", str(CONFIG_DIR / "halves_certificate.yaml"),
                 "--out", str(tmp_path)]) == 0
    path = tmp_path / "halves_certificate.report.json"
    report = json.loads(path.read_text())
    report["results"]["estimates"][3] += 1e-13
    path.write_text(json.dumps(report))
    capsys.readouterr()
    code = main(["replay", str(path)])
    assert code == 2
    assert "results.estimates[3]" in capsys.readouterr().out


def test_replay_is_worker_count_independent(tmp_path):
    assert main(["run", str(CONFIG_DIR / "halves_certificate.yaml"),
                 "--out", str(tmp_path / "w1"), "--workers", "1"]) == 0
    assert main(["run", str(CONFIG_DIR / "halves_certificate.yaml"),
                 "--out", str(tmp_path / "w4"), "--workers", "4"]) == 0
    one = read_report(tmp_path / "w1", "halves_certificate")
    four = read_report(tmp_path / "w4", "halves_certificate")
    assert one["results"] == four["results"]
    assert main(["replay", str(tmp_path / "w1" / "halves_certificate.report.json"),
                 "--workers", "3"]) == 0


def test_replay_missing_report(tmp_path, capsys):
    assert main(["replay", str(tmp_path / "nope.report.json")]) == 1
    assert "error:" in capsys.readouterr().err


def test_replay_malformed_report(tmp_path, capsys):
    junk = tmp_path / "junk.report.json"
    junk.write_text("{not json")
    assert main(["replay", str(junk)]) == 1
    no_echo = tmp_path / "noecho.report.json"
    no_echo.write_text(json.dumps({"results": {"value": 1.0}}))
    assert main(["replay", str(no_echo)]) == 1
    err = capsys.readouterr().err
    assert "config echo" in err


def test_csv_format(tmp_path):
    assert main(["run", str(CONFIG_DIR / "halves_certificate.yaml"),
                 "--out", str(tmp_path)]) == 0
    raw = (tmp_path / "halves_certificate.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "index,point,estimate,stderr"
    with open(tmp_path / "halves_certificate.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    report = read_report(tmp_path, "halves_certificate")
    assert len(rows) == 1 + len(report["results"]["points"])
    first = rows[1]
    assert "." in first[2]
    assert float(first[2]) == report["results"]["estimates"][0]


def test_spectrum_of_rotations(tmp_path):
    c = 0.7071067811865476
    cfg = write_config(tmp_path, f"""\
        kind: spectrum
        seed: 4
        system:
          matrices:
            - [[0.0, -1.0], [1.0, 0.0]]
            - [[{c}, {-c}], [{c}, {c}]]
        params: {{n: 30, trials: 8}}
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 0
    report = read_report(tmp_path, "experiment")
    assert np.allclose(report["results"]["exponents"], 0.0, atol=1e-12)
    with open(tmp_path / "experiment.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 3


def test_clt_degenerate_flag(tmp_path):
    cfg = write_config(tmp_path, """\
        kind: clt
        seed: 9
        system:
          matrices:
            - [[0.0, -1.0], [1.0, 0.0]]
        params:
          x: [1.0, 0.0]
          n_list: [10, 20]
          trials: 1000
          center: 0.0
          expect: degenerate
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 0
    results = read_report(tmp_path, "experiment")["results"]
    assert results["degenerate"] == [True, True]
    assert results["sigma2"] == [0.0, 0.0]
    assert all(math.isnan(v) for v in results["ks"])


def test_clt_normal_verdict(tmp_path):
    cfg = write_config(tmp_path, f"""\
        kind: clt
        seed: 12
        system:
          family: interval_affine
          atoms:
            - {{a: 0.4, b: 0.0}}
            - {{a: 0.6, b: 0.4}}
        params:
          x: 0.3
          n_list: [200]
          trials: 1000
          center: {TWO_SLOPE_CENTER!r}
          expect: normal
          ks_max: 0.1
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 0
    results = read_report(tmp_path, "experiment")["results"]
    assert results["degenerate"] == [False]
    assert results["ks"][0] <= 0.1
    assert results["sigma2"][0] == pytest.approx(0.25 * (math.log(0.6) - math.log(0.4)) ** 2,
                                                 rel=0.25)


def test_clt_normal_requires_ks_max(tmp_path, capsys):
    cfg = write_config(tmp_path, """\
        kind: clt
        seed: 9
        system:
          matrices:
            - [[0.0, -1.0], [1.0, 0.0]]
        params:
          x: [1.0, 0.0]
          n_list: [10]
          trials: 1000
          center: 0.0
          expect: normal
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 1
    assert "params.ks_max" in capsys.readouterr().err


def test_large_deviation_decay(tmp_path):
    cfg = write_config(tmp_path, f"""\
        kind: large-deviation
        seed: 12
        system:
          family: interval_affine
          atoms:
            - {{a: 0.4, b: 0.0}}
            - {{a: 0.6, b: 0.4}}
        params:
          x: 0.3
          eps_list: [0.08]
          n_list: [10, 20, 30]
          trials: 2000
          center: {TWO_SLOPE_CENTER!r}
          expect: decay
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 0
    results = read_report(tmp_path, "experiment")["results"]
    row = results["p_hat"][0]
    assert all(b < a for a, b in zip(row, row[1:]))
    assert results["h_hat"][0] > 3.0 * results["h_stderr"][0]


def test_large_deviation_no_tail(tmp_path):
    cfg = write_config(tmp_path, """\
        kind: large-deviation
        seed: 9
        system:
          matrices:
            - [[0.0, -1.0], [1.0, 0.0]]
        params:
          x: [1.0, 0.0]
          eps_list: [0.1]
          n_list: [10, 20, 30]
          trials: 1000
          center: [0.0, 0.0]
          expect: no_tail
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 0
    results = read_report(tmp_path, "experiment")["results"]
    assert all(v == 0.0 for row in results["p_hat"] for v in row)


def test_matrix_sweep_cli(tmp_path):
    cfg = write_config(tmp_path, """\
        kind: sweep
        seed: 11
        system:
          matrices:
            - [[2.0, 1.0], [1.0, 1.0]]
        params:
          flavor: matrix
          t_list: [0.0, 0.01, 0.1]
          direction:
            - [[1.0, 0.0], [0.0, 1.0]]
          burn_in: 50
          samples: 300
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 0
    results = read_report(tmp_path, "experiment")["results"]
    assert results["estimates"][0] == pytest.approx(GOLDEN, abs=1e-12)
    assert results["base_value"] == results["estimates"][0]
    assert np.allclose(results["distances"], [0.0, 0.01, 0.1], atol=1e-14)


def test_circle_sweep_cli(tmp_path):
    cfg = write_config(tmp_path, """\
        kind: sweep
        seed: 8
        system:
          family: circle_wave
          atoms:
            - {rho: 0.0, c: -0.5, k: 2}
            - {rho: 0.0, c: -0.8, k: 2}
        params:
          flavor: circle
          t_list: [0.0, 0.01, 0.02]
          x0: 0.0
          burn_in: 100
          samples: 300
          path:
            - {atom: 0, param: c, delta: -1.0}
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 0
    results = read_report(tmp_path, "experiment")["results"]
    oracle = [0.5 * (math.log(0.5 - t) + math.log(0.2)) for t in (0.0, 0.01, 0.02)]
    assert np.allclose(results["estimates"], oracle, atol=1e-12)
    assert results["fit"] is None


def test_stationary_sweep_repo_config(tmp_path):
    assert main(["run", str(CONFIG_DIR / "halves_stationary_sweep.yaml"),
                 "--out", str(tmp_path)]) == 0
    results = read_report(tmp_path, "halves_stationary_sweep")["results"]
    assert results["estimates"][0] == 0.0
    assert results["multiplicities"] == [1] * 6
    assert results["fit"] is not None
    assert 0.85 <= results["fit"]["gamma_hat"] <= 1.05


def test_kingman_builtin_repo_config(tmp_path):
    assert main(["run", str(CONFIG_DIR / "kingman_absorbing.yaml"),
                 "--out", str(tmp_path)]) == 0
    results = read_report(tmp_path, "kingman_absorbing")["results"]
    assert results["agree"] is True
    assert results["additive"] is True
    assert results["additive_identity_gap"] == 0.0


def test_kingman_user_chain(tmp_path):
    cfg = write_config(tmp_path, """\
        kind: kingman
        chain:
          P: [[0.9, 0.1], [0.2, 0.8]]
          phi1: [1.0, -1.0]
        params: {n_terms: 256, tail_window: 32}
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 0
    results = read_report(tmp_path, "experiment")["results"]
    assert results["agree"] is True
    assert results["additive_identity_gap"] <= results["tolerance"]


def test_kingman_chain_conflict(tmp_path, capsys):
    cfg = write_config(tmp_path, """\
        kind: kingman
        chain:
          builtin: identity
          P: [[1.0]]
        params: {n_terms: 64, tail_window: 8}
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 1
    assert "chain" in capsys.readouterr().err


def test_sweep_path_atom_out_of_range(tmp_path, capsys):
    cfg = write_config(tmp_path, """\
        kind: sweep
        seed: 1
        system:
          family: circle_wave
          atoms:
            - {rho: 0.0, c: -0.5, k: 2}
        params:
          flavor: circle
          t_list: [0.0, 0.01]
          x0: 0.0
          burn_in: 50
          samples: 100
          path:
            - {atom: 5, param: c, delta: 1.0}
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 1
    assert "params.path[0].atom" in capsys.readouterr().err


def test_sweep_path_bad_param_name(tmp_path, capsys):
    cfg = write_config(tmp_path, """\
        kind: sweep
        seed: 1
        system:
          family: circle_wave
          atoms:
            - {rho: 0.0, c: -0.5, k: 2}
        params:
          flavor: circle
          t_list: [0.0, 0.01]
          x0: 0.0
          burn_in: 50
          samples: 100
          path:
            - {atom: 0, param: k, delta: 1.0}
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 1
    assert "params.path[0].param" in capsys.readouterr().err


def test_koopman_halves_uniform(tmp_path):
    cfg = write_config(tmp_path, """\
        kind: koopman
        seed: 1
        system:
          family: interval_affine
          atoms:
            - {a: 0.5, b: 0.0}
            - {a: 0.5, b: 0.5}
        params: {cells: 64}
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 0
    results = read_report(tmp_path, "experiment")["results"]
    assert results["multiplicity"] == 1
    assert max(abs(v - 1.0 / 64) for v in results["measures"][0]) == 0.0
    assert results["rho2"] == 0.0


def test_synchronization_expectations(tmp_path):
    halves = write_config(tmp_path, """\
        kind: synchronization
        seed: 2
        system:
          family: interval_affine
          atoms:
            - {a: 0.5, b: 0.0}
            - {a: 0.5, b: 0.5}
        params: {pair_grid_eps: 0.2, n: 30, trials: 20, threshold: 0.01, expect: all}
        """, name="halves_sync.yaml")
    assert main(["run", str(halves), "--out", str(tmp_path)]) == 0
    assert read_report(tmp_path, "halves_sync")["results"]["fraction"] == 1.0
    rotations = write_config(tmp_path, """\
        kind: synchronization
        seed: 2
        system:
          family: circle_wave
          atoms:
            - {rho: 0.25, c: 0.0}
            - {rho: 0.6180339887498949, c: 0.0}
        params: {pair_grid_eps: 0.2, n: 30, trials: 20, threshold: 0.01, expect: none}
        """, name="rot_sync.yaml")
    assert main(["run", str(rotations), "--out", str(tmp_path)]) == 0
    assert read_report(tmp_path, "rot_sync")["results"]["fraction"] == 0.0


def test_law_convergence_runs(tmp_path):
    cfg = write_config(tmp_path, """\
        kind: law-convergence
        seed: 6
        system:
          family: interval_affine
          atoms:
            - {a: 0.5, b: 0.0}
            - {a: 0.5, b: 0.5}
        params: {x: 0.3, cells: 16, n_list: [1, 5, 10], trials: 200}
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 0
    results = read_report(tmp_path, "experiment")["results"]
    assert len(results["distances"]) == 3
    assert results["nearest"] == [0, 0, 0]


def test_start_vector_dimension_checked(tmp_path, capsys):
    cfg = write_config(tmp_path, """\
        kind: clt
        seed: 9
        system:
          matrices:
            - [[0.0, -1.0], [1.0, 0.0]]
        params:
          x: [1.0, 0.0, 0.5]
          n_list: [10]
          trials: 1000
          center: 0.0
          expect: degenerate
        """)
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == 1
    assert "params.x" in capsys.readouterr().err


def test_module_invocation_exit_code(tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "randmaps.cli", "run",
         str(CONFIG_DIR / "halves_certificate.yaml"), "--out", str(tmp_path)],
        capture_output=True, text=True,
    )
    assert result.returncode == 0
    assert "verdict pass" in result.stdout
    assert (tmp_path / "halves_certificate.report.json").exists()
