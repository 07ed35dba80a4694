import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from diskmc.chain import TransitionMatrix
from diskmc.cli import main
from diskmc.domain import SimConfig, SubdomainKind
from diskmc.harness import (
    CALIBRATION_HEADER,
    CONVERGENCE_HEADER,
    FITS_HEADER,
    HISTOGRAM_HEADER,
    REGRESSION_HEADER,
    ExperimentError,
    ExperimentSpec,
    convergence_study,
    refit_from_counters,
    run_experiment,
)

ALL_KINDS = (SubdomainKind.CORNER, SubdomainKind.ONE_WALL, SubdomainKind.CENTER)


def small_spec(tmp_path, *, radius_list=(0.5,), realizations=6, steps=2000,
               workers=1, **kwargs):
    return ExperimentSpec(
        config=SimConfig(radius=radius_list[0], steps=steps,
                         realizations=realizations, base_seed=4242),
        radius_list=radius_list,
        output_dir=tmp_path,
        workers=workers,
        **kwargs,
    )


def read_header(path: Path) -> list[str]:
    return path.read_text().splitlines()[0].split(",")


class TestRunExperiment:
    def test_smoke_tiny_run_emits_all_files(self, tmp_path):
        spec = small_spec(tmp_path / "out", realizations=1, steps=10)
        result = run_experiment(spec)
        for name in ("histograms.csv", "fits.csv", "regression.csv",
                      "matrices.json", "diagnostics.json",
                      "counters_R0.5.json", "realization_means_R0.5.json"):
            assert (tmp_path / "out" / name).exists(), name
        # tiny samples cannot support fits; failures must be recorded, not raised
        diag = json.loads((tmp_path / "out" / "diagnostics.json").read_text())
        assert "0.5" in diag["per_radius"]

    def test_every_cell_complete_or_failed(self, tmp_path):
        result = run_experiment(small_spec(tmp_path, realizations=4, steps=3000))
        rr = result.radius_results[0.5]
        for kind in ALL_KINDS:
            cell = rr.cells[kind]
            assert cell.complete or cell.error

    def test_deterministic_rerun_bitwise(self, tmp_path):
        run_experiment(small_spec(tmp_path / "a"))
        run_experiment(small_spec(tmp_path / "b"))
        for name in ("counters_R0.5.json", "matrices.json", "histograms.csv",
                      "fits.csv", "realization_means_R0.5.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                   (tmp_path / "b" / name).read_bytes(), name

    def test_worker_count_invariance_bitwise(self, tmp_path):
        run_experiment(small_spec(tmp_path / "w1", realizations=8, workers=1))
        run_experiment(small_spec(tmp_path / "w2", realizations=8, workers=2))
        for name in ("counters_R0.5.json", "matrices.json", "fits.csv"):
            assert (tmp_path / "w1" / name).read_bytes() == \
                   (tmp_path / "w2" / name).read_bytes(), name

    def test_seed_changes_results_but_not_structure(self, tmp_path):
        import dataclasses

        spec_a = small_spec(tmp_path / "a", realizations=4, steps=3000)
        spec_b = small_spec(tmp_path / "b", realizations=4, steps=3000)
        spec_b = dataclasses.replace(
            spec_b, config=dataclasses.replace(spec_b.config, base_seed=777))
        ra = run_experiment(spec_a).radius_results[0.5]
        rb = run_experiment(spec_b).radius_results[0.5]
        assert not np.array_equal(ra.counters.state_counts, rb.counters.state_counts)
        for rr in (ra, rb):
            rr.counters.check_accounting()
            for kind in ALL_KINDS:
                cell = rr.cells[kind]
                if cell.complete:
                    assert cell.matrix.matrix.sum(axis=1) == pytest.approx(1.0)
                    assert cell.stationary.pi.sum() == pytest.approx(1.0)

    def test_rare_event_gate_fires(self, tmp_path):
        spec = small_spec(tmp_path, realizations=2, steps=200,
                          rare_event_tolerance=-1.0)
        with pytest.raises(ExperimentError):
            run_experiment(spec)

    def test_regression_present_for_multi_radius(self, tmp_path):
        spec = small_spec(tmp_path, radius_list=(0.2, 0.8), realizations=4,
                          steps=3000)
        result = run_experiment(spec)
        assert ("center", "chain") in result.regressions
        assert ("center", "continuous") in result.regressions

    def test_burn_in_recorded_and_applied(self, tmp_path):
        spec = small_spec(tmp_path / "b0", realizations=2, steps=2000)
        spec_burn = small_spec(tmp_path / "b1", realizations=2, steps=2000,
                               burn_in=500)
        r0 = run_experiment(spec).radius_results[0.5]
        r1 = run_experiment(spec_burn).radius_results[0.5]
        assert r0.counters.total_steps == 2 * 2000
        assert r1.counters.total_steps == 2 * 1500
        diag = json.loads((tmp_path / "b1" / "diagnostics.json").read_text())
        assert diag["burn_in"] == 500


@pytest.fixture(scope="module")
def outdir(tmp_path_factory):
    path = tmp_path_factory.mktemp("schema")
    spec = small_spec(path, radius_list=(0.3, 0.7), realizations=6,
                      steps=4000, realization_sweep=(3, 6),
                      ns_candidates=(4, 5, 6))
    run_experiment(spec)
    return path


class TestOutputSchemas:

    def test_csv_headers_golden(self, outdir):
        assert read_header(outdir / "histograms.csv") == HISTOGRAM_HEADER
        assert read_header(outdir / "fits.csv") == FITS_HEADER
        assert read_header(outdir / "regression.csv") == REGRESSION_HEADER
        assert read_header(outdir / "convergence.csv") == CONVERGENCE_HEADER
        assert read_header(outdir / "calibration.csv") == CALIBRATION_HEADER

    def test_histogram_chain_column_normalized(self, outdir):
        rows = (outdir / "histograms.csv").read_text().splitlines()[1:]
        sums = {}
        for line in rows:
            radius, kind, state, emp, chain_pi, fitted = line.split(",")
            sums.setdefault((radius, kind), 0.0)
            sums[(radius, kind)] += float(chain_pi)
        for key, total in sums.items():
            assert total == pytest.approx(1.0, abs=1e-9), key

    def test_matrices_json_roundtrip(self, outdir):
        doc = json.loads((outdir / "matrices.json").read_text())
        for radius_key, kinds in doc.items():
            for kind_key, m_doc in kinds.items():
                if "error" in m_doc:
                    continue
                matrix = TransitionMatrix.from_json_dict(m_doc)
                matrix.validate()
                assert matrix.to_json_dict()["matrix"] == m_doc["matrix"]
                pi = np.array(m_doc["stationary"])
                assert pi.sum() == pytest.approx(1.0, abs=1e-9)

    def test_counters_are_integers(self, outdir):
        doc = json.loads((outdir / "counters_R0.3.json").read_text())
        for name in ("state_counts", "gain_counts", "loss_counts",
                      "rare_steps", "overflow_steps"):
            flat = np.array(doc[name]).ravel()
            assert all(isinstance(v, (int, np.integer)) for v in flat.tolist()) or \
                np.issubdtype(flat.dtype, np.integer)


class TestConvergence:
    def test_repeated_counts_identical(self, tmp_path):
        spec = small_spec(tmp_path, realizations=10, steps=1500,
                          realization_sweep=(10, 10))
        study = convergence_study(spec)
        center = [r for r in study.rows if r["kind"] == "center"]
        assert len(center) == 2
        assert center[0]["mean"] == center[1]["mean"]
        assert center[0]["std"] == center[1]["std"]

    def test_std_shrinks_with_more_realizations(self, tmp_path):
        spec = small_spec(tmp_path, realizations=40, steps=2500,
                          realization_sweep=(5, 40))
        study = convergence_study(spec)
        by_count = {r["realizations"]: r["std"]
                    for r in study.rows if r["kind"] == "center"}
        # not strictly monotone in general, but 5 -> 40 should not grow much;
        # the sweep endpoint must be the better-estimated one on average
        assert by_count[40] <= by_count[5] * 1.5

    def test_requires_sweep(self, tmp_path):
        with pytest.raises(ValueError):
            convergence_study(small_spec(tmp_path))


class TestRefit:
    def test_refit_reproduces_fits_and_matrices(self, tmp_path):
        spec = small_spec(tmp_path / "run", realizations=8, steps=4000,
                          radius_list=(0.4, 0.6))
        run_experiment(spec)
        files = sorted((tmp_path / "run").glob("counters_R*.json"))
        refit_from_counters(files, n_states=13, output_dir=tmp_path / "refit")
        original = (tmp_path / "run" / "fits.csv").read_bytes()
        again = (tmp_path / "refit" / "fits.csv").read_bytes()
        assert original == again
        assert (tmp_path / "run" / "matrices.json").read_bytes() == \
               (tmp_path / "refit" / "matrices.json").read_bytes()

    def test_refit_with_smaller_cap(self, tmp_path):
        spec = small_spec(tmp_path / "run", realizations=6, steps=3000)
        run_experiment(spec)
        files = sorted((tmp_path / "run").glob("counters_R*.json"))
        doc = refit_from_counters(files, n_states=8, output_dir=tmp_path / "refit8")
        matrix = doc["0.5"]["center"]["matrix"]
        assert len(matrix) == 9


class TestCli:
    def test_simulate_and_exit_code(self, tmp_path, capsys):
        rc = main(["simulate", "--radius", "0.5", "--realizations", "3",
                   "--steps", "1500", "--out", str(tmp_path / "o")])
        assert rc == 0
        assert (tmp_path / "o" / "fits.csv").exists()

    def test_sweep_two_radii(self, tmp_path):
        rc = main(["sweep", "--radius", "0.3", "--radius", "0.7",
                   "--realizations", "3", "--steps", "1500",
                   "--out", str(tmp_path / "o")])
        assert rc == 0
        text = (tmp_path / "o" / "regression.csv").read_text()
        assert "center" in text

    def test_calibrate_ns(self, tmp_path, capsys):
        rc = main(["calibrate-ns", "--radius", "0.5", "--realizations", "4",
                   "--steps", "2500", "--ns-candidates", "5,6,7",
                   "--out", str(tmp_path / "o")])
        assert rc == 0
        assert (tmp_path / "o" / "calibration.csv").exists()
        assert "chosen n_states" in capsys.readouterr().out

    def test_converge(self, tmp_path):
        rc = main(["converge", "--radius", "0.5", "--realizations", "6",
                   "--steps", "1500", "--sweep-counts", "3,6",
                   "--out", str(tmp_path / "o")])
        assert rc == 0
        assert (tmp_path / "o" / "convergence.csv").exists()

    def test_fit_from_counters(self, tmp_path):
        main(["simulate", "--radius", "0.5", "--realizations", "3",
              "--steps", "1500", "--out", str(tmp_path / "run")])
        rc = main(["fit", "--counters",
                   str(tmp_path / "run" / "counters_R0.5.json"),
                   "--ns", "10", "--out", str(tmp_path / "refit")])
        assert rc == 0
        assert (tmp_path / "refit" / "fits.csv").exists()

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = {"radius": 0.5, "steps": 1500, "realizations": 2,
               "n_states": 9, "base_seed": 7}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = main(["simulate", "--config", str(cfg_path),
                   "--realizations", "3", "--out", str(tmp_path / "o")])
        assert rc == 0
        doc = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
        assert doc["n_states"] == 9
        assert doc["per_radius"]["0.5"]["realizations_ok"] == 3  # flag wins

    def test_error_is_machine_readable_json(self, tmp_path, capsys):
        rc = main(["simulate", "--radius", "7.0", "--out", str(tmp_path)])
        assert rc == 1
        err = capsys.readouterr().err
        payload = json.loads(err)
        assert payload["error"] == "ValueError"
        assert "radius" in payload["message"]

    def test_console_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "diskmc", "simulate", "--radius", "0.5",
             "--realizations", "2", "--steps", "1000",
             "--out", str(tmp_path / "o")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        proc_bad = subprocess.run(
            [sys.executable, "-m", "diskmc", "simulate", "--radius", "-1"],
            capture_output=True, text=True,
        )
        assert proc_bad.returncode == 1
        assert json.loads(proc_bad.stderr)["error"] == "ValueError"
