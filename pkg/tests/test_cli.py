import json
import math
import shutil

import numpy as np
import pytest

from qwork.cli import cmd_fit, cmd_qpt, cmd_report, cmd_simulate, cmd_verify, main
from qwork.errors import ConfigError
from qwork import config as config_mod


def write_config(path, **overrides):
    payload = {"seed": 77}
    payload.update(overrides)
    path.write_text(json.dumps(payload))
    return path


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    """One complete default-configuration run shared by the read-only tests."""
    root = tmp_path_factory.mktemp("pipeline")
    cfg = write_config(root / "config.json")
    run = root / "run"
    cmd_simulate(str(cfg), str(run), None, 1)
    (run / "fits").mkdir()
    for csv in sorted(run.glob("series_*.csv")):
        name = csv.stem.removeprefix("series_")
        cmd_fit(str(csv), str(run / "fits" / f"fit_{name}.json"))
    for label in ("T1", "T2", "T3", "T4"):
        cmd_verify(
            str(run / "fits" / f"fit_forward_{label}.json"),
            str(run / "fits" / f"fit_backward_{label}.json"),
            str(run / "verify" / label / "verify.json"),
        )
    cmd_qpt(str(cfg), str(run / "qpt.json"), None)
    cmd_report(str(run), None)
    return run


class TestSimulate:
    def test_default_run_produces_ten_series(self, pipeline_run):
        files = sorted(pipeline_run.glob("series_*.csv"))
        assert len(files) == 10
        for path in files:
            lines = path.read_text().splitlines()
            assert lines[0] == "u_ms,re,im"
            assert len(lines) == 361

    def test_meta_sidecars_exist(self, pipeline_run):
        for csv in pipeline_run.glob("series_*.csv"):
            meta = json.loads(csv.with_suffix(".meta.json").read_text())
            assert meta["rate_khz"] == 17.9
            assert meta["direction"] in ("forward", "backward")

    def test_manifest_lists_existing_artifacts(self, pipeline_run):
        manifest = json.loads((pipeline_run / "manifest.json").read_text())
        assert manifest["tool_version"]
        assert "simulate" in manifest["stages"]
        for name in manifest["artifacts"]:
            assert (pipeline_run / name).exists()

    def test_two_samples_first_row(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", samples=2, temperatures=[1.9])
        cmd_simulate(str(cfg), str(tmp_path / "out"), None, 1)
        lines = (tmp_path / "out" / "series_forward_T0.csv").read_text().splitlines()
        assert len(lines) == 3
        u, re, im = lines[1].split(",")
        assert float(u) == 0.0
        assert float(re) == pytest.approx(1.0, abs=1e-12)
        assert abs(float(im)) < 1e-12

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", temperatures=[1.9, "infinite"], samples=64)
        cmd_simulate(str(cfg), str(tmp_path / "a"), None, 1)
        cmd_simulate(str(cfg), str(tmp_path / "b"), None, 2)
        for path in sorted((tmp_path / "a").glob("series_*")):
            assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()

    def test_threads_do_not_change_output(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", temperatures=[1.9, 3.1], samples=64)
        cmd_simulate(str(cfg), str(tmp_path / "a"), None, 1)
        cmd_simulate(str(cfg), str(tmp_path / "b"), None, 4)
        for path in sorted((tmp_path / "a").glob("series_*")):
            assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()

    def test_invalid_config_names_field(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", nu1_khz=-2.0)
        with pytest.raises(ConfigError, match="nu1_khz"):
            cmd_simulate(str(cfg), str(tmp_path / "out"), None, 1)

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", temperatures=[1.9], samples=64,
                           noise={"rf_sigma": 0.05})
        cmd_simulate(str(cfg), str(tmp_path / "a"), 123, 1)
        cmd_simulate(str(cfg), str(tmp_path / "b"), 124, 1)
        a = (tmp_path / "a" / "series_forward_T0.csv").read_bytes()
        b = (tmp_path / "b" / "series_forward_T0.csv").read_bytes()
        assert a != b


class TestFit:
    def test_noiseless_residual_in_payload(self, tmp_path, pipeline_run):
        cfg = write_config(tmp_path / "c.json", temperatures=[3.1],
                           noise={"gamma_f_per_ms": 0.0, "gamma_b_per_ms": 0.0})
        cmd_simulate(str(cfg), str(tmp_path / "out"), None, 1)
        payload = cmd_fit(
            str(tmp_path / "out" / "series_forward_T0.csv"), str(tmp_path / "fit.json")
        )
        assert payload["residual_rms"] < 1e-8
        saved = json.loads((tmp_path / "fit.json").read_text())
        assert saved["gamma_per_ms"] == payload["gamma_per_ms"]
        assert len(saved["tones"]) == 4
        assert np.array(saved["covariance"]).shape == (11, 11)

    def test_empty_file_is_domain_error(self, tmp_path):
        bad = tmp_path / "empty.csv"
        bad.write_text("")
        code = main(["fit", str(bad), "--out", str(tmp_path / "x.json")])
        assert code == 1

    def test_truncated_series_fits_with_wider_sigmas(self, tmp_path, pipeline_run):
        src = pipeline_run / "series_forward_T1.csv"
        rng = np.random.Generator(np.random.PCG64(5))
        raw = np.loadtxt(src, delimiter=",", skiprows=1)
        noisy = raw.copy()
        noisy[:, 1:] += 0.005 * rng.standard_normal(noisy[:, 1:].shape)

        def write_series(path, table):
            lines = ["u_ms,re,im"] + [f"{r[0]:.17g},{r[1]:.17g},{r[2]:.17g}" for r in table]
            path.write_text("\n".join(lines) + "\n")
            shutil.copy(src.with_suffix(".meta.json"), path.with_suffix(".meta.json"))

        write_series(tmp_path / "full.csv", noisy)
        write_series(tmp_path / "short.csv", noisy[:10])
        full = cmd_fit(str(tmp_path / "full.csv"), str(tmp_path / "full.json"))
        short = cmd_fit(str(tmp_path / "short.csv"), str(tmp_path / "short.json"))
        sigma_full = math.sqrt(full["covariance"][1][1])
        sigma_short = math.sqrt(short["covariance"][1][1])
        assert sigma_short > 5.0 * sigma_full


class TestVerify:
    def test_noiseless_beta_recovery(self, pipeline_run):
        payload = json.loads((pipeline_run / "verify" / "T1" / "verify.json").read_text())
        beta_est = payload["crooks"]["beta_per_khz_est"]
        assert abs(beta_est - 1.0 / 1.9) * 1.9 < 1e-6
        assert abs(payload["jarzynski"]["rhs_theory"]["value"]
                   - math.exp(-(1 / 1.9) * 1.9 * math.log(math.cosh(2.5 / 1.9) / math.cosh(1.0 / 1.9)))) < 1e-9
        assert all(payload["jarzynski"]["flags"].values())

    def test_points_csv_schema(self, pipeline_run):
        lines = (pipeline_run / "verify" / "T1" / "crooks_points.csv").read_text().splitlines()
        assert lines[0] == "W_khz,ln_ratio,sigma"
        assert len(lines) == 5

    def test_infinite_temperature_degenerate_warning(self, pipeline_run):
        payload = json.loads((pipeline_run / "verify" / "T4" / "verify.json").read_text())
        assert payload["crooks"]["degenerate"] is True
        assert payload["crooks"]["delta_f_khz_est"] is None
        assert any("degenerate temperature" in w for w in payload["warnings"])
        assert abs(payload["jarzynski"]["lhs_continuation"]["value"] - 1.0) < 1e-9

    def test_missing_backward_file_is_io_error(self, pipeline_run, tmp_path):
        code = main([
            "verify",
            str(pipeline_run / "fits" / "fit_forward_T1.json"),
            str(pipeline_run / "fits" / "fit_backward_missing.json"),
            "--out", str(tmp_path / "v.json"),
        ])
        assert code == 1

    def test_mismatched_pair_rejected(self, pipeline_run, tmp_path):
        code = main([
            "verify",
            str(pipeline_run / "fits" / "fit_forward_T1.json"),
            str(pipeline_run / "fits" / "fit_backward_T2.json"),
            "--out", str(tmp_path / "v.json"),
        ])
        assert code == 1


class TestQpt:
    def test_ideal_metrics_tiny(self, pipeline_run):
        payload = json.loads((pipeline_run / "qpt.json").read_text())
        for direction in ("forward", "backward"):
            ideal = payload["directions"][direction]["ideal"]
            assert ideal["max_imag_xi"] < 1e-8
            assert ideal["unitality_deviation"] < 1e-10
            assert ideal["worst_case_distance_vs_unitary"] < 1e-8

    def test_rf_noise_increases_distance(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", noise={"rf_sigma": 0.05})
        payload = cmd_qpt(str(cfg), str(tmp_path / "qpt.json"), None)
        for direction in ("forward", "backward"):
            entry = payload["directions"][direction]
            assert entry["noisy"]["worst_case_distance_vs_ideal"] > 1e-4
            assert entry["noisy"]["worst_case_distance_vs_ideal"] > entry["ideal"][
                "worst_case_distance_vs_unitary"
            ]

    def test_near_identity_protocol(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", nu1_khz=1.5, nu2_khz=1.5, tau_ms=1e-6)
        payload = cmd_qpt(str(cfg), str(tmp_path / "qpt.json"), None)
        xi = np.array(payload["directions"]["forward"]["ideal"]["xi"]["re"])
        e00 = np.zeros((4, 4))
        e00[0, 0] = 1.0
        assert np.max(np.abs(xi - e00)) < 1e-4


class TestReport:
    def test_full_run_flags_true(self, pipeline_run):
        report = json.loads((pipeline_run / "report.json").read_text())
        assert report["all_flags_true"] is True
        assert report["missing_stages"] == []
        assert (pipeline_run / "report.txt").exists()

    def test_recovered_temperatures_match_inputs(self, pipeline_run):
        report = json.loads((pipeline_run / "report.json").read_text())
        rows = {row["temperature_label"]: row for row in report["temperatures"]}
        for label, expected in (("T1", 1.9), ("T2", 3.1), ("T3", 6.0)):
            for direction in ("forward", "backward"):
                got = rows[label]["recovered_temperature"][direction]["kT_over_h_khz"]
                assert abs(got - expected) < 1e-6 * expected
        assert rows["T0"]["recovered_temperature"]["forward"]["kT_over_h_khz"] == 0.0
        assert rows["T4"]["recovered_temperature"]["forward"]["kT_over_h_khz"] == "inf"

    def test_zero_temperature_row_not_applicable(self, pipeline_run):
        report = json.loads((pipeline_run / "report.json").read_text())
        rows = {row["temperature_label"]: row for row in report["temperatures"]}
        assert rows["T0"]["jarzynski"] == "not-applicable"

    def test_partial_run_lists_missing_stages(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", temperatures=[1.9], samples=32)
        run = tmp_path / "run"
        cmd_simulate(str(cfg), str(run), None, 1)
        report = cmd_report(str(run), None)
        assert any("fit_forward_T0" in m for m in report["missing_stages"])
        assert "qpt.json" in report["missing_stages"]


class TestCliSurface:
    def test_usage_error_exit_code(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["simulate"])  # missing --config/--out
        assert err.value.code == 2
        capsys.readouterr()

    def test_unknown_command_exit_code(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 2
        capsys.readouterr()

    def test_env_overrides(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path / "c.json", temperatures=[1.9], samples=32)
        monkeypatch.setenv("QWORK_CONFIG", str(cfg))
        monkeypatch.setenv("QWORK_OUT", str(tmp_path / "envrun"))
        assert main(["simulate"]) == 0
        assert (tmp_path / "envrun" / "manifest.json").exists()

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "c.json"
        bad.write_text("{\"samples\": 1}")
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1

    def test_config_round_trip(self):
        cfg = config_mod.from_dict({"seed": 3})
        assert config_mod.from_dict(config_mod.to_dict(cfg)) == cfg
