"""Command-line surface: simulate, fit, verify, qpt, report.

All file writes are atomic (write to a temp name, then rename). Given the
same configuration and seed, the emitted data files are byte-identical run to
run; manifest.json is the one exception since it records wall-clock timings.

Environment overrides: QWORK_CONFIG, QWORK_OUT, QWORK_SEED and QWORK_THREADS
provide defaults for the corresponding flags. Exit codes: 0 success, 1 domain
error, 2 usage error.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, config as config_mod
from .errors import QworkError
from .config import ExperimentConfig
from .interferometer import (
    MagnetizationSeries,
    NoiseModel,
    SeriesMeta,
    ensemble_quench_channel,
    sample_series,
)
from .fluct import crooks_fit, crooks_points, jarzynski_report
from .qpt import ProcessMatrix, reconstruct, unitality_deviation, unitary_channel, worst_case_distance
from .quench import Direction, QuenchProtocol, propagator, temperature_from_population
from .spectral import (
    FitModel,
    distribution_from_fit,
    fit_model,
    periodogram,
    symmetric_peak_guess,
)
from .tpm import delta_f_theory

DIRECTIONS = (Direction.FORWARD, Direction.BACKWARD)


# ---------------------------------------------------------------------------
# serialization helpers

def _atomic_write(path: Path, data: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(data)
    os.replace(tmp, path)


def _write_json(path: Path, payload) -> None:
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _series_csv(series: MagnetizationSeries) -> str:
    lines = ["u_ms,re,im"]
    for u, val in zip(series.u_ms, series.samples):
        lines.append(f"{u:.17g},{val.real:.17g},{val.imag:.17g}")
    return "\n".join(lines) + "\n"


def _load_series(path: Path) -> MagnetizationSeries:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as exc:
        raise QworkError(f"cannot read series file {path}: {exc}") from exc
    if not lines or lines[0].strip() != "u_ms,re,im":
        raise QworkError(f"series file {path} must start with header u_ms,re,im")
    if len(lines) < 3:
        raise QworkError(f"series file {path} needs at least two sample rows")
    try:
        raw = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    except ValueError as exc:
        raise QworkError(f"cannot parse series file {path}: {exc}") from exc
    if raw.shape[1] != 3:
        raise QworkError(f"series file {path} must have columns u_ms,re,im")
    meta = None
    meta_path = path.with_suffix(".meta.json")
    if meta_path.exists():
        with open(meta_path, "r", encoding="utf-8") as handle:
            m = json.load(handle)
        meta = SeriesMeta(
            protocol=QuenchProtocol(
                m["nu1_khz"], m["nu2_khz"], m["tau_ms"], Direction(m["direction"])
            ),
            beta_per_khz=math.inf if m["beta_per_khz"] == "inf" else float(m["beta_per_khz"]),
            noise=NoiseModel(**m["noise"]),
            seed=int(m["seed"]),
            rate_khz=float(m["rate_khz"]),
        )
    return MagnetizationSeries(raw[:, 0], raw[:, 1] + 1j * raw[:, 2], meta)


def _beta_json(beta: float):
    return "inf" if math.isinf(beta) else beta


def _series_meta_payload(cfg: ExperimentConfig, direction: Direction, label: str, beta: float, seed: int):
    return {
        "direction": direction.value,
        "temperature_label": label,
        "beta_per_khz": _beta_json(beta),
        "nu1_khz": cfg.nu1_khz,
        "nu2_khz": cfg.nu2_khz,
        "tau_ms": cfg.tau_ms,
        "rate_khz": cfg.rate_khz,
        "seed": seed,
        "mc_trials": cfg.mc_trials,
        "noise": {
            "gamma_f_per_ms": cfg.noise.gamma_f_per_ms,
            "gamma_b_per_ms": cfg.noise.gamma_b_per_ms,
            "rf_sigma": cfg.noise.rf_sigma,
            "c_dephasing": cfg.noise.c_dephasing,
        },
    }


def _fit_payload(model: FitModel, extra_meta: dict | None) -> dict:
    return {
        "gamma_per_ms": model.gamma,
        "tones": [
            {"omega_khz": float(w), "alpha_re": float(a.real), "alpha_im": float(a.imag)}
            for w, a in zip(model.omegas, model.alphas)
        ],
        "covariance": model.covariance.tolist(),
        "covariance_order": "gamma, omega_small_khz, omega_big_khz, re/im alpha 1..4",
        "residual_rms": model.residual_rms,
        "meta": extra_meta,
    }


def _load_fit(path: Path) -> tuple[FitModel, dict]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
        omegas = np.array([t["omega_khz"] for t in raw["tones"]])
        alphas = np.array([t["alpha_re"] + 1j * t["alpha_im"] for t in raw["tones"]])
        model = FitModel(
            gamma=float(raw["gamma_per_ms"]),
            omegas=omegas,
            alphas=alphas,
            covariance=np.array(raw["covariance"]),
            residual_rms=float(raw["residual_rms"]),
            meta=raw.get("meta"),
        )
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise QworkError(f"cannot load fit file {path}: {exc}") from exc
    return model, raw.get("meta") or {}


def _derive_seed(base: int, *branch: int) -> int:
    return int(np.random.SeedSequence([base, *branch]).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(config_path: str, out_dir: str, seed: int | None, threads: int) -> dict:
    started = time.perf_counter()
    cfg = config_mod.load(config_path)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    tasks = []
    for d_idx, direction in enumerate(DIRECTIONS):
        for t_idx, temp in enumerate(cfg.temperatures):
            tasks.append((d_idx, direction, t_idx, temp))

    def run(task):
        d_idx, direction, t_idx, temp = task
        label = cfg.temperature_label(t_idx)
        beta = cfg.beta_for(temp)
        child_seed = _derive_seed(cfg.seed, d_idx, t_idx)
        series = sample_series(
            cfg.protocol(direction), beta, cfg.noise, cfg.samples, cfg.rate_khz, child_seed
        )
        name = f"series_{direction.value}_{label}"
        _atomic_write(out / f"{name}.csv", _series_csv(series))
        _write_json(out / f"{name}.meta.json",
                    _series_meta_payload(cfg, direction, label, beta, child_seed))
        return [f"{name}.csv", f"{name}.meta.json"]

    artifacts = []
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            for produced in pool.map(run, tasks):
                artifacts.extend(produced)
    else:
        for task in tasks:
            artifacts.extend(run(task))
    artifacts.sort()

    manifest = {
        "tool_version": __version__,
        "config_digest": cfg.digest(),
        "config": config_mod.to_dict(cfg),
        "artifacts": artifacts,
        "stages": {"simulate": {"seconds": time.perf_counter() - started}},
    }
    _write_json(out / "manifest.json", manifest)
    for name in artifacts:
        if not (out / name).exists():
            raise QworkError(f"manifest references missing artifact {name}")
    return manifest


def cmd_fit(series_path: str, out_path: str) -> dict:
    series = _load_series(Path(series_path))
    spectrum = periodogram(series)
    guess = symmetric_peak_guess(spectrum)
    envelope = np.abs(series.samples)
    quarter = max(len(envelope) // 4, 1)
    head = float(np.mean(envelope[:quarter]))
    tail = float(np.mean(envelope[-quarter:]))
    span = float(series.u_ms[-1] - series.u_ms[0])
    init_gamma = max(math.log(max(head, 1e-12) / max(tail, 1e-12)) / span, 0.0) if span > 0 else 0.0
    model = fit_model(series, guess, init_gamma)
    meta = None
    if series.meta is not None:
        meta_path = Path(series_path).with_suffix(".meta.json")
        if meta_path.exists():
            with open(meta_path, "r", encoding="utf-8") as handle:
                meta = json.load(handle)
    payload = _fit_payload(model, meta)
    _write_json(Path(out_path), payload)
    return payload


def cmd_verify(forward_fit: str, backward_fit: str, out_path: str) -> dict:
    model_f, meta_f = _load_fit(Path(forward_fit))
    model_b, meta_b = _load_fit(Path(backward_fit))
    if meta_f.get("direction") != Direction.FORWARD.value or meta_b.get("direction") != Direction.BACKWARD.value:
        raise QworkError("verify needs one forward and one backward fit (check meta.direction)")
    for key in ("nu1_khz", "nu2_khz", "tau_ms", "temperature_label"):
        if meta_f.get(key) != meta_b.get(key):
            raise QworkError(f"forward/backward fits disagree on {key}")
    beta_raw = meta_f.get("beta_per_khz")
    beta = math.inf if beta_raw == "inf" else float(beta_raw)
    protocol = QuenchProtocol(meta_f["nu1_khz"], meta_f["nu2_khz"], meta_f["tau_ms"])

    dist_f = distribution_from_fit(model_f)
    dist_b = distribution_from_fit(model_b)
    points = crooks_points(dist_f, dist_b)
    fit = crooks_fit(points)

    out = Path(out_path)
    lines = ["W_khz,ln_ratio,sigma"]
    for w, ratio, sigma in fit.points:
        lines.append(f"{w:.17g},{ratio:.17g},{sigma:.17g}")
    _atomic_write(out.parent / "crooks_points.csv", "\n".join(lines) + "\n")

    warnings = []
    if fit.degenerate:
        warnings.append(
            "degenerate temperature: Crooks slope is ~0 (infinite-temperature preparation); "
            "dF cannot be extracted from the crossing"
        )
    mc_trials = int(meta_f.get("mc_trials", 1000))
    mc_seed = _derive_seed(int(meta_f.get("seed", 0)), 97)
    row = jarzynski_report(model_f, fit, protocol, beta, trials=mc_trials, seed=mc_seed)

    payload = {
        "meta": {
            "temperature_label": meta_f.get("temperature_label"),
            "beta_per_khz": _beta_json(beta),
            "nu1_khz": protocol.nu1_khz,
            "nu2_khz": protocol.nu2_khz,
            "tau_ms": protocol.tau_ms,
        },
        "crooks": {
            "beta_per_khz_est": fit.beta_est,
            "sigma_beta_per_khz": fit.sigma_beta,
            "delta_f_khz_est": None if fit.degenerate else fit.delta_f_est,
            "sigma_delta_f_khz": None if fit.degenerate else fit.sigma_delta_f,
            "cov_beta_delta_f": None if fit.degenerate else fit.cov_beta_delta_f,
            "intercept": fit.intercept,
            "sigma_intercept": fit.sigma_intercept,
            "degenerate": fit.degenerate,
            "points": [{"w_khz": w, "ln_ratio": r, "sigma": s} for w, r, s in fit.points],
        },
        "jarzynski": {
            "beta_per_khz": _beta_json(beta),
            "lhs_continuation": {"value": row.lhs_continuation[0], "sigma": row.lhs_continuation[1]},
            "rhs_crooks": {"value": row.rhs_crooks[0], "sigma": row.rhs_crooks[1]},
            "rhs_theory": {"value": row.rhs_theory[0], "sigma": row.rhs_theory[1]},
            "flags": row.flags,
        },
        "warnings": warnings,
    }
    _write_json(out, payload)
    return payload


def _xi_payload(xi: ProcessMatrix) -> dict:
    return {"re": xi.xi.real.tolist(), "im": xi.xi.imag.tolist()}


def cmd_qpt(config_path: str, out_path: str, seed: int | None) -> dict:
    cfg = config_mod.load(config_path)
    base_seed = cfg.seed if seed is None else seed
    payload = {"rf_sigma": cfg.noise.rf_sigma, "directions": {}}
    for d_idx, direction in enumerate(DIRECTIONS):
        protocol = cfg.protocol(direction)
        ideal_xi = reconstruct(unitary_channel(propagator(protocol)))
        entry = {
            "ideal": {
                "xi": _xi_payload(ideal_xi),
                "max_imag_xi": ideal_xi.imag_norm,
                "unitality_deviation": unitality_deviation(ideal_xi),
                "worst_case_distance_vs_unitary": worst_case_distance(
                    unitary_channel(propagator(protocol)), ideal_xi
                ),
            }
        }
        if cfg.noise.rf_sigma > 0.0:
            channel_seed = _derive_seed(base_seed, 7, d_idx)
            noisy_xi = reconstruct(
                ensemble_quench_channel(protocol, cfg.noise.rf_sigma, channel_seed)
            )
            entry["noisy"] = {
                "xi": _xi_payload(noisy_xi),
                "max_imag_xi": noisy_xi.imag_norm,
                "unitality_deviation": unitality_deviation(noisy_xi),
                "worst_case_distance_vs_ideal": worst_case_distance(ideal_xi, noisy_xi),
                "seed": channel_seed,
            }
        payload["directions"][direction.value] = entry
    _write_json(Path(out_path), payload)
    return payload


def _recovered_temperature(fit_payload_path: Path, direction: Direction) -> dict:
    model, meta = _load_fit(fit_payload_path)
    dist = distribution_from_fit(model)
    if direction is Direction.FORWARD:
        p1 = float(dist.prob[0] + dist.prob[1])
        nu = float(meta["nu1_khz"])
    else:
        p1 = float(dist.prob[0] + dist.prob[2])
        nu = float(meta["nu2_khz"])
    if p1 < 1e-6:
        return {"p1": p1, "kT_over_h_khz": 0.0, "note": "ground state"}
    if abs(p1 - 0.5) < 1e-6:
        return {"p1": p1, "kT_over_h_khz": "inf", "note": "maximum entropy"}
    if p1 > 0.5:
        return {"p1": p1, "kT_over_h_khz": None, "note": "population inversion"}
    return {"p1": p1, "kT_over_h_khz": temperature_from_population(p1, nu)}


def cmd_report(run_dir: str, out_dir: str | None) -> dict:
    run = Path(run_dir)
    out = Path(out_dir) if out_dir else run
    manifest_path = run / "manifest.json"
    missing: list[str] = []
    if not manifest_path.exists():
        raise QworkError(f"no manifest.json in {run}; run simulate first")
    with open(manifest_path, "r", encoding="utf-8") as handle:
        manifest = json.load(handle)
    cfg = config_mod.from_dict(manifest["config"])

    rows = []
    for t_idx, temp in enumerate(cfg.temperatures):
        label = cfg.temperature_label(t_idx)
        beta = cfg.beta_for(temp)
        row = {
            "temperature_label": label,
            "temperature_input": temp if isinstance(temp, str) else float(temp),
            "beta_per_khz": _beta_json(beta),
            "recovered_temperature": {},
            "jarzynski": None,
            "flags": None,
        }
        for direction in DIRECTIONS:
            fit_path = run / "fits" / f"fit_{direction.value}_{label}.json"
            if fit_path.exists():
                try:
                    row["recovered_temperature"][direction.value] = _recovered_temperature(
                        fit_path, direction
                    )
                except (QworkError, ValueError) as exc:
                    row["recovered_temperature"][direction.value] = {"error": str(exc)}
            else:
                missing.append(str(fit_path.relative_to(run)))
        verify_path = run / "verify" / label / "verify.json"
        if math.isinf(beta):
            row["jarzynski"] = "not-applicable"
            row["note"] = "zero-temperature row: backward work atoms have zero probability"
        elif verify_path.exists():
            with open(verify_path, "r", encoding="utf-8") as handle:
                verify = json.load(handle)
            row["jarzynski"] = verify["jarzynski"]
            row["flags"] = verify["jarzynski"]["flags"]
            if verify.get("warnings"):
                row["warnings"] = verify["warnings"]
        else:
            missing.append(str(verify_path.relative_to(run)))
        rows.append(row)

    qpt_path = run / "qpt.json"
    qpt_payload = None
    if qpt_path.exists():
        with open(qpt_path, "r", encoding="utf-8") as handle:
            qpt_payload = json.load(handle)
    else:
        missing.append("qpt.json")

    report = {
        "tool_version": __version__,
        "config_digest": manifest["config_digest"],
        "temperatures": rows,
        "qpt": qpt_payload,
        "missing_stages": sorted(missing),
        "all_flags_true": all(
            flag for row in rows if row["flags"] for flag in row["flags"].values()
        ),
    }
    _write_json(out / "report.json", report)
    _atomic_write(out / "report.txt", _render_report_text(report))
    return report


def _fmt(value, width=12):
    if value is None:
        return " " * (width - 3) + "n/a"
    if isinstance(value, str):
        return value.rjust(width)
    return f"{value:{width}.6g}"


def _render_report_text(report: dict) -> str:
    lines = [
        f"qwork report (config {report['config_digest'][:12]})",
        "",
        "temperature rows:",
        f"{'label':>6} {'kT/h in':>10} {'kT/h fwd':>12} {'kT/h bwd':>12} "
        f"{'<e^-bW>':>12} {'crooks':>12} {'theory':>12} {'flags':>6}",
    ]
    for row in report["temperatures"]:
        rec = row["recovered_temperature"]

        def rec_value(direction):
            entry = rec.get(direction)
            if not entry or entry.get("kT_over_h_khz") is None:
                return None
            return entry["kT_over_h_khz"]

        jar = row["jarzynski"]
        if jar in (None, "not-applicable"):
            cols = [None, None, None]
        else:
            cols = [jar["lhs_continuation"]["value"], jar["rhs_crooks"]["value"], jar["rhs_theory"]["value"]]
        flags = row["flags"]
        flag_text = "-" if flags is None else ("ok" if all(flags.values()) else "FAIL")
        lines.append(
            f"{row['temperature_label']:>6} {_fmt(row['temperature_input'], 10)} "
            f"{_fmt(rec_value('forward'))} {_fmt(rec_value('backward'))} "
            f"{_fmt(cols[0])} {_fmt(cols[1])} {_fmt(cols[2])} {flag_text:>6}"
        )
    if report["missing_stages"]:
        lines += ["", "missing stages:"] + [f"  - {m}" for m in report["missing_stages"]]
    qpt = report.get("qpt")
    if qpt:
        lines += ["", "process tomography:"]
        for direction, entry in qpt["directions"].items():
            ideal = entry["ideal"]
            lines.append(
                f"  {direction}: ideal max|Im xi| = {ideal['max_imag_xi']:.3e}, "
                f"unitality deviation = {ideal['unitality_deviation']:.3e}"
            )
            if "noisy" in entry:
                noisy = entry["noisy"]
                lines.append(
                    f"    noisy (rf_sigma={qpt['rf_sigma']}): worst-case distance = "
                    f"{noisy['worst_case_distance_vs_ideal']:.3e}, unitality deviation = "
                    f"{noisy['unitality_deviation']:.3e}"
                )
    lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# argument parsing

def _env_default(name: str, fallback=None, cast=str):
    raw = os.environ.get(f"QWORK_{name}")
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except ValueError:
        return fallback


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qwork",
        description="Simulate and analyze interferometric work-statistics experiments",
    )
    parser.add_argument("--version", action="version", version=f"qwork {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="produce magnetization series for all temperatures")
    sim.add_argument("--config", default=_env_default("CONFIG"), required=_env_default("CONFIG") is None)
    sim.add_argument("--out", default=_env_default("OUT"), required=_env_default("OUT") is None)
    sim.add_argument("--seed", type=int, default=_env_default("SEED", cast=int))
    sim.add_argument("--threads", type=int, default=_env_default("THREADS", 1, int))

    fit = sub.add_parser("fit", help="fit the damped four-tone model to a series CSV")
    fit.add_argument("series", help="series CSV produced by simulate")
    fit.add_argument("--out", default=_env_default("OUT"), required=_env_default("OUT") is None)

    verify = sub.add_parser("verify", help="Crooks and Jarzynski verification from two fits")
    verify.add_argument("forward_fit")
    verify.add_argument("backward_fit")
    verify.add_argument("--out", default=_env_default("OUT"), required=_env_default("OUT") is None)

    qpt = sub.add_parser("qpt", help="process tomography of the quench channels")
    qpt.add_argument("--config", default=_env_default("CONFIG"), required=_env_default("CONFIG") is None)
    qpt.add_argument("--out", default=_env_default("OUT"), required=_env_default("OUT") is None)
    qpt.add_argument("--seed", type=int, default=_env_default("SEED", cast=int))

    report = sub.add_parser("report", help="aggregate a run directory into a summary")
    report.add_argument("run_dir")
    report.add_argument("--out", default=_env_default("OUT"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            cmd_simulate(args.config, args.out, args.seed, max(args.threads or 1, 1))
        elif args.command == "fit":
            cmd_fit(args.series, args.out)
        elif args.command == "verify":
            cmd_verify(args.forward_fit, args.backward_fit, args.out)
        elif args.command == "qpt":
            cmd_qpt(args.config, args.out, args.seed)
        elif args.command == "report":
            cmd_report(args.run_dir, args.out)
    except (QworkError, ValueError, OSError) as exc:
        print(f"qwork: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
