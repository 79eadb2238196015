"""Experiment configuration: JSON schema, defaults and validation.

Temperatures are entered as k_B*T/h in kHz, or the strings "zero" (ground
state, beta = inf) and "infinite" (maximum entropy, beta = 0). Decay defaults
reproduce a 20% envelope loss for the backward process over the acquisition
window with gamma_b = 4 * gamma_f (about 5% loss forward).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

from .errors import ConfigError
from .interferometer import DEFAULT_RATE_KHZ, DEFAULT_SAMPLES, NoiseModel
from .quench import Direction, QuenchProtocol

DEFAULT_TEMPERATURES = ("zero", 1.9, 3.1, 6.0, "infinite")
BACKWARD_WINDOW_ATTENUATION = 0.8


@dataclass(frozen=True)
class ExperimentConfig:
    nu1_khz: float = 2.5
    nu2_khz: float = 1.0
    tau_ms: float = 0.1
    temperatures: tuple = DEFAULT_TEMPERATURES
    samples: int = DEFAULT_SAMPLES
    rate_khz: float = DEFAULT_RATE_KHZ
    noise: NoiseModel = field(default_factory=NoiseModel)
    mc_trials: int = 1000
    seed: int = 0

    def protocol(self, direction: Direction = Direction.FORWARD) -> QuenchProtocol:
        return QuenchProtocol(self.nu1_khz, self.nu2_khz, self.tau_ms, direction)

    @property
    def window_ms(self) -> float:
        return (self.samples - 1) / self.rate_khz

    def temperature_label(self, index: int) -> str:
        return f"T{index}"

    def beta_for(self, entry) -> float:
        return _beta_from_temperature(entry)

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(to_dict(self), sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()


def _beta_from_temperature(entry) -> float:
    if entry == "zero":
        return math.inf
    if entry == "infinite":
        return 0.0
    return 1.0 / float(entry)


def default_gammas(samples: int, rate_khz: float) -> tuple[float, float]:
    """(gamma_f, gamma_b) giving the calibrated backward envelope loss."""
    window = (samples - 1) / rate_khz
    gamma_b = -math.log(BACKWARD_WINDOW_ATTENUATION) / window
    return gamma_b / 4.0, gamma_b


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _check_number(raw: dict, key: str, default, positive: bool = True):
    value = raw.get(key, default)
    _require(isinstance(value, (int, float)) and not isinstance(value, bool), f"{key} must be a number")
    _require(math.isfinite(float(value)), f"{key} must be finite")
    if positive:
        _require(float(value) > 0.0, f"{key} must be > 0")
    return float(value)


def from_dict(raw: dict) -> ExperimentConfig:
    """Validate a configuration mapping; error messages name the bad field."""
    _require(isinstance(raw, dict), "configuration must be a JSON object")
    known = {
        "nu1_khz", "nu2_khz", "tau_ms", "temperatures", "samples",
        "rate_khz", "noise", "mc_trials", "seed",
    }
    for key in raw:
        _require(key in known, f"unknown configuration field {key!r}")
    nu1 = _check_number(raw, "nu1_khz", 2.5)
    nu2 = _check_number(raw, "nu2_khz", 1.0)
    tau = _check_number(raw, "tau_ms", 0.1)
    samples = raw.get("samples", DEFAULT_SAMPLES)
    _require(isinstance(samples, int) and samples >= 2, "samples must be an integer >= 2")
    rate = _check_number(raw, "rate_khz", DEFAULT_RATE_KHZ)
    mc_trials = raw.get("mc_trials", 1000)
    _require(isinstance(mc_trials, int) and mc_trials >= 100, "mc_trials must be an integer >= 100")
    seed = raw.get("seed", 0)
    _require(isinstance(seed, int) and 0 <= seed < 2**64, "seed must be a u64 integer")

    temps = raw.get("temperatures", list(DEFAULT_TEMPERATURES))
    _require(isinstance(temps, (list, tuple)) and len(temps) > 0, "temperatures must be a non-empty list")
    parsed = []
    for i, entry in enumerate(temps):
        if entry in ("zero", "infinite"):
            parsed.append(entry)
            continue
        _require(
            isinstance(entry, (int, float)) and not isinstance(entry, bool) and float(entry) > 0.0,
            f"temperatures[{i}] must be a positive kHz value, \"zero\" or \"infinite\"",
        )
        parsed.append(float(entry))

    noise_raw = raw.get("noise", {})
    _require(isinstance(noise_raw, dict), "noise must be an object")
    noise_known = {"gamma_f_per_ms", "gamma_b_per_ms", "rf_sigma", "c_dephasing"}
    for key in noise_raw:
        _require(key in noise_known, f"unknown noise field {key!r}")
    gamma_f_default, gamma_b_default = default_gammas(samples, rate)
    gamma_f = noise_raw.get("gamma_f_per_ms")
    gamma_b = noise_raw.get("gamma_b_per_ms")
    if gamma_f is None:
        gamma_f = gamma_f_default
    if gamma_b is None:
        gamma_b = 4.0 * gamma_f if "gamma_f_per_ms" in noise_raw else gamma_b_default
    rf_sigma = noise_raw.get("rf_sigma", 0.0)
    c_deph = noise_raw.get("c_dephasing", 0.0)
    for key, value in (
        ("noise.gamma_f_per_ms", gamma_f),
        ("noise.gamma_b_per_ms", gamma_b),
        ("noise.rf_sigma", rf_sigma),
        ("noise.c_dephasing", c_deph),
    ):
        _require(
            isinstance(value, (int, float)) and not isinstance(value, bool) and float(value) >= 0.0,
            f"{key} must be a number >= 0",
        )
    _require(float(c_deph) <= 1.0, "noise.c_dephasing must be <= 1")
    noise = NoiseModel(float(gamma_f), float(gamma_b), float(rf_sigma), float(c_deph))

    return ExperimentConfig(
        nu1_khz=nu1,
        nu2_khz=nu2,
        tau_ms=tau,
        temperatures=tuple(parsed),
        samples=samples,
        rate_khz=rate,
        noise=noise,
        mc_trials=mc_trials,
        seed=seed,
    )


def to_dict(config: ExperimentConfig) -> dict:
    return {
        "nu1_khz": config.nu1_khz,
        "nu2_khz": config.nu2_khz,
        "tau_ms": config.tau_ms,
        "temperatures": list(config.temperatures),
        "samples": config.samples,
        "rate_khz": config.rate_khz,
        "noise": {
            "gamma_f_per_ms": config.noise.gamma_f_per_ms,
            "gamma_b_per_ms": config.noise.gamma_b_per_ms,
            "rf_sigma": config.noise.rf_sigma,
            "c_dephasing": config.noise.c_dephasing,
        },
        "mc_trials": config.mc_trials,
        "seed": config.seed,
    }


def load(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration file {path} is not valid JSON: {exc}") from exc
    return from_dict(raw)
