import numpy as np
import pytest

from qwork.config import default_gammas
from qwork.interferometer import MagnetizationSeries, NoiseModel, sample_series
from qwork.quench import Direction, QuenchProtocol
from qwork.spectral import fit_model, periodogram, symmetric_peak_guess

REF_KT = (1.9, 3.1, 6.0)
MEASUREMENT_NOISE_SD = 0.01
CALIBRATION_SEEDS = 100


@pytest.fixture(scope="session")
def forward():
    return QuenchProtocol(2.5, 1.0, 0.1)


@pytest.fixture(scope="session")
def backward(forward):
    return forward.reversed()


@pytest.fixture(scope="session")
def decay_noise():
    gamma_f, gamma_b = default_gammas(360, 17.9)
    return NoiseModel(gamma_f_per_ms=gamma_f, gamma_b_per_ms=gamma_b)


def white_noise_series(base: MagnetizationSeries, sd: float, seed: int) -> MagnetizationSeries:
    """Additive complex measurement noise, the regime the fit's sigmas model."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n = len(base.samples)
    noisy = base.samples + sd * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return MagnetizationSeries(base.u_ms, noisy, base.meta)


@pytest.fixture(scope="session")
def noisy_pipeline(forward, backward, decay_noise):
    """Seeded measurement-noise fits at the three finite reference temperatures.

    result[kt] is a list over seeds of {direction: FitModel}.
    """
    result = {}
    for kt_index, kt in enumerate(REF_KT):
        beta = 1.0 / kt
        bases = {
            Direction.FORWARD: sample_series(forward, beta, decay_noise, seed=0),
            Direction.BACKWARD: sample_series(backward, beta, decay_noise, seed=0),
        }
        runs = []
        for seed in range(CALIBRATION_SEEDS):
            fits = {}
            for d_index, (direction, base) in enumerate(bases.items()):
                noise_seed = 100000 * kt_index + 10 * seed + d_index
                series = white_noise_series(base, MEASUREMENT_NOISE_SD, noise_seed)
                guess = symmetric_peak_guess(periodogram(series))
                fits[direction] = fit_model(series, guess, decay_noise.gamma_for(direction))
            runs.append(fits)
        result[kt] = runs
    return result
