"""Fast consistency checks runnable from an installed package."""

from __future__ import annotations

import dataclasses
import itertools
import math
import time
from typing import Callable, NamedTuple

import numpy as np

from .. import model
from ..estimator import VariancePoint, fit_noise_surface
from ..model import REFERENCE_PARAMS, NoiseParams, OperatingPoint
from ..sim import SimConfig, run_sequence, sample_thermal_fz, tabulate_variances
from . import formats


class Check(NamedTuple):
    name: str
    passed: bool
    detail: str


def _with_per_atom_variance(params: NoiseParams, v1: float) -> NoiseParams:
    """Copy of ``params`` whose per-atom variance is forced to ``v1`` (fault injection)."""

    class Injected(NoiseParams):
        @property
        def per_atom_variance(self):
            return v1

    return Injected(**dataclasses.asdict(params))


def check_budget(params: NoiseParams) -> Check:
    b = model.noise_budget(params, OperatingPoint(7.6e5, 1e9)).db_below_projection
    want = {
        "light_shot": (3.5, 0.2),
        "atomic_technical": (6.3, 0.2),
        "light_technical": (11.2, 0.3),
        "electronic": (30.0, 1.0),
    }
    ok = all(abs(b[k] - v) <= tol for k, (v, tol) in want.items())
    detail = ", ".join(f"{k}={b[k]:.2f}" for k in want)
    return Check("dB budget at (7.6e5, 1e9)", ok, detail)


def check_sensitivity(params: NoiseParams) -> Check:
    readout = model.readout_noise_spins(params, 1e9)
    projection = model.projection_noise_spins(7.6e5, params.spin)
    margin = model.readout_margin_db(params, 7.6e5, 1e9)
    ok = 490 <= readout <= 540 and abs(projection - 712) <= 1 and abs(margin - 2.8) <= 0.1
    return Check(
        "sensitivity figures",
        ok,
        f"readout={readout:.1f} spins, projection={projection:.1f} spins, margin={margin:.2f} dB",
    )


def check_crossovers(params: NoiseParams) -> Check:
    atoms, photons = model.crossover_points(params)
    ok = abs(atoms / 3.2e6 - 1) <= 0.02 and abs(photons / 5.8e9 - 1) <= 0.02
    return Check("crossover points", ok, f"atoms={atoms:.4g}, photons={photons:.4g}")


def noiseless_grid(params: NoiseParams, atoms=None, photons=None, m: int = 500):
    atoms = (0.0, 1e5, 3e5, 5e5, 8e5) if atoms is None else atoms
    photons = (2.5e7, 1e8, 5e8, 1e9) if photons is None else photons
    return [
        VariancePoint(a, n, model.variance_model(params, OperatingPoint(a, n)), m)
        for a in atoms
        for n in photons
    ]


def check_noiseless_fit(params: NoiseParams) -> Check:
    fit = fit_noise_surface(noiseless_grid(params), params.spin)
    truth = np.array(
        [params.electronic, params.light_technical, params.atomic_gain,
         params.atomic_technical * params.atomic_gain]
    )
    err = float(np.max(np.abs(fit.coefficients / truth - 1)))
    return Check("noiseless fit round trip", err < 1e-8, f"max relative error {err:.2e}")


def thermal_enumeration(n_atoms: int, f: float = 1.0) -> dict[float, float]:
    """Exact distribution of F_z for ``n_atoms`` completely mixed spins."""
    levels = np.arange(int(round(2 * f)) + 1) - f
    weight = 1.0 / len(levels) ** n_atoms
    dist: dict[float, float] = {}
    for combo in itertools.product(levels, repeat=n_atoms):
        s = float(sum(combo))
        dist[s] = dist.get(s, 0.0) + weight
    return dist


def check_thermal(seed: int, draws: int = 300_000) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    ok = True
    for n in (1, 2, 3, 4):
        dist = thermal_enumeration(n)
        var = sum(p * s * s for s, p in dist.items())
        exact_ok = math.isclose(var, 2 * n / 3, rel_tol=1e-12)
        samples = sample_thermal_fz(n, 1.0, rng, size=draws)
        # sampling sd of a sample variance: sqrt((mu4 - var^2) / draws)
        mu4 = sum(p * s**4 for s, p in dist.items())
        z = (np.var(samples, ddof=1) - var) / math.sqrt((mu4 - var**2) / draws)
        worst = max(worst, abs(z))
        ok = ok and exact_ok and abs(z) <= 3
    return Check("thermal sampler vs enumeration", ok, f"worst |z|={worst:.2f}")


ISOLATED_SOURCES = ("shot", "electronic", "light_technical", "atomic_technical", "projection")


def isolation_config(source: str, seed: int, repetitions: int = 500) -> SimConfig:
    return SimConfig(
        truth=REFERENCE_PARAMS,
        repetitions=repetitions,
        cycles_per_load=1,
        initial_atoms=7.6e5,
        meta_pulse_sizes=(40,),
        seed=seed,
        noise_sources=frozenset({source}),
    )


def isolation_statistic(source: str, seed: int, repetitions: int = 500) -> tuple[float, float, int]:
    """(empirical variance, closed form, samples) with one noise source switched on."""
    cfg = isolation_config(source, seed, repetitions)
    point = tabulate_variances(run_sequence(cfg))[0]
    truth = cfg.truth
    n_l = point.n_photons
    if source == "projection":
        expected = truth.atomic_gain * n_l**2 * point.n_atoms
    else:
        terms = model.variance_terms(truth, point.n_atoms, n_l)
        expected = terms[{"shot": "light_shot"}.get(source, source)]
    return point.variance, expected, point.m_samples


def check_isolation(seed: int) -> Check:
    worst = 0.0
    ok = True
    for source in ISOLATED_SOURCES:
        var, expected, m = isolation_statistic(source, seed)
        rel = abs(var / expected - 1)
        worst = max(worst, rel / (4 * math.sqrt(2 / (m - 1))))
        ok = ok and rel <= 4 * math.sqrt(2 / (m - 1))
    return Check("single-source noise isolation", ok, f"worst deviation {worst:.2f} of tolerance")


def check_determinism(seed: int) -> Check:
    cfg = SimConfig(repetitions=4, cycles_per_load=3, seed=seed)
    a = formats.dataset_to_text(run_sequence(cfg, threads=1))
    b = formats.dataset_to_text(run_sequence(cfg, threads=3))
    return Check("determinism across thread counts", a == b, f"{len(a)} bytes")


def run_selftest(seed: int = 0, *, inject_per_atom_variance: float | None = None) -> list[Check]:
    params = REFERENCE_PARAMS
    if inject_per_atom_variance is not None:
        params = _with_per_atom_variance(params, inject_per_atom_variance)
    steps: list[Callable[[], Check]] = [
        lambda: check_budget(params),
        lambda: check_sensitivity(params),
        lambda: check_crossovers(params),
        lambda: check_noiseless_fit(params),
        lambda: check_thermal(seed),
        lambda: check_isolation(seed),
        lambda: check_determinism(seed),
    ]
    results = []
    for step in steps:
        t0 = time.perf_counter()
        check = step()
        results.append(check._replace(detail=f"{check.detail} [{time.perf_counter() - t0:.2f}s]"))
    return results
