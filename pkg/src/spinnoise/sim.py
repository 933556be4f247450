"""Monte Carlo simulation of the thermal-state projection-noise sequence.

One load of the trap is followed by ``cycles_per_load`` cycles of

    thermal state preparation -> QND pulse train -> dispersive N_A readout

with binomial atom loss between cycles. Every random channel of every
(repetition, cycle) owns its own keyed stream (see :mod:`spinnoise.rng`), so
repetitions can run concurrently without changing the result.
"""

from __future__ import annotations

import math
import os
import warnings
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import DroppedBinsWarning, InvalidArgument
from .estimator import VariancePoint
from .model import REFERENCE_PARAMS, NoiseParams, check_spin, per_atom_variance
from .rng import check_seed, stream

NOISE_SOURCES = frozenset(
    {"shot", "electronic", "light_technical", "atomic_technical", "projection"}
)

THREADS_ENV = "SPINNOISE_THREADS"


@dataclass(frozen=True)
class SimConfig:
    truth: NoiseParams = REFERENCE_PARAMS
    initial_atoms: float = 8e5
    loading_rms: float = 0.02
    loss_per_cycle: float = 0.15
    cycles_per_load: int = 20
    repetitions: int = 500
    pulses_per_train: int = 40
    photons_per_pulse: float = 2.5e7
    meta_pulse_sizes: tuple = (1, 2, 5, 10, 20, 40)
    imaging_rms: float = 0.02
    seed: int = 0
    exact_sampling_threshold: int = 10_000
    # photons in the dispersive N_A probe; None means one full pulse train
    dispersive_photons: float | None = None
    noise_sources: frozenset = NOISE_SOURCES

    def __post_init__(self):
        object.__setattr__(self, "meta_pulse_sizes", tuple(int(k) for k in self.meta_pulse_sizes))
        object.__setattr__(self, "noise_sources", frozenset(self.noise_sources))
        check_seed(self.seed)
        if self.repetitions < 2:
            raise InvalidArgument("repetitions must be >= 2", "repetitions")
        if self.cycles_per_load < 1:
            raise InvalidArgument("cycles_per_load must be >= 1", "cycles_per_load")
        if not 0 <= self.loss_per_cycle < 1:
            raise InvalidArgument(
                f"loss_per_cycle must be in [0, 1), got {self.loss_per_cycle}", "loss_per_cycle"
            )
        if self.pulses_per_train < 1:
            raise InvalidArgument("pulses_per_train must be >= 1", "pulses_per_train")
        if not self.photons_per_pulse > 0:
            raise InvalidArgument("photons_per_pulse must be > 0", "photons_per_pulse")
        if not self.meta_pulse_sizes:
            raise InvalidArgument("meta_pulse_sizes must not be empty", "meta_pulse_sizes")
        for k in self.meta_pulse_sizes:
            if k < 1 or self.pulses_per_train % k:
                raise InvalidArgument(
                    f"meta-pulse size {k} does not divide pulses_per_train={self.pulses_per_train}",
                    "meta_pulse_sizes",
                )
        if self.initial_atoms < 0:
            raise InvalidArgument("initial_atoms must be >= 0", "initial_atoms")
        if self.loading_rms < 0:
            raise InvalidArgument("loading_rms must be >= 0", "loading_rms")
        if self.imaging_rms < 0:
            raise InvalidArgument("imaging_rms must be >= 0", "imaging_rms")
        if self.exact_sampling_threshold < 0:
            raise InvalidArgument(
                "exact_sampling_threshold must be >= 0", "exact_sampling_threshold"
            )
        if self.dispersive_photons is not None and not self.dispersive_photons > 0:
            raise InvalidArgument("dispersive_photons must be > 0", "dispersive_photons")
        unknown = self.noise_sources - NOISE_SOURCES
        if unknown:
            raise InvalidArgument(f"unknown noise sources {sorted(unknown)}", "noise_sources")

    @property
    def train_photons(self) -> float:
        return self.pulses_per_train * self.photons_per_pulse

    @property
    def probe_photons_dispersive(self) -> float:
        if self.dispersive_photons is None:
            return self.train_photons
        return self.dispersive_photons


@dataclass(frozen=True)
class TrialRecord:
    repetition: int
    cycle: int
    n_atoms_true: int
    n_atoms_imaging: float
    # F_z of the prepared state, including pumping (technical) fluctuations
    fz_true: float
    meta_pulse_signals: tuple  # of (n_photons_total, s_y_sum)
    dispersive_phi: float


@dataclass
class Dataset:
    config: SimConfig
    records: list = field(default_factory=list)
    version: str = __version__

    @property
    def seed(self) -> int:
        return self.config.seed

    def dispersive_pairs(self) -> list[tuple[float, float]]:
        return [(r.dispersive_phi, r.n_atoms_imaging) for r in self.records]


# -- state preparation -------------------------------------------------------


def load_atoms(mean: float, rms: float, rng: np.random.Generator) -> int:
    return max(0, int(round(mean * (1.0 + rms * rng.standard_normal()))))


def thin_atoms(n_atoms, loss: float, rng: np.random.Generator):
    """Binomial thinning: each atom survives independently with 1 - loss."""
    return rng.binomial(n_atoms, 1.0 - loss)


def sample_thermal_fz(
    n_atoms: int,
    f: float,
    rng: np.random.Generator,
    *,
    exact_threshold: int = 10_000,
    size=None,
):
    """Draw F_z of ``n_atoms`` spins in the completely mixed state.

    Up to ``exact_threshold`` atoms the draw is exact: the level occupations
    are multinomial over the 2f+1 values m = -f..f. Above it, a Gaussian of
    variance n f(f+1)/3 is rounded to the nearest attainable value
    (integers, shifted by 1/2 when n*f is half-integer).
    """
    check_spin(f)
    n_atoms = int(n_atoms)
    if n_atoms < 0:
        raise InvalidArgument("n_atoms must be >= 0", "n_atoms")
    if n_atoms == 0:
        return 0.0 if size is None else np.zeros(size)
    if n_atoms <= exact_threshold:
        dim = int(round(2 * f)) + 1
        levels = np.arange(dim) - f
        counts = rng.multinomial(n_atoms, np.full(dim, 1.0 / dim), size=size)
        fz = counts @ levels
        return float(fz) if size is None else fz
    sd = math.sqrt(n_atoms * per_atom_variance(f))
    offset = (n_atoms * f) % 1.0
    fz = np.round(rng.normal(0.0, sd, size=size) - offset) + offset
    return float(fz) if size is None else fz


def apply_atomic_technical_noise(fz, n_atoms: float, params: NoiseParams, rng: np.random.Generator):
    """Add the pumping-induced excess, variance beta N_A**2 V1, once per preparation."""
    beta = params.atomic_technical
    if beta == 0:
        return fz
    sd = math.sqrt(beta * n_atoms**2 * params.per_atom_variance)
    return fz + rng.normal(0.0, sd, size=np.shape(fz) or None)


# -- probing -----------------------------------------------------------------


def simulate_pulse(
    fz_effective: float,
    n_photons: float,
    epsilon_imbalance: float,
    params: NoiseParams,
    rng: np.random.Generator | None,
    *,
    size=None,
    shot_noise: bool = True,
):
    """S_y of one probe pulse (or ``size`` pulses sharing the same F_z and imbalance).

    Electronic noise is not added here; it enters once per meta-pulse.
    """
    if not n_photons > 0:
        raise InvalidArgument(f"n_photons must be > 0, got {n_photons}", "n_photons")
    half = n_photons / 2.0
    signal = params.coupling * half * fz_effective + epsilon_imbalance * half
    if shot_noise:
        signal = signal + rng.normal(0.0, math.sqrt(n_photons / 4.0), size=size)
    elif size is not None:
        signal = np.full(size, signal)
    return signal


def aggregate_meta_pulses(
    pulses,
    sizes,
    *,
    electronic_variance: float = 0.0,
    rng: np.random.Generator | None = None,
) -> list[tuple[float, float]]:
    """Sum contiguous runs of pulses into meta-pulses.

    ``pulses`` is a sequence of (n_photons, s_y) pairs. Meta-pulse j sums the
    next ``sizes[j]`` pulses; trailing pulses not covered by ``sizes`` are
    ignored. One electronic-noise sample is added to each meta-pulse.
    """
    pulses = np.asarray(pulses, dtype=float).reshape(-1, 2)
    sizes = [int(k) for k in sizes]
    if not sizes or min(sizes) < 1:
        raise InvalidArgument("meta-pulse sizes must be positive", "meta_pulse_sizes")
    if sum(sizes) > len(pulses):
        raise InvalidArgument(
            f"meta-pulse sizes sum to {sum(sizes)} but only {len(pulses)} pulses available",
            "meta_pulse_sizes",
        )
    if electronic_variance < 0:
        raise InvalidArgument("electronic_variance must be >= 0", "electronic")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    used = pulses[: sum(sizes)]
    sums = np.add.reduceat(used, starts, axis=0)
    if electronic_variance > 0:
        if rng is None:
            raise InvalidArgument("rng required when electronic_variance > 0", "rng")
        sums[:, 1] += rng.normal(0.0, math.sqrt(electronic_variance), size=len(sizes))
    return [(float(n), float(s)) for n, s in sums]


def simulate_dispersive_na(
    n_atoms: float,
    n_photons: float,
    params: NoiseParams,
    rng: np.random.Generator | None,
    *,
    shot_noise: bool = True,
    electronic_noise: bool = True,
) -> tuple[float, float]:
    """Rotation of a fully z-polarized sample; returns (phi, N_A estimate)."""
    if not n_photons > 0:
        raise InvalidArgument(f"n_photons must be > 0, got {n_photons}", "n_photons")
    s_y = params.coupling * n_atoms * n_photons / 2.0
    if shot_noise:
        s_y += rng.normal(0.0, math.sqrt(n_photons / 4.0))
    if electronic_noise and params.electronic > 0:
        s_y += rng.normal(0.0, math.sqrt(params.electronic))
    phi = 2.0 * s_y / n_photons
    return phi, phi / params.coupling


def simulate_absorption_imaging(n_atoms: float, imaging_rms: float, rng: np.random.Generator) -> float:
    if imaging_rms < 0:
        raise InvalidArgument("imaging_rms must be >= 0", "imaging_rms")
    if imaging_rms == 0:
        return float(n_atoms)
    return max(0.0, n_atoms * (1.0 + imaging_rms * rng.standard_normal()))


# -- sequence ----------------------------------------------------------------


def _run_repetition(config: SimConfig, rep: int) -> list[TrialRecord]:
    truth = config.truth
    on = config.noise_sources
    seed = config.seed
    n_pulses = config.pulses_per_train
    n_photons = config.photons_per_pulse
    records = []
    n_atoms = 0
    for cycle in range(config.cycles_per_load):
        if cycle == 0:
            n_atoms = load_atoms(
                config.initial_atoms, config.loading_rms, stream(seed, rep, cycle, "loading")
            )
        else:
            n_atoms = int(thin_atoms(n_atoms, config.loss_per_cycle, stream(seed, rep, cycle, "loss")))

        fz = 0.0
        if "projection" in on:
            fz = sample_thermal_fz(
                n_atoms,
                truth.spin,
                stream(seed, rep, cycle, "thermal"),
                exact_threshold=config.exact_sampling_threshold,
            )
        if "atomic_technical" in on:
            fz = apply_atomic_technical_noise(
                fz, n_atoms, truth, stream(seed, rep, cycle, "atomic_technical")
            )

        eps = 0.0
        if "light_technical" in on and truth.light_technical > 0:
            eps = stream(seed, rep, cycle, "imbalance").normal(
                0.0, math.sqrt(4.0 * truth.light_technical)
            )

        s_y = simulate_pulse(
            fz,
            n_photons,
            eps,
            truth,
            stream(seed, rep, cycle, "shot"),
            size=n_pulses,
            shot_noise="shot" in on,
        )
        pulses = np.column_stack([np.full(n_pulses, n_photons), s_y])
        v_e = truth.electronic if "electronic" in on else 0.0
        rng_el = stream(seed, rep, cycle, "electronic")
        meta = []
        for k in config.meta_pulse_sizes:
            meta.extend(
                aggregate_meta_pulses(pulses, [k] * (n_pulses // k), electronic_variance=v_e, rng=rng_el)
            )

        phi, _ = simulate_dispersive_na(
            n_atoms,
            config.probe_photons_dispersive,
            truth,
            stream(seed, rep, cycle, "dispersive"),
            shot_noise="shot" in on,
            electronic_noise="electronic" in on,
        )
        imaged = simulate_absorption_imaging(
            n_atoms, config.imaging_rms, stream(seed, rep, cycle, "imaging")
        )
        records.append(
            TrialRecord(
                repetition=rep,
                cycle=cycle,
                n_atoms_true=int(n_atoms),
                n_atoms_imaging=float(imaged),
                fz_true=float(fz),
                meta_pulse_signals=tuple(meta),
                dispersive_phi=float(phi),
            )
        )
    return records


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_sequence(config: SimConfig, *, threads: int | None = None) -> Dataset:
    """Simulate all repetitions; the result does not depend on ``threads``."""
    threads = default_threads() if threads is None else max(1, int(threads))
    reps = range(config.repetitions)
    if threads == 1:
        chunks = [_run_repetition(config, rep) for rep in reps]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda rep: _run_repetition(config, rep), reps))
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (r.repetition, r.cycle))
    return Dataset(config=config, records=records)


# -- tabulation --------------------------------------------------------------


@dataclass(frozen=True)
class BinningRule:
    """Groups records into atom-number bins by cycle index.

    ``cycles_per_bin`` consecutive cycles share a bin; 1 means one bin per cycle.
    Text form: ``"cycle"`` or ``"cycle:<k>"``.
    """

    cycles_per_bin: int = 1

    def __post_init__(self):
        if self.cycles_per_bin < 1:
            raise InvalidArgument("cycles_per_bin must be >= 1", "binning")

    @classmethod
    def parse(cls, text: str | "BinningRule") -> "BinningRule":
        if isinstance(text, BinningRule):
            return text
        name, _, arg = str(text).strip().partition(":")
        if name != "cycle":
            raise InvalidArgument(f"unknown binning rule {text!r}", "binning")
        try:
            return cls(int(arg) if arg else 1)
        except ValueError:
            raise InvalidArgument(f"bad binning rule {text!r}", "binning") from None

    def __str__(self):
        return "cycle" if self.cycles_per_bin == 1 else f"cycle:{self.cycles_per_bin}"

    def bin_of(self, record: TrialRecord) -> int:
        return record.cycle // self.cycles_per_bin


def first_meta_pulses(record: TrialRecord) -> dict[float, float]:
    """First meta-pulse of each photon total; later ones share F_z and are not independent."""
    out = {}
    for n, s in record.meta_pulse_signals:
        out.setdefault(n, s)
    return out


def tabulate_variances(dataset: Dataset, binning="cycle") -> list[VariancePoint]:
    """Sample variance of S_y per (atom-number bin, meta-pulse photon total).

    Each record contributes the first meta-pulse of every size. Points from
    the same bin carry the bin index as their ``group``. Bins with fewer than
    two samples are dropped and counted in a warning.
    """
    rule = BinningRule.parse(binning)
    signals = defaultdict(list)
    imaged = defaultdict(list)
    for rec in dataset.records:
        b = rule.bin_of(rec)
        imaged[b].append(rec.n_atoms_imaging)
        for n, s in first_meta_pulses(rec).items():
            signals[(b, n)].append(s)

    points = []
    dropped = 0
    for (b, n) in sorted(signals):
        s = np.asarray(signals[(b, n)])
        if len(s) < 2:
            dropped += 1
            continue
        points.append(
            VariancePoint(
                n_atoms=float(np.mean(imaged[b])),
                n_photons=float(n),
                variance=float(np.var(s, ddof=1)),
                m_samples=len(s),
                group=b,
            )
        )
    if dropped:
        warnings.warn(f"dropped {dropped} bins with fewer than 2 samples", DroppedBinsWarning)
    return points
