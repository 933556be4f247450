"""Analytic noise model for Faraday-rotation QND readout of a collective spin.

All variances are in squared S_y photon-count units, where the shot noise of a
pulse with ``n_photons`` photons is exactly ``n_photons / 4``. Spin quantities
are in units of hbar.

The measured polarimeter variance is the sum of five terms::

    electronic          V_E
    light_shot          N_L / 4
    light_technical     alpha * N_L**2
    atomic_projection   G**2 * V1 * N_L**2 / 4 * N_A
    atomic_technical    beta * G**2 * V1 * N_L**2 / 4 * N_A**2

with ``V1 = F(F+1)/3`` the per-atom variance of the completely mixed state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgument

TERMS = (
    "electronic",
    "light_shot",
    "light_technical",
    "atomic_projection",
    "atomic_technical",
)


def check_spin(f: float) -> None:
    if not (f >= 0.5 and float(2 * f).is_integer()):
        raise InvalidArgument(f"spin must be a positive integer or half-integer, got {f}", "spin")


def per_atom_variance(f: float) -> float:
    return f * (f + 1.0) / 3.0


@dataclass(frozen=True)
class NoiseParams:
    """Calibration constants of the readout.

    ``coupling`` is the rotation of S_y per unit F_z per unit S_x (G);
    ``electronic`` the detector noise floor (V_E); ``light_technical`` and
    ``atomic_technical`` the quadratic excess-noise coefficients (alpha, beta);
    ``spin`` the hyperfine quantum number F.
    """

    coupling: float
    electronic: float = 0.0
    light_technical: float = 0.0
    atomic_technical: float = 0.0
    spin: float = 1.0

    def __post_init__(self):
        if not self.coupling > 0:
            raise InvalidArgument(f"coupling must be > 0, got {self.coupling}", "coupling")
        if not self.electronic >= 0:
            raise InvalidArgument(f"electronic must be >= 0, got {self.electronic}", "electronic")
        if not self.light_technical >= 0:
            raise InvalidArgument(
                f"light_technical must be >= 0, got {self.light_technical}", "light_technical"
            )
        if not self.atomic_technical >= 0:
            raise InvalidArgument(
                f"atomic_technical must be >= 0, got {self.atomic_technical}", "atomic_technical"
            )
        check_spin(self.spin)

    @property
    def per_atom_variance(self) -> float:
        return per_atom_variance(self.spin)

    @property
    def atomic_gain(self) -> float:
        """Projection-noise variance per atom per photon squared, G**2 V1 / 4."""
        return self.coupling**2 * self.per_atom_variance / 4.0


# Fitted constants of the reference apparatus (F=1 manifold of 87Rb).
REFERENCE_PARAMS = NoiseParams(
    coupling=6.65e-8,
    electronic=4.9e5,
    light_technical=4.3e-11,
    atomic_technical=3.1e-7,
    spin=1.0,
)


@dataclass(frozen=True)
class OperatingPoint:
    n_atoms: float
    n_photons: float

    def __post_init__(self):
        if np.any(np.asarray(self.n_atoms) < 0):
            raise InvalidArgument("n_atoms must be >= 0", "n_atoms")
        if np.any(np.asarray(self.n_photons) < 0):
            raise InvalidArgument("n_photons must be >= 0", "n_photons")


@dataclass(frozen=True)
class NoiseBudget:
    electronic: float
    light_shot: float
    light_technical: float
    atomic_projection: float
    atomic_technical: float
    db_below_projection: dict = field(default_factory=dict)
    # terms whose dB margin is undefined (term or projection is zero)
    undefined_db: tuple = ()

    @property
    def total(self) -> float:
        return (
            self.electronic
            + self.light_shot
            + self.light_technical
            + self.atomic_projection
            + self.atomic_technical
        )

    def terms(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in TERMS}


class Crossovers(NamedTuple):
    atoms: float
    photons: float


def variance_terms(params: NoiseParams, n_atoms, n_photons) -> dict:
    """The five terms of the measured variance; broadcasts over arrays."""
    n_atoms = np.asarray(n_atoms, dtype=float)
    n_photons = np.asarray(n_photons, dtype=float)
    nl2 = n_photons * n_photons
    projection = params.atomic_gain * nl2 * n_atoms
    terms = {
        "electronic": params.electronic + 0.0 * (n_atoms + n_photons),
        "light_shot": n_photons / 4.0 + 0.0 * n_atoms,
        "light_technical": params.light_technical * nl2 + 0.0 * n_atoms,
        "atomic_projection": projection,
        "atomic_technical": params.atomic_technical * projection * n_atoms,
    }
    if terms["electronic"].ndim == 0:
        return {k: float(v) for k, v in terms.items()}
    return terms


def variance_model(params: NoiseParams, point: OperatingPoint):
    """Total polarimeter variance var(S_y) at ``point``."""
    t = variance_terms(params, point.n_atoms, point.n_photons)
    return (
        t["electronic"]
        + t["light_shot"]
        + t["light_technical"]
        + t["atomic_projection"]
        + t["atomic_technical"]
    )


def noise_budget(params: NoiseParams, point: OperatingPoint) -> NoiseBudget:
    t = variance_terms(params, float(point.n_atoms), float(point.n_photons))
    projection = t["atomic_projection"]
    margins = {}
    undefined = []
    for name in TERMS:
        if name == "atomic_projection":
            continue
        if t[name] > 0 and projection > 0:
            # difference of logs: the ratio itself can under- or overflow
            margins[name] = 10.0 * (math.log10(projection) - math.log10(t[name]))
        else:
            undefined.append(name)
    return NoiseBudget(**t, db_below_projection=margins, undefined_db=tuple(undefined))


def thermal_variance(n_atoms: float, f: float) -> float:
    """var(F_n) of ``n_atoms`` spins in the completely mixed state."""
    if n_atoms < 0:
        raise InvalidArgument(f"n_atoms must be >= 0, got {n_atoms}", "n_atoms")
    check_spin(f)
    return n_atoms * per_atom_variance(f)


def projection_noise_spins(n_atoms: float, f: float = 1.0) -> float:
    return math.sqrt(thermal_variance(n_atoms, f))


def estimate_fz(s_y_out, n_photons: float, g: float):
    """Invert the mean rotation: F_z = 2 S_y / (G N_L)."""
    if not n_photons > 0:
        raise InvalidArgument(f"n_photons must be > 0, got {n_photons}", "n_photons")
    if not g > 0:
        raise InvalidArgument(f"coupling must be > 0, got {g}", "coupling")
    return 2.0 * s_y_out / (g * n_photons)


def readout_noise_spins(params: NoiseParams, n_photons: float) -> float:
    """Spin-equivalent standard deviation of all light and detector noise."""
    if not n_photons > 0:
        raise InvalidArgument(f"n_photons must be > 0, got {n_photons}", "n_photons")
    light = params.electronic + n_photons / 4.0 + params.light_technical * n_photons**2
    gain = params.coupling**2 * n_photons**2 / 4.0
    return math.sqrt(light / gain)


def readout_margin_db(params: NoiseParams, n_atoms: float, n_photons: float) -> float:
    """How far the readout noise sits below projection noise, in dB of variance."""
    readout = readout_noise_spins(params, n_photons) ** 2
    projection = thermal_variance(n_atoms, params.spin)
    if not projection > 0:
        raise InvalidArgument("n_atoms must be > 0 for a margin", "n_atoms")
    return 10.0 * (math.log10(projection) - math.log10(readout))


def crossover_points(params: NoiseParams) -> Crossovers:
    """Atom and photon numbers where technical noise reaches its quantum counterpart.

    A zero technical coefficient gives ``math.inf`` for that axis.
    """
    beta = params.atomic_technical
    alpha = params.light_technical
    atoms = 1.0 / beta if beta > 0 else math.inf
    photons = 1.0 / (4.0 * alpha) if alpha > 0 else math.inf
    return Crossovers(atoms, photons)
