"""Weighted least-squares calibration of the five-term noise model.

With the shot-noise term N_L/4 subtracted as known, the measured variance is
linear in four coefficients

    c = (V_E, alpha, A, B),   A = G**2 V1 / 4,   B = beta * A

over the basis {1, N_L**2, N_L**2 N_A, N_L**2 N_A**2}. Each point's weight is
the inverse variance of a Gaussian sample variance, (m - 1) / (2 var**2),
evaluated at the model prediction and iterated to a fixed point.

Points tagged with the same ``group`` were computed from the same trials
(nested meta-pulses starting at the first pulse of a train), so their sample
variances are correlated. The weights stay diagonal, but the reported
covariance is the sandwich form built from the model-predicted correlation
between those points.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr, solve_triangular

from .errors import (
    AtomicTermUnidentifiable,
    ConvergenceWarning,
    IllPosedDesign,
    InvalidArgument,
)
from .model import NoiseParams, check_spin, per_atom_variance

COLUMNS = ("electronic", "light_technical", "atomic_projection", "atomic_technical")
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class VariancePoint:
    n_atoms: float
    n_photons: float
    variance: float
    m_samples: int
    group: int | None = None  # points sharing a group come from the same trials

    def __post_init__(self):
        if self.m_samples < 2:
            raise InvalidArgument("m_samples must be >= 2", "m_samples")
        if not self.variance >= 0:
            raise InvalidArgument("variance must be >= 0", "variance")
        if self.n_atoms < 0 or self.n_photons < 0:
            raise InvalidArgument("counts must be >= 0", "n_atoms")


@dataclass(frozen=True)
class Design:
    response: np.ndarray  # variance minus known shot term
    basis: np.ndarray  # columns scaled to unit norm
    scales: np.ndarray  # basis = raw / scales
    shot: np.ndarray
    columns: tuple

    @property
    def raw_basis(self) -> np.ndarray:
        return self.basis * self.scales


def build_design(points, *, fit_shot: bool = False, check_rank: bool = True) -> Design:
    """Response vector and unit-norm basis for ``points``.

    With ``fit_shot`` the shot term becomes a fifth column (coefficient 1/4
    expected) instead of being subtracted.
    """
    points = list(points)
    if not points:
        raise IllPosedDesign("no variance points")
    na = np.array([p.n_atoms for p in points], dtype=float)
    nl = np.array([p.n_photons for p in points], dtype=float)
    var = np.array([p.variance for p in points], dtype=float)
    nl2 = nl * nl
    cols = [np.ones_like(nl), nl2, nl2 * na, nl2 * na * na]
    names = COLUMNS
    shot = nl / 4.0
    if fit_shot:
        cols.insert(1, nl)
        names = COLUMNS[:1] + ("light_shot",) + COLUMNS[1:]
        shot = np.zeros_like(nl)
    raw = np.column_stack(cols)
    scales = np.linalg.norm(raw, axis=0)
    scales[scales == 0] = 1.0
    basis = raw / scales
    if check_rank:
        if basis.shape[0] < basis.shape[1]:
            raise IllPosedDesign(
                f"{basis.shape[0]} points cannot determine {basis.shape[1]} coefficients"
            )
        cond = np.linalg.cond(basis)
        if not cond <= MAX_CONDITION:
            raise IllPosedDesign(f"design condition number {cond:.3g} exceeds {MAX_CONDITION:g}")
    return Design(response=var - shot, basis=basis, scales=scales, shot=shot, columns=names)


def weighted_lstsq(basis: np.ndarray, response: np.ndarray, weights: np.ndarray):
    """Solve min sum w (y - X c)**2 by QR of the row-weighted basis.

    Returns the coefficients and the triangular factor R, so that the
    coefficient covariance for absolute weights is (R^T R)^-1.
    """
    sw = np.sqrt(weights)
    q, r = qr(basis * sw[:, None], mode="economic")
    coef = solve_triangular(r, q.T @ (response * sw))
    return coef, r


@dataclass(frozen=True)
class FitResult:
    coupling: float
    electronic: float
    light_technical: float
    atomic_technical: float
    spin: float
    coefficients: np.ndarray  # (V_E, alpha, A, B), plus shot slope if fitted
    columns: tuple
    covariance: np.ndarray
    residuals: np.ndarray  # measured - model, variance units
    weights: np.ndarray
    chi_square: float
    dof: int
    iterations: int
    converged: bool

    def _index(self, name: str) -> int:
        return self.columns.index(name)

    def sigma(self, name: str) -> float:
        i = self._index(name)
        return math.sqrt(self.covariance[i, i])

    @property
    def sigma_coupling(self) -> float:
        # G = 2 sqrt(A / V1)  =>  dG/dA = 1 / sqrt(A V1)
        a = self.coefficients[self._index("atomic_projection")]
        return self.sigma("atomic_projection") / math.sqrt(a * per_atom_variance(self.spin))

    @property
    def sigma_atomic_technical(self) -> float:
        ia, ib = self._index("atomic_projection"), self._index("atomic_technical")
        a, b = self.coefficients[ia], self.coefficients[ib]
        c = self.covariance
        var = c[ib, ib] / a**2 + b**2 * c[ia, ia] / a**4 - 2 * b * c[ia, ib] / a**3
        return math.sqrt(max(var, 0.0))

    @property
    def reduced_chi_square(self) -> float:
        return self.chi_square / self.dof if self.dof > 0 else math.nan

    @property
    def params(self) -> NoiseParams:
        """Fitted constants as NoiseParams; raises if a technical term fitted negative."""
        return NoiseParams(
            coupling=self.coupling,
            electronic=self.electronic,
            light_technical=self.light_technical,
            atomic_technical=self.atomic_technical,
            spin=self.spin,
        )


def fit_noise_surface(
    points,
    f: float = 1.0,
    *,
    fit_shot: bool = False,
    max_iter: int = 10,
    tol: float = 1e-6,
) -> FitResult:
    check_spin(f)
    points = list(points)
    if points and all(p.n_atoms == 0 for p in points):
        raise AtomicTermUnidentifiable("no point has atoms; the atomic columns vanish")
    design = build_design(points, fit_shot=fit_shot)
    y = design.response
    x = design.basis
    m = np.array([p.m_samples for p in points], dtype=float)
    measured = np.array([p.variance for p in points], dtype=float)

    positive = measured[measured > 0]
    floor = positive.min() if positive.size else 1.0
    weights = (m - 1.0) / (2.0 * np.maximum(measured, floor) ** 2)

    coef, r = weighted_lstsq(x, y, weights)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        predicted = x @ coef + design.shot
        # a nonpositive prediction carries no usable weight; keep the measured one
        predicted = np.where(predicted > 0, predicted, np.maximum(measured, floor))
        weights = (m - 1.0) / (2.0 * predicted**2)
        new, r = weighted_lstsq(x, y, weights)
        change = np.linalg.norm(new - coef) / max(np.linalg.norm(new), np.finfo(float).tiny)
        coef = new
        if change < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"reweighting did not converge in {max_iter} iterations", ConvergenceWarning
        )

    r_inv = solve_triangular(r, np.eye(r.shape[0]))
    bread = r_inv @ r_inv.T
    coefficients = coef / design.scales
    groups = [p.group for p in points]
    if any(g is not None for g in groups):
        c = correlated_variance_covariance(points, coefficients, design.columns)
        meat = (x * weights[:, None]).T @ c @ (x * weights[:, None])
        bread = bread @ meat @ bread
    cov = bread / np.outer(design.scales, design.scales)
    cov = 0.5 * (cov + cov.T)
    residuals = y - x @ coef
    chi2 = float(np.sum(weights * residuals**2))

    names = design.columns
    a = coefficients[names.index("atomic_projection")]
    b = coefficients[names.index("atomic_technical")]
    if not a > 0:
        raise AtomicTermUnidentifiable(f"fitted projection coefficient {a:.3g} is not positive")
    v1 = per_atom_variance(f)
    return FitResult(
        coupling=2.0 * math.sqrt(a / v1),
        electronic=float(coefficients[names.index("electronic")]),
        light_technical=float(coefficients[names.index("light_technical")]),
        atomic_technical=float(b / a),
        spin=f,
        coefficients=coefficients,
        columns=names,
        covariance=cov,
        residuals=residuals,
        weights=weights,
        chi_square=chi2,
        dof=len(points) - len(names),
        iterations=iterations,
        converged=converged,
    )


def correlated_variance_covariance(points, coefficients, columns=COLUMNS) -> np.ndarray:
    """Model-predicted covariance matrix of the sample variances of ``points``.

    Within a group, two meta-pulses of N_i and N_j photons overlap in
    min(N_i, N_j) photons and share F_z and the trial imbalance, so

        cov(s_i, s_j) = (alpha + A N_A + B N_A**2) N_i N_j + shot * min(N_i, N_j)

    plus V_E on the diagonal, and for Gaussian signals
    cov(var_i, var_j) = 2 cov(s_i, s_j)**2 / (m - 1).
    """
    coef = dict(zip(columns, coefficients))
    shot = coef.get("light_shot", 0.25)
    na = np.array([p.n_atoms for p in points], dtype=float)
    nl = np.array([p.n_photons for p in points], dtype=float)
    m = np.array([p.m_samples for p in points], dtype=float)
    groups = [p.group for p in points]
    predicted = (
        coef["electronic"]
        + shot * nl
        + (coef["light_technical"] + coef["atomic_projection"] * na + coef["atomic_technical"] * na**2) * nl**2
    )
    out = np.diag(2.0 * predicted**2 / (m - 1.0))
    members: dict = {}
    for i, g in enumerate(groups):
        if g is not None:
            members.setdefault(g, []).append(i)
    for idx in members.values():
        for a in idx:
            for b in idx:
                if a == b:
                    continue
                common = coef["light_technical"] + coef["atomic_projection"] * na[a] + coef["atomic_technical"] * na[a] * na[b]
                cross = common * nl[a] * nl[b] + shot * min(nl[a], nl[b])
                out[a, b] = 2.0 * cross**2 / math.sqrt((m[a] - 1.0) * (m[b] - 1.0))
    return out


def calibrate_g_dispersive(pairs) -> tuple[float, float]:
    """Slope of rotation vs atom number through the origin, with its standard error.

    ``pairs`` holds (phi, n_atoms) from polarized-sample rotations and an
    independent atom count.
    """
    pairs = np.asarray(list(pairs), dtype=float).reshape(-1, 2)
    if len(pairs) < 2:
        raise InvalidArgument("at least two (phi, n_atoms) pairs are needed", "pairs")
    phi, na = pairs[:, 0], pairs[:, 1]
    if np.any(na <= 0):
        raise InvalidArgument("n_atoms must be > 0 in every pair", "pairs")
    sxx = float(np.dot(na, na))
    g = float(np.dot(na, phi)) / sxx
    resid = phi - g * na
    s2 = float(np.dot(resid, resid)) / (len(pairs) - 1)
    return g, math.sqrt(s2 / sxx)


@dataclass(frozen=True)
class ConsistencyReport:
    g_noise: float
    sigma_noise: float
    g_dispersive: float
    sigma_dispersive: float
    z_score: float
    relative_discrepancy: float
    pass_sigma: bool
    pass_relative: bool

    @property
    def passed(self) -> bool:
        return self.pass_sigma and self.pass_relative


def consistency_check(
    fit,
    dispersive: tuple[float, float],
    *,
    max_sigma: float = 3.0,
    max_relative: float = 0.10,
) -> ConsistencyReport:
    """Compare the noise-scaling G with the dispersive-rotation G.

    ``fit`` is a FitResult or a plain (g, sigma) pair. The relative
    discrepancy is taken with respect to the dispersive value.
    """
    if isinstance(fit, FitResult):
        g1, s1 = fit.coupling, fit.sigma_coupling
    else:
        g1, s1 = fit
    g2, s2 = dispersive
    diff = abs(g1 - g2)
    combined = math.hypot(s1, s2)
    if combined > 0:
        z = diff / combined
    else:
        z = 0.0 if diff == 0 else math.inf
    if g2 != 0:
        rel = diff / abs(g2)
    else:
        rel = 0.0 if diff == 0 else math.inf
    return ConsistencyReport(
        g_noise=g1,
        sigma_noise=s1,
        g_dispersive=g2,
        sigma_dispersive=s2,
        z_score=z,
        relative_discrepancy=rel,
        pass_sigma=z <= max_sigma,
        pass_relative=rel <= max_relative,
    )
