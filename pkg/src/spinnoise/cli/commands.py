from __future__ import annotations

import dataclasses
import math
import os
import sys

import numpy as np

from .. import model
from ..errors import EstimationError
from ..estimator import calibrate_g_dispersive, consistency_check, fit_noise_surface
from ..sim import run_sequence, tabulate_variances
from . import formats
from .config import ConfigError, RunConfig

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_ESTIMATION = 3
EXIT_SELFTEST = 4


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise CommandError(f"cannot read {path}: {exc.strerror}", EXIT_IO) from None


def _write(path: str, text: str) -> None:
    try:
        formats.atomic_write(path, text)
    except OSError as exc:
        raise CommandError(f"cannot write {path}: {exc.strerror}", EXIT_IO) from None


def _require(value, what: str):
    if not value:
        raise CommandError(f"missing {what}", EXIT_CONFIG)
    return value


def cmd_simulate(cfg: RunConfig, out=sys.stdout) -> int:
    path = _require(cfg.output, "output path (--out or [run] output)")
    if cfg.format not in (None, "csv"):
        raise ConfigError("datasets are written as csv only", cfg.path)
    dataset = run_sequence(cfg.sim)
    _write(path, formats.dataset_to_text(dataset))
    print(f"wrote {len(dataset.records)} trials to {path}", file=out)
    return EXIT_OK


def _load_points(cfg: RunConfig, text: str):
    """Variance points and (optional) dispersive pairs from a dataset or table file."""
    kind = formats.sniff_format(text)
    try:
        if kind == formats.DATASET_FORMAT:
            dataset = formats.dataset_from_text(text)
            return tabulate_variances(dataset, cfg.binning), dataset
        if kind == formats.TABLE_FORMAT:
            return formats.table_from_text(text), None
    except (formats.FormatError, ValueError, IndexError) as exc:
        raise CommandError(f"{cfg.input}: malformed input: {exc}", EXIT_IO) from None
    raise CommandError(f"{cfg.input}: unrecognised file format {kind!r}", EXIT_IO)


def cmd_fit(cfg: RunConfig, out=sys.stdout) -> int:
    path = _require(cfg.input, "input path (--input or [run] input)")
    points, dataset = _load_points(cfg, _read(path))
    try:
        fit = fit_noise_surface(points, cfg.params.spin)
    except EstimationError as exc:
        raise CommandError(f"{exc.code}: {exc}", EXIT_ESTIMATION) from None

    dispersive = consistency = None
    if dataset is not None:
        pairs = [(phi, n) for phi, n in dataset.dispersive_pairs() if n > 0]
        if len(pairs) >= 2:
            dispersive = calibrate_g_dispersive(pairs)
            consistency = consistency_check(fit, dispersive)

    result = formats.fit_to_dict(
        fit, source=path, binning=str(cfg.binning), dispersive=dispersive, consistency=consistency
    )
    text = formats.flat_csv(result) if cfg.format == "csv" else formats.dict_to_json(result)
    if cfg.output:
        _write(cfg.output, text)
    print(_fit_summary(result), file=out)
    return EXIT_OK


def _fit_summary(result: dict) -> str:
    p, u = result["params"], result["uncertainties"]
    lines = [
        f"coupling          {p['coupling']:.6g} +/- {u['coupling']:.3g}",
        f"electronic        {p['electronic']:.6g} +/- {u['electronic']:.3g}",
        f"light_technical   {p['light_technical']:.6g} +/- {u['light_technical']:.3g}",
        f"atomic_technical  {p['atomic_technical']:.6g} +/- {u['atomic_technical']:.3g}",
        f"chi2/dof          {result['chi_square']:.4g}/{result['dof']}",
    ]
    if result["consistency"]:
        c, d = result["consistency"], result["dispersive"]
        status = "pass" if c["passed"] else "FAIL"
        lines.append(
            f"dispersive        {d['coupling']:.6g} +/- {d['sigma']:.3g}  "
            f"z={c['z_score']:.3g} rel={c['relative_discrepancy']:.3%} {status}"
        )
    return "\n".join(lines)


def budget_dict(params: model.NoiseParams, point: model.OperatingPoint) -> dict:
    budget = model.noise_budget(params, point)
    cross = model.crossover_points(params)
    out = {
        "point": {"n_atoms": float(point.n_atoms), "n_photons": float(point.n_photons)},
        "terms": budget.terms(),
        "total": budget.total,
        "db_below_projection": dict(budget.db_below_projection),
        "projection_noise_spins": model.projection_noise_spins(point.n_atoms, params.spin),
        "readout_noise_spins": None,
        "readout_margin_db": None,
        "crossover": {"atoms": formats._num(cross.atoms), "photons": formats._num(cross.photons)},
    }
    if point.n_photons > 0:
        out["readout_noise_spins"] = model.readout_noise_spins(params, point.n_photons)
        if point.n_atoms > 0:
            out["readout_margin_db"] = model.readout_margin_db(params, point.n_atoms, point.n_photons)
    return out


def budget_text(b: dict) -> str:
    lines = [
        f"operating point   N_A={b['point']['n_atoms']:.4g}  N_L={b['point']['n_photons']:.4g}",
        f"{'term':<20}{'variance':>14}{'dB below proj.':>16}",
    ]
    for name, value in b["terms"].items():
        if value == 0:
            continue
        db = b["db_below_projection"].get(name)
        db_text = "" if db is None else f"{db:.2f}"
        lines.append(f"{name:<20}{value:>14.5g}{db_text:>16}")
    lines.append(f"{'total':<20}{b['total']:>14.5g}")
    if b["readout_noise_spins"] is not None:
        lines.append(f"readout noise      {b['readout_noise_spins']:.1f} spins")
    lines.append(f"projection noise   {b['projection_noise_spins']:.1f} spins")
    if b["readout_margin_db"] is not None:
        lines.append(f"readout margin     {b['readout_margin_db']:.2f} dB")

    def show(x):
        return x if isinstance(x, str) else f"{x:.4g}"

    c = b["crossover"]
    lines.append(f"crossover          atoms={show(c['atoms'])}  photons={show(c['photons'])}")
    return "\n".join(lines) + "\n"


def cmd_budget(cfg: RunConfig, out=sys.stdout) -> int:
    b = budget_dict(cfg.params, cfg.point)
    text = formats.dict_to_json(b) if cfg.format == "json" else budget_text(b)
    out.write(text)
    if cfg.output:
        _write(cfg.output, text)
    return EXIT_OK


def _model_columns(coef: dict, n_atoms, n_photons):
    """(model, projection-only, light-only, shot-only) from fitted coefficients."""
    nl2 = n_photons * n_photons
    shot = n_photons / 4.0
    light = shot + coef["light_technical"] * nl2
    projection = coef["atomic_projection"] * nl2 * n_atoms
    total = (
        coef["electronic"]
        + light
        + projection
        + coef["atomic_technical"] * nl2 * n_atoms * n_atoms
    )
    return total, projection, light, shot


def _nearest(values, target):
    values = np.asarray(values)
    return values[np.argmin(np.abs(values - target))]


def cmd_report(cfg: RunConfig, out=sys.stdout) -> int:
    """Atom-number scan at fixed N_L and photon scan at fixed N_A, as CSV."""
    data_path = _require(cfg.input, "dataset path (--input or [run] input)")
    fit_path = _require(cfg.fit, "fit result path (--fit or [run] fit)")
    out_dir = _require(cfg.output, "output directory (--out or [run] output)")
    points, _ = _load_points(cfg, _read(data_path))
    try:
        fit = formats.load_fit(_read(fit_path))
    except (ValueError, formats.FormatError) as exc:
        raise CommandError(f"{fit_path}: {exc}", EXIT_IO) from None
    coef = fit["coefficients"]
    if not points:
        raise CommandError("dataset yields no variance points", EXIT_CONFIG)

    photons = _nearest([p.n_photons for p in points], cfg.report_photons or max(p.n_photons for p in points))
    atoms = _nearest([p.n_atoms for p in points], cfg.report_atoms or max(p.n_atoms for p in points))

    def row(p, axis):
        stderr = p.variance * math.sqrt(2.0 / (p.m_samples - 1))
        cols = _model_columns(coef, p.n_atoms, p.n_photons)
        return [axis, p.variance, stderr, *cols]

    atom_rows = sorted(
        (row(p, p.n_atoms) for p in points if p.n_photons == photons), key=lambda r: r[0]
    )
    photon_rows = sorted(
        (row(p, p.n_photons) for p in points if p.n_atoms == atoms), key=lambda r: r[0]
    )

    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create {out_dir}: {exc.strerror}", EXIT_IO) from None
    atom_path = os.path.join(out_dir, "atom_scan.csv")
    photon_path = os.path.join(out_dir, "photon_scan.csv")
    _write(
        atom_path,
        formats.scan_to_text(formats.ATOM_SCAN_COLUMNS, atom_rows, [f"n_photons={formats.fmt(photons)}"]),
    )
    _write(
        photon_path,
        formats.scan_to_text(formats.PHOTON_SCAN_COLUMNS, photon_rows, [f"n_atoms={formats.fmt(atoms)}"]),
    )
    print(f"wrote {atom_path} ({len(atom_rows)} rows), {photon_path} ({len(photon_rows)} rows)", file=out)
    return EXIT_OK


def with_overrides(cfg: RunConfig, *, seed=None, out=None, fmt=None, input=None, fit=None) -> RunConfig:
    if seed is not None:
        cfg.sim = dataclasses.replace(cfg.sim, seed=seed)
    if out is not None:
        cfg.output = out
    if fmt is not None:
        cfg.format = fmt
    if input is not None:
        cfg.input = input
    if fit is not None:
        cfg.fit = fit
    return cfg
