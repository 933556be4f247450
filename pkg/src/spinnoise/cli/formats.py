"""On-disk formats.

Dataset (CSV, one row per meta-pulse)::

    # format=spinnoise-dataset
    # schema=1
    # version=<package version>
    # seed=<u64>
    # config_hash=<sha256 of the config lines below, joined by newlines>
    # params.<key>=<value>      (simulation truth, one line per field)
    # sim.<key>=<value>         (SimConfig, one line per field)
    repetition,cycle,n_atoms_true,n_atoms_imaging,fz_true,dispersive_phi,meta_index,n_photons,s_y

Variance table (CSV)::

    # format=spinnoise-variance-table
    # schema=1
    n_atoms,n_photons,variance,m_samples,group

``group`` is empty for independent points; points with equal group were
computed from the same trials. Tables without the column are accepted.

Floats are written with Python's shortest round-trip ``repr``, so parsing
restores every value bit for bit and the text does not depend on locale.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from collections import defaultdict

from .. import __version__
from ..estimator import FitResult, VariancePoint
from ..sim import Dataset, TrialRecord
from .config import params_from_items, sim_from_items, sim_to_items

SCHEMA = 1
DATASET_FORMAT = "spinnoise-dataset"
TABLE_FORMAT = "spinnoise-variance-table"
FIT_KIND = "spinnoise-fit"

DATASET_COLUMNS = (
    "repetition",
    "cycle",
    "n_atoms_true",
    "n_atoms_imaging",
    "fz_true",
    "dispersive_phi",
    "meta_index",
    "n_photons",
    "s_y",
)
TABLE_COLUMNS = ("n_atoms", "n_photons", "variance", "m_samples", "group")
ATOM_SCAN_COLUMNS = (
    "n_atoms",
    "var_measured",
    "var_stderr",
    "var_model",
    "var_projection_only",
    "var_light_only",
    "var_shot_only",
)
PHOTON_SCAN_COLUMNS = ("n_photons",) + ATOM_SCAN_COLUMNS[1:]


class FormatError(ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def atomic_write(path: str, text: str) -> None:
    """Write via a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def config_hash(config_lines: list[str]) -> str:
    return hashlib.sha256("\n".join(config_lines).encode()).hexdigest()


def _write_rows(columns, rows, header_lines) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _split_header(text: str) -> tuple[dict, list[str]]:
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#") and not body:
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    return meta, body


def sniff_format(text: str) -> str | None:
    meta, _ = _split_header(text)
    return meta.get("format")


# -- dataset -----------------------------------------------------------------


def dataset_to_text(dataset: Dataset) -> str:
    config_lines = [f"{k}={v}" for k, v in sim_to_items(dataset.config)]
    header = [
        f"format={DATASET_FORMAT}",
        f"schema={SCHEMA}",
        f"version={dataset.version}",
        f"seed={dataset.seed}",
        f"config_hash={config_hash(config_lines)}",
    ] + config_lines
    rows = []
    for r in dataset.records:
        common = [
            r.repetition,
            r.cycle,
            r.n_atoms_true,
            fmt(r.n_atoms_imaging),
            fmt(r.fz_true),
            fmt(r.dispersive_phi),
        ]
        for j, (n, s) in enumerate(r.meta_pulse_signals):
            rows.append(common + [j, fmt(n), fmt(s)])
    return _write_rows(DATASET_COLUMNS, rows, header)


def dataset_from_text(text: str) -> Dataset:
    meta, body = _split_header(text)
    if meta.get("format") != DATASET_FORMAT:
        raise FormatError(f"not a {DATASET_FORMAT} file")
    if int(meta.get("schema", -1)) != SCHEMA:
        raise FormatError(f"unsupported schema {meta.get('schema')}")
    params = {k[len("params."):]: v for k, v in meta.items() if k.startswith("params.")}
    sim = {k[len("sim."):]: v for k, v in meta.items() if k.startswith("sim.")}
    config = sim_from_items(sim, params_from_items(params))
    reader = csv.reader(body)
    columns = tuple(next(reader, ()))
    if columns != DATASET_COLUMNS:
        raise FormatError(f"unexpected columns {columns}")

    trials = {}
    signals = defaultdict(list)
    for row in reader:
        rep, cycle = int(row[0]), int(row[1])
        key = (rep, cycle)
        if key not in trials:
            trials[key] = (int(row[2]), float(row[3]), float(row[4]), float(row[5]))
        signals[key].append((int(row[6]), float(row[7]), float(row[8])))

    records = []
    for key in sorted(trials):
        n_true, imaged, fz, phi = trials[key]
        meta_pulses = tuple((n, s) for _, n, s in sorted(signals[key]))
        records.append(
            TrialRecord(
                repetition=key[0],
                cycle=key[1],
                n_atoms_true=n_true,
                n_atoms_imaging=imaged,
                fz_true=fz,
                meta_pulse_signals=meta_pulses,
                dispersive_phi=phi,
            )
        )
    return Dataset(config=config, records=records, version=meta.get("version", __version__))


# -- variance tables ---------------------------------------------------------


def table_to_text(points) -> str:
    rows = [
        [fmt(p.n_atoms), fmt(p.n_photons), fmt(p.variance), int(p.m_samples), "" if p.group is None else p.group]
        for p in points
    ]
    return _write_rows(TABLE_COLUMNS, rows, [f"format={TABLE_FORMAT}", f"schema={SCHEMA}"])


def table_from_text(text: str) -> list[VariancePoint]:
    meta, body = _split_header(text)
    if meta.get("format") != TABLE_FORMAT:
        raise FormatError(f"not a {TABLE_FORMAT} file")
    reader = csv.reader(body)
    columns = tuple(next(reader, ()))
    if columns not in (TABLE_COLUMNS, TABLE_COLUMNS[:-1]):
        raise FormatError(f"unexpected columns {columns}")
    points = []
    for row in reader:
        a, n, v, m = row[:4]
        group = int(row[4]) if len(row) > 4 and row[4] else None
        points.append(VariancePoint(float(a), float(n), float(v), int(m), group))
    return points


# -- fit results -------------------------------------------------------------


def _num(x):
    """JSON-safe float: infinities become the string "unbounded"."""
    x = float(x)
    if math.isinf(x):
        return "unbounded"
    if math.isnan(x):
        return None
    return x


def fit_to_dict(fit: FitResult, *, source=None, binning=None, dispersive=None, consistency=None) -> dict:
    out = {
        "schema_version": SCHEMA,
        "kind": FIT_KIND,
        "version": __version__,
        "source": source,
        "binning": binning,
        "params": {
            "coupling": fit.coupling,
            "electronic": fit.electronic,
            "light_technical": fit.light_technical,
            "atomic_technical": fit.atomic_technical,
            "spin": fit.spin,
        },
        "uncertainties": {
            "coupling": _num(fit.sigma_coupling),
            "electronic": _num(fit.sigma("electronic")),
            "light_technical": _num(fit.sigma("light_technical")),
            "atomic_technical": _num(fit.sigma_atomic_technical),
        },
        "coefficients": {name: float(c) for name, c in zip(fit.columns, fit.coefficients)},
        "covariance": {
            "columns": list(fit.columns),
            "matrix": [[float(v) for v in row] for row in fit.covariance],
        },
        "chi_square": fit.chi_square,
        "dof": fit.dof,
        "reduced_chi_square": _num(fit.reduced_chi_square),
        "n_points": len(fit.residuals),
        "iterations": fit.iterations,
        "converged": fit.converged,
        "dispersive": None,
        "consistency": None,
    }
    if dispersive is not None:
        out["dispersive"] = {"coupling": dispersive[0], "sigma": dispersive[1]}
    if consistency is not None:
        out["consistency"] = {
            "z_score": _num(consistency.z_score),
            "relative_discrepancy": _num(consistency.relative_discrepancy),
            "pass_sigma": consistency.pass_sigma,
            "pass_relative": consistency.pass_relative,
            "passed": consistency.passed,
        }
    return out


def dict_to_json(obj: dict) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def flat_csv(obj: dict) -> str:
    """key,value rows for a nested dict; nested keys are dotted."""
    rows = []

    def walk(prefix, value):
        if isinstance(value, dict):
            for k, v in value.items():
                walk(f"{prefix}.{k}" if prefix else k, v)
        elif isinstance(value, list):
            rows.append((prefix, json.dumps(value)))
        elif isinstance(value, float):
            rows.append((prefix, fmt(value)))
        else:
            rows.append((prefix, "" if value is None else str(value)))

    walk("", obj)
    return _write_rows(("key", "value"), rows, [])


def load_fit(text: str) -> dict:
    obj = json.loads(text)
    if obj.get("kind") != FIT_KIND:
        raise FormatError(f"not a {FIT_KIND} result")
    return obj


def scan_to_text(columns, rows, header_lines) -> str:
    return _write_rows(columns, [[fmt(v) for v in row] for row in rows], header_lines)
