"""Run configuration files.

Flat INI-style text: ``[section]`` headers followed by ``key = value`` lines,
``#`` or ``;`` comments. Every key is optional; missing keys take the
defaults of the corresponding dataclass. Recognised keys::

    [run]     mode input output fit format binning
    [sim]     initial_atoms loading_rms loss_per_cycle cycles_per_load
              repetitions pulses_per_train photons_per_pulse
              meta_pulse_sizes (comma list) imaging_rms seed
              exact_sampling_threshold dispersive_photons
              noise_sources (comma list of shot, electronic,
              light_technical, atomic_technical, projection)
    [params]  coupling electronic light_technical atomic_technical spin
    [point]   n_atoms n_photons
    [report]  photons atoms

``[params]`` is also the simulation truth.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, field

from ..errors import InvalidArgument
from ..model import REFERENCE_PARAMS, NoiseParams, OperatingPoint
from ..sim import NOISE_SOURCES, BinningRule, SimConfig

MODES = ("simulate", "fit", "budget", "report", "selftest")
FORMATS = ("csv", "json")

SECTION_KEYS = {
    "run": ("mode", "input", "output", "fit", "format", "binning"),
    "sim": (
        "initial_atoms",
        "loading_rms",
        "loss_per_cycle",
        "cycles_per_load",
        "repetitions",
        "pulses_per_train",
        "photons_per_pulse",
        "meta_pulse_sizes",
        "imaging_rms",
        "seed",
        "exact_sampling_threshold",
        "dispersive_photons",
        "noise_sources",
    ),
    "params": ("coupling", "electronic", "light_technical", "atomic_technical", "spin"),
    "point": ("n_atoms", "n_photons"),
    "report": ("photons", "atoms"),
}

INT_KEYS = {
    "cycles_per_load",
    "repetitions",
    "pulses_per_train",
    "seed",
    "exact_sampling_threshold",
}

DEFAULT_POINT = OperatingPoint(n_atoms=7.6e5, n_photons=1e9)


class ConfigError(Exception):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = path or "<config>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")


@dataclass
class RunConfig:
    mode: str | None = None
    input: str | None = None
    output: str | None = None
    fit: str | None = None
    format: str | None = None
    binning: BinningRule = field(default_factory=BinningRule)
    sim: SimConfig = field(default_factory=SimConfig)
    params: NoiseParams = REFERENCE_PARAMS
    point: OperatingPoint = DEFAULT_POINT
    report_photons: float | None = None
    report_atoms: float | None = None
    path: str | None = None


def _line_index(text: str) -> dict:
    """(section, key) -> 1-based line number."""
    index = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            index[(section, None)] = lineno
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            index[(section, m.group(1).strip().lower())] = lineno
    return index


def parse_number(text: str, key: str) -> float | int:
    text = text.strip()
    if key in INT_KEYS:
        value = float(text)
        if not value.is_integer():
            raise ValueError(f"{key} must be an integer")
        return int(text) if re.fullmatch(r"[+-]?\d+", text) else int(value)
    return float(text)


def sim_from_items(items: dict, truth: NoiseParams) -> SimConfig:
    kwargs = {"truth": truth}
    for key, text in items.items():
        if key == "meta_pulse_sizes":
            kwargs[key] = tuple(parse_number(t, "pulses_per_train") for t in text.split(",") if t.strip())
        elif key == "noise_sources":
            names = [t.strip() for t in text.split(",") if t.strip()]
            if names == ["none"]:
                names = []
            kwargs[key] = frozenset(names)
        elif key == "dispersive_photons" and text.strip().lower() in ("", "none", "auto"):
            kwargs[key] = None
        else:
            kwargs[key] = parse_number(text, key)
    return SimConfig(**kwargs)


def sim_to_items(config: SimConfig) -> list[tuple[str, str]]:
    """Canonical (key, text) pairs for a SimConfig, truth first."""
    items = [(f"params.{k}", repr(float(v))) for k, v in asdict(config.truth).items()]
    for key in SECTION_KEYS["sim"]:
        value = getattr(config, key)
        if key == "meta_pulse_sizes":
            text = ",".join(str(k) for k in value)
        elif key == "noise_sources":
            text = ",".join(sorted(value)) or "none"
        elif value is None:
            text = "none"
        elif key in INT_KEYS:
            text = str(int(value))
        else:
            text = repr(float(value))
        items.append((f"sim.{key}", text))
    return items


def params_from_items(items: dict) -> NoiseParams:
    base = asdict(REFERENCE_PARAMS)
    base.update({k: float(v) for k, v in items.items()})
    return NoiseParams(**base)


def load_config(path: str | None) -> RunConfig:
    """Read and validate a config file; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, path)


def parse_config(text: str, path: str | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r}", path, exc.lineno) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section {exc.section!r}", path, exc.lineno) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", path, exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("unparseable line", path, lineno) from None

    lines = _line_index(text)

    def fail(section, key, message):
        raise ConfigError(message, path, lines.get((section, key), lines.get((section, None))))

    for section in parser.sections():
        if section not in SECTION_KEYS:
            fail(section, None, f"unknown section [{section}]")
        for key in parser[section]:
            if key not in SECTION_KEYS[section]:
                fail(section, key, f"unknown key {key!r} in [{section}]")

    def items(section):
        return dict(parser[section]) if parser.has_section(section) else {}

    cfg = RunConfig(path=path)
    run = items("run")
    for key in ("mode", "input", "output", "fit", "format"):
        value = run.get(key, "").strip()
        setattr(cfg, key, value or None)
    if cfg.mode is not None and cfg.mode not in MODES:
        fail("run", "mode", f"mode must be one of {', '.join(MODES)}")
    if cfg.format is not None and cfg.format not in FORMATS:
        fail("run", "format", f"format must be one of {', '.join(FORMATS)}")
    if "binning" in run:
        try:
            cfg.binning = BinningRule.parse(run["binning"])
        except InvalidArgument as exc:
            fail("run", "binning", str(exc))

    params = items("params")
    try:
        cfg.params = params_from_items(params)
    except ValueError as exc:
        key = getattr(exc, "field", None) or _first_bad_float(params)
        fail("params", key, str(exc))

    sim = items("sim")
    try:
        cfg.sim = sim_from_items(sim, cfg.params)
    except InvalidArgument as exc:
        fail("sim", exc.field, str(exc))
    except ValueError as exc:
        fail("sim", _first_bad_float(sim), f"bad number: {exc}")

    point = items("point")
    try:
        cfg.point = OperatingPoint(
            n_atoms=float(point.get("n_atoms", DEFAULT_POINT.n_atoms)),
            n_photons=float(point.get("n_photons", DEFAULT_POINT.n_photons)),
        )
    except InvalidArgument as exc:
        fail("point", exc.field, str(exc))
    except ValueError as exc:
        fail("point", _first_bad_float(point), f"bad number: {exc}")

    report = items("report")
    try:
        if "photons" in report:
            cfg.report_photons = float(report["photons"])
        if "atoms" in report:
            cfg.report_atoms = float(report["atoms"])
    except ValueError as exc:
        fail("report", _first_bad_float(report), f"bad number: {exc}")
    return cfg


def _first_bad_float(items: dict) -> str | None:
    for key, text in items.items():
        if key in ("meta_pulse_sizes", "noise_sources"):
            parts = [t for t in text.split(",") if t.strip()]
            if key == "noise_sources":
                if any(p.strip() not in NOISE_SOURCES | {"none"} for p in parts):
                    return key
                continue
        else:
            parts = [text]
        for part in parts:
            try:
                float(part)
            except ValueError:
                if key == "dispersive_photons" and part.strip().lower() in ("none", "auto"):
                    continue
                return key
    return None
