"""Scenario files and run manifests.

A scenario is a flat ``key = value`` file with ``[section]`` headers::

    [system]
    mu = 0.01215
    [initial]
    rho_km = -5, 0.1, 0.1

Vectors are comma separated. Every key has a default; the defaults that were
actually used are listed in the manifest so a run can be rebuilt from the
manifest alone.
"""

from __future__ import annotations

import configparser
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bvp import BvpSettings
from .cr3bp import Cr3bpSystem, IntegratorSettings
from .orbit import DEFAULT_NRHO_HALF_PERIOD, DEFAULT_NRHO_SEED
from .pmp import DEFAULT_SCHEDULE, CostWeights, NmpcConfig, StopCriteria

logger = logging.getLogger(__name__)

MAX_INITIAL_RANGE_KM = 10.0


class ScenarioError(ValueError):
    """Malformed or invalid scenario; ``line`` and ``key`` locate the problem."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class UnknownKeyWarning(UserWarning):
    pass


# (section, key) -> (kind, default). kind: float | int | str | vecN | bool | optvecN
_SCHEMA: dict[tuple[str, str], tuple[str, object]] = {
    ("system", "mu"): ("float", 0.01215),
    ("system", "length_unit_km"): ("float", 384400.0),
    ("system", "period_s"): ("float", 2360591.424),
    ("orbit", "source"): ("str", "seed"),
    ("orbit", "file"): ("str", ""),
    ("orbit", "seed_state"): ("vec6", DEFAULT_NRHO_SEED.tolist()),
    ("orbit", "half_period"): ("float", DEFAULT_NRHO_HALF_PERIOD),
    ("orbit", "rendezvous_offset_h"): ("float", 6.0),
    ("initial", "rho_km"): ("vec3", [-5.0, 0.1, 0.1]),
    ("initial", "rho_dot_kmps"): ("vec3", [2e-5, 2e-5, 2e-5]),
    ("reference", "rho_m"): ("vec3", [-5.0, 0.0, 0.0]),
    ("reference", "rho_dot_mps"): ("vec3", [0.0, 0.0, 0.0]),
    ("controller", "ts_s"): ("float", 2.0),
    ("controller", "tp_s"): ("float", 90.0),
    ("controller", "u_max_mps2"): ("float", 0.02),
    ("controller", "q"): ("vec6", [5e14] * 3 + [9e7] * 3),
    ("controller", "p"): ("vec6", [8.05e10] * 3 + [1.0] * 3),
    ("controller", "r"): ("float", 1.0),
    ("controller", "weight_units"): ("str", "normalized"),
    ("controller", "epsilon_schedule"): ("vec", list(DEFAULT_SCHEDULE)),
    ("controller", "bvp_tol"): ("float", 1e-5),
    ("controller", "bvp_max_nodes"): ("int", 5000),
    ("integrator", "method"): ("str", "DOP853"),
    ("integrator", "rtol"): ("float", 1e-11),
    ("integrator", "atol"): ("float", 1e-18),
    ("run", "max_duration_s"): ("float", 4 * 3600.0),
    ("run", "stop_box"): ("optvec6", [1.0, 0.01, 0.01, 0.01, 0.01, 0.01]),
    ("run", "dwell_s"): ("float", 0.0),
    ("output", "format"): ("str", "csv"),
    ("output", "plots"): ("bool", True),
}


@dataclass
class Scenario:
    """Fully resolved scenario. Lengths in km/m as named, times in s."""

    values: dict[tuple[str, str], object]
    defaulted: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    source: str = ""

    def get(self, section: str, key: str):
        return self.values[(section, key)]

    @property
    def system(self) -> Cr3bpSystem:
        return Cr3bpSystem(
            mu=self.get("system", "mu"),
            length_unit=self.get("system", "length_unit_km"),
            period=self.get("system", "period_s"),
        )

    @property
    def initial_si(self) -> np.ndarray:
        """Initial relative state in m and m/s."""
        return np.concatenate([np.asarray(self.get("initial", "rho_km")), np.asarray(self.get("initial", "rho_dot_kmps"))]) * 1e3

    def nmpc_config(self) -> NmpcConfig:
        g = lambda k: self.get("controller", k)  # noqa: E731
        return NmpcConfig(
            ts=g("ts_s"),
            tp=g("tp_s"),
            u_max=g("u_max_mps2"),
            weights=CostWeights(q=g("q"), p=g("p"), r=g("r")),
            reference=np.concatenate([self.get("reference", "rho_m"), self.get("reference", "rho_dot_mps")]),
            schedule=g("epsilon_schedule"),
            weight_units=g("weight_units"),
            bvp=BvpSettings(tol=g("bvp_tol"), max_nodes=g("bvp_max_nodes")),
        )

    def integrator(self) -> IntegratorSettings:
        g = lambda k: self.get("integrator", k)  # noqa: E731
        return IntegratorSettings(method=g("method"), rtol=g("rtol"), atol=g("atol"))

    def stop_criteria(self) -> StopCriteria:
        box = self.get("run", "stop_box")
        return StopCriteria(
            max_duration=self.get("run", "max_duration_s"),
            box=None if box is None else np.asarray(box),
            dwell=self.get("run", "dwell_s"),
        )

    def with_overrides(self, overrides: dict[tuple[str, str], object]) -> "Scenario":
        values = dict(self.values)
        defaulted = list(self.defaulted)
        for k, v in overrides.items():
            if k not in _SCHEMA:
                raise ScenarioError("unknown setting", key=".".join(k))
            values[k] = _coerce(k, v, None)
            name = ".".join(k)
            if name in defaulted:
                defaulted.remove(name)
        out = Scenario(values, defaulted, list(self.notes), self.source)
        validate(out)
        return out

    def manifest(self) -> dict:
        """Every input value, the defaults used and the software version."""
        settings: dict[str, dict] = {}
        for (sec, key), v in self.values.items():
            settings.setdefault(sec, {})[key] = v
        return {
            "software": {"package": "lunar_nmpc", "version": __version__},
            "source": self.source,
            "settings": settings,
            "defaulted": sorted(self.defaulted),
            "notes": list(self.notes),
        }


def _parse_value(kind: str, raw: str):
    raw = raw.strip()
    if kind == "float":
        return float(raw)
    if kind == "int":
        v = float(raw)
        if v != int(v):
            raise ValueError(f"{raw!r} is not an integer")
        return int(v)
    if kind == "str":
        return raw
    if kind == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{raw!r} is not a boolean")
    if kind.startswith("optvec") and raw.lower() in ("", "none", "off"):
        return None
    parts = [p for p in raw.replace(",", " ").split()]
    return [float(p) for p in parts]


def _coerce(key: tuple[str, str], value, line: int | None):
    kind = _SCHEMA[key][0]
    name = ".".join(key)
    try:
        v = _parse_value(kind, value) if isinstance(value, str) else value
        if kind.startswith("vec") or (kind.startswith("optvec") and v is not None):
            v = [float(x) for x in v]
            n = kind.lstrip("opt").removeprefix("vec")
            if n and len(v) != int(n):
                raise ValueError(f"expected {n} components, got {len(v)}")
        elif kind == "float":
            v = float(v)
        elif kind == "int":
            v = int(v)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc), line, name) from None
    if isinstance(v, float) and not math.isfinite(v):
        raise ScenarioError("value must be finite", line, name)
    if isinstance(v, list) and not all(math.isfinite(x) for x in v):
        raise ScenarioError("values must be finite", line, name)
    return v


def _line_numbers(text: str) -> dict[tuple[str, str], int]:
    out = {}
    section = None
    for n, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip().lower()
        elif section and "=" in s and not s.startswith(("#", ";")):
            out[(section, s.split("=", 1)[0].strip().lower())] = n
    return out


def parse_scenario_text(text: str, source: str = "<string>", base_dir: Path | None = None) -> Scenario:
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",), interpolation=None
    )
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ScenarioError("key outside any [section]", exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ScenarioError("duplicate key", exc.lineno, f"{exc.section}.{exc.option}") from None
    except configparser.DuplicateSectionError as exc:
        raise ScenarioError(f"duplicate section [{exc.section}]", exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ScenarioError("expected 'key = value'", line) from None
    lines = _line_numbers(text)
    values: dict[tuple[str, str], object] = {}
    for sec in parser.sections():
        for key, raw in parser.items(sec):
            k = (sec.lower(), key.lower())
            if k not in _SCHEMA:
                msg = f"unknown key {sec}.{key} (line {lines.get(k)}) ignored"
                warnings.warn(msg, UnknownKeyWarning, stacklevel=2)
                continue
            values[k] = _coerce(k, raw, lines.get(k))
    defaulted, notes = [], []
    for k, (kind, default) in _SCHEMA.items():
        if k not in values:
            values[k] = _coerce(k, default, None)
            defaulted.append(".".join(k))
    if "system.mu" in defaulted:
        notes.append(f"mu not given; using the Earth-Moon default {values[('system', 'mu')]}")
    f = values[("orbit", "file")]
    if f and base_dir is not None and not Path(f).is_absolute():
        values[("orbit", "file")] = str((base_dir / f).resolve())
    scen = Scenario(values, defaulted, notes, source)
    validate(scen, lines)
    return scen


def parse_scenario(path) -> Scenario:
    """Parse a scenario file or a run manifest (``.json``)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read scenario {path}: {exc.strerror}") from exc
    if path.suffix == ".json":
        return scenario_from_manifest(json.loads(text), str(path))
    return parse_scenario_text(text, str(path), path.parent)


def scenario_from_manifest(manifest: dict, source: str = "<manifest>") -> Scenario:
    try:
        settings = manifest["settings"]
    except (KeyError, TypeError):
        raise ScenarioError("manifest has no 'settings' table") from None
    values = {}
    for k in _SCHEMA:
        sec, key = k
        if sec not in settings or key not in settings[sec]:
            raise ScenarioError("missing from manifest", key=".".join(k))
        values[k] = _coerce(k, settings[sec][key], None)
    scen = Scenario(values, list(manifest.get("defaulted", [])), list(manifest.get("notes", [])), source)
    validate(scen)
    return scen


def validate(s: Scenario, lines: dict | None = None) -> None:
    """Check named constraints; raises ScenarioError naming the violated one."""
    lines = lines or {}

    def fail(msg, sec, key):
        raise ScenarioError(msg, lines.get((sec, key)), f"{sec}.{key}")

    mu = s.get("system", "mu")
    if not 0.0 < mu < 0.5:
        fail("mass ratio must satisfy 0 < mu < 0.5", "system", "mu")
    for key in ("length_unit_km", "period_s"):
        if s.get("system", key) <= 0:
            fail("must be positive", "system", key)
    src = s.get("orbit", "source")
    if src not in ("seed", "file"):
        fail("orbit source must be 'seed' or 'file'", "orbit", "source")
    if src == "file":
        f = s.get("orbit", "file")
        if not f or not Path(f).is_file():
            fail(f"orbit file {f!r} does not exist", "orbit", "file")
    if s.get("orbit", "half_period") <= 0:
        fail("must be positive", "orbit", "half_period")
    if np.linalg.norm(s.get("initial", "rho_km")) > MAX_INITIAL_RANGE_KM:
        fail(f"initial range exceeds the {MAX_INITIAL_RANGE_KM:g} km envelope", "initial", "rho_km")
    ts, tp = s.get("controller", "ts_s"), s.get("controller", "tp_s")
    if ts <= 0:
        fail("sampling time Ts must be positive", "controller", "ts_s")
    if tp < ts:
        fail(f"prediction horizon must satisfy Tp >= Ts (Tp={tp:g} s, Ts={ts:g} s)", "controller", "tp_s")
    if s.get("controller", "u_max_mps2") <= 0:
        fail("must be positive", "controller", "u_max_mps2")
    if min(s.get("controller", "q")) < 0:
        fail("Q must be non-negative", "controller", "q")
    if min(s.get("controller", "p")) < 0:
        fail("P must be non-negative", "controller", "p")
    if s.get("controller", "r") <= 0:
        fail("R must be positive", "controller", "r")
    if s.get("controller", "weight_units") not in ("normalized", "km", "m"):
        fail("weight units must be normalized, km or m", "controller", "weight_units")
    sched = s.get("controller", "epsilon_schedule")
    if not sched or any(e <= 0 for e in sched) or any(b >= a for a, b in zip(sched, sched[1:])):
        fail("epsilon schedule must be positive and strictly decreasing", "controller", "epsilon_schedule")
    if s.get("controller", "bvp_tol") <= 0:
        fail("must be positive", "controller", "bvp_tol")
    if s.get("controller", "bvp_max_nodes") < 10:
        fail("must be at least 10", "controller", "bvp_max_nodes")
    if s.get("integrator", "method") not in ("DOP853", "RK45", "RK4"):
        fail("integrator must be DOP853, RK45 or RK4", "integrator", "method")
    for key in ("rtol", "atol"):
        if s.get("integrator", key) <= 0:
            fail("must be positive", "integrator", key)
    if s.get("run", "max_duration_s") < ts:
        fail("mission must last at least one sampling period", "run", "max_duration_s")
    if s.get("run", "dwell_s") < 0:
        fail("must be non-negative", "run", "dwell_s")
    if s.get("output", "format") not in ("csv", "json"):
        fail("output format must be csv or json", "output", "format")


def write_scenario(path, scen: Scenario) -> None:
    """Write ``scen`` back out as a scenario file."""
    sections: dict[str, list[str]] = {}
    for (sec, key), v in scen.values.items():
        if isinstance(v, list):
            text = ", ".join(repr(x) for x in v)
        elif v is None:
            text = "none"
        else:
            text = repr(v) if isinstance(v, float) else str(v)
        sections.setdefault(sec, []).append(f"{key} = {text}")
    body = "\n\n".join(f"[{sec}]\n" + "\n".join(lines) for sec, lines in sections.items())
    Path(path).write_text(body + "\n")
