"""Scenario config files (INI) with a schema version and unit-suffixed keys."""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import replace

from .history import PHI_WINDOWS
from .landmarks import LandmarkSet
from .profiles import Profile, SineTerm
from .sim import NoiseConfig, Scenario, reference_scenario

SCHEMA_VERSION = "1"

_PROFILE_KEYS = {
    "omega": "rad_s",
    "velocity_x": "m_s",
    "velocity_y": "m_s",
}

_SCENARIO_KEYS = {
    "delay_s": float,
    "dt_s": float,
    "t_end_s": float,
    "epsilon": float,
    "sigma_scale": float,
    "p0_scale": float,
    "phi_window": str,
    "tol_conv": float,
    "divergence_factor": float,
    "record_every_s": float,
    "pde_cells": int,
    "x0": "vector",
    "x_hat0": "vector",
}
_SCENARIO_FIELDS = {
    "delay_s": "delay",
    "dt_s": "dt",
    "t_end_s": "t_end",
    "record_every_s": "record_every",
}


def _profile_keys(unit):
    return {"kind", f"offset_{unit}", f"amplitude_{unit}", "angular_freq_rad_s", "phase_rad"}


SCHEMA = {
    "obslab": {"schema_version"},
    "scenario": set(_SCENARIO_KEYS),
    "landmarks": {"points_m"},
    "noise": {"enabled", "sigma_landmark_m", "sigma_velocity_m_s", "seed"},
    "margin": {"kappa1", "horizon_s", "literal_min"},
    **{name: _profile_keys(unit) for name, unit in _PROFILE_KEYS.items()},
}


class ConfigError(ValueError):
    """Malformed config; the message carries ``path:line``."""


def _line_index(text):
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    index, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[(.+)\]$", line)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), no)
            continue
        m = re.match(r"([^=:]+)[=:]", line)
        if m and section is not None:
            index.setdefault((section, m.group(1).strip().lower()), no)
    return index


def _numbers(text, where):
    try:
        return [float(tok) for tok in re.split(r"[,\s]+", text.strip()) if tok]
    except ValueError:
        raise ConfigError(f"{where}: expected numbers, got {text!r}") from None


class _Reader:
    def __init__(self, path, parser, index):
        self.path, self.parser, self.index = path, parser, index

    def where(self, section, key=None):
        line = self.index.get((section, key)) or self.index.get((section, None))
        return f"{self.path}:{line}" if line else str(self.path)

    def get(self, section, key, cast=float):
        raw = self.parser.get(section, key)
        try:
            value = cast(raw)
        except ValueError:
            raise ConfigError(f"{self.where(section, key)}: bad value for {key}: {raw!r}") from None
        if cast is float and not math.isfinite(value):
            raise ConfigError(f"{self.where(section, key)}: {key} must be finite")
        return value


def _parse_profile(rd: _Reader, section, unit) -> Profile:
    p = rd.parser
    kind = p.get(section, "kind", fallback="constant").strip()
    offset = rd.get(section, f"offset_{unit}") if p.has_option(section, f"offset_{unit}") else 0.0
    if kind == "constant":
        extra = {f"amplitude_{unit}", "angular_freq_rad_s", "phase_rad"} & set(p.options(section))
        if extra:
            raise ConfigError(f"{rd.where(section, sorted(extra)[0])}: constant profile takes only offset_{unit}")
        return Profile.constant(offset)
    if kind not in ("sinusoid", "sum_of_sinusoids"):
        raise ConfigError(f"{rd.where(section, 'kind')}: unknown profile kind {kind!r}")
    for key in (f"amplitude_{unit}", "angular_freq_rad_s"):
        if not p.has_option(section, key):
            raise ConfigError(f"{rd.where(section)}: [{section}] needs {key}")
    amps = _numbers(p.get(section, f"amplitude_{unit}"), rd.where(section, f"amplitude_{unit}"))
    freqs = _numbers(p.get(section, "angular_freq_rad_s"), rd.where(section, "angular_freq_rad_s"))
    if p.has_option(section, "phase_rad"):
        phases = _numbers(p.get(section, "phase_rad"), rd.where(section, "phase_rad"))
    else:
        phases = [0.0] * len(amps)
    if not (len(amps) == len(freqs) == len(phases)) or not amps:
        raise ConfigError(f"{rd.where(section)}: amplitude, frequency and phase lists differ in length")
    if kind == "sinusoid" and len(amps) != 1:
        raise ConfigError(f"{rd.where(section, 'kind')}: kind sinusoid takes one term; use sum_of_sinusoids")
    return Profile(offset, tuple(SineTerm(a, f, ph) for a, f, ph in zip(amps, freqs, phases)))


def parse_config(text: str, path: str = "<config>"):
    """Parse config text into ``(Scenario, margin options)``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        loc = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{loc}: {exc.message if hasattr(exc, 'message') else exc}") from None
    rd = _Reader(path, parser, _line_index(text))

    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{rd.where(section)}: unknown section [{section}]")
        for key in parser.options(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{rd.where(section, key)}: unknown key {key!r} in [{section}]")

    if not parser.has_option("obslab", "schema_version"):
        raise ConfigError(f"{path}: missing [obslab] schema_version")
    version = parser.get("obslab", "schema_version").strip()
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"{rd.where('obslab', 'schema_version')}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"
        )

    sc = reference_scenario()
    updates = {}
    if parser.has_section("scenario"):
        for key in parser.options("scenario"):
            kind = _SCENARIO_KEYS[key]
            name = _SCENARIO_FIELDS.get(key, key)
            if kind == "vector":
                vals = _numbers(parser.get("scenario", key), rd.where("scenario", key))
                if len(vals) != 6:
                    raise ConfigError(f"{rd.where('scenario', key)}: {key} needs 6 numbers")
                updates[name] = tuple(vals)
            elif kind is str:
                updates[name] = parser.get("scenario", key).strip()
            else:
                updates[name] = rd.get("scenario", key, kind)
    if "phi_window" in updates and updates["phi_window"] not in PHI_WINDOWS:
        raise ConfigError(f"{rd.where('scenario', 'phi_window')}: phi_window must be one of {PHI_WINDOWS}")

    if parser.has_option("landmarks", "points_m"):
        raw = parser.get("landmarks", "points_m")
        pts = []
        for chunk in raw.split(";"):
            if chunk.strip():
                xy = _numbers(chunk, rd.where("landmarks", "points_m"))
                if len(xy) != 2:
                    raise ConfigError(f"{rd.where('landmarks', 'points_m')}: each landmark needs x, y")
                pts.append(tuple(xy))
        try:
            updates["landmarks"] = LandmarkSet(tuple(pts))
        except ValueError as exc:
            raise ConfigError(f"{rd.where('landmarks', 'points_m')}: {exc}") from None

    for section, field in (("omega", "omega_profile"), ("velocity_x", "vx_profile"), ("velocity_y", "vy_profile")):
        if parser.has_section(section):
            updates[field] = _parse_profile(rd, section, _PROFILE_KEYS[section])

    if parser.has_section("noise") and parser.getboolean("noise", "enabled", fallback=True):
        updates["noise"] = NoiseConfig(
            sigma_landmark=rd.get("noise", "sigma_landmark_m") if parser.has_option("noise", "sigma_landmark_m") else 0.0,
            sigma_velocity=rd.get("noise", "sigma_velocity_m_s") if parser.has_option("noise", "sigma_velocity_m_s") else 0.0,
            seed=rd.get("noise", "seed", int) if parser.has_option("noise", "seed") else 0,
        )

    try:
        sc = replace(sc, **updates).validate()
    except ValueError as exc:
        raise ConfigError(f"{rd.where('scenario')}: {exc}") from None

    margin = {"kappa1": None, "horizon": None, "literal_min": False}
    if parser.has_section("margin"):
        k1 = parser.get("margin", "kappa1", fallback="auto").strip()
        if k1 != "auto":
            margin["kappa1"] = rd.get("margin", "kappa1")
        if parser.has_option("margin", "horizon_s"):
            margin["horizon"] = rd.get("margin", "horizon_s")
        margin["literal_min"] = parser.getboolean("margin", "literal_min", fallback=False)
    return sc, margin


def load_config(path):
    """Read and parse a config file; raises ConfigError or OSError."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, str(path))


def _fmt(v):
    return repr(float(v))


def _profile_lines(section, unit, prof: Profile):
    lines = [f"[{section}]", f"kind = {prof.kind}", f"offset_{unit} = {_fmt(prof.offset)}"]
    if prof.terms:
        lines.append(f"amplitude_{unit} = " + ", ".join(_fmt(t.amplitude) for t in prof.terms))
        lines.append("angular_freq_rad_s = " + ", ".join(_fmt(t.angular_freq) for t in prof.terms))
        lines.append("phase_rad = " + ", ".join(_fmt(t.phase) for t in prof.terms))
    return lines


def dump_config(sc: Scenario) -> str:
    """Serialize a scenario; ``parse_config(dump_config(sc))`` returns an equal scenario."""
    lines = ["[obslab]", f"schema_version = {SCHEMA_VERSION}", "", "[scenario]"]
    lines += [
        f"delay_s = {_fmt(sc.delay)}",
        f"dt_s = {_fmt(sc.dt)}",
        f"t_end_s = {_fmt(sc.t_end)}",
        f"epsilon = {_fmt(sc.epsilon)}",
        f"sigma_scale = {_fmt(sc.sigma_scale)}",
        f"p0_scale = {_fmt(sc.p0_scale)}",
        f"phi_window = {sc.phi_window}",
        f"tol_conv = {_fmt(sc.tol_conv)}",
        f"divergence_factor = {_fmt(sc.divergence_factor)}",
        f"record_every_s = {_fmt(sc.record_every)}",
        f"pde_cells = {int(sc.pde_cells)}",
        "x0 = " + " ".join(_fmt(v) for v in sc.x0),
        "x_hat0 = " + " ".join(_fmt(v) for v in sc.x_hat0),
        "",
        "[landmarks]",
        "points_m = " + "; ".join(f"{_fmt(x)}, {_fmt(y)}" for x, y in sc.landmarks.points.tolist()),
        "",
    ]
    lines += _profile_lines("omega", "rad_s", sc.omega_profile) + [""]
    lines += _profile_lines("velocity_x", "m_s", sc.vx_profile) + [""]
    lines += _profile_lines("velocity_y", "m_s", sc.vy_profile) + [""]
    if sc.noise is not None:
        lines += [
            "[noise]",
            "enabled = true",
            f"sigma_landmark_m = {_fmt(sc.noise.sigma_landmark)}",
            f"sigma_velocity_m_s = {_fmt(sc.noise.sigma_velocity)}",
            f"seed = {int(sc.noise.seed)}",
            "",
        ]
    return "\n".join(lines)
