"""Plain-text experiment configuration.

Configs are INI files with two sections::

    [scenario]
    nx = 8
    ny = 8
    ue_snr_range_db = -6, 14
    interferer_inr_db = 30      ; "none" removes the interferer

    [sweep]
    methods = cg:1-20, poly:1-10
    precisions = fp64, fp32, q15.16, q7.16
    nulling = both              ; on | off | both
    q = 3                       ; comma list for a q grid
    r = 1
    n_drops = 50
    base_seed = 0
    scaling = spectral          ; spectral | trace
    accumulator = wide          ; wide | narrow
    eval_subcarriers = 16

Every key is optional.  Scenario keys mirror :class:`ScenarioConfig`
fields, plus ``nx``, ``ny`` and ``spacing`` for the array geometry.
Overrides use ``section.key=value`` or a bare ``key=value`` when the key
is unambiguous.
"""
from __future__ import annotations

import configparser
import dataclasses
import re

from .channel import ArrayGeometry, ScenarioConfig
from .harness import SweepSpec

_GEOMETRY_KEYS = {"nx": int, "ny": int, "spacing": float}
_SWEEP_KEYS = {"methods", "precisions", "nulling", "q", "r", "n_drops",
               "base_seed", "scaling", "accumulator", "eval_subcarriers"}


def _split(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def parse_orders(text: str) -> list:
    """``"1-4,6"`` -> ``[1, 2, 3, 4, 6]``."""
    out = []
    for part in re.split(r"[,\s]+", text.strip()):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return sorted(set(out))


def parse_methods(text: str) -> dict:
    """``"cg:1-10, poly:2;4"`` -> ``{"cg": [1..10], "poly": [2, 4]}``."""
    methods = {}
    for item in re.split(r",\s*(?=[a-z]+:)", text.strip()):
        name, _, orders = item.partition(":")
        name = name.strip().lower()
        methods[name] = parse_orders(orders.replace(";", ","))
    return methods


_SCENARIO_FIELDS = {f.name.lower(): f.name
                    for f in dataclasses.fields(ScenarioConfig)
                    if f.name != "geometry"}


def _coerce_scenario(key, value):
    default = getattr(ScenarioConfig(), key)
    if key == "ue_snr_range_db":
        lo, hi = (float(v) for v in _split(value))
        return (lo, hi)
    if key == "interferer_inr_db":
        return None if value.strip().lower() == "none" else float(value)
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    return float(value)


def _apply(sections: dict, key: str, value: str):
    key = key.lower()  # configparser folds file keys the same way
    if "." in key:
        sec, _, name = key.partition(".")
    elif key in _SWEEP_KEYS:
        sec, name = "sweep", key
    else:
        sec, name = "scenario", key
    sections.setdefault(sec, {})[name] = value


def load_config(path=None, overrides=(), text=None) -> SweepSpec:
    """Build a :class:`SweepSpec` from a config file and ``key=value`` overrides."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if text is not None:
        cp.read_string(text)
    elif path is not None:
        with open(path) as fh:
            cp.read_file(fh)
    sections = {s: dict(cp.items(s)) for s in cp.sections()}
    for ov in overrides:
        key, sep, value = ov.partition("=")
        if not sep:
            raise ValueError(f"override {ov!r} is not key=value")
        _apply(sections, key.strip(), value.strip())
    unknown = set(sections) - {"scenario", "sweep"}
    if unknown:
        raise KeyError(f"unknown config sections {sorted(unknown)}")

    scen = dict(sections.get("scenario", {}))
    geo = {k: _GEOMETRY_KEYS[k](scen.pop(k)) for k in list(scen)
           if k in _GEOMETRY_KEYS}
    kwargs = {}
    for k, v in scen.items():
        name = _SCENARIO_FIELDS.get(k)
        if name is None:
            raise KeyError(f"unknown scenario key {k!r}")
        kwargs[name] = _coerce_scenario(name, v)
    scenario = ScenarioConfig(geometry=ArrayGeometry(**geo), **kwargs)

    sw = sections.get("sweep", {})
    unknown = set(sw) - _SWEEP_KEYS
    if unknown:
        raise KeyError(f"unknown sweep keys {sorted(unknown)}")
    spec = {}
    if "methods" in sw:
        spec["methods"] = parse_methods(sw["methods"])
    if "precisions" in sw:
        spec["precisions"] = tuple(p.lower() for p in _split(sw["precisions"]))
    if "q" in sw:
        spec["q_grid"] = tuple(int(v) for v in _split(sw["q"]))
    for key in ("r", "n_drops", "base_seed", "eval_subcarriers"):
        if key in sw:
            spec[key] = int(sw[key])
    for key in ("nulling", "scaling", "accumulator"):
        if key in sw:
            spec[key] = sw[key].strip().lower()
    return SweepSpec(scenario=scenario, **spec)
