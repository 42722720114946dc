"""``key = value`` configuration files for the command-line tool.

Scenario keys::

    distance, allocation, edge_ratio, flow_ratio | flow, fnr, pn, quality,
    M, D, m, n_symbols, seed

Adaptive-analysis keys::

    N, E (symbols, or a percentage such as ``5%``), silence_len, repeat,
    capsule_mass, distributions

Sweep axes take the form ``sweep.<scenario key> = ...`` with either an
explicit whitespace-separated list of values, or ``log|lin MIN MAX POINTS``.
``#`` starts a comment.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .adaptive import UpdatePolicy
from .channel import NOISE_FREE
from .perceptual import BitAllocation
from .simulation import DEFAULT_D, DEFAULT_M, DEFAULT_M_RATIO, DEFAULT_N_SYMBOLS, ScenarioConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line


def _positive_float(text: str) -> float:
    v = float(text)
    if not (math.isfinite(v) and v > 0):
        raise ValueError(f"expected a positive number, got {text!r}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not (math.isfinite(v) and v >= 0):
        raise ValueError(f"expected a non-negative number, got {text!r}")
    return v


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _fnr_value(text: str) -> float:
    if text.strip().lower() in ("inf", "none", "noise-free", "noise_free"):
        return NOISE_FREE
    return _positive_float(text)


def parse_fnr(text: str) -> Tuple[float, float, float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) == 1:
        return (_fnr_value(parts[0]),) * 3
    if len(parts) == 3:
        return tuple(_fnr_value(p) for p in parts)  # type: ignore[return-value]
    raise ValueError(f"fnr takes one value or three comma-separated values, got {text!r}")


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


def _quality(text: str) -> float:
    v = float(text)
    if not 0 < v <= 1:
        raise ValueError("quality must lie in (0, 1]")
    return v


def _m_ratio(text: str) -> float:
    v = float(text)
    if not v >= 1:
        raise ValueError("m must be >= 1")
    return v


# key -> (ScenarioConfig field, parser)
SCENARIO_KEYS = {
    "distance": ("distance", _positive_float),
    "allocation": ("allocation", BitAllocation.parse),
    "edge_ratio": ("edge_ratio", _positive_float),
    "flow_ratio": ("flow_ratio", _positive_float),
    "flow": ("flow", _positive_float),
    "fnr": ("fnr", parse_fnr),
    "pn": ("pn", _nonneg_float),
    "quality": ("quality", _quality),
    "M": ("M", _positive_float),
    "D": ("D", _positive_float),
    "m": ("m_ratio", _m_ratio),
    "n_symbols": ("n_symbols", _int),
    "seed": ("seed", _seed),
}


def _odd_positive(text: str) -> int:
    v = _int(text)
    if v < 1 or v % 2 == 0:
        raise ValueError("repeat must be an odd positive integer")
    return v


def _positive_int(text: str) -> int:
    v = _int(text)
    if v < 1:
        raise ValueError("expected a positive integer")
    return v


def _extension_threshold(text: str):
    text = text.strip()
    if text.endswith("%"):
        return ("percent", _nonneg_float(text[:-1]))
    return ("symbols", _nonneg_float(text))


ADAPTIVE_KEYS = {
    "N": _positive_int,
    "E": _extension_threshold,
    "silence_len": _positive_int,
    "repeat": _odd_positive,
    "capsule_mass": _positive_float,
    "distributions": _positive_int,
}

DEFAULTS = {
    "allocation": BitAllocation(1, 1, 1),
    "edge_ratio": 0.05,
    "flow_ratio": 1.0,
    "fnr": (NOISE_FREE,) * 3,
    "pn": 0.0,
    "quality": 1.0,
    "M": DEFAULT_M,
    "D": DEFAULT_D,
    "m_ratio": DEFAULT_M_RATIO,
    "n_symbols": DEFAULT_N_SYMBOLS,
    "seed": 0,
}


@dataclass
class SweepAxis:
    name: str
    values: List[object]


@dataclass
class ParsedConfig:
    values: Dict[str, object] = field(default_factory=dict)
    axes: List[SweepAxis] = field(default_factory=list)
    adaptive: Dict[str, object] = field(default_factory=dict)
    path: Optional[str] = None

    @property
    def scenario(self) -> ScenarioConfig:
        """Base scenario with defaults applied; axes are not expanded."""
        return self.grid()[0]

    def override(self, **kwargs) -> "ParsedConfig":
        values = dict(self.values)
        for k, v in kwargs.items():
            if v is not None:
                values[k] = v
        return replace(self, values=values)

    def require(self, *keys: str) -> None:
        swept = {a.name for a in self.axes}
        for key in keys:
            if key not in self.values and key not in swept:
                raise ConfigError(f"missing required key {key!r}", path=self.path)

    def grid(self) -> List[ScenarioConfig]:
        """Cartesian product of the sweep axes, first axis varying slowest."""
        names = [a.name for a in self.axes]
        out = []
        for combo in itertools.product(*(a.values for a in self.axes)):
            vals = dict(self.values)
            vals.update(zip(names, combo))
            out.append(build_scenario(vals, self.path))
        return out

    def axis_fields(self) -> List[str]:
        return [a.name for a in self.axes]

    def policy(self, default_N: int = 100) -> UpdatePolicy:
        E = self.adaptive.get("E", ("symbols", 1.0))
        kind, value = E  # type: ignore[misc]
        return UpdatePolicy(
            N=int(self.adaptive.get("N", default_N)),
            E=value if kind == "symbols" else 0.0,
            E_percent=value if kind == "percent" else None,
            silence_len=int(self.adaptive.get("silence_len", 2)),
            repeat=int(self.adaptive.get("repeat", 3)),
        )


def build_scenario(values: Dict[str, object], path: Optional[str] = None) -> ScenarioConfig:
    if "distance" not in values:
        raise ConfigError("missing required key 'distance'", path=path)
    kw = dict(DEFAULTS)
    kw.update({k: v for k, v in values.items() if k != "flow"})
    if "flow" in values:
        kw["flow_ratio"] = float(values["flow"]) / float(values["distance"])  # type: ignore[arg-type]
    try:
        return ScenarioConfig(**kw)  # type: ignore[arg-type]
    except ValueError as exc:
        raise ConfigError(str(exc), path=path) from exc


def _parse_axis(key: str, text: str) -> List[object]:
    _, parse = SCENARIO_KEYS[key]
    tokens = text.split()
    if not tokens:
        raise ValueError("empty sweep")
    if tokens[0] in ("log", "lin"):
        if len(tokens) != 4:
            raise ValueError(f"expected '{tokens[0]} MIN MAX POINTS'")
        lo, hi, pts = float(tokens[1]), float(tokens[2]), _positive_int(tokens[3])
        if tokens[0] == "log":
            if not (lo > 0 and hi > 0):
                raise ValueError("log sweeps need positive bounds")
            raw = np.geomspace(lo, hi, pts)
        else:
            raw = np.linspace(lo, hi, pts)
        return [parse(repr(float(x))) for x in raw]
    return [parse(t) for t in tokens]


def parse_text(text: str, path: Optional[str] = None) -> ParsedConfig:
    cfg = ParsedConfig(path=path)
    seen: Dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, _, value = (part.strip() for part in line.partition("="))
        if not key or not value:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno, path)
        seen[key] = lineno
        try:
            if key.startswith("sweep."):
                name = key[len("sweep."):]
                if name not in SCENARIO_KEYS:
                    raise ValueError(f"cannot sweep unknown key {name!r}")
                field_name = SCENARIO_KEYS[name][0]
                if any(a.name == field_name for a in cfg.axes):
                    raise ValueError(f"axis {name!r} given twice")
                cfg.axes.append(SweepAxis(field_name, _parse_axis(name, value)))
            elif key in SCENARIO_KEYS:
                field_name, parse = SCENARIO_KEYS[key]
                cfg.values[field_name] = parse(value)
            elif key in ADAPTIVE_KEYS:
                cfg.adaptive[key] = ADAPTIVE_KEYS[key](value)
            else:
                raise ValueError(f"unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc), lineno, path) from exc

    present = set(cfg.values) | {a.name for a in cfg.axes}
    if {"flow", "flow_ratio"} <= present:
        raise ConfigError("set either flow or flow_ratio, not both", path=path)
    for a in cfg.axes:
        if a.name in cfg.values:
            raise ConfigError(f"key {a.name!r} is both fixed and swept", path=path)
    return cfg


def parse_config(path) -> ParsedConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=str(p)) from exc
    return parse_text(text, str(p))
