"""
Run configuration: a flat `key = value` text with `#` comments and
`[matrix X<i>]` sections for explicit initial coefficients.

    n = 2
    d = 1
    rule = simple
    initial = clifford(0.6, 0.8)
    grid.lower = 0 0
    grid.upper = 2*pi 2*pi
    grid.spacing = pi/50
    period = 2*pi 0

Reals accept multiples of pi (`pi/50`, `2*pi`, `-3*pi/4`).
"""
import dataclasses
import logging
import math
import re
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from flatforge.algebra.loop_algebra import DecompositionRule, LoopAlgebraError, LoopElement, validate
from flatforge.errors import ConfigError

logger = logging.getLogger(__name__)

_PI = re.compile(r"^([+-]?)\s*(?:([0-9.eE+-]+)\s*\*\s*)?pi\s*(?:/\s*([0-9.eE+-]+))?$")
_CLIFFORD = re.compile(r"^clifford\(\s*([^,]+?)\s*,\s*([^)]+?)\s*\)$")
_MATRIX = re.compile(r"^\[matrix\s+X(-?\d+)\]$")


def parse_real(text, line=None, name=None):
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    match = _PI.match(text)
    if match is None:
        raise ConfigError(f"not a real number: {text!r}", line, name)
    sign, factor, divisor = match.groups()
    try:
        value = math.pi * (float(factor) if factor else 1.0) / (float(divisor) if divisor else 1.0)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"not a real number: {text!r}", line, name)
    return -value if sign == "-" else value


def _parse_int(text, line, name):
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"not an integer: {text.strip()!r}", line, name)


def _parse_vector(text, line, name):
    parts = [p for p in re.split(r"[\s,]+", text.strip()) if p]
    if not parts:
        raise ConfigError("empty vector", line, name)
    return tuple(parse_real(p, line, name) for p in parts)


@dataclass(frozen=True)
class RunConfig:
    n: int = 2
    d: int = 1
    rule: DecompositionRule = DecompositionRule.SIMPLE
    z0: float = 1.0
    h: float = 1e-3
    seed: int = 0
    initial: str = "random"
    scale: float = 1.0
    grid_lower: Tuple[float, ...] = ()
    grid_upper: Tuple[float, ...] = ()
    grid_spacing: float = 0.1
    out: str = "out"
    periods: Tuple[Tuple[float, ...], ...] = ()
    column: Optional[int] = None
    workers: int = 1
    drift_budget: float = 1e-7
    # explicit coefficients: (degree, row-major rows)
    matrices: Tuple[Tuple[int, Tuple[Tuple[float, ...], ...]], ...] = ()

    def __post_init__(self):
        if not self.grid_lower:
            object.__setattr__(self, "grid_lower", tuple([0.0] * self.n))
        if not self.grid_upper:
            object.__setattr__(self, "grid_upper", tuple([1.0] * self.n))
        check_config(self)

    def clifford_params(self):
        match = _CLIFFORD.match(self.initial)
        if match is None:
            return None
        return parse_real(match.group(1), None, "initial"), parse_real(match.group(2), None, "initial")

    def explicit_element(self) -> LoopElement:
        if not self.matrices:
            raise ConfigError("explicit initial condition without [matrix X<i>] sections", field="initial")
        X = LoopElement.from_coefficients({i: np.array(rows, dtype=float) for i, rows in self.matrices}, real=True)
        report = validate(X)
        if not report.ok:
            raise ConfigError(f"explicit initial condition fails validation: {report}", field="matrix")
        return X


def check_config(cfg: RunConfig, lines=None):
    """Field-level validation; `lines` maps field names to source lines for diagnostics."""
    lines = lines or {}

    def fail(message, name):
        raise ConfigError(message, lines.get(name), name)

    if cfg.n < 2:
        fail(f"n must be >= 2, got {cfg.n}", "n")
    if cfg.d < 0:
        fail(f"d must be >= 0, got {cfg.d}", "d")
    if not cfg.h > 0:
        fail(f"h must be positive, got {cfg.h}", "h")
    if cfg.z0 == 0:
        fail("z0 must be nonzero", "z0")
    if not cfg.grid_spacing > 0:
        fail(f"spacing must be positive, got {cfg.grid_spacing}", "grid.spacing")
    if len(cfg.grid_lower) != cfg.n:
        fail(f"grid.lower needs {cfg.n} entries", "grid.lower")
    if len(cfg.grid_upper) != cfg.n:
        fail(f"grid.upper needs {cfg.n} entries", "grid.upper")
    if any(u < l for l, u in zip(cfg.grid_lower, cfg.grid_upper)):
        fail("grid.upper below grid.lower", "grid.upper")
    for P in cfg.periods:
        if len(P) != cfg.n:
            fail(f"period needs {cfg.n} entries", "period")
    if cfg.column is not None and not cfg.n + 1 <= cfg.column <= 2 * cfg.n:
        fail(f"column must be in [{cfg.n + 1}, {2 * cfg.n}], got {cfg.column}", "column")
    if cfg.workers < 1:
        fail("workers must be >= 1", "workers")
    if not cfg.scale > 0:
        fail("scale must be positive", "scale")
    if cfg.initial not in ("random", "explicit"):
        params = cfg.clifford_params() if _CLIFFORD.match(cfg.initial) else None
        if params is None:
            fail(f"unknown initial condition {cfg.initial!r}", "initial")
        a, b = params
        if abs(a * a + b * b - 1.0) > 1e-12:
            fail(f"clifford(a, b) needs a^2 + b^2 = 1, got {a * a + b * b!r}", "initial")
        if cfg.n != 2:
            fail("clifford preset needs n = 2", "n")
    for degree, rows in cfg.matrices:
        if len(rows) != 2 * cfg.n or any(len(r) != 2 * cfg.n for r in rows):
            fail(f"matrix X{degree} must be {2 * cfg.n}x{2 * cfg.n}", "matrix")
        if degree > 1 or degree < -cfg.d:
            fail(f"matrix X{degree} outside degrees -{cfg.d} .. 1", "matrix")


_SCALARS = {
    "n": ("n", _parse_int),
    "d": ("d", _parse_int),
    "seed": ("seed", _parse_int),
    "workers": ("workers", _parse_int),
    "column": ("column", _parse_int),
    "z0": ("z0", parse_real),
    "h": ("h", parse_real),
    "scale": ("scale", parse_real),
    "grid.spacing": ("grid_spacing", parse_real),
    "drift_budget": ("drift_budget", parse_real),
    "grid.lower": ("grid_lower", _parse_vector),
    "grid.upper": ("grid_upper", _parse_vector),
}


def parse_config(text: str) -> RunConfig:
    values = {}
    lines = {}
    periods = []
    matrices = []
    section = None

    def close_section():
        if section is None:
            return
        degree, header, rows, start = section
        if "rows" not in header or "cols" not in header:
            raise ConfigError(f"matrix X{degree} needs rows and cols", start, "matrix")
        if len(rows) != header["rows"] or any(len(r) != header["cols"] for r in rows):
            raise ConfigError(
                f"matrix X{degree} declares {header['rows']}x{header['cols']} but has other dimensions", start, "matrix"
            )
        matrices.append((degree, tuple(rows)))

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            match = _MATRIX.match(line)
            if match is None:
                raise ConfigError(f"unknown section {line!r}", number)
            close_section()
            degree = int(match.group(1))
            if any(degree == k for k, _ in matrices):
                raise ConfigError(f"duplicate matrix X{degree}", number, "matrix")
            section = (degree, {}, [], number)
            continue
        if section is not None:
            degree, header, rows, _ = section
            if "=" in line:
                key, value = (s.strip() for s in line.split("=", 1))
                if key not in ("rows", "cols"):
                    raise ConfigError(f"unknown matrix key {key!r}", number, key)
                header[key] = _parse_int(value, number, key)
            else:
                rows.append(tuple(parse_real(v, number, f"X{degree}") for v in line.replace(",", " ").split()))
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", number)
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "period":
            periods.append(_parse_vector(value, number, key))
            lines.setdefault("period", number)
            continue
        if key in lines:
            raise ConfigError("duplicate key", number, key)
        lines[key] = number
        if key in _SCALARS:
            name, parse = _SCALARS[key]
            values[name] = parse(value, number, key)
        elif key == "rule":
            try:
                values["rule"] = DecompositionRule.parse(value)
            except LoopAlgebraError as err:
                raise ConfigError(str(err), number, key)
        elif key == "initial":
            values["initial"] = re.sub(r"\s+", " ", value.strip().lower()).replace("( ", "(").replace(" )", ")")
        elif key == "out":
            values["out"] = value
        else:
            raise ConfigError("unknown key", number, key)
    close_section()

    values["periods"] = tuple(periods)
    values["matrices"] = tuple(sorted(matrices))
    if matrices and "initial" not in values:
        values["initial"] = "explicit"
    try:
        return RunConfig(**values)
    except ConfigError as err:
        # field names used by check_config are the config keys
        if err.line is None and err.field is not None:
            err.line = lines.get(err.field)
        raise


def load_config(path) -> RunConfig:
    with open(path) as handle:
        text = handle.read()
    logger.debug("loaded config %s", path)
    return parse_config(text)


def serialize_config(cfg: RunConfig) -> str:
    def vec(values):
        return " ".join(repr(float(v)) for v in values)

    lines = [
        f"n = {cfg.n}",
        f"d = {cfg.d}",
        f"rule = {cfg.rule.value}",
        f"z0 = {cfg.z0!r}",
        f"h = {cfg.h!r}",
        f"seed = {cfg.seed}",
        f"initial = {cfg.initial}",
        f"scale = {cfg.scale!r}",
        f"grid.lower = {vec(cfg.grid_lower)}",
        f"grid.upper = {vec(cfg.grid_upper)}",
        f"grid.spacing = {cfg.grid_spacing!r}",
        f"out = {cfg.out}",
        f"workers = {cfg.workers}",
        f"drift_budget = {cfg.drift_budget!r}",
    ]
    if cfg.column is not None:
        lines.append(f"column = {cfg.column}")
    for P in cfg.periods:
        lines.append(f"period = {vec(P)}")
    for degree, rows in cfg.matrices:
        lines.append(f"[matrix X{degree}]")
        lines.append(f"rows = {len(rows)}")
        lines.append(f"cols = {len(rows[0])}")
        for row in rows:
            lines.append(vec(row))
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Replace fields given on the command line; None leaves a field alone."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(cfg, **changes) if changes else cfg
