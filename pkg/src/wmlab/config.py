"""INI-style run configuration with a fixed schema.

Every key lives in a section; unknown sections or keys and values that do
not parse are ConfigErrors naming ``section.key``. Numbers may be written
as simple arithmetic in ``pi`` (``-pi/2``, ``2*pi``).
"""

from __future__ import annotations

import ast
import configparser
import math
import operator
from dataclasses import dataclass

from .errors import ConfigError

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg,
        ast.UAdd: operator.pos}


def _eval(node):
    if isinstance(node, ast.Expression):
        return _eval(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id == "pi":
        return math.pi
    if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval(node.left), _eval(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval(node.operand))
    raise ValueError("unsupported expression")


def parse_number(text: str) -> float:
    v = _eval(ast.parse(text.strip(), mode="eval"))
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _int(text):
    v = parse_number(text)
    if v != int(v):
        raise ValueError("not an integer")
    return int(v)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean")


def _floats(text):
    if text.strip().lower() == "none":
        return None
    parts = [p for p in text.split(",") if p.strip()]
    return [parse_number(p) for p in parts]


def _pair(text):
    v = _floats(text)
    if v is None:
        return None
    if len(v) != 2:
        raise ValueError("need two numbers")
    return (v[0], v[1])


def _opt_float(text):
    t = text.strip().lower()
    return None if t in ("", "none", "auto", "probe") else parse_number(text)


def _opt_int(text):
    t = text.strip().lower()
    return None if t in ("", "none", "auto") else _int(text)


def _choice(*opts):
    def parse(text):
        t = text.strip().lower()
        if t not in opts:
            raise ValueError("expected one of " + ", ".join(opts))
        return t
    return parse


def _str(text):
    return text.strip()


_STATE = {
    "kind": (_choice("rest", "harmonic", "latitude", "random", "perturbed", "file"), "random"),
    "energy": (parse_number, math.pi),
    "eps": (parse_number, 1e-2),
    "point": (_floats, None),
    "seed": (_opt_int, None),
    "modes": (_int, 4),
    "winding": (_int, 0),
    "path": (_str, ""),
}

SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (_int, 0), "n": (_int, 256), "k": (_int, 2), "cfl": (parse_number, 0.5),
        "t_end": (parse_number, 10.0), "record_every": (_int, 8), "out": (_str, ""),
        "workers": (_int, 1),
    },
    "state": dict(_STATE),
    "target": dict(_STATE),
    "damping": {
        "kind": (_choice("bump", "constant", "none"), "bump"),
        "amplitude": (parse_number, 2.0), "omega": (_pair, (-math.pi / 2, math.pi / 2)),
        "omega0": (_pair, (-math.pi / 4, math.pi / 4)), "alpha": (parse_number, 1.0),
    },
    "simulate": {
        "mode": (_choice("free", "damped", "forced"), "free"), "control": (_str, ""),
        "save_trajectory": (_bool, True),
    },
    "stabilize": {
        "e_target": (parse_number, 1e-4), "nu": (_opt_float, None),
        "t_max": (parse_number, 4000.0), "record_control": (_bool, False),
    },
    "hum": {
        "omega": (_pair, (-math.pi / 2, math.pi / 2)), "T": (parse_number, 2 * math.pi),
        "n_max": (_opt_int, 32), "ridge": (parse_number, 1e-10),
        "propagator": (_choice("exact", "scheme"), "exact"), "m": (_int, 1),
        "modes": (_int, 8), "trials": (_int, 64), "dump_gramian": (_bool, True),
    },
    "local": {
        "eps": (parse_number, 1e-2), "T": (parse_number, 2 * math.pi),
        "tol_local": (parse_number, 1e-8), "max_iter": (_int, 20), "n_max": (_opt_int, None),
        "propagator": (_choice("exact", "scheme"), "scheme"), "ridge": (parse_number, 1e-10),
        "omega": (_pair, (-math.pi / 2, math.pi / 2)), "point": (_floats, None),
        "cost_samples": (_int, 8),
    },
    "pipeline": {
        "nu": (parse_number, 0.1), "eps_tilde": (_opt_float, None),
        "e_target": (_opt_float, None), "tol_local": (parse_number, 1e-8),
        "tol_global": (parse_number, 1e-5), "chain_factor": (parse_number, 0.5),
        "probe_seeds": (_int, 8), "probe_iters": (_int, 5), "separate_phases": (_bool, False),
        "T": (parse_number, 2 * math.pi),
    },
    "diagnose": {
        "trajectory": (_str, ""), "window": (_pair, None), "psi_tau": (parse_number, 0.5),
        "psi_end": (parse_number, 3 * math.pi), "linf_window": (_pair, (0.0, 3 * math.pi)),
        "hminus1_x": (parse_number, 0.0), "hminus1_tau": (parse_number, 0.5),
    },
    "scan": {
        "kind": (_choice("threshold", "eps_tilde", "decay"), "threshold"),
        "nu_list": (_floats, [math.pi, math.pi / 2, math.pi / 4, math.pi / 8, 0.0]),
        "t_end": (parse_number, 8 * math.pi), "seeds": (_int, 8),
        "lo": (parse_number, 1e-3), "hi": (parse_number, 1.0), "iters": (_int, 5),
    },
}


@dataclass
class Config:
    values: dict[str, dict]
    text: str

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def get(self, dotted: str):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]


def _parse_value(field: str, raw: str):
    sec, key = field.split(".", 1)
    if sec not in SCHEMA:
        raise ConfigError(f"unknown section '{sec}'", field=field)
    if key not in SCHEMA[sec]:
        raise ConfigError(f"unknown key '{key}' in section '{sec}'", field=field)
    parser = SCHEMA[sec][key][0]
    try:
        return parser(raw)
    except (ValueError, SyntaxError, TypeError, ZeroDivisionError) as exc:
        raise ConfigError(f"cannot parse {field} = {raw!r}: {exc}", field=field) from None


def _render(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(_render(x) for x in v)
    if isinstance(v, str):
        return v
    return repr(v)


def _canonical(values: dict[str, dict]) -> str:
    """Re-loadable INI text with every key spelled out."""
    lines = []
    for sec in SCHEMA:
        lines.append(f"[{sec}]")
        for key in SCHEMA[sec]:
            lines.append(f"{key} = {_render(values[sec][key])}".rstrip())
    return "\n".join(lines) + "\n"


def load_config(text: str = "", overrides: list[tuple[str, str]] | None = None) -> Config:
    """Parse config text, apply ``section.key`` overrides, fill defaults."""
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}", field=getattr(exc, "section", None)
                          or "config") from None
    values = {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
    for sec in cp.sections():
        for key, raw in cp.items(sec):
            values[sec][key] = _parse_value(f"{sec}.{key}", raw)
    for field, raw in overrides or []:
        if "." not in field:
            raise ConfigError(f"override key must be section.key, got {field!r}", field=field)
        v = _parse_value(field, raw)
        sec, key = field.split(".", 1)
        values[sec][key] = v
    _validate(values)
    return Config(values, _canonical(values))


def _validate(v: dict):
    run = v["run"]
    n = run["n"]
    if n < 64 or n & (n - 1):
        raise ConfigError("run.n must be a power of two >= 64", field="run.n")
    if run["k"] < 1:
        raise ConfigError("run.k must be at least 1", field="run.k")
    if not 0 < run["cfl"] <= 1:
        raise ConfigError("run.cfl must lie in (0, 1]", field="run.cfl")
    if run["t_end"] < 0:
        raise ConfigError("run.t_end must be nonnegative", field="run.t_end")
    if run["record_every"] < 1:
        raise ConfigError("run.record_every must be positive", field="run.record_every")
    if run["workers"] < 1:
        raise ConfigError("run.workers must be positive", field="run.workers")
    if run["seed"] < 0 or run["seed"] >= 2 ** 64:
        raise ConfigError("run.seed must be an unsigned 64-bit integer", field="run.seed")
    for sec in ("state", "target"):
        p = v[sec]["point"]
        if p is not None and len(p) != run["k"] + 1:
            raise ConfigError(f"{sec}.point needs k+1 coordinates", field=f"{sec}.point")
