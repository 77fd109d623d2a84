"""Command-line front end: configuration, experiment runs, CSV and SVG output.

Configuration documents use TOML syntax (``key = value``, ``[section]``,
arrays ``[a, b]``). Recognised sections and keys::

    seed = 0

    [system]
    preset = "wave"            # or "piezo"; preset keyword arguments may follow
    kappa1 = 0.5

    # an inline system replaces ``preset``:
    # n = 1
    # domain = [0.0, 1.0]
    # A = [[1.0]]
    # K = [0.5]                # diagonal of the damping matrix
    # theta_q = ["(10 - x)/10"]
    # theta_p = ["10/(10 - x)"]
    # b_p = ["where(x <= 0.1, 3e4*x**2*(x - 0.1)**2, 0)"]   # one column per input

    [mesh]
    N = [10, 20, 40, 80, 160, 320]
    scheme = "mfem"            # "fem" selects the comparator

    [simulate]
    N = 40
    T = 20.0
    dt = 0.0125                # omitted: h / (2 * wave speed)
    input = "0"                # expression in t
    initial = "pulse"          # or "modes", drawn from ``seed``

    [lqr]
    state_weight = 10.0
    control_weight = 1e-3

    [output]
    dir = "out"
    format = ["csv", "svg"]

Parameter expressions accept numbers, ``x`` (or ``t`` for inputs), ``pi``,
``+ - * / **``, comparisons joined by ``&`` or ``|``, and the functions ``sin cos tan exp log sqrt
abs tanh where minimum maximum``.
"""

from __future__ import annotations

import argparse
import ast
import csv
import hashlib
import json
import math
import operator
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .assembly import assemble
from .lqr import CONTROL_WEIGHT, STATE_WEIGHT, gain_sweep, lqr_design
from .model import PRESETS, ParamProfile, SystemSpec
from .numerics import thread_budget
from .oracle import run_suite, suite_table
from .simulate import fit_decay_rate, multiplier_trace, simulate, smooth_initial_state
from .stability import continuous_certificate, discrete_certificate, stability_sweep

COMMANDS = ("verify", "stability", "lqr", "simulate", "sweep")
SCHEMES = ("mfem", "fem")
FORMATS = ("csv", "svg")


class ConfigError(ValueError):
    """Configuration problem with an optional 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None, kind: str = "config"):
        super().__init__(message)
        self.line = line
        self.kind = kind

    def __str__(self):
        msg = super().__str__()
        return f"line {self.line}: {msg}" if self.line else msg


# ---------------------------------------------------------------- expressions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow,
           ast.BitAnd: np.logical_and, ast.BitOr: np.logical_or}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_COMPARE = {ast.Lt: np.less, ast.LtE: np.less_equal, ast.Gt: np.greater, ast.GtE: np.greater_equal}
_FUNCS = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
          "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "where": np.where,
          "minimum": np.minimum, "maximum": np.maximum}
_CONSTS = {"pi": math.pi}


def compile_expression(text: str, variable: str = "x"):
    """Turn an arithmetic expression in one variable into a vectorized callable."""
    try:
        tree = ast.parse(str(text).strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc.msg}") from None

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            v = float(node.value)
            return lambda z: v
        if isinstance(node, ast.Name):
            if node.id == variable:
                return lambda z: z
            if node.id in _CONSTS:
                v = _CONSTS[node.id]
                return lambda z: v
            raise ValueError(f"unknown name {node.id!r} in expression {text!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op, a, b = _BINOPS[type(node.op)], build(node.left), build(node.right)
            return lambda z: op(a(z), b(z))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            op, a = _UNARY[type(node.op)], build(node.operand)
            return lambda z: op(a(z))
        if isinstance(node, ast.Compare) and all(type(o) in _COMPARE for o in node.ops):
            terms = [build(node.left)] + [build(c) for c in node.comparators]
            ops = [_COMPARE[type(o)] for o in node.ops]

            def cmp(z):
                vals = [t(z) for t in terms]
                out = ops[0](vals[0], vals[1])
                for op, lhs, rhs in zip(ops[1:], vals[1:], vals[2:]):
                    out = np.logical_and(out, op(lhs, rhs))
                return out
            return cmp
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and not node.keywords:
            fn, args = _FUNCS[node.func.id], [build(a) for a in node.args]
            return lambda z: fn(*[a(z) for a in args])
        raise ValueError(f"unsupported construct {type(node).__name__} in expression {text!r}")

    body = build(tree)

    def evaluate(z):
        z = np.asarray(z, dtype=float)
        with np.errstate(all="ignore"):
            return np.broadcast_to(np.asarray(body(z), dtype=float), z.shape).copy()
    return evaluate


# --------------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    system: SystemSpec
    N_list: tuple
    scheme: str
    T: float
    dt: Optional[float]
    sim_N: int
    input_expr: Optional[str]
    initial: str
    state_weight: float
    control_weight: float
    out_dir: Path
    seed: int
    formats: tuple
    resolved: dict = field(default_factory=dict, repr=False)

    @property
    def digest(self) -> str:
        blob = json.dumps(self.resolved, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def with_overrides(self, **changes) -> "RunConfig":
        """Apply command-line overrides and re-derive the hash."""
        res = json.loads(json.dumps(self.resolved))
        fields = {}
        if changes.get("N_list") is not None:
            fields["N_list"] = _check_n_list(changes["N_list"], None)
            res["mesh"]["N"] = list(fields["N_list"])
        if changes.get("scheme") is not None:
            fields["scheme"] = _check_choice(changes["scheme"], SCHEMES, "scheme", None)
            res["mesh"]["scheme"] = fields["scheme"]
        if changes.get("seed") is not None:
            fields["seed"] = _check_seed(changes["seed"], None)
            res["seed"] = fields["seed"]
        if changes.get("formats") is not None:
            fields["formats"] = tuple(_check_choice(f, FORMATS, "format", None) for f in changes["formats"])
            res["output"]["format"] = list(fields["formats"])
        if changes.get("out_dir") is not None:
            fields["out_dir"] = Path(changes["out_dir"])
        fields["resolved"] = res
        return replace(self, **fields)


_SCHEMA = {
    "": {"seed"},
    "system": {"preset", "n", "domain", "A", "K", "theta_q", "theta_p", "b_q", "b_p"},
    "mesh": {"N", "scheme"},
    "simulate": {"N", "T", "dt", "input", "initial"},
    "lqr": {"state_weight", "control_weight"},
    "output": {"dir", "format"},
}
_PRESET_KEYS = {"wave": {"rho0", "tau0", "kappa1"},
                "piezo": {"rho0", "alpha0", "gamma", "mu0", "tau0", "k1", "k2"}}


def _locate(text: str, section: str, key: Optional[str] = None) -> Optional[int]:
    """Line number of ``key`` inside ``[section]`` (or of the header itself)."""
    current = ""
    header = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-]+)\s*\]\s*(#.*)?$")
    for no, line in enumerate(text.splitlines(), 1):
        m = header.match(line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"^\s*{re.escape(key)}\s*=", line):
            return no
    return None


def _number(value, name, line, minimum=None, strict=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}", line, "type")
    v = float(value)
    if not math.isfinite(v):
        raise ConfigError(f"{name} must be finite", line, "invariant")
    if minimum is not None and (v <= minimum if strict else v < minimum):
        raise ConfigError(f"{name} must be {'>' if strict else '>='} {minimum}, got {v!r}", line, "invariant")
    return v


def _check_seed(value, line) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {value!r}", line, "type")
    return int(value)


def _check_choice(value, choices, name, line) -> str:
    if value not in choices:
        raise ConfigError(f"{name} must be one of {', '.join(choices)}, got {value!r}", line, "invariant")
    return value


def _check_n_list(value, line) -> tuple:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError("N must be a nonempty array of integers", line, "type")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"N entries must be integers, got {v!r}", line, "type")
        if v < 2:
            raise ConfigError(f"N entries must be at least 2, got {v}", line, "invariant")
        out.append(int(v))
    if out != sorted(set(out)):
        raise ConfigError("N must be strictly ascending", line, "invariant")
    return tuple(out)


def _expr_list(value, name, n, line, nested=False):
    if not isinstance(value, list) or len(value) != n:
        raise ConfigError(f"{name} must be an array of {n} expressions", line, "type")
    out = []
    for entry in value:
        items = entry if nested else [entry]
        if nested and not isinstance(entry, list):
            items = [entry]
        funcs = []
        for item in items:
            if not isinstance(item, (str, int, float)) or isinstance(item, bool):
                raise ConfigError(f"{name} entries must be expressions, got {item!r}", line, "type")
            try:
                funcs.append((str(item), compile_expression(str(item))))
            except ValueError as exc:
                raise ConfigError(str(exc), line, "syntax") from None
        out.append(funcs)
    return out


def _inline_system(sec: dict, text: str) -> tuple:
    def at(key):
        return _locate(text, "system", key)

    for key in ("n", "domain", "A", "K", "theta_q", "theta_p"):
        if key not in sec:
            raise ConfigError(f"inline system is missing '{key}'", _locate(text, "system"), "invariant")
    n = sec["n"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ConfigError(f"n must be a positive integer, got {n!r}", at("n"), "type")
    dom = sec["domain"]
    if not isinstance(dom, list) or len(dom) != 2:
        raise ConfigError("domain must be [x_l, x_r]", at("domain"), "type")
    x_l, x_r = (_number(v, "domain", at("domain")) for v in dom)
    try:
        A = np.array(sec["A"], dtype=float)
        K = np.array(sec["K"], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("A must be an n x n array and K a length-n array", at("A"), "type") from None
    if A.shape != (n, n):
        raise ConfigError(f"A must be {n}x{n}", at("A"), "type")
    if K.shape != (n,):
        raise ConfigError(f"K must list the {n} diagonal entries", at("K"), "type")
    thq = _expr_list(sec["theta_q"], "theta_q", n, at("theta_q"))
    thp = _expr_list(sec["theta_p"], "theta_p", n, at("theta_p"))
    inputs = {}
    for key in ("b_q", "b_p"):
        if key in sec:
            inputs[key] = _expr_list(sec[key], key, n, at(key), nested=True)
    widths = {len(row) for cols in inputs.values() for row in cols}
    if len(widths) > 1:
        raise ConfigError("b_q and b_p rows must all list the same number of inputs", at("b_p") or at("b_q"),
                          "invariant")
    l = widths.pop() if widths else 0

    def input_entry(cols):
        if cols is None:
            return lambda x, i, k: np.zeros_like(np.asarray(x, dtype=float))
        return lambda x, i, k: cols[i][k][1](x)

    def profiles(entries):
        return tuple(ParamProfile(f[0][1], None, f[0][0]) for f in entries)

    try:
        spec = SystemSpec(n=n, x_l=x_l, x_r=x_r, A=A, K=np.diag(K), theta_q=profiles(thq),
                          theta_p=profiles(thp), b_q=input_entry(inputs.get("b_q")),
                          b_p=input_entry(inputs.get("b_p")), input_dim=l, name="inline")
    except ValueError as exc:
        msg = str(exc)
        key = "K" if msg.startswith("K ") else "A" if msg.startswith("A ") else \
              "domain" if msg.startswith("domain") else "theta_q" if "theta^q" in msg else \
              "theta_p" if "theta^p" in msg else None
        raise ConfigError(msg, at(key) if key else _locate(text, "system"), "invariant") from None
    resolved = {"n": n, "domain": [x_l, x_r], "A": A.tolist(), "K": K.tolist(),
                "theta_q": [f[0][0] for f in thq], "theta_p": [f[0][0] for f in thp]}
    for key, cols in inputs.items():
        resolved[key] = [[c[0] for c in row] for row in cols]
    return spec, resolved


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document; errors carry line numbers."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        line = int(m.group(1)) if m else max(len(text.splitlines()), 1)
        raise ConfigError(str(exc), line, "syntax") from None

    for key, value in doc.items():
        if isinstance(value, dict):
            if key not in _SCHEMA or key == "":
                raise ConfigError(f"unknown section [{key}]", _locate(text, key), "unknown_key")
        elif key not in _SCHEMA[""]:
            raise ConfigError(f"unknown key '{key}'", _locate(text, "", key), "unknown_key")
    sys_sec = doc.get("system", {"preset": "wave"})
    for sec_name, sec in doc.items():
        if not isinstance(sec, dict):
            continue
        allowed = set(_SCHEMA[sec_name])
        if sec_name == "system" and "preset" in sec:
            allowed = {"preset"} | _PRESET_KEYS.get(sec.get("preset"), set())
        for key, value in sec.items():
            if isinstance(value, dict):
                raise ConfigError(f"nested table [{sec_name}.{key}] is not allowed",
                                  _locate(text, f"{sec_name}.{key}"), "unknown_key")
            if key not in allowed:
                raise ConfigError(f"unknown key '{key}' in [{sec_name}]", _locate(text, sec_name, key),
                                  "unknown_key")

    def at(section, key):
        return _locate(text, section, key)

    # system
    if "preset" in sys_sec:
        name = sys_sec["preset"]
        _check_choice(name, tuple(PRESETS), "preset", at("system", "preset"))
        kwargs = {}
        for key in sorted(_PRESET_KEYS[name] & set(sys_sec)):
            kwargs[key] = _number(sys_sec[key], key, at("system", key))
        try:
            spec = PRESETS[name](**kwargs)
        except ValueError as exc:
            msg = str(exc)
            key = next((k for k in kwargs if msg.startswith(k + " ")), None)
            if key is None and msg.startswith("K "):
                key = next((k for k in ("kappa1", "k1", "k2") if k in kwargs), None)
            raise ConfigError(msg, at("system", key) if key else _locate(text, "system"), "invariant") from None
        sys_resolved = {"preset": name, **kwargs}
    else:
        spec, sys_resolved = _inline_system(sys_sec, text)

    mesh = doc.get("mesh", {})
    N_list = _check_n_list(mesh.get("N", [10, 20, 40, 80, 160, 320]), at("mesh", "N"))
    scheme = _check_choice(mesh.get("scheme", "mfem"), SCHEMES, "scheme", at("mesh", "scheme"))

    simsec = doc.get("simulate", {})
    sim_N = simsec.get("N", 40)
    if isinstance(sim_N, bool) or not isinstance(sim_N, int) or sim_N < 2:
        raise ConfigError(f"simulate.N must be an integer >= 2, got {sim_N!r}", at("simulate", "N"), "type")
    T = _number(simsec.get("T", 20.0), "T", at("simulate", "T"), 0.0, strict=True)
    dt = simsec.get("dt")
    if dt is not None:
        dt = _number(dt, "dt", at("simulate", "dt"), 0.0, strict=True)
        if dt > T:
            raise ConfigError(f"dt={dt} exceeds the horizon T={T}", at("simulate", "dt"), "invariant")
    input_expr = simsec.get("input")
    if input_expr is not None:
        if not isinstance(input_expr, (str, int, float)) or isinstance(input_expr, bool):
            raise ConfigError("input must be an expression in t", at("simulate", "input"), "type")
        input_expr = str(input_expr)
        try:
            compile_expression(input_expr, "t")
        except ValueError as exc:
            raise ConfigError(str(exc), at("simulate", "input"), "syntax") from None
    initial = _check_choice(simsec.get("initial", "pulse"), ("pulse", "modes"), "initial",
                            at("simulate", "initial"))

    lq = doc.get("lqr", {})
    sw = _number(lq.get("state_weight", STATE_WEIGHT), "state_weight", at("lqr", "state_weight"), 0.0, True)
    cw = _number(lq.get("control_weight", CONTROL_WEIGHT), "control_weight", at("lqr", "control_weight"),
                 0.0, True)

    out = doc.get("output", {})
    out_dir = out.get("dir", "out")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("output.dir must be a nonempty string", at("output", "dir"), "type")
    formats = out.get("format", list(FORMATS))
    if isinstance(formats, str):
        formats = [formats]
    if not isinstance(formats, list):
        raise ConfigError("format must be an array of strings", at("output", "format"), "type")
    formats = tuple(_check_choice(f, FORMATS, "format", at("output", "format")) for f in formats)

    seed = _check_seed(doc.get("seed", 0), at("", "seed"))
    resolved = {
        "system": sys_resolved,
        "mesh": {"N": list(N_list), "scheme": scheme},
        "simulate": {"N": sim_N, "T": T, "dt": dt, "input": input_expr, "initial": initial},
        "lqr": {"state_weight": sw, "control_weight": cw},
        "output": {"format": list(formats)},
        "seed": seed,
    }
    return RunConfig(spec, N_list, scheme, T, dt, sim_N, input_expr, initial, sw, cw, Path(out_dir),
                     seed, formats, resolved)


# -------------------------------------------------------------------- writers

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path, header, rows) -> Path:
    """Header row, comma separator and 17 significant digits; LF line endings."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> tuple:
    """Inverse of ``write_csv`` for numeric tables; non-numeric cells stay strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for row in reader:
            parsed = []
            for cell in row:
                try:
                    parsed.append(float(cell))
                except ValueError:
                    parsed.append(cell)
            rows.append(parsed)
    return header, rows


def _svg_num(v: float) -> str:
    return "%.2f" % v


def emit_svg(path, series, title: str = "", xlabel: str = "x", ylabel: str = "y",
             width: int = 640, height: int = 400, log_y: bool = False) -> Path:
    """Single line chart of one or more (label, x, y) series; output depends only on the inputs."""
    path = Path(path)
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    prepared = []
    for label, xs, ys in series:
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        if log_y:
            with np.errstate(divide="ignore", invalid="ignore"):
                ys = np.log10(np.where(ys > 0, ys, np.nan))
        keep = np.isfinite(xs) & np.isfinite(ys)
        prepared.append((label, xs[keep], ys[keep]))
    allx = np.concatenate([p[1] for p in prepared]) if prepared else np.zeros(0)
    ally = np.concatenate([p[2] for p in prepared]) if prepared else np.zeros(0)
    x0, x1 = (float(allx.min()), float(allx.max())) if allx.size else (0.0, 1.0)
    y0, y1 = (float(ally.min()), float(ally.max())) if ally.size else (0.0, 1.0)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        out.append(f'<text x="{_svg_num(sx(xv))}" y="{top + ph + 16}" font-size="11" '
                   f'text-anchor="middle">{xv:.4g}</text>')
        out.append(f'<text x="{left - 6}" y="{_svg_num(sy(yv) + 4)}" font-size="11" '
                   f'text-anchor="end">{yv:.4g}</text>')
    ylab = f"log10 {ylabel}" if log_y else ylabel
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" font-size="13" '
               f'text-anchor="middle">{_escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" font-size="13" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{_escape(ylab)}</text>')
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" font-size="14" text-anchor="middle">'
                   f'{_escape(title)}</text>')
    for idx, (label, xs, ys) in enumerate(prepared):
        colour = palette[idx % len(palette)]
        pts = " ".join(f"{_svg_num(sx(a))},{_svg_num(sy(b))}" for a, b in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{left + pw - 4}" y="{top + 14 + 14 * idx}" font-size="11" '
                   f'text-anchor="end" fill="{colour}">{_escape(label)}</text>')
    out.append("</svg>")
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
    return path


def _escape(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# ------------------------------------------------------------------- commands

@dataclass
class CommandResult:
    command: str
    contracts: dict
    artifacts: list
    summary: dict

    @property
    def ok(self) -> bool:
        return all(self.contracts.values())

    def record(self) -> dict:
        return {"command": self.command, "status": "ok" if self.ok else "contract_failed",
                "config_hash": self.summary.get("config_hash"), "contracts": self.contracts,
                "artifacts": [str(a) for a in self.artifacts], "summary": self.summary}


class _Artifacts:
    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.stem = f"{command}-{cfg.digest}"
        self.paths = []
        cfg.out_dir.mkdir(parents=True, exist_ok=True)

    def csv(self, suffix, header, rows):
        if "csv" in self.cfg.formats:
            self.paths.append(write_csv(self.cfg.out_dir / f"{self.stem}-{suffix}.csv", header, rows))

    def svg(self, suffix, series, **kw):
        if "svg" in self.cfg.formats:
            self.paths.append(emit_svg(self.cfg.out_dir / f"{self.stem}-{suffix}.svg", series, **kw))


def _cmd_verify(cfg: RunConfig, art: _Artifacts, threads: int) -> CommandResult:
    reports = run_suite(seed=cfg.seed)
    art.csv("oracle", *suite_table(reports))
    failed = [f"{r.check_id}[{';'.join(f'{k}={v}' for k, v in r.params.items())}]"
              for r in reports if not r.passed]
    return CommandResult("verify", {"oracle_suite": not failed}, art.paths,
                         {"checks": len(reports), "failed": failed})


def _cmd_stability(cfg: RunConfig, art: _Artifacts, threads: int) -> CommandResult:
    spec = cfg.system
    cont = continuous_certificate(spec)
    certs = {N: discrete_certificate(spec, N) for N in cfg.N_list}
    cert_rows = [["continuous", "", cont.delta, cont.epsilon0, cont.epsilon1, cont.alpha]]
    cert_rows += [["discrete", N, c.delta, c.epsilon0, c.epsilon1, c.alpha] for N, c in certs.items()]
    art.csv("certificate", ["kind", "N", "delta", "epsilon0", "epsilon1", "alpha"], cert_rows)
    sweep = stability_sweep(spec, cfg.N_list, cfg.scheme, threads=threads)
    header, rows = sweep.as_table()
    art.csv(f"sweep-{cfg.scheme}", header, rows)
    art.svg(f"abscissa-{cfg.scheme}", [("sigma_max", sweep.column("N"), sweep.column("sigma_max_open"))],
            title=f"open-loop spectral abscissa ({cfg.scheme})", xlabel="N", ylabel="sigma_max")
    contracts = {
        "continuous_margin_positive": cont.delta > 0,
        "discrete_certified": all(c.certified for c in certs.values()),
        "open_loop_stable": bool(np.all(sweep.column("sigma_max_open") < 0)),
    }
    if cfg.scheme == "mfem":
        contracts["uniform_abscissa_bound"] = bool(np.all(
            sweep.column("sigma_max_open") <= -0.5 * sweep.column("alpha_bound") + 1e-6))
    return CommandResult("stability", contracts, art.paths, {
        "delta_c": cont.delta, "alpha_c": cont.alpha,
        "delta_d": {str(N): c.delta for N, c in certs.items()},
        "alpha_d": {str(N): c.alpha for N, c in certs.items()},
    })


def _cmd_lqr(cfg: RunConfig, art: _Artifacts, threads: int) -> CommandResult:
    if cfg.system.input_dim == 0:
        raise ConfigError("the system has no inputs; LQ design needs b_q or b_p", kind="invariant")
    sw = gain_sweep(cfg.system, cfg.N_list, cfg.scheme, threads, cfg.state_weight, cfg.control_weight)
    header, rows = sw.as_table()
    art.csv(f"gains-{cfg.scheme}", header, rows)
    art.csv(f"profiles-{cfg.scheme}", *sw.profile_table())
    grid = np.linspace(cfg.system.x_l, cfg.system.x_r, sw.rows[0].profiles.shape[1])
    n, l = cfg.system.n, cfg.system.input_dim
    for j in range(sw.rows[0].profiles.shape[0]):
        fam = "q" if j < n * l else "p"
        idx = j % (n * l)
        label = f"k_{fam}{idx // l + 1}" + (f"_u{idx % l + 1}" if l > 1 else "")
        art.svg(f"profile-{cfg.scheme}-{label}", [(f"N={r.N}", grid, r.profiles[j]) for r in sw.rows],
                title=f"gain profile {label} ({cfg.scheme})", xlabel="x", ylabel=label)
    contracts = {
        "riccati_residual": bool(np.all(sw.column("residual") <= 1e-8)),
        "closed_loop_stable": bool(np.all(sw.column("closed_loop_abscissa") < 0)),
    }
    return CommandResult("lqr", contracts, art.paths, {
        "sup_norm": sw.column("sup_norm").tolist(), "rel_diff": sw.column("rel_diff").tolist()})


def _cmd_simulate(cfg: RunConfig, art: _Artifacts, threads: int) -> CommandResult:
    model = assemble(cfg.system, cfg.sim_N, cfg.scheme)
    e0 = smooth_initial_state(model, cfg.seed if cfg.initial == "modes" else None)
    u = None
    if cfg.input_expr is not None and model.input_matrix.shape[1]:
        f = compile_expression(cfg.input_expr, "t")
        width = model.input_matrix.shape[1]
        u = lambda t: np.full(width, float(f(np.array(t))))  # noqa: E731
    traj = simulate(model, e0, u, cfg.T, cfg.dt)
    art.csv(f"trajectory-{cfg.scheme}", *traj.as_table())
    art.svg(f"energy-{cfg.scheme}", [("H_d", traj.times, traj.H)], title=f"discrete energy ({cfg.scheme})",
            xlabel="t", ylabel="H_d", log_y=True)
    contracts = {"energy_balance": bool(np.max(np.abs(traj.balance_error)) <= 1e-8)}
    summary = {"N": cfg.sim_N, "dt": traj.dt, "steps": traj.steps,
               "balance_error": float(np.max(np.abs(traj.balance_error)))}
    if u is None:
        fit = fit_decay_rate(traj)
        contracts["energy_monotone"] = fit.monotone
        summary["decay_rate"] = fit.rate
        if cfg.scheme == "mfem":
            cert = discrete_certificate(cfg.system, cfg.sim_N)
            rep = multiplier_trace(model, traj, cert)
            contracts["decay_rate_bound"] = fit.rate >= 0.95 * cert.alpha
            contracts["multiplier_C1"] = rep.c1_violations == 0
            contracts["multiplier_C2"] = rep.c2_violations == 0
            summary.update(alpha_d=cert.alpha, c2_margin=rep.c2_margin,
                           differencing_advisory=rep.differencing_advisory)
    return CommandResult("simulate", contracts, art.paths, summary)


def _cmd_sweep(cfg: RunConfig, art: _Artifacts, threads: int, schemes=SCHEMES) -> CommandResult:
    if cfg.system.input_dim == 0:
        raise ConfigError("the system has no inputs; closed-loop sweep needs b_q or b_p", kind="invariant")

    def gain(model):
        return lqr_design(model, cfg.state_weight, cfg.control_weight).K

    contracts, summary, series = {}, {}, []
    for scheme in schemes:
        res = stability_sweep(cfg.system, cfg.N_list, scheme, gain=gain, threads=threads)
        art.csv(f"abscissa-{scheme}", *res.as_table())
        Ns = res.column("N")
        series += [(f"{scheme} open", Ns, res.column("sigma_max_open")),
                   (f"{scheme} closed", Ns, res.column("sigma_max_closed"))]
        contracts[f"{scheme}_closed_loop_stable"] = bool(np.all(res.column("sigma_max_closed") < 0))
        summary[scheme] = {"sigma_max_open": res.column("sigma_max_open").tolist(),
                           "sigma_max_closed": res.column("sigma_max_closed").tolist()}
    art.svg("abscissa", series, title="spectral abscissa", xlabel="N", ylabel="sigma_max")
    return CommandResult("sweep", contracts, art.paths, summary)


def run_command(name: str, cfg: RunConfig, schemes=None, threads: Optional[int] = None) -> CommandResult:
    if name not in COMMANDS:
        raise ConfigError(f"unknown command {name!r}", kind="usage")
    threads = thread_budget() if threads is None else threads
    art = _Artifacts(cfg, name)
    if name == "sweep":
        result = _cmd_sweep(cfg, art, threads, schemes or SCHEMES)
    else:
        result = {"verify": _cmd_verify, "stability": _cmd_stability, "lqr": _cmd_lqr,
                  "simulate": _cmd_simulate}[name](cfg, art, threads)
    result.summary["config_hash"] = cfg.digest
    return result


# ----------------------------------------------------------------------- main

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phs-mfem", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="TOML configuration file (default: wave preset)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--n-list", help="comma-separated mesh sizes, e.g. 10,20,40")
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", help="comma-separated subset of csv,svg")
    return p


def _error(kind: str, message: str, command: Optional[str], line: Optional[int] = None) -> None:
    rec = {"status": "error", "kind": kind, "message": message, "command": command}
    if line is not None:
        rec["line"] = line
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        cfg = parse_config(text)
        n_list = None
        if args.n_list:
            try:
                n_list = [int(v) for v in args.n_list.split(",") if v.strip()]
            except ValueError:
                raise ConfigError(f"--n-list must be integers, got {args.n_list!r}", kind="usage") from None
        formats = [f.strip() for f in args.format.split(",")] if args.format else None
        cfg = cfg.with_overrides(N_list=n_list, scheme=args.scheme, seed=args.seed, formats=formats,
                                 out_dir=args.out)
        schemes = (args.scheme,) if args.scheme else None
        result = run_command(args.command, cfg, schemes=schemes)
    except ConfigError as exc:
        _error(exc.kind, super(ConfigError, exc).__str__(), args.command, exc.line)
        return 2
    except OSError as exc:
        _error("io", str(exc), args.command)
        return 3
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        _error(type(exc).__name__, str(exc), args.command)
        return 3
    print(json.dumps(_finite(result.record()), sort_keys=True, default=_json_default))
    if not result.ok:
        _error("contract_failed", ", ".join(k for k, v in result.contracts.items() if not v), args.command)
        return 1
    return 0


def _finite(o):
    """NaN and infinities become null so the record stays valid JSON."""
    if isinstance(o, dict):
        return {k: _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(o):
        return None
    return o


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


if __name__ == "__main__":
    sys.exit(main())
