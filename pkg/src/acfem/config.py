"""Run configuration: sectioned key=value text, expression fields, presets.

The parser accumulates every error (with line numbers) instead of stopping
at the first one, and parse(serialize(cfg)) is a fixed point.
"""
import ast
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from acfem.mesh import Rect
from acfem.stepper import RandomNodal


class ConfigError(Exception):
    """Carries the full list of configuration problems."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


_ALLOWED_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp,
                  "tanh": np.tanh, "sqrt": np.sqrt, "abs": np.abs}
_ALLOWED_NAMES = {"x", "y", "t", "pi", "eps"}


def _guarded_div(a, b):
    b = np.asarray(b, dtype=float)
    safe = np.where(b == 0.0, 1.0, b)
    return np.where(b == 0.0, 0.0, np.asarray(a, dtype=float) / safe)


class ExpressionField:
    """Arithmetic expression over (x, y, t) with a fixed function whitelist.

    Validated at construction; evaluation is pure and total on the domain
    (division by zero yields 0).
    """

    def __init__(self, text, eps=1.0):
        self.text = text.strip()
        self.eps = float(eps)
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise ValueError(f"invalid expression: {exc.msg}")
        self._validate(tree.body)
        self._code = compile(tree, "<expression>", "eval")

    def _validate(self, node):
        if isinstance(node, ast.BinOp) and isinstance(
                node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
            self._validate(node.left)
            self._validate(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            self._validate(node.operand)
        elif isinstance(node, ast.Call):
            if not (isinstance(node.func, ast.Name)
                    and node.func.id in _ALLOWED_FUNCS) or node.keywords:
                raise ValueError(f"function not allowed in expression: "
                                 f"{ast.dump(node.func)}")
            if len(node.args) != 1:
                raise ValueError("expression functions take one argument")
            self._validate(node.args[0])
        elif isinstance(node, ast.Name):
            if node.id not in _ALLOWED_NAMES:
                raise ValueError(f"unknown name in expression: {node.id}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)):
                raise ValueError("only numeric constants allowed")
        else:
            raise ValueError(f"disallowed syntax in expression: "
                             f"{type(node).__name__}")

    def __call__(self, x, y, t=0.0):
        env = dict(_ALLOWED_FUNCS)
        # numpy scalars/arrays throughout, so division by zero is maskable
        env.update(x=np.asarray(x, dtype=float), y=np.asarray(y, dtype=float),
                   t=np.asarray(t, dtype=float), pi=math.pi, eps=self.eps)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = eval(self._code, {"__builtins__": {}}, env)
        val = np.asarray(val, dtype=float)
        val = np.where(np.isfinite(val), val, 0.0)
        return val + np.zeros_like(np.asarray(x, dtype=float))

    def __eq__(self, other):
        return (isinstance(other, ExpressionField)
                and self.text == other.text and self.eps == other.eps)

    def __repr__(self):
        return f"ExpressionField({self.text!r})"


U0_PRESETS = ("smooth", "circle", "dumbbell", "random")


def build_u0(cfg):
    """Initial-data callable (or RandomNodal marker) from the config."""
    dom = cfg.rect()
    eps = cfg.epsilon
    cx, cy = 0.5 * (dom.x0 + dom.x1), 0.5 * (dom.y0 + dom.y1)
    scale = min(dom.width, dom.height)
    w = math.sqrt(2.0) * eps
    if isinstance(cfg.u0, ExpressionField):
        return lambda x, y: cfg.u0(x, y, 0.0)
    if cfg.u0 == "smooth":
        return lambda x, y: np.sin(np.pi * (x - dom.x0) / dom.width) * \
            np.sin(np.pi * (y - dom.y0) / dom.height)
    if cfg.u0 == "circle":
        r0 = 0.25 * scale
        return lambda x, y: np.tanh(
            (r0 - np.sqrt((x - cx) ** 2 + (y - cy) ** 2)) / w)
    if cfg.u0 == "dumbbell":
        r0 = 0.18 * scale
        off = 0.22 * scale
        neck = 0.06 * scale
        def u0(x, y):
            c1 = (r0 - np.sqrt((x - cx + off) ** 2 + (y - cy) ** 2)) / w
            c2 = (r0 - np.sqrt((x - cx - off) ** 2 + (y - cy) ** 2)) / w
            bar = np.minimum(off - np.abs(x - cx), neck - np.abs(y - cy)) / w
            return np.tanh(np.maximum(np.maximum(c1, c2), bar))
        return u0
    if cfg.u0 == "random":
        return RandomNodal(delta=cfg.u0_delta, seed=cfg.u0_seed)
    raise ValueError(f"unknown initial-data preset {cfg.u0!r}")


@dataclass
class RunConfig:
    """Validated run description; see parse_config for the file format."""

    x0: float = 0.0
    y0: float = 0.0
    x1: float = 1.0
    y1: float = 1.0
    epsilon: float = 0.1
    T: float = 0.1
    u0: object = "smooth"               # preset name or ExpressionField
    f: Optional[ExpressionField] = None
    nonlinear: bool = True
    u0_delta: float = 0.05
    u0_seed: int = 0
    k: float = 0.01
    time_adaptive: bool = False
    time_tol: float = 1.0
    k_min: float = 1e-8
    k_max: float = 1.0
    nx: int = 8
    ny: int = 8
    refine: int = 0
    space_adapt: bool = False
    theta: float = 0.5
    c_pf: Optional[float] = None        # None: diam(domain)/pi
    c_tilde: float = 1.0
    c_sz: float = 1.0
    c_omega: float = 1.0
    spectral_safety: float = 0.05
    out_dir: str = "out"
    write_vtk: bool = True
    write_checkpoints: bool = True
    newton_tol: float = 1e-10
    d: int = 2

    def rect(self):
        return Rect(self.x0, self.y0, self.x1, self.y1)

    def constants(self):
        from acfem.estimators import ConstantsConfig
        overrides = {"c_gnl": self.c_tilde, "c_sz": self.c_sz,
                     "c_omega": self.c_omega,
                     "spectral_safety": self.spectral_safety}
        if self.c_pf is None:
            return ConstantsConfig.for_domain(self.rect(), **overrides)
        return ConstantsConfig(c_pf=self.c_pf, **overrides)


# (section, key) -> (attribute, type tag)
_SCHEMA = {
    ("domain", "x0"): ("x0", float), ("domain", "y0"): ("y0", float),
    ("domain", "x1"): ("x1", float), ("domain", "y1"): ("y1", float),
    ("model", "epsilon"): ("epsilon", float), ("model", "T"): ("T", float),
    ("model", "u0"): ("u0", "u0"), ("model", "f"): ("f", "f"),
    ("model", "nonlinear"): ("nonlinear", bool),
    ("model", "u0_delta"): ("u0_delta", float),
    ("model", "u0_seed"): ("u0_seed", int),
    ("time", "k"): ("k", float),
    ("time", "adaptive"): ("time_adaptive", bool),
    ("time", "tol"): ("time_tol", float),
    ("time", "k_min"): ("k_min", float), ("time", "k_max"): ("k_max", float),
    ("time", "newton_tol"): ("newton_tol", float),
    ("mesh", "nx"): ("nx", int), ("mesh", "ny"): ("ny", int),
    ("mesh", "refine"): ("refine", int),
    ("adapt", "space"): ("space_adapt", bool),
    ("adapt", "theta"): ("theta", float),
    ("constants", "c_pf"): ("c_pf", float),
    ("constants", "c_tilde"): ("c_tilde", float),
    ("constants", "c_sz"): ("c_sz", float),
    ("constants", "c_omega"): ("c_omega", float),
    ("constants", "spectral_safety"): ("spectral_safety", float),
    ("output", "dir"): ("out_dir", str),
    ("output", "vtk"): ("write_vtk", bool),
    ("output", "checkpoints"): ("write_checkpoints", bool),
    ("output", "d"): ("d", int),
}

_SECTIONS = {s for s, _ in _SCHEMA}


def _parse_value(tag, raw, eps_hint):
    if tag is float:
        return float(raw)
    if tag is int:
        return int(raw)
    if tag is bool:
        low = raw.strip().lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if tag is str:
        return raw.strip()
    if tag == "u0":
        val = raw.strip()
        if val in U0_PRESETS:
            return val
        if val.startswith("expr:"):
            return ExpressionField(val[len("expr:"):], eps=eps_hint)
        raise ValueError(f"u0 must be one of {U0_PRESETS} or 'expr:<...>'")
    if tag == "f":
        val = raw.strip()
        if val.lower() == "none":
            return None
        if val.startswith("expr:"):
            return ExpressionField(val[len("expr:"):], eps=eps_hint)
        raise ValueError("f must be 'none' or 'expr:<...>'")
    raise AssertionError(tag)


def parse_config(text):
    """Parse sectioned key=value text into a RunConfig.

    All problems are reported together in ConfigError: unknown sections or
    keys, type mismatches and constraint violations, each with its line.
    """
    errors = []
    values = {}
    section = None
    # first pass just for epsilon, so expressions can bind it
    eps_hint = 0.1
    for line in text.splitlines():
        s = line.split("#", 1)[0].strip()
        if s.startswith("epsilon") and "=" in s:
            try:
                eps_hint = float(s.split("=", 1)[1])
            except ValueError:
                pass
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                errors.append(f"line {lineno}: unknown section [{section}]")
                section = None
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected key = value")
            continue
        key, _, raw = line.partition("=")
        key = key.strip()
        if section is None:
            errors.append(f"line {lineno}: key {key!r} outside any section")
            continue
        entry = _SCHEMA.get((section, key))
        if entry is None:
            errors.append(f"line {lineno}: unknown key {key!r} in [{section}]")
            continue
        attr, tag = entry
        try:
            values[attr] = _parse_value(tag, raw.strip(), eps_hint)
        except ValueError as exc:
            errors.append(f"line {lineno}: {key}: {exc}")
    # constraints are checked on whatever parsed, so a single pass reports
    # both malformed values and out-of-range ones
    cfg = RunConfig(**values)
    errors.extend(_constraint_errors(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def _constraint_errors(cfg):
    errors = []
    checks = [
        (cfg.epsilon > 0, "epsilon must be positive"),
        (cfg.T > 0, "T must be positive"),
        (cfg.k > 0, "k must be positive"),
        (cfg.x1 > cfg.x0, "domain width must be positive"),
        (cfg.y1 > cfg.y0, "domain height must be positive"),
        (cfg.nx >= 1 and cfg.ny >= 1, "subdivisions must be >= 1"),
        (cfg.refine >= 0, "refine must be >= 0"),
        (0 < cfg.theta <= 1, "theta must be in (0, 1]"),
        (cfg.c_pf is None or cfg.c_pf > 0, "c_pf must be positive"),
        (cfg.c_tilde > 0, "c_tilde must be positive"),
        (cfg.c_sz > 0, "c_sz must be positive"),
        (cfg.c_omega > 0, "c_omega must be positive"),
        (cfg.spectral_safety >= 0, "spectral_safety must be >= 0"),
        (cfg.newton_tol > 0, "newton_tol must be positive"),
        (cfg.d in (2, 3), "d must be 2 or 3"),
        (cfg.time_tol > 0, "time tol must be positive"),
        (cfg.u0_delta >= 0, "u0_delta must be >= 0"),
    ]
    for ok, msg in checks:
        if not ok:
            errors.append(f"constraint: {msg}")
    return errors


def serialize_config(cfg):
    """Canonical text form; parse(serialize(cfg)) == cfg."""
    def fmt(v):
        if isinstance(v, ExpressionField):
            return f"expr:{v.text}"
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = []
    by_section = {}
    for (section, key), (attr, tag) in _SCHEMA.items():
        val = getattr(cfg, attr)
        if attr == "c_pf" and val is None:
            continue
        if attr == "f" and val is None:
            by_section.setdefault(section, []).append((key, "none"))
            continue
        by_section.setdefault(section, []).append((key, fmt(val)))
    for section in ("domain", "model", "time", "mesh", "adapt",
                    "constants", "output"):
        lines.append(f"[{section}]")
        for key, val in sorted(by_section.get(section, [])):
            lines.append(f"{key} = {val}")
        lines.append("")
    return "\n".join(lines)
