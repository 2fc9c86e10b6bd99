"""Declarative scenarios: parse a YAML config, run it, write CSV/JSON artifacts.

A scenario is a YAML mapping with the sections ``scheme``, ``bath``,
``truncation``, ``solver``, ``initial``, ``mode`` and ``outputs``. Only
``scheme``, ``truncation`` and ``mode`` are required; every default is
written back into the summary so a run is fully described by its output.
See README.md for the full key reference.
"""

from __future__ import annotations

import ast
import copy
import hashlib
import json
import math
import operator as _op
import os
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import yaml

from . import evolve, fock, generators as gen, langevin, trajectories as traj
from .errors import InvalidArgument, UnphysicalBath, Unsupported
from .fock import BathParams, Operator

__all__ = [
    "ConfigError",
    "CompareFailed",
    "Scenario",
    "CompareReport",
    "RunResult",
    "parse_scenario",
    "run",
    "compare_report",
    "eval_operator",
]


class ConfigError(InvalidArgument):
    """Malformed config: syntax, unknown key, missing field or bad value."""


class CompareFailed(RuntimeError):
    """A compare run exceeded its trace-distance threshold."""


# ------------------------------------------------------------ expressions

_BINOPS = {ast.Add: _op.add, ast.Sub: _op.sub, ast.Mult: _op.mul, ast.Div: _op.truediv, ast.Pow: _op.pow}
_UNARY = {ast.USub: _op.neg, ast.UAdd: _op.pos}


def _eval_node(node, names: dict, where: str):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, names, where)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float, complex)) \
            and not isinstance(node.value, bool):
        return node.value
    if isinstance(node, ast.Name):
        if node.id not in names:
            raise ConfigError(f"{where}: unknown name {node.id!r} (allowed: {', '.join(sorted(names))})")
        return names[node.id]
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        return _UNARY[type(node.op)](_eval_node(node.operand, names, where))
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        lhs = _eval_node(node.left, names, where)
        rhs = _eval_node(node.right, names, where)
        if isinstance(node.op, ast.Pow):
            if isinstance(rhs, Operator):
                raise ConfigError(f"{where}: exponent must be a number")
            if isinstance(lhs, Operator) and (not float(rhs).is_integer() or rhs < 0):
                raise ConfigError(f"{where}: operator powers must be non-negative integers")
            if isinstance(lhs, Operator):
                rhs = int(rhs)
        if isinstance(node.op, ast.Div) and isinstance(rhs, Operator):
            raise ConfigError(f"{where}: cannot divide by an operator")
        return _BINOPS[type(node.op)](lhs, rhs)
    raise ConfigError(f"{where}: unsupported syntax {ast.dump(node)[:40]!r}")


def _parse_expr(text: str, where: str):
    try:
        return ast.parse(str(text), mode="eval")
    except SyntaxError as e:
        raise ConfigError(f"{where}: cannot parse expression {text!r} ({e.msg})") from None


def eval_operator(text, space: fock.Space, where: str = "expression") -> Operator:
    """Evaluate a polynomial in {a, adag, x, y, n, I} with numeric coefficients."""
    a = fock.annihilation(space)
    x, y = fock.quadratures(space)
    names = {"a": a, "adag": a.dag(), "x": x, "y": y, "n": fock.number(space),
             "I": fock.identity(space), "pi": math.pi}
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return text * fock.identity(space)
    if not isinstance(text, str):
        raise ConfigError(f"{where}: operator must be a string expression")
    val = _eval_node(_parse_expr(text, where), names, where)
    return val if isinstance(val, Operator) else val * fock.identity(space)


def eval_scalar(value, where: str) -> float:
    """Number, or a string expression over numbers and ``pi``."""
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        v = _eval_node(_parse_expr(value, where), {"pi": math.pi}, where)
        if isinstance(v, complex):
            raise ConfigError(f"{where}: expected a real number")
        return float(v)
    raise ConfigError(f"{where}: expected a number, got {type(value).__name__}")


def _complex(value, where: str) -> complex:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(eval_scalar(value[0], where + "[0]"), eval_scalar(value[1], where + "[1]"))
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    raise ConfigError(f"{where}: complex numbers are written as [re, im]")


# ------------------------------------------------------------------ schema

SCHEME_KEYS = {
    "none": {"H0"},
    "mirror-loop": {"phi", "gamma"},
    "intensity": {"Z", "form", "H0"},
    "quadrature": {"Y", "lambda", "tau", "H0"},
    "complex-amplitude": {"A", "lambda", "mu", "tau", "H0"},
    "heterodyne-analog": {"X", "Y", "A", "lambda", "mu", "phi", "gamma", "return_damping", "H0"},
}
MODE_KEYS = {
    "master": set(),
    "steady": set(),
    "trajectories": {"n", "seed", "unraveling"},
    "spectrum": {"omegas"},
    "compare": {"gamma2", "threshold"},
    "lindblad-check": set(),
}
TOP_KEYS = {"scheme", "bath", "truncation", "solver", "initial", "mode", "outputs"}
OUTPUTS = ("x", "y", "n", "Vx", "Vy", "x2", "y2")
DEFAULT_OUTPUTS = ["x", "y", "n", "Vx", "Vy"]


def _line_map(text: str) -> dict:
    """Dotted key path -> 1-based line number of the key."""
    lines = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = f"{path}.{k.value}" if path else str(k.value)
                lines[p] = k.start_mark.line + 1
                walk(v, p)

    try:
        walk(yaml.compose(text, Loader=yaml.SafeLoader), "")
    except yaml.YAMLError:
        pass
    return lines


class _Checker:
    def __init__(self, lines: dict):
        self.lines = lines

    def err(self, path: str, msg: str) -> ConfigError:
        line = self.lines.get(path)
        loc = f"{path} (line {line})" if line else path
        return ConfigError(f"{loc}: {msg}")

    def mapping(self, value, path: str, allowed: set, required: set = frozenset()) -> dict:
        if value is None:
            value = {}
        if not isinstance(value, dict):
            raise self.err(path, "expected a mapping")
        for k in value:
            if k not in allowed:
                raise self.err(f"{path}.{k}" if path else str(k), f"unknown key {k!r} (allowed: {', '.join(sorted(allowed))})")
        for k in sorted(required):
            if k not in value:
                raise self.err(path or "<root>", f"missing required field {k!r}")
        return value

    def number(self, d: dict, key: str, path: str, default=None, positive=False, minimum=None):
        if key not in d:
            if default is None:
                raise self.err(path, f"missing required field {key!r}")
            return default
        try:
            v = eval_scalar(d[key], f"{path}.{key}")
        except ConfigError as e:
            raise self.err(f"{path}.{key}", str(e).split(": ", 1)[-1]) from None
        if not math.isfinite(v):
            raise self.err(f"{path}.{key}", "must be finite")
        if positive and v <= 0:
            raise self.err(f"{path}.{key}", "must be > 0")
        if minimum is not None and v < minimum:
            raise self.err(f"{path}.{key}", f"must be >= {minimum}")
        return v

    def integer(self, d: dict, key: str, path: str, default=None, minimum=None):
        if key not in d:
            if default is None:
                raise self.err(path, f"missing required field {key!r}")
            return default
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, int):
            raise self.err(f"{path}.{key}", "expected an integer")
        if minimum is not None and v < minimum:
            raise self.err(f"{path}.{key}", f"must be >= {minimum}")
        return v


# ---------------------------------------------------------------- scenario


@dataclass
class Scenario:
    """Validated scenario: normalised config plus the objects built from it."""

    config: dict  # fully defaulted config tree
    space: fock.Space
    bath: BathParams
    ops: dict  # built operators and parameters of the scheme
    rho0: fock.DensityMatrix
    source_sha256: str = ""
    trajectory_config: Optional[traj.TrajectoryConfig] = None

    @property
    def mode(self) -> str:
        return self.config["mode"]["type"]

    @property
    def scheme(self) -> str:
        return self.config["scheme"]["type"]

    @property
    def config_sha256(self) -> str:
        return hashlib.sha256(canonical_json(self.config).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (complex, np.complexfloating)):
        return [_jsonable(obj.real), _jsonable(obj.imag)]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def parse_scenario(text: str, overrides: Optional[dict] = None) -> Scenario:
    """Parse and fully validate a scenario; nothing is computed here.

    ``overrides`` maps dotted paths (e.g. ``"mode.seed"``) to values and is
    applied before validation.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"malformed YAML at {where}: {e.problem}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed YAML: {e}") from None
    chk = _Checker(_line_map(text))
    raw = chk.mapping(raw, "", TOP_KEYS, {"scheme", "truncation", "mode"})
    raw = copy.deepcopy(raw)
    for path, value in (overrides or {}).items():
        node = raw
        *parents, leaf = path.split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise chk.err(p, "expected a mapping")
        node[leaf] = value

    cfg: dict[str, Any] = {}

    # truncation
    t = chk.mapping(raw["truncation"], "truncation", {"dim", "driven_dim"}, {"dim"})
    dim = chk.integer(t, "dim", "truncation", minimum=2)
    driven = chk.integer(t, "driven_dim", "truncation", default=4, minimum=2)
    cfg["truncation"] = {"dim": dim, "driven_dim": driven}
    space = fock.make_space(dim)

    # bath
    b = chk.mapping(raw.get("bath"), "bath", {"N", "M", "beta"})
    N = chk.number(b, "N", "bath", default=0.0)
    M = _complex(b.get("M", [0.0, 0.0]), "bath.M")
    beta = _complex(b.get("beta", [0.0, 0.0]), "bath.beta")
    try:
        bath = BathParams(N, M, beta)
    except UnphysicalBath as e:
        raise UnphysicalBath(f"bath (line {chk.lines.get('bath', '?')}): {e}") from None
    cfg["bath"] = {"N": N, "M": [M.real, M.imag], "beta": [beta.real, beta.imag]}

    # solver
    s = chk.mapping(raw.get("solver"), "solver", {"dt", "t_final", "stride"})
    dt = chk.number(s, "dt", "solver", default=1e-3, positive=True)
    t_final = chk.number(s, "t_final", "solver", default=5.0, minimum=0.0)
    stride = chk.integer(s, "stride", "solver", default=10, minimum=1)
    n_steps = round(t_final / dt)
    if abs(n_steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise chk.err("solver.t_final", f"{t_final} is not a whole number of steps of dt={dt}")
    cfg["solver"] = {"dt": dt, "t_final": t_final, "stride": stride}

    # initial state
    i = chk.mapping(raw.get("initial"), "initial", {"state", "n", "alpha", "nbar"})
    kind = i.get("state", "vacuum")
    if kind == "vacuum":
        rho0 = fock.fock_state(space, 0)
        cfg["initial"] = {"state": "vacuum"}
    elif kind == "fock":
        k = chk.integer(i, "n", "initial", minimum=0)
        if k >= dim:
            raise chk.err("initial.n", f"Fock level {k} outside truncation dim {dim}")
        rho0 = fock.fock_state(space, k)
        cfg["initial"] = {"state": "fock", "n": k}
    elif kind == "coherent":
        alpha = _complex(i.get("alpha", [0.0, 0.0]), "initial.alpha")
        rho0 = fock.coherent_state(space, alpha)
        cfg["initial"] = {"state": "coherent", "alpha": [alpha.real, alpha.imag]}
    elif kind == "thermal":
        nbar = chk.number(i, "nbar", "initial", minimum=0.0)
        rho0 = fock.thermal_state(space, nbar)
        cfg["initial"] = {"state": "thermal", "nbar": nbar}
    else:
        raise chk.err("initial.state", f"unknown state {kind!r} (vacuum, fock, coherent, thermal)")
    extra = set(i) - {"state"} - set(cfg["initial"])
    if extra:
        raise chk.err(f"initial.{sorted(extra)[0]}", f"key not used by state {kind!r}")

    # scheme
    sch = raw["scheme"]
    if not isinstance(sch, dict) or "type" not in sch:
        raise chk.err("scheme", "expected a mapping with a 'type' field")
    stype = sch["type"]
    if stype not in SCHEME_KEYS:
        raise chk.err("scheme.type", f"unknown scheme {stype!r} (allowed: {', '.join(SCHEME_KEYS)})")
    sch = chk.mapping(sch, "scheme", SCHEME_KEYS[stype] | {"type"})
    ops, scfg = _build_scheme(stype, sch, space, bath, chk)
    cfg["scheme"] = scfg

    # outputs
    outs = raw.get("outputs", list(DEFAULT_OUTPUTS))
    if not isinstance(outs, list) or not outs:
        raise chk.err("outputs", "expected a non-empty list")
    for o in outs:
        if o not in OUTPUTS:
            raise chk.err("outputs", f"unknown observable {o!r} (allowed: {', '.join(OUTPUTS)})")
    cfg["outputs"] = list(outs)

    # mode
    m = raw["mode"]
    if isinstance(m, str):
        m = {"type": m}
    if not isinstance(m, dict) or "type" not in m:
        raise chk.err("mode", "expected a mapping with a 'type' field")
    mtype = m["type"]
    if mtype not in MODE_KEYS:
        raise chk.err("mode.type", f"unknown mode {mtype!r} (allowed: {', '.join(MODE_KEYS)})")
    m = chk.mapping(m, "mode", MODE_KEYS[mtype] | {"type"})
    mcfg, tcfg = _build_mode(mtype, m, stype, ops, space, bath, rho0, cfg, chk)
    cfg["mode"] = mcfg

    return Scenario(cfg, space, bath, ops, rho0, hashlib.sha256(text.encode()).hexdigest(), tcfg)


def _op_field(sch, key, space, chk, hermitian=True) -> Operator:
    try:
        op = eval_operator(sch[key], space, f"scheme.{key}")
    except ConfigError as e:
        raise chk.err(f"scheme.{key}", str(e).split(": ", 1)[-1]) from None
    if hermitian and not op.is_hermitian():
        raise chk.err(f"scheme.{key}", f"{sch[key]!r} is not Hermitian")
    return op


def _build_scheme(stype, sch, space, bath, chk):
    ops: dict[str, Any] = {}
    scfg: dict[str, Any] = {"type": stype}
    if "H0" in sch:
        ops["H0"] = _op_field(sch, "H0", space, chk)
        scfg["H0"] = str(sch["H0"])
    else:
        ops["H0"] = None

    def linear():
        return chk.number(sch, "lambda", "scheme", minimum=0.0), chk.number(sch, "mu", "scheme")

    if stype in ("mirror-loop", "intensity") and not bath.is_vacuum:
        raise Unsupported(f"scheme {stype!r} is defined for a vacuum bath only")

    if stype == "mirror-loop":
        ops["phi"] = chk.number(sch, "phi", "scheme")
        ops["gamma"] = chk.number(sch, "gamma", "scheme", default=1.0, positive=True)
        scfg.update(phi=ops["phi"], gamma=ops["gamma"])
    elif stype == "intensity":
        if "Z" not in sch:
            raise chk.err("scheme", "missing required field 'Z'")
        ops["Z"] = _op_field(sch, "Z", space, chk)
        form = sch.get("form", "lindblad")
        if form not in ("lindblad", "expanded"):
            raise chk.err("scheme.form", "must be 'lindblad' or 'expanded'")
        ops["form"] = form
        scfg.update(Z=str(sch["Z"]), form=form)
    elif stype == "quadrature":
        if ("Y" in sch) == ("lambda" in sch):
            raise chk.err("scheme", "give exactly one of 'Y' or 'lambda'")
        if "Y" in sch:
            ops["Y"] = _op_field(sch, "Y", space, chk)
            scfg["Y"] = str(sch["Y"])
        else:
            lam = chk.number(sch, "lambda", "scheme", minimum=0.0)
            ops.update(Y=gen.quadrature_operator(space, lam), lam=lam, mu=-1.0)
            scfg["lambda"] = lam
        ops["tau"] = chk.number(sch, "tau", "scheme", default=0.0, minimum=0.0)
        scfg["tau"] = ops["tau"]
    elif stype == "complex-amplitude":
        if ("A" in sch) == ("lambda" in sch):
            raise chk.err("scheme", "give exactly one of 'A' or 'lambda' (with 'mu')")
        if "A" in sch:
            ops["A"] = _op_field(sch, "A", space, chk, hermitian=False)
            scfg["A"] = str(sch["A"])
        else:
            lam, mu = linear()
            ops.update(A=gen.linear_amplitude(space, lam, mu), lam=lam, mu=mu)
            scfg.update({"lambda": lam, "mu": mu})
        ops["tau"] = chk.number(sch, "tau", "scheme", default=0.0, minimum=0.0)
        scfg["tau"] = ops["tau"]
        if ops["tau"] > 0 and ops.get("mu", None) != -1.0:
            raise chk.err("scheme.tau", "a loop delay is only modelled for mu = -1")
    elif stype == "heterodyne-analog":
        forms = [k for k in (("X", "Y"), ("A",), ("lambda",), ("phi",)) if k[0] in sch]
        if len(forms) != 1:
            raise chk.err("scheme", "give exactly one of ('X' and 'Y'), 'A', ('lambda', 'mu') or ('phi', 'gamma')")
        c1 = fock.annihilation(space)
        if "X" in sch:
            if "Y" not in sch:
                raise chk.err("scheme", "missing required field 'Y'")
            X, Y = _op_field(sch, "X", space, chk), _op_field(sch, "Y", space, chk)
            scfg.update(X=str(sch["X"]), Y=str(sch["Y"]))
        else:
            if "A" in sch:
                A = _op_field(sch, "A", space, chk, hermitian=False)
                scfg["A"] = str(sch["A"])
            elif "lambda" in sch:
                lam, mu = linear()
                A = gen.linear_amplitude(space, lam, mu)
                scfg.update({"lambda": lam, "mu": mu})
            else:
                phi = chk.number(sch, "phi", "scheme")
                gamma = chk.number(sch, "gamma", "scheme", default=1.0, positive=True)
                c1, A = gen.mirror_amplitude(gamma, phi, space)
                scfg.update(phi=phi, gamma=gamma)
            X, Y = gen.hermitian_parts(A)
        rd = sch.get("return_damping", True)
        if not isinstance(rd, bool):
            raise chk.err("scheme.return_damping", "expected true or false")
        ops.update(X=X, Y=Y, c1=c1, return_damping=rd)
        scfg["return_damping"] = rd
        if bath.L_x <= 0 or bath.L_y <= 0:
            raise UnphysicalBath(f"bath: heterodyne needs L_x, L_y > 0 (got {bath.L_x:g}, {bath.L_y:g})")
    if stype in ("quadrature",) and bath.L <= 0:
        raise UnphysicalBath(f"bath: homodyne noise weight L = {bath.L:g} must be > 0")
    if bath.beta != 0 and stype != "none":
        raise Unsupported("a coherent bath amplitude (beta) is only supported with scheme 'none'")
    return ops, scfg


_UNRAVELING = {"none": "jump", "intensity": "jump", "quadrature": "homodyne", "heterodyne-analog": "heterodyne"}


def _build_mode(mtype, m, stype, ops, space, bath, rho0, cfg, chk):
    mcfg: dict[str, Any] = {"type": mtype}
    tcfg = None
    solver = cfg["solver"]
    if mtype == "trajectories":
        if stype not in _UNRAVELING:
            raise chk.err("mode.type", f"scheme {stype!r} has no measurement unraveling")
        unr = m.get("unraveling", _UNRAVELING[stype])
        if unr != _UNRAVELING[stype] and not (stype == "none" and unr in traj.SCHEMES):
            raise chk.err("mode.unraveling", f"scheme {stype!r} is unraveled by {_UNRAVELING[stype]!r}")
        n = chk.integer(m, "n", "mode", default=500, minimum=2)
        seed = chk.integer(m, "seed", "mode", default=0, minimum=0)
        mcfg.update(n=n, seed=seed, unraveling=unr)
        c1 = ops.get("c1", fock.annihilation(space))
        kw = dict(H0=ops["H0"], bath=bath)
        if unr == "jump":
            w, v = np.linalg.eigh(rho0.matrix)
            if abs(w[-1] - 1) > 1e-9:
                raise chk.err("initial", "the jump unraveling needs a pure initial state")
            initial = v[:, -1]
            kw["Z"] = ops.get("Z")
            if ops.get("form", "lindblad") != "lindblad":
                raise chk.err("scheme.form", "trajectories unravel the 'lindblad' form only")
        else:
            initial = rho0
            kw["Y"] = ops.get("Y")
            if unr == "heterodyne":
                kw["X"] = ops.get("X")
                kw["return_damping"] = ops.get("return_damping", True)
        try:
            tcfg = traj.TrajectoryConfig(unr, c1, initial, solver["t_final"], solver["dt"], solver["stride"], **kw)
        except InvalidArgument as e:
            raise chk.err("mode", str(e)) from None
    elif mtype == "spectrum":
        if "lam" not in ops:
            raise chk.err("scheme", "spectrum mode needs a linear scheme given by 'lambda' (and 'mu')")
        om = m.get("omegas", {"start": 0.0, "stop": 10.0, "num": 101})
        if isinstance(om, list):
            grid = [eval_scalar(v, "mode.omegas") for v in om]
            if not grid:
                raise chk.err("mode.omegas", "empty frequency grid")
            mcfg["omegas"] = grid
        else:
            om = chk.mapping(om, "mode.omegas", {"start", "stop", "num"})
            start = chk.number(om, "start", "mode.omegas", default=0.0)
            stop = chk.number(om, "stop", "mode.omegas", default=10.0)
            num = chk.integer(om, "num", "mode.omegas", default=101, minimum=1)
            mcfg["omegas"] = {"start": start, "stop": stop, "num": num}
    elif mtype == "compare":
        if stype not in ("intensity", "quadrature", "complex-amplitude"):
            raise chk.err("mode.type", "compare needs an intensity, quadrature or complex-amplitude scheme")
        if stype == "intensity" and ops["form"] != "lindblad":
            raise chk.err("scheme.form", "compare uses the 'lindblad' form as the reduced model")
        g2 = m.get("gamma2", [200.0, 20.0])
        g2 = g2 if isinstance(g2, list) else [g2]
        g2 = [eval_scalar(v, "mode.gamma2") for v in g2]
        if not g2 or min(g2) <= 0:
            raise chk.err("mode.gamma2", "needs positive rates")
        thr = chk.number(m, "threshold", "mode", default=0.05, positive=True)
        mcfg.update(gamma2=g2, threshold=thr)
    return mcfg, tcfg


# ------------------------------------------------------------- generators


def build_generator(sc: Scenario, form: Optional[str] = None) -> gen.Liouvillian:
    o, st, sp = sc.ops, sc.scheme, sc.space
    if st == "none":
        return gen.single_cavity_liouvillian(fock.annihilation(sp), 1.0, sc.bath, o["H0"])
    if st == "mirror-loop":
        return gen.mirror_loop_liouvillian(o["gamma"], o["phi"], sp)
    if st == "intensity":
        return gen.intensity_feedback_liouvillian(o["Z"], o["H0"], form or o["form"])
    if st == "quadrature":
        return gen.quadrature_feedback_liouvillian(o["Y"], o["H0"], sc.bath)
    if st == "complex-amplitude":
        return gen.complex_feedback_liouvillian(o["A"], o["H0"], sc.bath)
    return gen.heterodyne_feedback_liouvillian(o["X"], o["Y"], o["H0"], sc.bath, o["c1"], o["return_damping"])


def two_mode_generator(sc: Scenario, gamma2: float) -> gen.Liouvillian:
    """Full source + driven-cavity model whose fast-cavity limit is the scheme's generator."""
    o, st = sc.ops, sc.scheme
    if st == "intensity":
        coupling = gen.IntensityCoupling(gamma2 / 4 * o["Z"])
    elif st == "quadrature":
        coupling = gen.QuadratureCoupling(-np.sqrt(gamma2) / 2 * o["Y"])
    else:
        coupling = gen.ComplexAmplitudeCoupling(B=-0.5j * np.sqrt(gamma2) * o["A"])
    return gen.two_mode_feedback_liouvillian(coupling, gamma2, o["H0"], sc.bath, sc.config["truncation"]["driven_dim"])


# ----------------------------------------------------------------- compare


@dataclass
class CompareReport:
    times: np.ndarray
    distances: np.ndarray
    max_distance: float
    mean_distance: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_distance <= self.threshold


def compare_report(full: evolve.EvolutionResult, reduced: evolve.EvolutionResult,
                   threshold: float = 0.05) -> CompareReport:
    """Trace distance between the source state of ``full`` (factor 0) and ``reduced``."""
    if len(full.times) != len(reduced.times) or not np.allclose(full.times, reduced.times, rtol=0, atol=1e-12):
        raise InvalidArgument("full and reduced runs use different time grids")
    d = []
    for sf, sr in zip(full.states, reduced.states):
        src = sf.matrix if sf.space.is_atomic else fock.partial_trace(sf, sf.space, 0)
        d.append(fock.trace_distance(src, sr.matrix))
    d = np.array(d)
    return CompareReport(full.times.copy(), d, float(d.max()), float(d.mean()), float(threshold))


# --------------------------------------------------------------------- run


@dataclass
class RunResult:
    summary: dict
    files: dict = field(default_factory=dict)  # name -> text content
    exit_code: int = 0


def _observable_series(states, space, names) -> dict:
    x, y = fock.quadratures(space)
    mats = {"x": x.matrix, "y": y.matrix, "n": fock.number(space).matrix}
    mats["x2"], mats["y2"] = mats["x"] @ mats["x"], mats["y"] @ mats["y"]
    vals = {k: np.array([np.trace(m @ s.matrix).real for s in states]) for k, m in mats.items()}
    vals["Vx"] = vals["x2"] - vals["x"] ** 2
    vals["Vy"] = vals["y2"] - vals["y"] ** 2
    return {k: vals[k] for k in names}


def csv_text(columns: list, data: list, sha: str) -> str:
    lines = [f"# config_sha256: {sha}", ",".join(columns)]
    for row in zip(*data):
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.17g" % float(v)


def run(sc: Scenario, threads: int = 1) -> RunResult:
    """Execute a validated scenario. Files are returned, not written."""
    sha = sc.config_sha256
    summary: dict[str, Any] = {
        "config_sha256": sha,
        "source_sha256": sc.source_sha256,
        "scenario": sc.config,
        "mode": sc.mode,
    }
    files: dict[str, str] = {}
    solver = sc.config["solver"]
    outs = sc.config["outputs"]
    code = 0

    if sc.mode == "master":
        L = build_generator(sc)
        res = evolve.propagate(L, sc.rho0, solver["t_final"], solver["dt"], solver["stride"])
        vals = _observable_series(res.states, sc.space, outs)
        files["timeseries.csv"] = csv_text(["time"] + outs, [res.times] + [vals[k] for k in outs], sha)
        summary["results"] = {"final": {k: vals[k][-1] for k in outs}}
        summary["diagnostics"] = {"boundary_leakage": res.boundary_leakage, "reliable": res.reliable,
                                  "trace_drift": res.trace_drift}
    elif sc.mode == "steady":
        L = build_generator(sc)
        rho = evolve.steady_state(L)
        vals = _observable_series([rho], sc.space, outs)
        summary["results"] = {"steady": {k: v[0] for k, v in vals.items()}}
        leak = fock.top_population(rho.matrix, sc.space)
        summary["diagnostics"] = {"boundary_leakage": leak, "reliable": leak <= evolve.DEFAULT_POLICY.leakage,
                                  "residual": evolve.residual(L, rho)}
        pops = np.real(np.diag(rho.matrix))
        files["populations.csv"] = csv_text(["n", "population"], [np.arange(sc.space.dim), pops], sha)
    elif sc.mode == "trajectories":
        summary.update(_run_trajectories(sc, threads, files, sha))
    elif sc.mode == "spectrum":
        summary["results"] = _run_spectrum(sc, files, sha)
    elif sc.mode == "compare":
        res, ok = _run_compare(sc, files, sha)
        summary["results"] = res
        code = 0 if ok else 5
    elif sc.mode == "lindblad-check":
        summary["results"] = _run_lindblad(sc)
    summary["files"] = sorted(files)
    return RunResult(_jsonable(summary), files, code)


def _run_trajectories(sc: Scenario, threads: int, files: dict, sha: str) -> dict:
    cfg = sc.trajectory_config
    mode = sc.config["mode"]
    stats = traj.ensemble_average(cfg, mode["n"], mode["seed"], threads)
    ref = traj.master_equation_reference(cfg, stats.times)
    outs = sc.config["outputs"]
    cols, data = ["time"], [stats.times]
    zmax = {}
    for k in outs:
        cols += [f"mean_{k}", f"stderr_{k}", f"me_{k}"]
        data += [stats.mean[k], stats.stderr[k], ref[k]]
        z = _zscores(stats.mean[k], stats.stderr[k], ref[k])
        zmax[k] = float(np.max(z)) if z.size else 0.0
    for k in ("Ix", "Iy"):
        if k in stats.mean:
            cols += [f"mean_{k}", f"stderr_{k}"]
            data += [np.nan_to_num(stats.mean[k]), np.nan_to_num(stats.stderr[k])]
    files["ensemble.csv"] = csv_text(cols, data, sha)
    seeds = {
        "base_seed": mode["seed"],
        "n_trajectories": mode["n"],
        "stream": "numpy Philox(SeedSequence(base_seed, spawn_key=(trajectory_index, channel)))",
        "noise_block": traj.NOISE_BLOCK,
        "group_size": traj.GROUP_SIZE,
    }
    files["seeds.json"] = json.dumps(seeds, indent=2, sort_keys=True) + "\n"
    return {
        "results": {"max_abs_z": zmax, "within_3_stderr": all(v <= 3 for v in zmax.values()),
                    "final_mean": {k: stats.mean[k][-1] for k in outs}},
        "seed_provenance": seeds,
    }


def _zscores(mean, se, ref):
    mean, se, ref = map(np.asarray, (mean, se, ref))
    diff = np.abs(mean - ref)
    keep = se > 1e-12 * np.maximum(1.0, np.abs(ref))
    z = np.where(keep, diff / np.where(keep, se, 1.0), 0.0)
    # a deterministic point (zero spread) must agree with the reference exactly
    z = np.where(~keep & (diff > 1e-9), np.inf, z)
    return z


def _omega_grid(grid) -> np.ndarray:
    if isinstance(grid, list):
        return np.array(grid, dtype=float)
    return np.linspace(grid["start"], grid["stop"], grid["num"])


def _run_spectrum(sc: Scenario, files: dict, sha: str) -> dict:
    o = sc.ops
    model = langevin.build_linear_model(o["lam"], o["mu"], o["tau"])
    w = _omega_grid(sc.config["mode"]["omegas"])
    s = langevin.output_spectrum(model, w)
    t = langevin.transfer_function_spectrum(model, w)
    files["spectrum.csv"] = csv_text(["omega", "Sx", "Sy", "Sx_transfer", "Sy_transfer"], [w, s.Sx, s.Sy, t.Sx, t.Sy], sha)
    vx, vy = langevin.steady_variance_analytic(o["lam"], o["mu"])
    out = {
        "max_closed_vs_transfer": float(max(np.max(np.abs(s.Sx - t.Sx)), np.max(np.abs(s.Sy - t.Sy)))),
        "min_Sx": float(np.min(s.Sx)),
        "min_Sy": float(np.min(s.Sy)),
        "steady_variance": {"Vx": vx, "Vy": vy},
    }
    if o["mu"] == -1.0:
        out["max_heisenberg_product_error"] = float(np.max(np.abs(s.Sx * s.Sy - 1)))
    return out


def _run_compare(sc: Scenario, files: dict, sha: str):
    solver = sc.config["solver"]
    mode = sc.config["mode"]
    reduced_L = build_generator(sc, form="lindblad" if sc.scheme == "intensity" else None)
    reduced = evolve.propagate(reduced_L, sc.rho0, solver["t_final"], solver["dt"], solver["stride"])
    cols, data, per = ["time"], [reduced.times], {}
    for g2 in mode["gamma2"]:
        L = two_mode_generator(sc, g2)
        vac2 = fock.fock_state(fock.make_space(sc.config["truncation"]["driven_dim"]), 0)
        rho_full = fock.DensityMatrix(L.space, np.kron(sc.rho0.matrix, vac2.matrix))
        full = evolve.propagate(L, rho_full, solver["t_final"], solver["dt"], solver["stride"])
        rep = compare_report(full, reduced, mode["threshold"])
        cols.append(f"trace_distance_gamma2_{g2:g}")
        data.append(rep.distances)
        per[f"{g2:g}"] = {"max": rep.max_distance, "mean": rep.mean_distance, "passed": rep.passed,
                          "boundary_leakage": full.boundary_leakage}
    files["compare.csv"] = csv_text(cols, data, sha)
    ranked = sorted(per, key=float)
    mono = all(per[ranked[i]]["max"] > per[ranked[i + 1]]["max"] for i in range(len(ranked) - 1))
    best = per[f"{max(mode['gamma2']):g}"]
    ok = best["passed"]
    return ({"per_gamma2": per, "max_distance": best["max"], "threshold": mode["threshold"],
             "passed": ok, "distance_decreases_with_gamma2": mono}, ok)


def _run_lindblad(sc: Scenario) -> dict:
    forms = ["expanded", "lindblad"] if sc.scheme == "intensity" else [None]
    out = {}
    for f in forms:
        chk = gen.lindblad_form_check(build_generator(sc, form=f))
        out[f or sc.scheme] = {"valid": chk.valid, "min_kossakowski_eigenvalue": chk.min_kossakowski_eigenvalue}
    return out


def write_artifacts(result: RunResult, out_dir: str, timing: Optional[dict] = None):
    """Write CSV files, summary.json and (optionally) timing.json."""
    os.makedirs(out_dir, exist_ok=True)
    for name, text in result.files.items():
        with open(os.path.join(out_dir, name), "w", newline="\n") as fh:
            fh.write(text)
    with open(os.path.join(out_dir, "summary.json"), "w", newline="\n") as fh:
        json.dump(result.summary, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    if timing is not None:
        with open(os.path.join(out_dir, "timing.json"), "w", newline="\n") as fh:
            json.dump(timing, fh, indent=2, sort_keys=True)
            fh.write("\n")
