"""Scenario files: a single JSON document describing one computation.

A scenario names a chart, a submersion and an exponent, plus whatever a
command needs (a vector field, test functions, a sweep range).  Documents
are validated against :data:`SCHEMA` before anything is built, and the
sha256 of their canonical serialisation identifies them in reports.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .expr import EvalError, ParseError, evaluate, free_variables, parse
from .geometry import ExprField, MetricChart, Support, VectorField
from .foliation import SubmersionFoliation

__all__ = [
    "SCHEMA",
    "ConfigError",
    "Scenario",
    "load_scenario",
    "bundled_scenarios",
    "scenario_digest",
    "DEFAULT_TOLERANCES",
]


class ConfigError(ValueError):
    """The scenario is malformed or asks for something undefined."""


_number_or_expr = {"oneOf": [{"type": "number"}, {"type": "string", "minLength": 1}]}
_pair_int = {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 2,
             "maxItems": 2}
_range = {"type": "array", "items": _number_or_expr, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "chart", "submersion", "p"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": 1},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "chart": {
            "oneOf": [
                {
                    "type": "object",
                    "required": ["type", "a", "b"],
                    "additionalProperties": False,
                    "properties": {"type": {"const": "rectangle"}, "a": _number_or_expr,
                                   "b": _number_or_expr},
                },
                {
                    "type": "object",
                    "required": ["type", "r1", "r2"],
                    "additionalProperties": False,
                    "properties": {"type": {"const": "annulus"}, "r1": _number_or_expr,
                                   "r2": _number_or_expr},
                },
                {
                    "type": "object",
                    "required": ["type", "u_range", "v_range", "g11", "g12", "g22"],
                    "additionalProperties": False,
                    "properties": {
                        "type": {"const": "custom"},
                        "u_range": _range,
                        "v_range": _range,
                        "g11": {"type": "string"},
                        "g12": {"type": "string"},
                        "g22": {"type": "string"},
                        "periodic": {"enum": ["none", "u", "v"]},
                    },
                },
            ]
        },
        "submersion": {"type": "string", "minLength": 1},
        "second_submersion": {"type": "string", "minLength": 1},
        "p": {"type": "number"},
        "q": {"type": "number"},
        "grid": _pair_int,
        "leaves": {"type": "integer", "minimum": 3},
        "trace_tol": {"type": "number", "exclusiveMinimum": 0},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grid": _pair_int,
                "leaves": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
            },
        },
        "vector_field": {
            "type": "object",
            "required": ["X1", "X2"],
            "additionalProperties": False,
            "properties": {
                "X1": {"type": "string"},
                "X2": {"type": "string"},
                "bump": {
                    "type": "object",
                    "required": ["center", "r_in", "r_out"],
                    "additionalProperties": False,
                    "properties": {
                        "center": _range,
                        "r_in": _number_or_expr,
                        "r_out": _number_or_expr,
                    },
                },
            },
        },
        "variation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_step": {"type": "number", "exclusiveMinimum": 0},
                "fd_leaves": {"type": "integer", "minimum": 3},
                "h_flow": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "test_functions": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "sweep": {
            "type": "object",
            "required": ["t_range", "n_steps"],
            "additionalProperties": False,
            "properties": {
                "t_range": {"type": "array", "items": {"type": "number"}, "minItems": 2,
                            "maxItems": 2},
                "n_steps": {"type": "integer"},
            },
        },
        "expect": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "modulus": {"type": "number"},
                "critical": {"type": "boolean"},
                "product": {"type": "number"},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": {"type": "number", "exclusiveMinimum": 0},
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

#: pass/fail thresholds; a scenario's ``tolerances`` object overrides entries
DEFAULT_TOLERANCES = {
    "modulus_rel": 1e-4,
    "solver_gap": 5e-3,
    "variation_gap": 1e-2,
    "fd_floor": 1e-8,
    "critical": 1e-4,
    "noncritical": 1e-2,
    "pair_residual": 1e-4,
    "pair_product": 5e-4,
    "identity": 5e-4,
}


def scenario_digest(doc: dict) -> str:
    """sha256 of the canonical JSON form (sorted keys, no whitespace)."""
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _constant(x, what: str) -> float:
    """A number, or a constant expression such as ``"e"`` or ``"2*pi"``."""
    if isinstance(x, (int, float)):
        return float(x)
    try:
        tree = parse(x, variables=())
        return float(evaluate(tree))
    except (ParseError, EvalError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _expr(src: str, what: str, variables=("u", "v")) -> ExprField:
    try:
        return ExprField(parse(src, variables))
    except ParseError as exc:
        raise ConfigError(f"{what}: {exc}") from None


@dataclass
class Scenario:
    doc: dict
    digest: str
    source: Optional[str] = None

    # -- simple accessors ------------------------------------------------------

    @property
    def name(self) -> str:
        return self.doc.get("name", "")

    @property
    def p(self) -> float:
        return float(self.doc["p"])

    @property
    def grid(self) -> tuple:
        return tuple(self.doc.get("grid", (128, 128)))

    @property
    def leaves(self) -> int:
        return int(self.doc.get("leaves", 129))

    @property
    def seed(self) -> int:
        return int(self.doc.get("seed", 0))

    @property
    def solver(self) -> dict:
        opts = {"grid": (96, 96), "leaves": 96, "tol": 1e-8, "max_iter": 100_000}
        opts.update(self.doc.get("solver", {}))
        opts["grid"] = tuple(opts["grid"])
        return opts

    @property
    def tolerances(self) -> dict:
        tol = dict(DEFAULT_TOLERANCES)
        tol.update(self.doc.get("tolerances", {}))
        return tol

    @property
    def expect(self) -> dict:
        return dict(self.doc.get("expect", {}))

    # -- builders --------------------------------------------------------------

    def chart(self) -> MetricChart:
        c = self.doc["chart"]
        kind = c["type"]
        if kind == "rectangle":
            a, b = _constant(c["a"], "chart.a"), _constant(c["b"], "chart.b")
            if not (a > 0 and b > 0):
                raise ConfigError("rectangle sides must be positive")
            return MetricChart.rectangle(a, b)
        if kind == "annulus":
            r1, r2 = _constant(c["r1"], "chart.r1"), _constant(c["r2"], "chart.r2")
            if not 0 < r1 < r2:
                raise ConfigError("annulus needs 0 < r1 < r2")
            return MetricChart.annulus(r1, r2)
        policy = {"none": "none", "u": "periodic_u", "v": "periodic_v"}[c.get("periodic", "none")]
        ur = tuple(_constant(x, "chart.u_range") for x in c["u_range"])
        vr = tuple(_constant(x, "chart.v_range") for x in c["v_range"])
        try:
            return MetricChart(ur, vr, _expr(c["g11"], "chart.g11"), _expr(c["g12"], "chart.g12"),
                               _expr(c["g22"], "chart.g22"), boundary_policy=policy)
        except ValueError as exc:
            raise ConfigError(f"chart: {exc}") from None

    def _foliation(self, key: str, chart: MetricChart) -> SubmersionFoliation:
        phi = _expr(self.doc[key], key)
        return SubmersionFoliation(chart, phi, n_leaves=self.leaves, name=self.doc[key],
                                   trace_tol=float(self.doc.get("trace_tol", 1e-8)))

    def foliation(self, chart: Optional[MetricChart] = None) -> SubmersionFoliation:
        return self._foliation("submersion", chart or self.chart())

    def second_foliation(self, chart: MetricChart) -> Optional[SubmersionFoliation]:
        if "second_submersion" not in self.doc:
            return None
        return self._foliation("second_submersion", chart)

    def vector_field(self, chart: MetricChart) -> VectorField:
        block = self.doc.get("vector_field")
        if block is None:
            raise ConfigError("this command needs a vector_field")
        support = None
        if "bump" in block:
            b = block["bump"]
            center = tuple(_constant(x, "vector_field.bump.center") for x in b["center"])
            r_in = _constant(b["r_in"], "vector_field.bump.r_in")
            r_out = _constant(b["r_out"], "vector_field.bump.r_out")
            if not 0 <= r_in < r_out:
                raise ConfigError("vector_field.bump needs 0 <= r_in < r_out")
            support = Support(center, r_in, r_out, (chart.periodic_u, chart.periodic_v))
        return VectorField(_expr(block["X1"], "vector_field.X1"),
                           _expr(block["X2"], "vector_field.X2"), support)

    def test_functions(self) -> list:
        srcs = self.doc.get("test_functions")
        if not srcs:
            raise ConfigError("this command needs test_functions")
        return [(s, _expr(s, f"test_functions[{i}]")) for i, s in enumerate(srcs)]

    def sweep(self) -> tuple:
        block = self.doc.get("sweep")
        if block is None:
            raise ConfigError("this command needs a sweep block")
        t0, t1 = (float(x) for x in block["t_range"])
        n = int(block["n_steps"])
        if n < 1:
            raise ConfigError("sweep.n_steps must be at least 1")
        if not t0 < t1:
            raise ConfigError("sweep.t_range must be increasing")
        return t0, t1, n


def _check_semantics(doc: dict) -> None:
    p = doc["p"]
    if not (isinstance(p, (int, float)) and math.isfinite(p) and p > 1):
        raise ConfigError(f"p must be a finite number > 1, got {p!r}")
    if "q" in doc:
        q = doc["q"]
        if not q > 1 or abs(1 / p + 1 / q - 1) > 1e-12:
            raise ConfigError(f"exponents are not conjugate: 1/{p} + 1/{q} != 1")
    for key in ("submersion", "second_submersion"):
        if key in doc:
            tree = _expr(doc[key], key).expr
            if not free_variables(tree):
                raise ConfigError(f"{key} is constant; a submersion must vary")


def load_scenario(source) -> Scenario:
    """Validate and wrap a scenario given as a dict, a path or a bundled name."""
    origin = None
    if isinstance(source, dict):
        doc = source
    else:
        path = Path(source)
        if not path.exists():
            bundled = bundled_scenarios()
            name = str(source)
            if name not in bundled:
                raise ConfigError(f"no such scenario file or bundled scenario: {source}")
            path = bundled[name]
        origin = str(source)
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema violation at {where}: {exc.message}") from None
    _check_semantics(doc)
    return Scenario(doc, scenario_digest(doc), origin)


def bundled_scenarios() -> dict:
    """Name -> path of the golden scenarios shipped with the package."""
    root = resources.files("folmod") / "scenarios"
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith(".json")}
