"""``folmod`` command line: run one scenario, print a JSON report.

Exit codes: 0 every check passed, 2 a numeric check failed (or the
foliation is not admissible), 3 configuration or schema error, 4 the
convex solver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time

import numpy as np

from . import critical, foliation, solver, variation
from .expr import EvalError
from .geometry import GeometryError
from .scenario import ConfigError, Scenario, load_scenario

__all__ = ["main", "run", "COMMANDS"]

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3, 4

#: the check whose threshold ``--tol`` overrides, per command
PRIMARY_TOLERANCE = {
    "modulus": "solver_gap",
    "variation": "variation_gap",
    "critical": "critical",
    "pair": "pair_residual",
    "identity": "identity",
    "sweep": None,
}


class Checks:
    def __init__(self):
        self.items = []

    def at_most(self, name, value, threshold):
        self._add(name, value, threshold, "<=", value <= threshold)

    def at_least(self, name, value, threshold):
        self._add(name, value, threshold, ">=", value >= threshold)

    def _add(self, name, value, threshold, relation, ok):
        ok = bool(ok) and math.isfinite(value)
        self.items.append({"name": name, "value": float(value), "threshold": float(threshold),
                           "relation": relation, "pass": ok})

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.items)


def _admissible(fol, report) -> bool:
    diag = foliation.admissibility_diagnostics(fol, grid=(64, 64))
    report["diagnostics"]["admissibility"] = diag
    return bool(diag["ok"])


# -- commands ------------------------------------------------------------------


def cmd_modulus(sc: Scenario, grid, tol, report, checks):
    chart = sc.chart()
    fol = sc.foliation(chart)
    if not _admissible(fol, report):
        return EXIT_CHECK
    p = sc.p
    closed = foliation.modulus_closed_form(fol, p, grid)
    opts = sc.solver
    out = solver.solver_extremal_vs_closed_form(fol, p, opts["grid"], opts["leaves"],
                                                opts["tol"], opts["max_iter"])
    res = out["result"]
    gap = abs(res.modulus - closed) / closed
    report["results"].update({
        "closed_form": closed,
        "solver": res.modulus,
        "relative_gap": gap,
        "extremal_lp_gap": out["gap"],
        "closed_form_pow_p": closed ** p,
    })
    report["diagnostics"]["solver"] = {
        "converged": res.converged,
        "iterations": res.iterations,
        "kkt_residual": res.kkt_residual,
        "feasibility": res.feasibility,
        "dual_value": res.dual_value,
        "primal_value": res.primal_value,
        "grid": list(opts["grid"]),
        "leaves": opts["leaves"],
    }
    checks.at_most("solver_vs_closed_form", gap, tol["solver_gap"])
    checks.at_most("solver_extremal_lp_gap", out["gap"], tol.get("solver_extremal", 3e-2))
    if "modulus" in sc.expect:
        want = sc.expect["modulus"]
        checks.at_most("closed_form_vs_expected", abs(closed - want) / abs(want),
                       tol["modulus_rel"])
    if not res.converged:
        return EXIT_SOLVER
    return None


def _field(sc: Scenario, chart):
    X = sc.vector_field(chart)
    try:
        variation.check_compact_support(chart, X)
    except GeometryError as exc:
        raise ConfigError(f"vector_field: {exc}") from None
    return X


def _variation_opts(sc: Scenario) -> dict:
    v = sc.doc.get("variation", {})
    return {"t_step": v.get("t_step"), "n_leaves": v.get("fd_leaves"),
            "h_flow": v.get("h_flow", 1e-2)}


def cmd_variation(sc: Scenario, grid, tol, report, checks):
    chart = sc.chart()
    fol = sc.foliation(chart)
    X = _field(sc, chart)
    if not _admissible(fol, report):
        return EXIT_CHECK
    rep = variation.variation_fd(fol, sc.p, X, grid=grid, fd_floor=tol["fd_floor"],
                                 **_variation_opts(sc))
    report["results"].update(rep.as_dict())
    checks.at_most("analytic_vs_fd", rep.relative_gap, tol["variation_gap"])
    return None


def cmd_critical(sc: Scenario, grid, tol, report, checks):
    chart = sc.chart()
    fol = sc.foliation(chart)
    if not _admissible(fol, report):
        return EXIT_CHECK
    sample = (min(grid[0], 48), min(grid[1], 48))
    tg = critical.tangent_gradient_residual(fol, sc.p, sample)
    cr = critical.criticality_residual(fol, sc.p, sample)
    report["results"].update({"tangent_gradient_residual": tg, "criticality_residual": cr,
                              "sample_grid": list(sample)})
    if sc.expect.get("critical", True):
        checks.at_most("tangent_gradient", tg, tol["critical"])
        checks.at_most("criticality", cr, tol["critical"])
    else:
        checks.at_least("non_critical_detection", cr, tol["noncritical"])
    return None


def cmd_pair(sc: Scenario, grid, tol, report, checks):
    chart = sc.chart()
    F = sc.foliation(chart)
    if not _admissible(F, report):
        return EXIT_CHECK
    G = sc.second_foliation(chart)
    constructed = G is None
    if constructed:
        G = critical.OrthogonalFoliation(F)
    try:
        pair = critical.OrthogonalPair(F, G, sc.p, sc.doc.get("q"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = critical.pair_product_residual(pair, grid)
    prod = critical.pair_product_value(pair, grid)
    hold = critical.pair_holder_integral(pair, grid)
    report["results"].update({
        "p": pair.p,
        "q": pair.q,
        "orthogonal_constructed": constructed,
        "orthogonality": pair.orthogonality,
        "product_residual": res,
        "modulus_product": prod,
        "holder_integral": hold,
    })
    checks.at_most("product_residual", res, tol["pair_residual"])
    checks.at_most("product_vs_holder_integral", abs(prod - hold), tol["pair_product"])
    if "product" in sc.expect:
        checks.at_most("product_vs_expected", abs(prod - sc.expect["product"]),
                       tol["pair_product"])
    return None


def cmd_identity(sc: Scenario, grid, tol, report, checks):
    chart = sc.chart()
    fol = sc.foliation(chart)
    fns = sc.test_functions()
    if not _admissible(fol, report):
        return EXIT_CHECK
    rows = []
    for src, fn in fns:
        r = foliation.integral_identity_residual(fol, sc.p, fn, grid)
        rows.append({"test_function": src, **{k: float(v) for k, v in r.items()}})
        checks.at_most(f"identity[{src}]", r["residual"], tol["identity"])
    report["results"]["identity"] = rows
    return None


def cmd_sweep(sc: Scenario, grid, tol, report, checks):
    chart = sc.chart()
    fol = sc.foliation(chart)
    X = _field(sc, chart)
    t0, t1, n = sc.sweep()
    if not _admissible(fol, report):
        return EXIT_CHECK
    p = sc.p
    opts = _variation_opts(sc)
    ts = [float(t) for t in np.linspace(t0, t1, n + 1)]
    fols = variation.flowed_foliations(
        fol, variation.Flow(X, chart, h_flow=opts["h_flow"]), ts, opts["n_leaves"])
    mods = [foliation.modulus_closed_form(f, p, grid) for f in fols]
    m0 = foliation.modulus_closed_form(fol, p, grid)
    slope = variation.variation_analytic(fol, p, X, grid)
    rows = [{"t": t, "mod_p": m, "mod_p_pow_p": m ** p, "tangent_line": m0 ** p + slope * t}
            for t, m in zip(ts, mods)]
    # secant slopes over symmetric pairs, narrowest last
    by_t = {round(t, 15): m ** p for t, m in zip(ts, mods)}
    secants = []
    for t in sorted({abs(t) for t in by_t if t > 0}, reverse=True):
        if round(-t, 15) in by_t:
            secants.append({"h": t, "slope": (by_t[t] - by_t[round(-t, 15)]) / (2 * t)})
    report["results"].update({"rows": rows, "analytic_derivative": slope,
                              "mod_p_at_zero": m0, "secants": secants})
    return None


COMMANDS = {
    "modulus": cmd_modulus,
    "variation": cmd_variation,
    "critical": cmd_critical,
    "pair": cmd_pair,
    "identity": cmd_identity,
    "sweep": cmd_sweep,
}


# -- driver --------------------------------------------------------------------


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def run(command: str, config, grid=None, tol=None, timing: bool = False):
    """Run ``command`` on a scenario; returns ``(report, exit_code)``."""
    report = {"command": command, "scenario": None, "results": {}, "diagnostics": {},
              "checks": []}
    start = time.perf_counter()
    checks = Checks()
    try:
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        sc = load_scenario(config)
        report["scenario"] = {"name": sc.name, "digest": sc.digest, "seed": sc.seed}
        tols = sc.tolerances
        key = PRIMARY_TOLERANCE[command]
        if tol is not None and key is not None:
            tols[key] = float(tol)
        g = tuple(grid) if grid is not None else sc.grid
        report["grid"] = list(g)
        code = COMMANDS[command](sc, g, tols, report, checks)
        if code is None:
            code = EXIT_OK if checks.passed else EXIT_CHECK
    except ConfigError as exc:
        report["error"] = {"kind": "config", "message": str(exc)}
        code = EXIT_CONFIG
    except EvalError as exc:
        report["error"] = {"kind": "config", "message": f"expression evaluation: {exc}"}
        code = EXIT_CONFIG
    except GeometryError as exc:
        report["error"] = {"kind": "geometry", "message": str(exc)}
        code = EXIT_CHECK
    report["checks"] = checks.items
    report["status"] = {EXIT_OK: "pass", EXIT_CHECK: "fail", EXIT_CONFIG: "config_error",
                        EXIT_SOLVER: "not_converged"}[code]
    report["exit_code"] = code
    if timing:
        report["timing"] = {"seconds": time.perf_counter() - start}
    return _clean(report), code


def _flatten(prefix, x, out):
    if isinstance(x, dict):
        for k in sorted(x):
            _flatten(f"{prefix}.{k}" if prefix else str(k), x[k], out)
    elif isinstance(x, list):
        for i, v in enumerate(x):
            _flatten(f"{prefix}[{i}]", v, out)
    else:
        out.append((prefix, x))


def to_csv(report: dict) -> str:
    """Sweep rows as a table; other reports as flattened ``key,value`` pairs."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    table = report.get("results", {}).get("rows")
    if table:
        cols = list(table[0])
        w.writerow(cols)
        for row in table:
            w.writerow([repr(row[c]) for c in cols])
    else:
        w.writerow(["key", "value"])
        pairs = []
        _flatten("", {k: report[k] for k in ("results", "checks", "status") if k in report},
                 pairs)
        for k, v in pairs:
            w.writerow([k, repr(v) if isinstance(v, float) else v])
    return buf.getvalue()


def _grid_arg(text: str):
    try:
        a, b = text.lower().split("x")
        g = (int(a), int(b))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 128x128, got {text!r}") from None
    if min(g) < 2:
        raise argparse.ArgumentTypeError("grid sizes must be at least 2")
    return g


def _tol_arg(text: str):
    try:
        t = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not t > 0:
        raise argparse.ArgumentTypeError("tolerance must be positive")
    return t


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="folmod", description="p-modulus of foliations on 2-D charts")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True,
                    help="scenario JSON file, or the name of a bundled scenario")
    ap.add_argument("--out", help="also write the CSV table (sweep) or flattened report here")
    ap.add_argument("--format", choices=("json", "csv"), default="json",
                    help="format of the report printed to stdout")
    ap.add_argument("--grid", type=_grid_arg, help="quadrature grid NxM (overrides scenario)")
    ap.add_argument("--tol", type=_tol_arg,
                    help="threshold of the command's primary check (overrides scenario)")
    ap.add_argument("--timing", action="store_true",
                    help="include wall-clock timing (makes reports non-reproducible)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    report, code = run(args.command, args.config, args.grid, args.tol, args.timing)
    if args.format == "json":
        sys.stdout.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
    else:
        sys.stdout.write(to_csv(report))
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(to_csv(report))
    if code == EXIT_CONFIG and "error" in report:
        sys.stderr.write(f"folmod: {report['error']['message']}\n")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
