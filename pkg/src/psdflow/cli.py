"""Command-line front end.

Exit codes: 0 solved/feasible, 2 restored, 3 infeasible or not converged,
64 bad input.
"""

from __future__ import annotations

import argparse
import cmath
import math
import sys
from pathlib import Path

from .io import REPORT_MAGIC, VERSION, NetworkFileError, read_network
from .linearize import FitRegion, RankDeficientError, cbm_coeffs, fit_region, grid_error, sample_grid, unit_circle_error
from .milp import DEFAULT_FLEX_CAP, FlexCapError, VoltageBox, assemble_ltupf, imbalance_objective, solve_ltupf
from .model import PHASES, NetworkError, validate_network
from .restore import RESTORED, FEASIBLE_INITIAL, compare_solutions, restore_feasibility
from .sweep import SweepOptions, ntupf_solve

EXIT_OK = 0
EXIT_RESTORED = 2
EXIT_INFEASIBLE = 3
EXIT_INPUT = 64

VALIDATION_GRID = 101


def _f(x: float) -> str:
    return f"{x:.10f}"


def _deg(x: float) -> str:
    return f"{math.degrees(x):.8f}"


class Report:
    def __init__(self, command: str):
        self.lines = [f"{REPORT_MAGIC} {VERSION}", f"# command: {command}"]

    def meta(self, key: str, value) -> None:
        self.lines.append(f"# {key}: {value}")

    def table(self, name: str, header: list[str], rows) -> None:
        self.lines.append(f"[{name}]")
        self.lines.append(" ".join(header))
        self.lines.extend(" ".join(str(x) for x in row) for row in rows)

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def _voltage_rows(ntupf_v, ltupf_v=None, cmp=None):
    rows = []
    for (node, ph) in sorted(ntupf_v, key=lambda k: (k[0], k[1].index)):
        v = ntupf_v[(node, ph)]
        row = [node, ph.value, _f(abs(v)), _deg(cmath.phase(v))]
        if ltupf_v is not None:
            w = ltupf_v[(node, ph)]
            row += [_f(abs(w)), _deg(cmath.phase(w)), f"{cmp.vm_error[(node, ph)]:.3e}", f"{math.degrees(cmp.va_error[(node, ph)]):.3e}"]
        rows.append(row)
    return rows


V_HEADER = ["node", "phase", "vm_pu", "va_deg"]
CMP_HEADER = V_HEADER + ["vm_ltupf_pu", "va_ltupf_deg", "vm_err_pu", "va_err_deg"]


def _customer_rows(net, asg, res):
    rows = []
    for c in sorted(net.customers, key=lambda c: c.id):
        v = res.customer_voltage[c.id]
        rows.append([c.id, c.node, asg[c.id].value, int(c.flexible), repr(c.p), repr(c.q), _f(abs(v)), _deg(cmath.phase(v))])
    return rows


C_HEADER = ["customer", "node", "phase", "flexible", "p_pu", "q_pu", "vm_pu", "va_deg"]


def _load(path):
    doc = read_network(path)
    violations = validate_network(doc.network)
    if violations:
        raise NetworkError(violations)
    return doc.network


def _opts(args) -> SweepOptions:
    return SweepOptions(tol=args.tol, max_iter=args.max_iter, v_floor=args.vfloor)


def _region(args) -> FitRegion:
    return FitRegion(args.vmin, args.vmax, math.radians(args.ddelta), args.grid, args.grid)


def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_solve(args) -> int:
    net = _load(args.network)
    asg = net.initial_assignment()
    res = ntupf_solve(net, asg, _opts(args))
    rep = Report("solve")
    rep.meta("converged", str(res.converged).lower())
    rep.meta("iterations", res.iterations)
    rep.meta("objective_ux", _f(imbalance_objective(net, asg)))
    rep.table("node_voltages", V_HEADER, _voltage_rows(res.node_voltage))
    rep.table("customers", C_HEADER, _customer_rows(net, asg, res))
    _emit(args, rep.text())
    return EXIT_OK if res.converged else EXIT_INFEASIBLE


def cmd_fit(args) -> int:
    region = _region(args)
    dense = FitRegion(region.v_min, region.v_max, region.delta_halfwidth, VALIDATION_GRID, VALIDATION_GRID)
    lsm = fit_region(region, "lsm")
    rep = Report("fit")
    rep.meta("vmin", args.vmin)
    rep.meta("vmax", args.vmax)
    rep.meta("ddelta_deg", args.ddelta)
    rep.meta("grid", args.grid)
    rows = []
    for method in ("lsm", "cbm"):
        for ph in PHASES:
            center = region.delta_center[ph]
            fit = lsm[ph] if method == "lsm" else cbm_coeffs(center)
            train = grid_error(fit, sample_grid(region, ph))
            val = grid_error(fit, sample_grid(dense, ph))
            unit = unit_circle_error(fit, center, region.delta_halfwidth)
            rows.append([method, ph.value, *(f"{c:.12f}" for c in fit.coefficients), f"{train:.6e}", f"{val:.6e}", f"{unit:.6e}"])
    rep.table(
        "coefficients",
        ["method", "phase", "kx", "ky", "bx", "hx", "hy", "by", "train_err", "validation_err", "unit_circle_err"],
        rows,
    )
    _emit(args, rep.text())
    return EXIT_OK


def cmd_compare(args) -> int:
    net = _load(args.network)
    region = _region(args)
    coeffs = fit_region(region)
    box = VoltageBox.from_region(region)
    asg = net.initial_assignment()
    res = ntupf_solve(net, asg, _opts(args))
    sol, inside = solve_ltupf(assemble_ltupf(net, asg, coeffs), box)
    rep = Report("compare")
    rep.meta("converged", str(res.converged).lower())
    rep.meta("iterations", res.iterations)
    rep.meta("ltupf_in_box", str(inside).lower())
    if not res.converged:
        rep.table("node_voltages", ["node", "phase", "vm_ltupf_pu", "va_ltupf_deg"], _voltage_rows(sol.node_voltage))
        _emit(args, rep.text())
        return EXIT_INFEASIBLE
    cmp = compare_solutions(res, sol.node_voltage, box.delta_center)
    rep.meta("max_vm_err_pu", f"{cmp.max_vm_error:.3e}")
    rep.meta("max_va_err_deg", f"{math.degrees(cmp.max_va_error):.3e}")
    rep.table("node_voltages", CMP_HEADER, _voltage_rows(res.node_voltage, sol.node_voltage, cmp))
    rep.table("va_range", ["phase", "min_deg", "max_deg"], [[ph.value, _deg(lo), _deg(hi)] for ph, (lo, hi) in cmp.va_range.items()])
    _emit(args, rep.text())
    return EXIT_OK


def cmd_restore(args) -> int:
    net = _load(args.network)
    region = _region(args)
    coeffs = fit_region(region)
    box = VoltageBox.from_region(region)
    r = restore_feasibility(net, _opts(args), coeffs, box, flex_cap=args.flex_cap)
    rep = Report("restore")
    rep.meta("outcome", r.outcome)
    rep.meta("initial_converged", str(r.initial_ntupf.converged).lower())
    rep.meta("initial_iterations", r.initial_ntupf.iterations)
    rep.meta("converged", str(r.ntupf.converged).lower())
    rep.meta("iterations", r.ntupf.iterations)
    rep.meta("objective_ux", _f(r.objective))
    rep.meta("explored", r.search.explored if r.search else 0)
    if r.comparison is not None:
        rep.meta("max_vm_err_pu", f"{r.comparison.max_vm_error:.3e}")
        rep.meta("max_va_err_deg", f"{math.degrees(r.comparison.max_va_error):.3e}")
    rep.table("switch_plan", ["customer", "from", "to"], [[cid, a.value, b.value] for cid, a, b in r.switch_plan])
    if r.comparison is not None:
        rep.table("node_voltages", CMP_HEADER, _voltage_rows(r.ntupf.node_voltage, r.ltupf_voltages, r.comparison))
        rep.table("customers", C_HEADER, _customer_rows(net, r.assignment, r.ntupf))
        rep.table(
            "va_range",
            ["phase", "min_deg", "max_deg"],
            [[ph.value, _deg(lo), _deg(hi)] for ph, (lo, hi) in r.comparison.va_range.items()],
        )
    _emit(args, rep.text())
    if r.outcome == FEASIBLE_INITIAL:
        return EXIT_OK
    return EXIT_RESTORED if r.outcome == RESTORED else EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float, default=1e-8, help="sweep tolerance on voltage change (pu)")
    common.add_argument("--max-iter", type=int, default=100)
    common.add_argument("--vfloor", type=float, default=0.3, help="divergence floor on |V| (pu)")
    common.add_argument("--vmin", type=float, default=0.95)
    common.add_argument("--vmax", type=float, default=1.05)
    common.add_argument("--ddelta", type=float, default=10.0, help="angle half-width around each phase center (deg)")
    common.add_argument("--grid", type=int, default=21, help="VM and VA sample counts for the fit")
    common.add_argument("--flex-cap", type=int, default=DEFAULT_FLEX_CAP)
    common.add_argument("--out", help="write the report here instead of stdout")

    parser = argparse.ArgumentParser(prog="psdflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_net in (
        ("solve", cmd_solve, True),
        ("fit", cmd_fit, False),
        ("compare", cmd_compare, True),
        ("restore", cmd_restore, True),
    ):
        p = sub.add_parser(name, parents=[common])
        if needs_net:
            p.add_argument("network", help="network file")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NetworkError as exc:
        for v in exc.violations:
            print(f"invalid network: {v}", file=sys.stderr)
        return EXIT_INPUT
    except (NetworkFileError, RankDeficientError, FlexCapError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
