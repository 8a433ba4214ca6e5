"""Feasibility restoration by phase switching, and NTUPF/LTUPF comparison."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Mapping

from .linearize import LinCoeffs, fit_region
from .milp import (
    DEFAULT_FLEX_CAP,
    SearchOutcome,
    VoltageBox,
    assemble_ltupf,
    assignment_search,
    imbalance_objective,
    solve_ltupf,
    wrap_angle,
)
from .model import PHASES, Assignment, Network, Phase, require_valid
from .sweep import SolveResult, SweepOptions, ntupf_solve

FEASIBLE_INITIAL = "feasible_initial"
RESTORED = "restored"
INFEASIBLE = "infeasible"


@dataclass
class Comparison:
    vm_error: dict[tuple[int, Phase], float]
    va_error: dict[tuple[int, Phase], float]
    va_range: dict[Phase, tuple[float, float]]

    @property
    def max_vm_error(self) -> float:
        return max(self.vm_error.values(), default=0.0)

    @property
    def max_va_error(self) -> float:
        return max(self.va_error.values(), default=0.0)


@dataclass
class RestoreReport:
    outcome: str
    assignment: Assignment
    switch_plan: list[tuple[int, Phase, Phase]] = field(default_factory=list)
    ntupf: SolveResult | None = None
    initial_ntupf: SolveResult | None = None
    ltupf_voltages: dict[tuple[int, Phase], complex] | None = None
    comparison: Comparison | None = None
    search: SearchOutcome | None = None
    objective: float = float("nan")


def compare_solutions(
    ntupf: SolveResult | Mapping[tuple[int, Phase], complex],
    ltupf: Mapping[tuple[int, Phase], complex],
    centers: Mapping[Phase, float] | None = None,
) -> Comparison:
    """Per node and phase |VM| and wrapped VA differences (radians).

    ``va_range`` holds the min/max of the nonlinear angles after rotating each
    phase back by its nominal center, so all three phases read around zero.
    """
    nt = ntupf.node_voltage if isinstance(ntupf, SolveResult) else ntupf
    if set(nt) != set(ltupf):
        raise ValueError("solutions cover different node/phase sets")
    centers = centers or {Phase.A: 0.0, Phase.B: 2 * math.pi / 3, Phase.C: -2 * math.pi / 3}
    vm, va = {}, {}
    spread: dict[Phase, list[float]] = {ph: [] for ph in PHASES}
    for key in sorted(nt):
        a, b = nt[key], ltupf[key]
        vm[key] = abs(abs(a) - abs(b))
        va[key] = abs(wrap_angle(cmath.phase(a) - cmath.phase(b)))
        spread[key[1]].append(wrap_angle(cmath.phase(a) - centers[key[1]]))
    ranges = {ph: (min(v), max(v)) for ph, v in spread.items() if v}
    return Comparison(vm, va, ranges)


def restore_feasibility(
    net: Network,
    opts: SweepOptions | None = None,
    coeffs: LinCoeffs | None = None,
    box: VoltageBox | None = None,
    flex_cap: int = DEFAULT_FLEX_CAP,
) -> RestoreReport:
    """Run the three-stage switching procedure.

    1. Sweep at the initial phases; convergence means the case is feasible.
    2. Otherwise search for the minimum-imbalance assignment whose
       linearised solution fits the voltage box.
    3. Re-run the sweep at that assignment; convergence means restored,
       anything else is reported infeasible without trying other candidates.
    """
    require_valid(net)
    opts = opts or SweepOptions()
    coeffs = coeffs or fit_region()
    box = box or VoltageBox.from_region(coeffs.region)
    initial = net.initial_assignment()

    first = ntupf_solve(net, initial, opts)
    if first.converged:
        sol, _ = solve_ltupf(assemble_ltupf(net, initial, coeffs), box)
        return RestoreReport(
            outcome=FEASIBLE_INITIAL,
            assignment=initial,
            ntupf=first,
            initial_ntupf=first,
            ltupf_voltages=sol.node_voltage,
            comparison=compare_solutions(first, sol.node_voltage, box.delta_center),
            objective=imbalance_objective(net, initial),
        )

    search = assignment_search(net, coeffs, box, cap=flex_cap)
    if search.status != "optimal":
        return RestoreReport(
            outcome=INFEASIBLE, assignment=initial, ntupf=first, initial_ntupf=first, search=search,
            objective=imbalance_objective(net, initial),
        )

    asg = search.best.assignment
    plan = [
        (c.id, c.initial_phase, asg[c.id])
        for c in sorted(net.customers, key=lambda c: c.id)
        if asg[c.id] != c.initial_phase
    ]
    second = ntupf_solve(net, asg, opts)
    ltupf_v = search.best.solution.node_voltage
    if not second.converged:
        return RestoreReport(
            outcome=INFEASIBLE, assignment=asg, switch_plan=plan, ntupf=second, initial_ntupf=first,
            ltupf_voltages=ltupf_v, search=search, objective=search.best.objective,
        )
    return RestoreReport(
        outcome=RESTORED if plan else FEASIBLE_INITIAL,
        assignment=asg,
        switch_plan=plan,
        ntupf=second,
        initial_ntupf=first,
        ltupf_voltages=ltupf_v,
        comparison=compare_solutions(second, ltupf_v, box.delta_center),
        search=search,
        objective=search.best.objective,
    )
