"""Linearised power flow (LTUPF) and the exact phase-assignment search.

With every binary fixed, the big-M envelopes that linearise ``alpha * I`` and
``alpha * V`` collapse to the products themselves (see
:func:`psdflow.linearize.rlp_reconstruct`), so the mixed-integer model
restricted to one assignment is just the linear system assembled here.  The
imbalance objective depends only on the assignment.  Scanning assignments in
ascending objective order and stopping at the first one whose linear solution
sits inside the voltage box therefore returns exactly the optimum of the
mixed-integer program.
"""

from __future__ import annotations

import cmath
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np
import scipy.linalg

from .linearize import FitRegion, LinCoeffs
from .model import PHASES, Assignment, Network, Phase, check_assignment, topological_order

BOX_TOL = 1e-9
DEFAULT_FLEX_CAP = 16


class SingularSystemError(np.linalg.LinAlgError):
    pass


class FlexCapError(ValueError):
    pass


@dataclass(frozen=True)
class VoltageBox:
    v_min: float = 0.95
    v_max: float = 1.05
    delta_center: Mapping[Phase, float] = field(
        default_factory=lambda: {Phase.A: 0.0, Phase.B: math.radians(120.0), Phase.C: math.radians(-120.0)}
    )
    delta_halfwidth: float = math.radians(10.0)
    node_limits: Mapping[int, tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def from_region(cls, region: FitRegion) -> "VoltageBox":
        return cls(region.v_min, region.v_max, dict(region.delta_center), region.delta_halfwidth)

    def limits(self, node: int) -> tuple[float, float]:
        return self.node_limits.get(node, (self.v_min, self.v_max))

    def violations(self, voltages: Mapping[tuple[int, Phase], complex]) -> list[tuple[int, Phase, str]]:
        out = []
        for (node, ph), v in sorted(voltages.items()):
            lo, hi = self.limits(node)
            mag = abs(v)
            if not (lo - BOX_TOL <= mag <= hi + BOX_TOL):
                out.append((node, ph, "vm"))
            elif abs(wrap_angle(cmath.phase(v) - self.delta_center[ph])) > self.delta_halfwidth + BOX_TOL:
                out.append((node, ph, "va"))
        return out


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


@dataclass
class LtupfSystem:
    """Real-valued linear system ``A x = b`` of the linearised power flow.

    Every complex unknown ``k`` occupies columns ``2k`` (real part) and
    ``2k + 1`` (imaginary part); every complex equation occupies two rows.
    """

    a: np.ndarray
    b: np.ndarray
    unknowns: list[tuple]
    root: int
    root_voltage: tuple[complex, complex, complex]
    assignment: Assignment

    def index(self, key) -> int:
        return self.unknowns.index(key)


@dataclass
class LtupfSolution:
    node_voltage: dict[tuple[int, Phase], complex]
    customer_voltage: dict[int, complex]
    customer_current: dict[int, complex]
    segment_current: dict[tuple[tuple[int, int], Phase], complex]
    residual: float


class _Assembler:
    """Builds the assignment-independent part of the system once.

    Rows touched by a customer's phase choice are filled per assignment.
    """

    def __init__(self, net: Network, coeffs: LinCoeffs):
        self.net = net
        self.coeffs = coeffs
        self.order = topological_order(net)
        nodes = sorted(n for n in net.nodes if n != net.root)
        self.customers = sorted(net.customers, key=lambda c: c.id)
        unknowns: list[tuple] = [("V", n, ph) for n in nodes for ph in PHASES]
        unknowns += [("I", s.key, ph) for s in self.order for ph in PHASES]
        for c in self.customers:
            unknowns += [("Vc", c.id), ("Ic", c.id)]
        self.unknowns = unknowns
        self.col = {k: i for i, k in enumerate(unknowns)}
        n = 2 * len(unknowns)
        a = np.zeros((n, n))
        b = np.zeros(n)
        row = 0
        v0 = net.root_voltage

        # Ohm's law on every segment and phase
        for s in self.order:
            zm = s.zmat
            for ph in PHASES:
                if s.from_node == net.root:
                    b[row] -= v0[ph.index].real
                    b[row + 1] -= v0[ph.index].imag
                else:
                    self._put(a, row, ("V", s.from_node, ph), 1.0)
                self._put(a, row, ("V", s.to_node, ph), -1.0)
                for ps in PHASES:
                    self._put(a, row, ("I", s.key, ps), -zm[ph.index, ps.index])
                row += 2

        # current balance, customer terms filled later
        self.kcl_row = {}
        for node in nodes:
            for ph in PHASES:
                self.kcl_row[(node, ph)] = row
                for s in self.order:
                    if s.to_node == node:
                        self._put(a, row, ("I", s.key, ph), 1.0)
                    elif s.from_node == node:
                        self._put(a, row, ("I", s.key, ph), -1.0)
                row += 2

        # service drop U - V - Z I = 0 and linearised power balance per customer
        self.svc_row = {}
        self.pb_row = {}
        for c in self.customers:
            self.svc_row[c.id] = row
            self._put(a, row, ("Vc", c.id), -1.0)
            self._put(a, row, ("Ic", c.id), -c.z_service)
            row += 2
            self.pb_row[c.id] = row
            self._put(a, row, ("Ic", c.id), 1.0)
            row += 2
        assert row == n
        self.a = a
        self.b = b

    def _put(self, a: np.ndarray, row: int, key, coef: complex) -> None:
        coef = complex(coef)
        k = 2 * self.col[key]
        a[row, k] += coef.real
        a[row, k + 1] -= coef.imag
        a[row + 1, k] += coef.imag
        a[row + 1, k + 1] += coef.real

    def system(self, asg: Assignment) -> LtupfSystem:
        check_assignment(self.net, asg)
        a = self.a.copy()
        b = self.b.copy()
        for c in self.customers:
            ph = asg[c.id]
            self._put(a, self.kcl_row[(c.node, ph)], ("Ic", c.id), -1.0)
            self._put(a, self.svc_row[c.id], ("V", c.node, ph), 1.0)
            # J = p fX + q fY,  W = p fY - q fX, with fX, fY affine in (X, Y)
            f = self.coeffs[ph]
            r = self.pb_row[c.id]
            kv = 2 * self.col[("Vc", c.id)]
            p, q = c.p, c.q
            a[r, kv] -= p * f.kx + q * f.hx
            a[r, kv + 1] -= p * f.ky + q * f.hy
            b[r] += p * f.bx + q * f.by
            a[r + 1, kv] -= p * f.hx - q * f.kx
            a[r + 1, kv + 1] -= p * f.hy - q * f.ky
            b[r + 1] += p * f.by - q * f.bx
        return LtupfSystem(a, b, self.unknowns, self.net.root, self.net.root_voltage, asg)


def assemble_ltupf(net: Network, asg: Assignment, coeffs: LinCoeffs) -> LtupfSystem:
    return _Assembler(net, coeffs).system(asg)


def solve_system(system: LtupfSystem) -> LtupfSolution:
    """Dense LU with partial pivoting."""
    a, b = system.a, system.b
    if not np.all(np.isfinite(a)):
        raise SingularSystemError("system matrix has non-finite entries")
    with warnings.catch_warnings():
        # zero pivots are reported below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    pivots = np.abs(np.diag(lu))
    if pivots.min(initial=np.inf) <= np.finfo(float).eps * max(pivots.max(initial=0.0), 1.0) * a.shape[0]:
        raise SingularSystemError("LTUPF system is numerically singular")
    x = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)
    residual = float(np.max(np.abs(a @ x - b), initial=0.0))
    z = x[0::2] + 1j * x[1::2]
    node_v = {(system.root, ph): complex(system.root_voltage[ph.index]) for ph in PHASES}
    cust_v, cust_i, seg_i = {}, {}, {}
    for key, val in zip(system.unknowns, z):
        val = complex(val)
        if key[0] == "V":
            node_v[(key[1], key[2])] = val
        elif key[0] == "I":
            seg_i[(key[1], key[2])] = val
        elif key[0] == "Vc":
            cust_v[key[1]] = val
        else:
            cust_i[key[1]] = val
    return LtupfSolution(node_v, cust_v, cust_i, seg_i, residual)


def solve_ltupf(system: LtupfSystem, box: VoltageBox) -> tuple[LtupfSolution, bool]:
    sol = solve_system(system)
    return sol, not box.violations(sol.node_voltage)


def imbalance_objective(net: Network, asg: Assignment) -> float:
    """Largest pairwise gap between per-phase total P or total Q."""
    p = [0.0, 0.0, 0.0]
    q = [0.0, 0.0, 0.0]
    for c in sorted(net.customers, key=lambda c: c.id):
        k = asg[c.id].index
        p[k] += c.p
        q[k] += c.q
    return max(
        max(abs(p[i] - p[j]), abs(q[i] - q[j])) for i, j in itertools.combinations(range(3), 2)
    )


@dataclass
class Candidate:
    assignment: Assignment
    objective: float
    solution: LtupfSolution


@dataclass
class SearchOutcome:
    best: Candidate | None
    explored: int
    status: str
    objectives: list[float] = field(default_factory=list, repr=False)
    max_residual: float = 0.0


_CHUNK_DIGITS = 12
# relative tolerance under which two imbalance values are treated as equal
TIE_RTOL = 1e-12


def _digits(codes: np.ndarray, f: int) -> np.ndarray:
    """Base-3 digits, most significant first, so integer order is lexicographic."""
    out = np.empty((codes.size, f), dtype=np.int8)
    rem = codes.copy()
    for k in range(f - 1, -1, -1):
        out[:, k] = rem % 3
        rem //= 3
    return out


def _objectives(digits: np.ndarray, base_p, base_q, fp, fq) -> np.ndarray:
    onehot = digits[:, :, None] == np.arange(3)[None, None, :]
    p = base_p + np.einsum("nkf,k->nf", onehot, fp)
    q = base_q + np.einsum("nkf,k->nf", onehot, fq)
    ux = np.zeros(digits.shape[0])
    for i, j in itertools.combinations(range(3), 2):
        ux = np.maximum(ux, np.abs(p[:, i] - p[:, j]))
        ux = np.maximum(ux, np.abs(q[:, i] - q[:, j]))
    return ux


def ordered_candidates(net: Network, flexible: Sequence[int]) -> Iterator[tuple[float, tuple[Phase, ...]]]:
    """Yield ``(U_x, phases)`` for every flexible-phase combination.

    Ordered by ascending objective, ties broken lexicographically on
    (customer id, phase).  Objectives within a tiny relative tolerance of
    each other form one tie group and are all reported at the group's
    lowest value.  ``phases`` is aligned with ``sorted(flexible)``.
    Large enumerations are streamed in objective bands so memory stays
    bounded.
    """
    flex = sorted(flexible)
    f = len(flex)
    fixed = [c for c in net.customers if c.id not in set(flex)]
    base_p = np.zeros(3)
    base_q = np.zeros(3)
    for c in sorted(fixed, key=lambda c: c.id):
        base_p[c.initial_phase.index] += c.p
        base_q[c.initial_phase.index] += c.q
    by_id = {c.id: c for c in net.customers}
    fp = np.array([by_id[i].p for i in flex], dtype=float)
    fq = np.array([by_id[i].q for i in flex], dtype=float)
    total = 3**f
    chunk = 3 ** min(f, _CHUNK_DIGITS)
    # sums taken in different orders differ by a few ulps; values closer than
    # this count as ties so the id-based tie-break decides, not rounding noise
    tie_tol = TIE_RTOL * max(1.0, float(np.abs(base_p).sum() + np.abs(base_q).sum() + np.abs(fp).sum() + np.abs(fq).sum()))

    def chunks():
        for start in range(0, total, chunk):
            codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
            d = _digits(codes, f)
            yield codes, d, _objectives(d, base_p, base_q, fp, fq)

    def ranked(codes, ux):
        """Order by tie group, then code; returns (order, group value, group id) in that order."""
        by_value = np.argsort(ux, kind="stable")
        sorted_ux = ux[by_value]
        breaks = np.diff(sorted_ux) > tie_tol
        gid = np.empty(ux.size, dtype=np.int64)
        gid[by_value] = np.concatenate([[0], np.cumsum(breaks)])
        lowest = sorted_ux[np.concatenate([[0], np.nonzero(breaks)[0] + 1])]
        order = np.lexsort((codes, gid))
        return order, lowest[gid[order]], gid[order]

    def emit(codes, values):
        for row, v in zip(_digits(codes, f), values):
            yield float(v), tuple(PHASES[x] for x in row)

    if total <= chunk:
        codes, _, ux = next(chunks())
        order, values, _ = ranked(codes, ux)
        yield from emit(codes[order], values)
        return

    # banded streaming: band edges from quantiles of a strided sample
    sample = np.concatenate([ux[::97] for _, _, ux in chunks()])
    n_bands = -(-total // chunk)
    inner = np.unique(np.quantile(sample, np.linspace(0, 1, n_bands + 1)[1:-1]))
    edges = [-np.inf, *inner, np.inf]
    carry_codes = np.empty(0, dtype=np.int64)
    carry_ux = np.empty(0)
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel_codes, sel_ux = [carry_codes], [carry_ux]
        for codes, _, ux in chunks():
            m = (ux >= lo) & (ux < hi)
            sel_codes.append(codes[m])
            sel_ux.append(ux[m])
        codes = np.concatenate(sel_codes)
        ux = np.concatenate(sel_ux)
        if not ux.size:
            continue
        order, values, gid = ranked(codes, ux)
        keep = np.ones(order.size, dtype=bool)
        if hi != np.inf and ux[order][gid == gid[-1]].max() >= hi - tie_tol:
            # the last tie group may continue into the next band
            keep = gid != gid[-1]
        carry_codes, carry_ux = codes[order[~keep]], ux[order[~keep]]
        yield from emit(codes[order[keep]], values[keep])


def assignment_search(
    net: Network,
    coeffs: LinCoeffs,
    box: VoltageBox,
    flexible: Sequence[int] | None = None,
    cap: int = DEFAULT_FLEX_CAP,
) -> SearchOutcome:
    """Minimum-imbalance assignment whose linearised solution is inside ``box``."""
    flex = sorted(net.flexible_ids if flexible is None else flexible)
    by_id = {c.id: c for c in net.customers}
    for cid in flex:
        if cid not in by_id or not by_id[cid].flexible:
            raise ValueError(f"customer {cid} is not a flexible customer of this network")
    if len(flex) > cap:
        raise FlexCapError(f"{len(flex)} flexible customers exceed the search cap of {cap}")

    assembler = _Assembler(net, coeffs)
    base = {c.id: c.initial_phase for c in net.customers}
    explored = 0
    objectives: list[float] = []
    worst_res = 0.0
    for ux, phases in ordered_candidates(net, flex):
        if objectives and ux < objectives[-1]:
            raise AssertionError("candidate stream is not in objective order")
        objectives.append(ux)
        choice = dict(base)
        choice.update(zip(flex, phases))
        asg = Assignment(choice)
        sol, ok = solve_ltupf(assembler.system(asg), box)
        explored += 1
        worst_res = max(worst_res, sol.residual)
        if ok:
            return SearchOutcome(Candidate(asg, ux, sol), explored, "optimal", objectives, worst_res)
    return SearchOutcome(None, explored, "infeasible", objectives, worst_res)
