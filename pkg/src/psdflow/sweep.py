"""Backward/forward sweep solver for the nonlinear three-phase power flow."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PHASES, Assignment, Network, Phase, check_assignment, topological_order


@dataclass(frozen=True)
class SweepOptions:
    tol: float = 1e-8
    max_iter: int = 100
    v_floor: float = 0.3

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.v_floor < 1:
            raise ValueError("v_floor must lie in (0, 1)")


@dataclass
class SolveResult:
    node_voltage: dict[tuple[int, Phase], complex]
    customer_voltage: dict[int, complex]
    customer_current: dict[int, complex]
    segment_current: dict[tuple[tuple[int, int], Phase], complex]
    iterations: int
    converged: bool
    max_change: float = float("nan")
    history: list[float] = field(default_factory=list, repr=False)


def customer_injection(v_customer: complex, p: float, q: float) -> complex:
    """Current drawn by a constant-power load: ``(p - jq) / conj(v)``."""
    if abs(v_customer) == 0.0:
        raise ZeroDivisionError("customer voltage has zero magnitude")
    return complex(p, -q) / complex(v_customer).conjugate()


class _Layout:
    """Index arrays shared by the sweep passes."""

    def __init__(self, net: Network, asg: Assignment):
        order = topological_order(net)
        check_assignment(net, asg)
        self.nodes = sorted(net.nodes)
        self.pos = {n: i for i, n in enumerate(self.nodes)}
        self.root = self.pos[net.root]
        self.order = order
        self.seg_from = np.array([self.pos[s.from_node] for s in order], dtype=int)
        self.seg_to = np.array([self.pos[s.to_node] for s in order], dtype=int)
        self.seg_z = np.array([s.zmat for s in order]).reshape(len(order), 3, 3)
        # customers in id order so results do not depend on input ordering
        cs = sorted(net.customers, key=lambda c: c.id)
        self.cust_ids = [c.id for c in cs]
        self.c_node = np.array([self.pos[c.node] for c in cs], dtype=int)
        self.c_phase = np.array([asg[c.id].index for c in cs], dtype=int)
        self.c_conj_s = np.array([complex(c.p, -c.q) for c in cs], dtype=complex)
        self.c_zs = np.array([c.z_service for c in cs], dtype=complex)
        self.v0 = np.array(net.root_voltage, dtype=complex)

    def accumulate(self, i_cust: np.ndarray) -> np.ndarray:
        """Leaf-to-root branch currents, one row per segment in ``order``."""
        total = np.zeros((len(self.nodes), 3), dtype=complex)
        np.add.at(total, (self.c_node, self.c_phase), i_cust)
        i_seg = np.zeros((len(self.order), 3), dtype=complex)
        for k in range(len(self.order) - 1, -1, -1):
            t = self.seg_to[k]
            i_seg[k] = total[t]
            total[self.seg_from[k]] += total[t]
        return i_seg

    def propagate(self, i_seg: np.ndarray) -> np.ndarray:
        v = np.empty((len(self.nodes), 3), dtype=complex)
        v[self.root] = self.v0
        for k in range(len(self.order)):
            v[self.seg_to[k]] = v[self.seg_from[k]] - self.seg_z[k] @ i_seg[k]
        return v


def ntupf_solve(net: Network, asg: Assignment, opts: SweepOptions | None = None) -> SolveResult:
    """Solve the power flow for a fixed phase assignment.

    Starts flat at the root phasors.  Each iteration computes customer
    currents from the present node voltages (the service-drop voltage uses the
    previous iteration's current), accumulates branch currents towards the
    root and then updates node voltages outward from the root.  Running out
    of iterations, or any voltage falling below ``opts.v_floor``, yields
    ``converged=False`` rather than an exception.
    """
    opts = opts or SweepOptions()
    lay = _Layout(net, asg)
    v = np.tile(lay.v0, (len(lay.nodes), 1))
    i_cust = np.zeros(len(lay.cust_ids), dtype=complex)
    v_cust = lay.v0[lay.c_phase].copy()
    i_seg = np.zeros((len(lay.order), 3), dtype=complex)
    converged = False
    history: list[float] = []
    it = 0
    with np.errstate(all="ignore"):
        for it in range(1, opts.max_iter + 1):
            u = v[lay.c_node, lay.c_phase]
            v_cust_new = u - lay.c_zs * i_cust
            if np.any(~np.isfinite(v_cust_new)) or np.any(np.abs(v_cust_new) < opts.v_floor):
                break
            i_cust = lay.c_conj_s / np.conj(v_cust_new)
            i_seg = lay.accumulate(i_cust)
            v_new = lay.propagate(i_seg)
            if not np.all(np.isfinite(v_new)) or np.any(np.abs(v_new) < opts.v_floor):
                v, v_cust = v_new, v_cust_new
                break
            change = float(np.max(np.abs(v_new - v), initial=0.0))
            change = max(change, float(np.max(np.abs(v_cust_new - v_cust), initial=0.0)))
            history.append(change)
            v, v_cust = v_new, v_cust_new
            if change < opts.tol:
                converged = True
                break

    node_voltage = {(n, ph): complex(v[i, ph.index]) for i, n in enumerate(lay.nodes) for ph in PHASES}
    seg_current = {
        (s.key, ph): complex(i_seg[k, ph.index]) for k, s in enumerate(lay.order) for ph in PHASES
    }
    return SolveResult(
        node_voltage=node_voltage,
        customer_voltage={cid: complex(x) for cid, x in zip(lay.cust_ids, v_cust)},
        customer_current={cid: complex(x) for cid, x in zip(lay.cust_ids, i_cust)},
        segment_current=seg_current,
        iterations=it,
        converged=converged,
        max_change=history[-1] if history else float("nan"),
        history=history,
    )


def power_balance_residual(net: Network, res: SolveResult) -> float:
    """Worst ``|V conj(I) - (p + jq)|`` over customers."""
    worst = 0.0
    for c in net.customers:
        s = res.customer_voltage[c.id] * res.customer_current[c.id].conjugate()
        worst = max(worst, abs(s - c.s))
    return worst


def kcl_residual(net: Network, asg: Assignment, res: SolveResult) -> float:
    """Worst current mismatch over non-root nodes and phases."""
    mismatch = {(n, ph): 0j for n in net.nodes if n != net.root for ph in PHASES}
    for s in net.segments:
        for ph in PHASES:
            i = res.segment_current[(s.key, ph)]
            mismatch[(s.to_node, ph)] += i
            if s.from_node != net.root:
                mismatch[(s.from_node, ph)] -= i
    for c in net.customers:
        mismatch[(c.node, asg[c.id])] -= res.customer_current[c.id]
    return max((abs(x) for x in mismatch.values()), default=0.0)


def service_residual(net: Network, asg: Assignment, res: SolveResult) -> float:
    """Worst ``|U - V - Z I|`` over customer service drops."""
    worst = 0.0
    for c in net.customers:
        u = res.node_voltage[(c.node, asg[c.id])]
        r = u - res.customer_voltage[c.id] - c.z_service * res.customer_current[c.id]
        worst = max(worst, abs(r))
    return worst
