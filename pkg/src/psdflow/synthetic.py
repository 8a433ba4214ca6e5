"""Synthetic feeders used by the tests, the examples and the CLI fixtures.

The studied feeder's real impedances and load traces are not public, so these
networks only reproduce its topology class: a street trunk with laterals, 77
single-phase customers and phase-switching devices on every eighth customer.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .model import Customer, LineSegment, Network, Phase, balanced_root

PSD_CUSTOMERS = tuple(range(1, 78, 8))  # 1, 9, ..., 73


def coupled_z(z_self: complex, z_mutual: complex, length: float = 1.0) -> np.ndarray:
    """Symmetric 3x3 phase impedance with equal mutual coupling."""
    return length * (z_mutual * np.ones((3, 3)) + (z_self - z_mutual) * np.eye(3))


def two_bus(
    p: float,
    q: float,
    z: complex = 0.02 + 0.01j,
    phase: Phase = Phase.A,
    z_service: complex = 0j,
    z_mutual: complex = 0j,
    root_voltage=None,
) -> Network:
    """Root plus one load node carrying a single customer on ``phase``."""
    seg = LineSegment.from_matrix(0, 1, coupled_z(z, z_mutual))
    cust = Customer(1, 1, p, q, z_service, flexible=False, initial_phase=phase)
    return Network({0, 1}, (seg,), 0, root_voltage or balanced_root(1.05), (cust,))


def random_feeder(
    rng: np.random.Generator,
    n_nodes: int = 32,
    n_customers: int = 77,
    z_self: complex = 0.004 + 0.0015j,
    z_mutual: complex = 0.0012 + 0.0006j,
    p_range: tuple[float, float] = (0.002, 0.012),
    power_factor: float = 0.95,
    flexible: tuple[int, ...] = PSD_CUSTOMERS,
) -> Network:
    """Random radial feeder: a trunk with laterals and loads on random nodes.

    Node 0 is the root.  Customers get phases round-robin a, b, c by id.
    """
    trunk = max(2, n_nodes // 3)
    segments = []
    for k in range(1, n_nodes):
        if k <= trunk:
            parent = k - 1
        else:
            parent = int(rng.integers(1, k))
        length = float(rng.uniform(0.5, 1.5))
        segments.append(LineSegment.from_matrix(parent, k, coupled_z(z_self, z_mutual, length)))
    tan_phi = math.tan(math.acos(power_factor))
    customers = []
    for cid in range(1, n_customers + 1):
        p = float(rng.uniform(*p_range))
        customers.append(
            Customer(
                id=cid,
                node=int(rng.integers(1, n_nodes)),
                p=p,
                q=p * tan_phi,
                z_service=complex(rng.uniform(0.001, 0.004), rng.uniform(0.0002, 0.001)),
                flexible=cid in flexible,
                initial_phase="abc"[(cid - 1) % 3],
            )
        )
    return Network(frozenset(range(n_nodes)), tuple(segments), 0, balanced_root(1.05), tuple(customers))


def scale_phase_loads(net: Network, phase: Phase, factor: float) -> Network:
    """Multiply the demand of every customer initially on ``phase``."""
    cs = tuple(
        replace(c, p=c.p * factor, q=c.q * factor) if c.initial_phase == phase else c
        for c in net.customers
    )
    return replace(net, customers=cs)


# initial phases of the ten switchable customers 1, 9, ..., 73
_PSD_PHASES = dict(zip(PSD_CUSTOMERS, "accbccacbc"))


def case_study_feeder(seed: int = 0, n_nodes: int = 32) -> Network:
    """77-customer street feeder with switchable customers 1, 9, ..., 73.

    Customers sit in id order along a single trunk.  The switchable customers
    carry larger demands and most start on phase c, so doubling phase-c load
    pushes that phase past its loadability while a rebalanced assignment
    keeps every voltage inside [0.95, 1.05] pu.
    """
    rng = np.random.default_rng(seed)
    z_self = 0.029 * (1 + 0.3j)
    z_mutual = 0.7 * z_self
    segments = tuple(
        LineSegment.from_matrix(k - 1, k, coupled_z(z_self, z_mutual, float(rng.uniform(0.8, 1.2))))
        for k in range(1, n_nodes)
    )
    customers = []
    for cid in range(1, 78):
        flexible = cid in _PSD_PHASES
        p = 0.04 if flexible else 0.006 * float(rng.uniform(0.5, 1.5))
        customers.append(
            Customer(
                id=cid,
                node=1 + (cid - 1) * (n_nodes - 1) // 77,
                p=p,
                q=0.3 * p,
                z_service=0.002 + 0.0005j,
                flexible=flexible,
                initial_phase=_PSD_PHASES[cid] if flexible else "abc"[(cid - 1) % 3],
            )
        )
    return Network(frozenset(range(n_nodes)), segments, 0, balanced_root(1.05), tuple(customers))
