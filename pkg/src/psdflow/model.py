"""Feeder, customer and phase-assignment types.

Electrical quantities are per-unit on a common base.  Voltages, currents and
impedances are plain Python ``complex`` values (real part X or J, imaginary
part Y or W).  Line impedances are Kron-reduced 3x3 phase-frame matrices.
"""

from __future__ import annotations

import cmath
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np


class Phase(str, Enum):
    A = "a"
    B = "b"
    C = "c"

    @property
    def index(self) -> int:
        return "abc".index(self.value)

    @classmethod
    def parse(cls, text: str) -> "Phase":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown phase {text!r}; expected one of a, b, c") from None

    def __str__(self) -> str:
        return self.value


PHASES: tuple[Phase, Phase, Phase] = (Phase.A, Phase.B, Phase.C)


def _is_finite(z: complex) -> bool:
    return math.isfinite(z.real) and math.isfinite(z.imag)


def magnitude_angle(v: complex) -> tuple[float, float]:
    """Return ``(|v|, angle)`` with the angle in radians on (-pi, pi]."""
    ang = cmath.phase(v)
    if ang <= -math.pi:
        ang += 2.0 * math.pi
    return abs(v), ang


@dataclass(frozen=True)
class LineSegment:
    from_node: int
    to_node: int
    z: tuple[tuple[complex, complex, complex], ...]

    def __post_init__(self):
        rows = tuple(tuple(complex(x) for x in row) for row in self.z)
        if len(rows) != 3 or any(len(r) != 3 for r in rows):
            raise ValueError(f"segment {self.key}: impedance must be 3x3")
        object.__setattr__(self, "z", rows)

    @classmethod
    def from_matrix(cls, from_node: int, to_node: int, z) -> "LineSegment":
        z = np.asarray(z, dtype=complex)
        return cls(from_node, to_node, tuple(tuple(complex(x) for x in row) for row in z))

    @property
    def key(self) -> tuple[int, int]:
        return (self.from_node, self.to_node)

    @property
    def zmat(self) -> np.ndarray:
        return np.array(self.z, dtype=complex)


@dataclass(frozen=True)
class Customer:
    id: int
    node: int
    p: float
    q: float
    z_service: complex = 0j
    flexible: bool = False
    initial_phase: Phase = Phase.A

    def __post_init__(self):
        object.__setattr__(self, "z_service", complex(self.z_service))
        object.__setattr__(self, "initial_phase", Phase(self.initial_phase))

    @property
    def s(self) -> complex:
        return complex(self.p, self.q)


@dataclass(frozen=True)
class Network:
    nodes: frozenset[int]
    segments: tuple[LineSegment, ...]
    root: int
    root_voltage: tuple[complex, complex, complex]
    customers: tuple[Customer, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", frozenset(self.nodes))
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "customers", tuple(self.customers))
        object.__setattr__(self, "root_voltage", tuple(complex(v) for v in self.root_voltage))

    def customer(self, cid: int) -> Customer:
        for c in self.customers:
            if c.id == cid:
                return c
        raise KeyError(cid)

    @property
    def flexible_ids(self) -> list[int]:
        return sorted(c.id for c in self.customers if c.flexible)

    def initial_assignment(self) -> "Assignment":
        return Assignment({c.id: c.initial_phase for c in self.customers})


@dataclass(frozen=True)
class Assignment:
    """Customer id -> connected phase."""

    phase_of: Mapping[int, Phase] = field(default_factory=dict)

    def __getitem__(self, cid: int) -> Phase:
        return self.phase_of[cid]

    def __len__(self) -> int:
        return len(self.phase_of)

    def items(self):
        return sorted(self.phase_of.items())


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind}: {self.detail}"


class NetworkError(ValueError):
    """Raised when an operation needs a structurally valid network."""

    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations) or "invalid network")


class AssignmentError(ValueError):
    pass


def validate_network(net: Network) -> list[Violation]:
    """Collect every structural problem with ``net``; an empty list means valid."""
    out: list[Violation] = []
    if net.root not in net.nodes:
        out.append(Violation("unknown_node", f"root {net.root} is not a node"))
    if len(net.root_voltage) != 3:
        out.append(Violation("root_voltage", "root voltage needs one phasor per phase"))
    for ph, v in zip(PHASES, net.root_voltage):
        if not _is_finite(v):
            out.append(Violation("nonfinite", f"root voltage phase {ph} is not finite"))
        elif abs(v) <= 0.0:
            out.append(Violation("zero_root_voltage", f"root voltage phase {ph} has zero magnitude"))

    # union-find for cycles
    parent = {n: n for n in net.nodes}

    def find(n):
        while parent[n] != n:
            parent[n] = parent[parent[n]]
            n = parent[n]
        return n

    adj: dict[int, list[tuple[int, int]]] = {n: [] for n in net.nodes}
    incoming: dict[int, int] = {}
    for s in net.segments:
        tag = f"segment {s.from_node}->{s.to_node}"
        if s.from_node not in net.nodes or s.to_node not in net.nodes:
            out.append(Violation("unknown_node", f"{tag} references a missing node"))
            continue
        if s.from_node == s.to_node:
            out.append(Violation("cycle", f"{tag} is a self loop"))
            continue
        z = s.zmat
        if not np.all(np.isfinite(z.real) & np.isfinite(z.imag)):
            out.append(Violation("nonfinite", f"{tag} has non-finite impedance"))
        elif not np.array_equal(z, z.T):
            out.append(Violation("asymmetric_z", f"{tag} impedance is not symmetric"))
        if np.any(np.diag(z).real <= 0.0):
            out.append(Violation("nonpositive_resistance", f"{tag} has a diagonal entry with non-positive resistance"))
        ra, rb = find(s.from_node), find(s.to_node)
        if ra == rb:
            out.append(Violation("cycle", f"{tag} closes a loop"))
        else:
            parent[ra] = rb
        adj[s.from_node].append((s.to_node, +1))
        adj[s.to_node].append((s.from_node, -1))
        incoming[s.to_node] = incoming.get(s.to_node, 0) + 1

    if net.root in net.nodes:
        seen = {net.root}
        queue = deque([net.root])
        while queue:
            n = queue.popleft()
            for m, direction in adj[n]:
                if m in seen:
                    continue
                if direction < 0:
                    out.append(Violation("orientation", f"segment {m}->{n} points towards the root"))
                seen.add(m)
                queue.append(m)
        missing = sorted(net.nodes - seen)
        if missing:
            out.append(Violation("disconnected", f"nodes not reachable from root: {missing}"))
        if incoming.get(net.root):
            out.append(Violation("orientation", f"root {net.root} has an incoming segment"))

    ids = set()
    for c in net.customers:
        if c.id in ids:
            out.append(Violation("duplicate_customer", f"customer id {c.id} repeated"))
        ids.add(c.id)
        if c.node not in net.nodes:
            out.append(Violation("dangling_customer", f"customer {c.id} sits on missing node {c.node}"))
        elif c.node == net.root:
            out.append(Violation("root_customer", f"customer {c.id} is connected at the root"))
        if not (math.isfinite(c.p) and math.isfinite(c.q) and _is_finite(c.z_service)):
            out.append(Violation("nonfinite", f"customer {c.id} has non-finite data"))
        elif c.z_service.real < 0.0:
            out.append(Violation("negative_service_resistance", f"customer {c.id} service drop has negative resistance"))
    return out


def require_valid(net: Network) -> None:
    violations = validate_network(net)
    if violations:
        raise NetworkError(violations)


def topological_order(net: Network) -> list[LineSegment]:
    """Segments ordered root-outward; reverse the list for leaf-to-root passes."""
    require_valid(net)
    children: dict[int, list[LineSegment]] = {}
    for s in net.segments:
        children.setdefault(s.from_node, []).append(s)
    order: list[LineSegment] = []
    queue = deque([net.root])
    while queue:
        n = queue.popleft()
        for s in children.get(n, ()):
            order.append(s)
            queue.append(s.to_node)
    return order


def resolve_assignment(net: Network, flexible_choice: Mapping[int, Phase] | None = None) -> Assignment:
    flexible_choice = flexible_choice or {}
    by_id = {c.id: c for c in net.customers}
    for cid in flexible_choice:
        if cid not in by_id:
            raise AssignmentError(f"customer {cid} does not exist")
        if not by_id[cid].flexible:
            raise AssignmentError(f"customer {cid} has no phase-switching device")
    return Assignment(
        {c.id: Phase(flexible_choice.get(c.id, c.initial_phase)) for c in net.customers}
    )


def check_assignment(net: Network, asg: Assignment) -> None:
    ids = {c.id for c in net.customers}
    if set(asg.phase_of) != ids:
        raise AssignmentError("assignment must cover exactly the network's customers")
    for c in net.customers:
        if not c.flexible and asg[c.id] != c.initial_phase:
            raise AssignmentError(f"inflexible customer {c.id} moved off phase {c.initial_phase}")


def apply_assignment(net: Network, asg: Assignment) -> Network:
    """Copy of ``net`` whose initial phases are taken from ``asg``."""
    customers = [replace(c, initial_phase=asg[c.id]) for c in net.customers]
    return replace(net, customers=tuple(customers))


def balanced_root(magnitude: float = 1.05) -> tuple[complex, complex, complex]:
    return tuple(cmath.rect(magnitude, math.radians(d)) for d in (0.0, 120.0, -120.0))


def phase_centers(net: Network) -> dict[Phase, float]:
    return {ph: magnitude_angle(v)[1] for ph, v in zip(PHASES, net.root_voltage)}


def customers_at(net: Network) -> dict[int, list[Customer]]:
    out: dict[int, list[Customer]] = {}
    for c in net.customers:
        out.setdefault(c.node, []).append(c)
    return out


def permuted(net: Network, order: Iterable[int]) -> Network:
    """Same network with customers listed in the given index order."""
    cs = list(net.customers)
    return replace(net, customers=tuple(cs[i] for i in order))
