"""Line-oriented network and report files.

Network file (angles in degrees, impedances as ``re+imj``)::

    psdflow-network 1
    [metadata]
    base_kva = 100
    description = demo feeder
    [root]
    node = 0
    voltage = 1.05@0 1.05@120 1.05@-120
    [segments]
    # from to z_aa z_ab z_ac z_ba z_bb z_bc z_ca z_cb z_cc
    0 1 0.02+0.01j 0j 0j 0j 0.02+0.01j 0j 0j 0j 0.02+0.01j
    [customers]
    # id node p q z_service flexible initial_phase
    1 1 0.01 0.002 0.001+0.0005j 1 a
"""

from __future__ import annotations

import cmath
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .model import Customer, LineSegment, Network, Phase, magnitude_angle

NETWORK_MAGIC = "psdflow-network"
REPORT_MAGIC = "psdflow-report"
VERSION = 1

SEGMENT_HEADER = "# from to z_aa z_ab z_ac z_ba z_bb z_bc z_ca z_cb z_cc"
CUSTOMER_HEADER = "# id node p q z_service flexible initial_phase"
_SECTIONS = ("metadata", "root", "segments", "customers")


class NetworkFileError(ValueError):
    def __init__(self, lineno: int | None, message: str):
        self.lineno = lineno
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)


@dataclass
class NetworkDocument:
    network: Network
    metadata: dict[str, str] = field(default_factory=dict)


def format_complex(z: complex) -> str:
    z = complex(z)
    sign = "-" if math.copysign(1.0, z.imag) < 0 else "+"
    return f"{z.real!r}{sign}{abs(z.imag)!r}j"


_JFIRST = re.compile(r"(^|[+-])j(\d[^+-]*(?:[eE][+-]?\d+)?)$")


def parse_complex(text: str) -> complex:
    """Accepts ``1.5-0.2j``, ``1.5-j0.2`` and plain reals."""
    t = text.strip().replace(" ", "")
    if not t.endswith("j"):
        t = _JFIRST.sub(r"\1\2j", t)
    try:
        z = complex(t)
    except ValueError:
        raise ValueError(f"bad complex number {text!r}") from None
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise ValueError(f"non-finite complex number {text!r}")
    return z


def format_polar(v: complex) -> str:
    mag, ang = magnitude_angle(v)
    return f"{float(f'{mag:.15g}')!r}@{float(f'{math.degrees(ang):.15g}')!r}"


def parse_polar(text: str) -> complex:
    try:
        mag, deg = text.split("@")
        return cmath.rect(float(mag), math.radians(float(deg)))
    except ValueError:
        raise ValueError(f"bad phasor {text!r}; expected magnitude@degrees") from None


def parse_network(text: str) -> NetworkDocument:
    lines = text.splitlines()
    body = [(i + 1, ln.strip()) for i, ln in enumerate(lines)]
    body = [(n, ln) for n, ln in body if ln and not ln.startswith("#")]
    if not body:
        raise NetworkFileError(None, "empty network file")
    n0, head = body[0]
    parts = head.split()
    if len(parts) != 2 or parts[0] != NETWORK_MAGIC:
        raise NetworkFileError(n0, f"expected header '{NETWORK_MAGIC} {VERSION}'")
    if parts[1] != str(VERSION):
        raise NetworkFileError(n0, f"unsupported format version {parts[1]}")

    section = None
    metadata: dict[str, str] = {}
    root_node = None
    root_voltage = None
    segments: list[LineSegment] = []
    customers: list[Customer] = []
    for lineno, ln in body[1:]:
        m = re.fullmatch(r"\[(\w+)\]", ln)
        if m:
            section = m.group(1)
            if section not in _SECTIONS:
                raise NetworkFileError(lineno, f"unknown section [{section}]")
            continue
        if section is None:
            raise NetworkFileError(lineno, "content before the first section")
        try:
            if section in ("metadata", "root"):
                key, sep, value = ln.partition("=")
                if not sep:
                    raise ValueError("expected 'key = value'")
                key, value = key.strip(), value.strip()
                if section == "metadata":
                    metadata[key] = value
                elif key == "node":
                    root_node = int(value)
                elif key == "voltage":
                    vs = value.split()
                    if len(vs) != 3:
                        raise ValueError("root voltage needs three phasors")
                    root_voltage = tuple(parse_polar(v) for v in vs)
                else:
                    raise ValueError(f"unknown root key {key!r}")
            elif section == "segments":
                f = ln.split()
                if len(f) != 11:
                    raise ValueError(f"segment row needs 11 fields, got {len(f)}")
                z = [parse_complex(x) for x in f[2:]]
                segments.append(LineSegment(int(f[0]), int(f[1]), (tuple(z[0:3]), tuple(z[3:6]), tuple(z[6:9]))))
            else:
                f = ln.split()
                if len(f) != 7:
                    raise ValueError(f"customer row needs 7 fields, got {len(f)}")
                if f[5] not in ("0", "1"):
                    raise ValueError("flexible flag must be 0 or 1")
                p, q = float(f[2]), float(f[3])
                if not (math.isfinite(p) and math.isfinite(q)):
                    raise ValueError("non-finite demand")
                customers.append(
                    Customer(int(f[0]), int(f[1]), p, q, parse_complex(f[4]), f[5] == "1", Phase.parse(f[6]))
                )
        except ValueError as exc:
            raise NetworkFileError(lineno, f"[{section}] {exc}") from None

    if root_node is None or root_voltage is None:
        raise NetworkFileError(None, "[root] needs both 'node' and 'voltage'")
    nodes = {root_node}
    for s in segments:
        nodes.update(s.key)
    net = Network(frozenset(nodes), tuple(segments), root_node, root_voltage, tuple(customers))
    return NetworkDocument(net, metadata)


def emit_network(net: Network, metadata: dict[str, str] | None = None) -> str:
    out = [f"{NETWORK_MAGIC} {VERSION}", "[metadata]"]
    for k, v in (metadata or {}).items():
        out.append(f"{k} = {v}")
    out += ["[root]", f"node = {net.root}", "voltage = " + " ".join(format_polar(v) for v in net.root_voltage)]
    out += ["[segments]", SEGMENT_HEADER]
    for s in net.segments:
        zs = " ".join(format_complex(x) for row in s.z for x in row)
        out.append(f"{s.from_node} {s.to_node} {zs}")
    out += ["[customers]", CUSTOMER_HEADER]
    for c in net.customers:
        out.append(
            f"{c.id} {c.node} {c.p!r} {c.q!r} {format_complex(c.z_service)} {int(c.flexible)} {c.initial_phase}"
        )
    return "\n".join(out) + "\n"


def read_network(path: str | Path) -> NetworkDocument:
    return parse_network(Path(path).read_text())


def write_network(path: str | Path, net: Network, metadata: dict[str, str] | None = None) -> None:
    Path(path).write_text(emit_network(net, metadata))
