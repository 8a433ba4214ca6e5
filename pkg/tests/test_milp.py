from dataclasses import replace

import numpy as np
import pytest

import oracles
from feeders import small_feeder
from search_cases import SEARCH_MATRIX, brute_force, build
from psdflow import milp
from psdflow.milp import (
    FlexCapError,
    VoltageBox,
    assemble_ltupf,
    assignment_search,
    imbalance_objective,
    ordered_candidates,
    solve_ltupf,
    solve_system,
)
from psdflow.model import PHASES, Customer, Phase, resolve_assignment
from psdflow.sweep import ntupf_solve
from psdflow.synthetic import coupled_z, random_feeder, two_bus

BOX = VoltageBox()


def test_zero_load_returns_root(lsm_coeffs):
    net = random_feeder(np.random.default_rng(1), p_range=(0.0, 0.0), power_factor=1.0)
    sol, ok = solve_ltupf(assemble_ltupf(net, net.initial_assignment(), lsm_coeffs), BOX)
    assert ok
    for (node, ph), v in sol.node_voltage.items():
        assert v == pytest.approx(net.root_voltage[ph.index], abs=1e-14)


def test_two_bus_against_reduced_oracle(lsm_coeffs):
    z = coupled_z(0.03 + 0.012j, 0.01 + 0.004j)
    zs = 0.004 + 0.001j
    p, q = 0.6, 0.2
    net = two_bus(p, q, z=0.03 + 0.012j, z_mutual=0.01 + 0.004j, z_service=zs)
    sol = solve_system(assemble_ltupf(net, net.initial_assignment(), lsm_coeffs))

    # eliminate everything but the customer voltage X + jY by hand
    f = lsm_coeffs[Phase.A]
    v0 = net.root_voltage[0]
    r, xl = (z[0, 0] + zs).real, (z[0, 0] + zs).imag
    # J = aJ . (X, Y) + cJ,  W = aW . (X, Y) + cW
    aj = np.array([p * f.kx + q * f.hx, p * f.ky + q * f.hy])
    cj = p * f.bx + q * f.by
    aw = np.array([p * f.hx - q * f.kx, p * f.hy - q * f.ky])
    cw = p * f.by - q * f.bx
    # X = Re v0 - (r J - xl W),  Y = Im v0 - (r W + xl J)
    m = np.eye(2) + np.vstack([r * aj - xl * aw, r * aw + xl * aj])
    rhs = np.array([v0.real - (r * cj - xl * cw), v0.imag - (r * cw + xl * cj)])
    x, y = np.linalg.solve(m, rhs)
    ic = complex(aj @ (x, y) + cj, aw @ (x, y) + cw)
    assert sol.customer_voltage[1] == pytest.approx(complex(x, y), abs=1e-13)
    assert sol.customer_current[1] == pytest.approx(ic, abs=1e-13)
    for ph in PHASES:
        expected = net.root_voltage[ph.index] - z[ph.index, 0] * ic
        assert sol.node_voltage[(1, ph)] == pytest.approx(expected, abs=1e-13)


def test_assignment_change_is_local(lsm_coeffs):
    net = small_feeder([0.05] * 6, flexible={2})
    a = assemble_ltupf(net, net.initial_assignment(), lsm_coeffs)
    b = assemble_ltupf(net, resolve_assignment(net, {2: Phase.A}), lsm_coeffs)
    changed = {int(r) // 2 for r in np.nonzero(np.any(a.a != b.a, axis=1) | (a.b != b.b))[0]}
    # complex row index of: Ohm rows, then KCL rows (node, phase), then service/balance pairs
    n_seg = len(net.segments)
    cust = net.customer(2)
    kcl = lambda node, ph: 3 * n_seg + 3 * (node - 1) + ph.index
    svc = 3 * n_seg + 3 * 4 + 2 * (cust.id - 1)
    allowed = {kcl(cust.node, Phase.A), kcl(cust.node, cust.initial_phase), svc, svc + 1}
    assert changed and changed <= allowed


def test_low_voltage_is_outside_box(lsm_coeffs):
    z = 0.05 + 0.02j
    p = oracles.load_for_magnitude(0.90, complex(1.05, 0), z, 0.3)
    net = two_bus(p, 0.3 * p, z=z)
    sol, ok = solve_ltupf(assemble_ltupf(net, net.initial_assignment(), lsm_coeffs), BOX)
    assert abs(sol.node_voltage[(1, Phase.A)]) == pytest.approx(0.90, abs=0.01)
    assert not ok


@pytest.mark.parametrize("seed", range(4))
def test_linear_solve_residual(lsm_coeffs, seed):
    net = random_feeder(np.random.default_rng(seed), n_nodes=12, n_customers=20)
    sol = solve_system(assemble_ltupf(net, net.initial_assignment(), lsm_coeffs))
    assert sol.residual < 1e-10


def test_singular_system_is_rejected(lsm_coeffs):
    net = two_bus(0.1, 0.0)
    system = assemble_ltupf(net, net.initial_assignment(), lsm_coeffs)
    system.a[:, 0] = 0.0
    with pytest.raises(np.linalg.LinAlgError):
        solve_system(system)


def _three(phases, p=1.0, q=0.0):
    cs = [Customer(i + 1, 1, p, q, 0j, True, ph) for i, ph in enumerate(phases)]
    return replace(two_bus(0.0, 0.0), customers=tuple(cs))


def test_imbalance_examples():
    net = _three("abc")
    assert imbalance_objective(net, net.initial_assignment()) == 0
    net = _three("aaa")
    assert imbalance_objective(net, net.initial_assignment()) == 3


def test_imbalance_random_matches_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        ps, qs = rng.uniform(-1, 2, (2, 8))
        phases = rng.choice(list("abc"), 8)
        cs = [Customer(i + 1, 1, float(ps[i]), float(qs[i]), 0j, False, phases[i]) for i in range(8)]
        net = replace(two_bus(0, 0), customers=tuple(cs))
        assert imbalance_objective(net, net.initial_assignment()) == pytest.approx(
            oracles.imbalance(ps, qs, phases), abs=1e-12
        )


def test_search_without_flexibility(lsm_coeffs):
    net = small_feeder([0.05] * 6)
    out = assignment_search(net, lsm_coeffs, BOX)
    assert out.status == "optimal" and out.explored == 1
    assert out.best.assignment == net.initial_assignment()


def test_three_identical_flexible_customers(lsm_coeffs):
    net = _three("aaa", p=0.05, q=0.01)
    out = assignment_search(net, lsm_coeffs, BOX)
    assert out.status == "optimal"
    assert out.best.objective == 0
    assert sorted(out.best.assignment[c].value for c in (1, 2, 3)) == ["a", "b", "c"]
    # lexicographic tie-break: customer 1 keeps the lowest phase
    assert [out.best.assignment[c] for c in (1, 2, 3)] == [Phase.A, Phase.B, Phase.C]


@pytest.mark.parametrize("loads,flex,phases", SEARCH_MATRIX)
def test_search_matches_brute_force(lsm_coeffs, loads, flex, phases):
    net = build(loads, flex, phases)
    out = assignment_search(net, lsm_coeffs, BOX)
    expected = brute_force(net, lsm_coeffs, BOX)
    if expected is None:
        assert out.status == "infeasible"
    else:
        assert out.status == "optimal"
        assert out.best.objective == pytest.approx(expected, abs=1e-15)
    assert all(a <= b for a, b in zip(out.objectives, out.objectives[1:]))
    assert out.max_residual < 1e-10


def test_search_ignores_flexible_input_order(lsm_coeffs):
    loads, flex, phases = SEARCH_MATRIX[2]
    net = build(loads, flex, phases)
    a = assignment_search(net, lsm_coeffs, BOX, flexible=[4, 2, 1, 3])
    b = assignment_search(net, lsm_coeffs, BOX, flexible=[1, 2, 3, 4])
    assert a.best.assignment == b.best.assignment and a.explored == b.explored


def test_cap_and_bad_flexible_ids(lsm_coeffs):
    net = small_feeder([0.01] * 8, flexible=set(range(1, 9)))
    with pytest.raises(FlexCapError):
        assignment_search(net, lsm_coeffs, BOX, cap=7)
    with pytest.raises(ValueError):
        assignment_search(small_feeder([0.01] * 3), lsm_coeffs, BOX, flexible=[1])


def test_banded_stream_matches_full_sort(monkeypatch):
    net = small_feeder([0.05, 0.06, 0.02, 0.09, 0.04, 0.05, 0.07], flexible={1, 2, 3, 4, 6, 7})
    full = list(ordered_candidates(net, net.flexible_ids))
    monkeypatch.setattr(milp, "_CHUNK_DIGITS", 2)
    banded = list(ordered_candidates(net, net.flexible_ids))
    assert banded == full
    assert len(full) == 3**6


@pytest.mark.parametrize("seed", range(3))
def test_converged_in_box_implies_linear_in_box(lsm_coeffs, seed):
    net = random_feeder(np.random.default_rng(seed), p_range=(0.01, 0.05))
    res = ntupf_solve(net, net.initial_assignment())
    assert res.converged and not BOX.violations(res.node_voltage)
    sol = solve_system(assemble_ltupf(net, net.initial_assignment(), lsm_coeffs))
    relaxed = VoltageBox(BOX.v_min - 1e-2, BOX.v_max + 1e-2, BOX.delta_center, BOX.delta_halfwidth)
    assert not relaxed.violations(sol.node_voltage)


def test_rounding_noise_does_not_break_ties(monkeypatch):
    # equal demands: many assignments tie exactly, but their float sums differ in the last bits
    net = small_feeder([0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.07], flexible={1, 2, 3, 4, 5, 6})
    full = list(ordered_candidates(net, net.flexible_ids))
    monkeypatch.setattr(milp, "_CHUNK_DIGITS", 2)
    assert list(ordered_candidates(net, net.flexible_ids)) == full
    for (u1, p1), (u2, p2) in zip(full, full[1:]):
        assert u1 <= u2
        if u1 == u2:
            assert [p.index for p in p1] < [p.index for p in p2]
    exact = {}
    for ux, phases in full:
        asg = resolve_assignment(net, dict(zip(net.flexible_ids, phases)))
        exact.setdefault(round(imbalance_objective(net, asg), 9), set()).add(ux)
    # one reported value per exact objective level
    assert all(len(v) == 1 for v in exact.values())
