import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from psdflow import cli
from psdflow.io import (
    NetworkFileError,
    emit_network,
    format_complex,
    parse_complex,
    parse_network,
    read_network,
    write_network,
)
from psdflow.synthetic import random_feeder

FIXTURES = ["zero_load", "two_bus", "street_case1", "street_case2", "street_case2_nopsd"]

finite = st.floats(allow_nan=False, allow_infinity=False)


@given(finite, finite)
def test_complex_round_trip(re_, im):
    assert parse_complex(format_complex(complex(re_, im))) == complex(re_, im)


def test_complex_spellings():
    assert parse_complex("0.1-j0.2") == 0.1 - 0.2j
    assert parse_complex("0.1+0.2j") == 0.1 + 0.2j
    assert parse_complex("3") == 3
    for bad in ("abc", "1+2k", "nan+0j"):
        with pytest.raises(ValueError):
            parse_complex(bad)


@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_text_round_trip(data_dir, name):
    text = (data_dir / f"{name}.net").read_text()
    doc = parse_network(text)
    assert emit_network(doc.network, doc.metadata) == text


def test_generated_network_round_trip(tmp_path):
    net = random_feeder(np.random.default_rng(4), n_nodes=10, n_customers=15)
    write_network(tmp_path / "f.net", net, {"description": "random"})
    back = read_network(tmp_path / "f.net").network
    assert back.segments == net.segments and back.customers == net.customers
    assert back.root == net.root and back.nodes == net.nodes
    for a, b in zip(back.root_voltage, net.root_voltage):
        assert a == pytest.approx(b, abs=1e-14)


def test_malformed_impedance_reports_line(data_dir):
    lines = (data_dir / "two_bus.net").read_text().splitlines()
    row = next(i for i, ln in enumerate(lines) if ln.startswith("0 1 "))
    lines[row] = lines[row].replace("0.02+0.01j", "0.02+zz", 1)
    with pytest.raises(NetworkFileError) as info:
        parse_network("\n".join(lines))
    assert info.value.lineno == row + 1
    assert str(info.value).startswith(f"line {row + 1}:")


@pytest.mark.parametrize(
    "text",
    [
        "",
        "other-format 1\n",
        "psdflow-network 2\n",
        "psdflow-network 1\n[bogus]\n",
        "psdflow-network 1\n[segments]\n0 1 0j\n",
        "psdflow-network 1\n[customers]\n1 1 0.1 0.0 0j 2 a\n",
        "psdflow-network 1\n[customers]\n1 1 0.1 0.0 0j 1 d\n",
        "psdflow-network 1\n[segments]\n",
    ],
)
def test_malformed_files(text):
    with pytest.raises(NetworkFileError):
        parse_network(text)


def run(capsys, *argv):
    code = cli.main(list(argv))
    return code, capsys.readouterr().out


def table(report, name):
    lines = report.splitlines()
    start = lines.index(f"[{name}]")
    header = lines[start + 1].split()
    rows = []
    for ln in lines[start + 2 :]:
        if ln.startswith("["):
            break
        rows.append(dict(zip(header, ln.split())))
    return rows


@pytest.mark.parametrize(
    "command,name,code",
    [
        ("solve", "zero_load", 0),
        ("solve", "street_case1", 0),
        ("solve", "street_case2", 3),
        ("compare", "two_bus", 0),
        ("compare", "street_case2", 3),
        ("restore", "street_case1", 0),
        ("restore", "street_case2", 2),
        ("restore", "street_case2_nopsd", 3),
    ],
)
def test_exit_codes(capsys, data_dir, command, name, code):
    got, out = run(capsys, command, str(data_dir / f"{name}.net"))
    assert got == code
    assert out.startswith("psdflow-report 1\n")


def test_zero_load_report(capsys, data_dir):
    _, out = run(capsys, "solve", str(data_dir / "zero_load.net"))
    centers = {"a": 0.0, "b": 120.0, "c": -120.0}
    for row in table(out, "node_voltages"):
        assert float(row["vm_pu"]) == pytest.approx(1.05, abs=1e-10)
        assert float(row["va_deg"]) == pytest.approx(centers[row["phase"]], abs=1e-8)


def test_two_bus_report_matches_oracle(capsys, data_dir):
    _, out = run(capsys, "solve", str(data_dir / "two_bus.net"))
    net = read_network(data_dir / "two_bus.net").network
    expected = oracles.two_bus_voltage(net.root_voltage[0], 0.02 + 0.01j, 0.3, 0.1)
    row = next(r for r in table(out, "node_voltages") if r["node"] == "1" and r["phase"] == "a")
    assert float(row["vm_pu"]) == pytest.approx(abs(expected), abs=1e-8)


def test_fit_defaults(capsys):
    code, out = run(capsys, "fit")
    assert code == 0
    rows = table(out, "coefficients")
    assert len(rows) == 6
    cbm_a = next(r for r in rows if r["method"] == "cbm" and r["phase"] == "a")
    assert [float(cbm_a[k]) for k in ("kx", "ky", "bx", "hx", "hy", "by")] == [-1, 0, 2, 0, 1, 0]
    assert "# grid: 21" in out


def test_fit_rank_deficient_grid(capsys):
    code = cli.main(["fit", "--grid", "2", "--ddelta", "0"])
    assert code == 64
    assert "error" in capsys.readouterr().err


def test_invalid_network_exit_code(tmp_path, capsys, data_dir):
    text = (data_dir / "two_bus.net").read_text().replace("1 1 0.3 0.1", "1 9 0.3 0.1")
    (tmp_path / "bad.net").write_text(text)
    assert cli.main(["solve", str(tmp_path / "bad.net")]) == 64
    assert "dangling_customer" in capsys.readouterr().err
    assert cli.main(["solve", str(tmp_path / "missing.net")]) == 64


def test_restore_report_is_reproducible(tmp_path, data_dir):
    paths = [tmp_path / "one.txt", tmp_path / "two.txt"]
    for p in paths:
        assert cli.main(["restore", str(data_dir / "street_case2.net"), "--out", str(p)]) == 2
    assert paths[0].read_bytes() == paths[1].read_bytes()
    text = paths[0].read_text()
    assert "# outcome: restored" in text
    assert table(text, "switch_plan")


def test_restore_report_angles_in_range(data_dir, tmp_path):
    out = tmp_path / "r.txt"
    cli.main(["restore", str(data_dir / "street_case2.net"), "--out", str(out)])
    for row in table(out.read_text(), "va_range"):
        assert abs(float(row["min_deg"])) <= 10 and abs(float(row["max_deg"])) <= 10
    assert math.isfinite(float(table(out.read_text(), "customers")[0]["vm_pu"]))
