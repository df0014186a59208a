import json
import math

import pytest

from pdc_repeater import cli_harness as cli
from pdc_repeater.rates import COLUMNS, RateRow

REFERENCE = """\
alpha_db_per_km: 0.2
ns: 0.035
freq_modes: 10000
spatial_modes: 100
detector_efficiency: 0.95
dark_rate_hz: 1
memory_efficiency: 0.9
rep_rate_hz: 3.0e7
"""

IDEAL_ZERO = """\
alpha_db_per_km: 0.0
total_distance_km: 0
source_model: perfect_pair
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_reference_values_parse():
    cfg = cli.parse_config(REFERENCE)
    assert cfg.source.n_s == 0.035
    assert cfg.freq_modes == 10000 and cfg.spatial_modes == 100
    assert cfg.center_detectors.dark_rate_hz == 1.0
    assert cfg.endpoint_detectors.eta == 0.95
    assert cfg.memory_efficiency == 0.9
    assert cfg.rep_rate_hz == 3.0e7
    assert cfg.modes == 10**6


@pytest.mark.parametrize(
    "text, key",
    [
        ("ns: 0.1\n", "alpha_db_per_km"),
        ("alpha_db_per_km: 0.2\nnum_links: 0\n", "num_links"),
        ("alpha_db_per_km: 0.2\nnum_links: 3\nswap_order: tree\n", "swap_order"),
        ("alpha_db_per_km: 0.2\ncolour: red\n", "colour"),
        ("alpha_db_per_km: 0.2\nnum_links: 2.5\n", "num_links"),
        ("alpha_db_per_km: 0.2\nend_memory: 1\n", "end_memory"),
        ("alpha_db_per_km: 0.2\ndetector_efficiency: 1.5\n", "detector_efficiency"),
        ("alpha_db_per_km: 0.2\npovm_model: fancy\n", "povm_model"),
        ("alpha_db_per_km: fast\n", "alpha_db_per_km"),
    ],
)
def test_config_errors_name_the_key(text, key):
    with pytest.raises(cli.ConfigError) as info:
        cli.parse_config(text)
    assert info.value.key == key
    assert key in str(info.value)


def test_config_round_trip():
    cfg = cli.parse_config(REFERENCE)
    assert cli.parse_config(cli.emit_config(cfg)) == cfg
    echoed = cli.config_to_dict(cfg)
    assert set(echoed) == set(cli.CONFIG_KEYS)


def test_parse_grid():
    assert cli.parse_grid("200:1400:100") == tuple(float(d) for d in range(200, 1401, 100))
    assert cli.parse_grid("5") == (5.0,)
    with pytest.raises(cli.ConfigError):
        cli.parse_grid("1:2:0")


def test_sweep_spec_validation():
    cfg = cli.parse_config(REFERENCE)
    with pytest.raises(ValueError):
        cli.SweepSpec((), (1,), cfg)
    with pytest.raises(ValueError):
        cli.SweepSpec((0.0,), (1,), cfg)


def test_sweep_dedupes_and_sorts():
    cfg = cli.parse_config("alpha_db_per_km: 0.2\nsource_model: perfect_pair\n")
    spec = cli.SweepSpec((20.0, 10.0, 20.0), (2, 1, 2), cfg)
    table = cli.run_sweep(spec)
    assert [(r.distance_km, r.n_links) for r in table.rows] == [(10.0, 1), (10.0, 2), (20.0, 1), (20.0, 2)]


def test_sweep_records_row_errors():
    cfg = cli.parse_config("alpha_db_per_km: 0.2\nns: 0.5\nfock_cutoff: 2\nglobal_photon_bound: 2\n")
    table = cli.run_sweep(cli.SweepSpec((10.0,), (1,), cfg))
    (row,) = table.rows
    assert row.error is not None and math.isnan(row.key_rate_bps)


def _row(d, n, rate):
    return RateRow(d, n, 0.035, 0.1, 0.1, 1.0, 0.5, 0.0, 0.0, 0.5, rate, 1.0, 1.0)


def test_envelope():
    rows = [_row(1.0, 1, 5.0), _row(1.0, 2, 7.0), _row(2.0, 1, 3.0), _row(2.0, 2, 1.0)]
    env = cli.envelope(cli.OutputTable(rows))
    assert [(r.distance_km, r.n_links) for r in env.rows] == [(1.0, 2), (2.0, 1)]
    for e in env.rows:
        assert all(e.key_rate_bps >= r.key_rate_bps for r in rows if r.distance_km == e.distance_km)
    single = cli.OutputTable([_row(1.0, 1, 5.0), _row(2.0, 1, 3.0)])
    assert cli.envelope(single).rows == single.rows


def test_golden_section_synthetic():
    x, v = cli.optimize_ns(None, 0, 1, (0.01, 0.3), rate_fn=lambda n: 1.0 - n)
    assert x == 0.01
    x, v = cli.optimize_ns(None, 0, 1, (0.01, 0.3), rate_fn=lambda n: -((n - 0.1234) ** 2) + 1)
    assert x == pytest.approx(0.1234, abs=1e-4)
    with pytest.raises(cli.NoOptimumError):
        cli.optimize_ns(None, 0, 1, (0.01, 0.3), rate_fn=lambda n: 0.0)
    with pytest.raises(ValueError):
        cli.optimize_ns(None, 0, 1, (0.0, 0.3), rate_fn=lambda n: 1.0)


def test_simulate_ideal_point(tmp_path, capsys):
    path = write(tmp_path, IDEAL_ZERO)
    assert cli.main(["simulate", "--config", path, "--reproducible"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if not l.startswith("#")]
    assert lines[0] == ",".join(COLUMNS)
    row = dict(zip(COLUMNS, lines[1].split(",")))
    assert float(row["key_rate_bps"]) == pytest.approx(7.5e6)
    assert float(row["p_s0"]) == pytest.approx(0.5)


def test_simulate_verify_oracle(tmp_path, capsys):
    path = write(tmp_path, "alpha_db_per_km: 0.2\ntotal_distance_km: 50\nns: 0.05\ndetector_efficiency: 0.9\n")
    assert cli.main(["simulate", "--config", path, "--verify-oracle", "--format", "json", "--reproducible"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["metadata"]["oracle"]["max_deviation"] < 1e-10
    assert "timestamp" not in doc["metadata"]


def test_exit_codes(tmp_path):
    assert cli.main(["simulate", "--config", write(tmp_path, "bogus: 1\n")]) == 1
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert cli.main(["bounds", "--distances", "100:200:50"]) == 1
    with pytest.raises(SystemExit) as info:
        cli.main(["sweep"])
    assert info.value.code == 1


def test_bounds_command(tmp_path):
    out = tmp_path / "b.json"
    assert cli.main(["bounds", "--distances", "100:300:100", "--alpha", "0.2", "--format", "json", "--out", str(out)]) == 0
    rows = json.loads(out.read_text())["rows"]
    assert [r["distance_km"] for r in rows] == [100.0, 200.0, 300.0]
    assert all(r["direct_bps"] <= r["tgw_bps"] for r in rows)


def test_timestamp_only_without_reproducible(tmp_path, capsys):
    path = write(tmp_path, IDEAL_ZERO)
    cli.main(["simulate", "--config", path])
    assert "# timestamp:" in capsys.readouterr().out


def test_sweep_csv_is_deterministic_across_workers(tmp_path):
    path = write(tmp_path, "alpha_db_per_km: 0.2\nns: 0.02\ndetector_efficiency: 0.9\nmemory_efficiency: 0.9\n")
    outs = []
    for workers in ("1", "1", "2"):
        out = tmp_path / f"s{len(outs)}.csv"
        args = ["sweep", "--config", path, "--distances", "50:100:50", "--links", "1,2", "--reproducible"]
        assert cli.main(args + ["--workers", workers, "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]
