import json

import pytest

from pcpcoop import cli
from pcpcoop.market_data import ScenarioConfig

WORKED = {"p_d": 30, "p_r": 20, "consumers": [
    {"id": "a", "l_e": 30, "l_r": 40},
    {"id": "b", "l_e": 30, "l_r": 35},
    {"id": "c", "l_e": 40, "l_r": 35},
]}


@pytest.fixture
def scenario(tmp_path):
    path = tmp_path / "hour.json"
    path.write_text(json.dumps(WORKED))
    return path


def test_settle_golden(scenario, capsys):
    assert cli.main(["settle", str(scenario)]) == 0
    out, err = capsys.readouterr()
    assert out.splitlines() == [
        "consumer_id,case,l_e,l_r,payment",
        "a,1b,30.00,40.00,1133.33",
        "b,1b,30.00,35.00,1016.67",
        "c,3b,40.00,35.00,1050.00",
    ]
    assert "total=3200.00" in err


def test_settle_to_file(scenario, tmp_path, capsys):
    out = tmp_path / "pay.csv"
    assert cli.main(["settle", str(scenario), "--out", str(out), "--decimals", "4"]) == 0
    assert "1133.3333" in out.read_text()
    assert "total=3200.0000" in capsys.readouterr().out


def test_settle_bad_inputs(tmp_path, capsys):
    assert cli.main(["settle", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["settle", str(bad)]) == 2
    bad.write_text(json.dumps({"p_d": 30, "consumers": []}))
    assert cli.main(["settle", str(bad)]) == 1
    bad.write_text(json.dumps({**WORKED, "p_d": -1}))
    assert cli.main(["settle", str(bad)]) == 1
    assert "invalid input" in capsys.readouterr().err


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["settle"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["forecast", "x.csv", "--lead", "7"])
    assert exc.value.code == 1


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in cli.COMMANDS:
        assert name in out


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out", str(out), "--consumers", "3", "--hours", "1176", "--seed", "4"]) == 0
    return out


def test_synth_files(synth_dir):
    prices = (synth_dir / "prices.csv").read_text().splitlines()
    loads = (synth_dir / "loads.csv").read_text().splitlines()
    assert prices[0] == "timestamp,day_ahead,real_time" and len(prices) == 1177
    assert loads[0] == "timestamp,consumer_id,load_mwh" and len(loads) == 1 + 3 * 1176


def test_forecast_command(synth_dir, tmp_path, capsys):
    out = tmp_path / "fc.csv"
    code = cli.main(["forecast", str(synth_dir / "loads.csv"), "--lead", "12", "--window", "336",
                     "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "timestamp,actual,predicted" and len(lines) > 100
    assert "MAPE=" in capsys.readouterr().out
    assert cli.main(["forecast", str(synth_dir / "loads.csv"), "--consumer", "nobody"]) == 1


def test_forecast_rejects_short_history(tmp_path):
    short = tmp_path / "short"
    cli.main(["synth", "--out", str(short), "--consumers", "1", "--hours", "100"])
    assert cli.main(["forecast", str(short / "loads.csv")]) == 2


def test_simulate_from_files_is_reproducible(synth_dir, tmp_path, capsys):
    args = ["simulate", "--prices", str(synth_dir / "prices.csv"), "--loads", str(synth_dir / "loads.csv"),
            "--consumers", "3", "--hours", "168", "--rounds", "1", "--buckets", "3", "--warmup", "672",
            "--samples"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("summary.csv", "confidence.csv", "samples.csv.gz"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert "pcp_std_below_rtp=" in capsys.readouterr().out


def test_simulate_rejects_short_files(synth_dir, tmp_path):
    args = ["simulate", "--prices", str(synth_dir / "prices.csv"), "--loads", str(synth_dir / "loads.csv"),
            "--consumers", "3", "--hours", "3600", "--out", str(tmp_path / "x")]
    assert cli.main(args) == 2


def test_config_precedence(tmp_path):
    ini = tmp_path / "s.ini"
    ini.write_text(ScenarioConfig(num_rounds=7, num_consumers=9, rng_seed=5).to_ini())
    args = cli.build_parser().parse_args(["simulate", "--config", str(ini), "--out", "x", "--rounds", "2"])
    cfg = cli.scenario_from_args(args)
    assert (cfg.num_rounds, cfg.num_consumers, cfg.rng_seed) == (2, 9, 5)
    assert cfg.horizon_hours == ScenarioConfig().horizon_hours
    args = cli.build_parser().parse_args(["simulate", "--out", "x", "--mape-range", "0.1,0.2,0.3"])
    with pytest.raises(Exception):
        cli.scenario_from_args(args)


def test_analyze_modes(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    assert cli.main(["analyze", "sweep", "--aggregate", "5", "--out", str(out)]) == 0
    assert out.read_text().startswith("x,y,value,stderr")
    assert "reducer_contributor_jumps=2" in capsys.readouterr().out

    assert cli.main(["analyze", "truthful", "--draws", "2000", "--grid=-1,0,1"]) == 0
    out, err = capsys.readouterr()
    assert out.splitlines()[0] == "x,value,stderr" and len(out.splitlines()) == 4
    assert "argmin_x=" in err

    assert cli.main(["analyze", "dominant", "--draws", "2000", "--out", str(tmp_path / "d.csv")]) == 0
    assert "full_reliance_no_worse=" in capsys.readouterr().out

    assert cli.main(["analyze", "biased", "--draws", "2000", "--grid=-5,5", "--grid-y=-1,0,1",
                     "--out", str(tmp_path / "b.csv")]) == 0
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 7
    assert "feedback_ordering=" in capsys.readouterr().out


def test_analyze_invalid_values_exit_one():
    assert cli.main(["analyze", "truthful", "--rho", "2", "--draws", "10"]) == 1
    assert cli.main(["analyze", "sweep", "--rpd=-50"]) == 1


def test_failed_write_leaves_nothing(scenario, tmp_path):
    target = tmp_path / "no_such_dir" / "pay.csv"
    assert cli.main(["settle", str(scenario), "--out", str(target)]) == 2
    assert not target.exists()
