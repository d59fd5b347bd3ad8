import json
import math
from fractions import Fraction

import pytest

from safsim import cli
from safsim.scenario import (
    CSV_COLUMNS,
    ParseError,
    ScenarioConfig,
    ValidationError,
    aggregate,
    chunks_per_server,
    confidence_half_width,
    default_cache_capacity,
    draw_failures,
    emit_report,
    generate_workload,
    parse_config,
    run_scenario,
    topology_for,
    zipf_shares,
)
from safsim.sim import RunMetrics
from safsim.topology import TopologySpec, dump_topology, generate

SMALL = """
[topology]
as_count = 2
routers_per_as = 4
connectivity = low
clients = 3
servers = 2

[strategy]
name = saf

[run]
sim_time = 6
runs = 2
seed = 3
"""


# -- parsing ------------------------------------------------------------------

def test_minimal_config_defaults():
    cfg = parse_config("[strategy]\nname = saf\n")
    assert cfg.strategy == "saf" and cfg.strategy_params == {}
    assert cfg.topology.as_count == 5 and cfg.topology.routers_per_as == 20
    assert (cfg.topology.extra_edges_top, cfg.topology.extra_edges_bottom) == (5, 10)
    assert cfg.request_rate == 30 and cfg.popularity == "uniform" and cfg.runs == 1


def test_strategy_parameters_parse():
    cfg = parse_config("[strategy]\nname = saf\nperiod_tau = 0.5\nlambda = 0.2\nwindow_N = 3\n")
    assert cfg.strategy_params == {"period_tau": 0.5, "lam": 0.2, "window_n": 3}


def test_negative_zipf_alpha_rejected():
    with pytest.raises(ValidationError) as exc:
        parse_config("[workload]\npopularity = zipf\nzipf_alpha = -1\n")
    assert any("zipf" in v for v in exc.value.violations)


def test_invalid_saf_parameters_rejected():
    with pytest.raises(ValidationError):
        parse_config("[strategy]\nname = saf\nt_min = 0.9\nt_max = 0.5\n")
    with pytest.raises(ValidationError):
        parse_config("[strategy]\nname = warp\n")
    with pytest.raises(ValidationError):
        parse_config("[strategy]\nname = broadcast\nperiod_tau = 2\n")


def test_parse_errors_carry_location():
    with pytest.raises(ParseError) as exc:
        parse_config("[run]\nsim_time = 5\nbogus = 1\n")
    assert exc.value.line == 3 and exc.value.field == "run.bogus"
    with pytest.raises(ParseError) as exc:
        parse_config("[run]\n\nruns = many\n")
    assert exc.value.line == 3
    with pytest.raises(ParseError):
        parse_config("[weather]\nrain = 1\n")


def test_topology_file_reference(tmp_path):
    topo = generate(TopologySpec(as_count=1, routers_per_as=3, client_count=2, server_count=1), 1)
    (tmp_path / "net.topo").write_text(dump_topology(topo))
    cfg_path = tmp_path / "s.ini"
    cfg_path.write_text("[topology]\nfile = net.topo\n[run]\nsim_time = 3\n")
    from safsim.scenario import load_config
    cfg = load_config(cfg_path)
    assert cfg.topology is None and cfg.topology_file.endswith("net.topo")
    report = run_scenario(cfg)
    assert report.runs[0].interests_issued > 0


# -- workload -----------------------------------------------------------------

def _topo(clients=4, servers=10, seed=1):
    return generate(TopologySpec(as_count=1, routers_per_as=5, client_count=clients,
                                 server_count=servers), seed)


def test_rate_times_duration():
    cfg = ScenarioConfig(sim_time=10, request_rate=30, start_window=0)
    wl = generate_workload(cfg, _topo(), 1)
    for times, names in wl.values():
        assert len(times) == 300
        assert times == sorted(times) and 0 <= times[0] and times[-1] < 10
        assert [n[-1] for n in names[:3]] == ["c0", "c1", "c2"]


def test_each_second_holds_rate_requests():
    cfg = ScenarioConfig(sim_time=20, request_rate=7, start_window=5)
    for times, _ in generate_workload(cfg, _topo(), 2).values():
        first = math.ceil(times[0])
        for s in range(first, 20):
            assert sum(s <= t < s + 1 for t in times) == 7


def test_zipf_share_oracle():
    alpha = 0.668
    h = math.fsum(k ** -alpha for k in range(1, 11))
    assert zipf_shares(10, alpha)[0] == pytest.approx(1 / h, rel=1e-12)
    assert zipf_shares(10, alpha)[0] == pytest.approx(0.2430, abs=5e-5)
    assert sum(Fraction(x) for x in zipf_shares(10, alpha)) == pytest.approx(1)


def test_zipf_server_choice_frequency():
    cfg = ScenarioConfig(sim_time=2, request_rate=1, popularity="zipf", start_window=0)
    topo = _topo(clients=2000, servers=10)
    wl = generate_workload(cfg, topo, 5)
    top = topo.prefixes[topo.servers[0]]
    share = sum(names[0][:1] == top for _, names in wl.values()) / len(wl)
    assert share == pytest.approx(0.243, abs=0.03)


def test_catalogue_and_cache_defaults():
    cfg = ScenarioConfig(sim_time=60, request_rate=30)
    assert chunks_per_server(cfg) == 1800
    assert default_cache_capacity(cfg, 10) == 180 * 4096


def test_failure_draws_respect_bounds():
    cfg = ScenarioConfig(sim_time=100, link_failures=50)
    topo = _topo()
    sched = draw_failures(cfg, topo, 1)
    assert len(sched) == 50
    routers = set(topo.routers)
    for (u, v), start, duration in sched:
        assert u in routers and v in routers
        assert 0 <= start <= 100 and 0 <= duration <= 10


# -- aggregation --------------------------------------------------------------

def _metrics(sat):
    return RunMetrics(10, 0, 0, 0, sat, 0.0, 0.0, dict.fromkeys(("loop", "queue", "fd", "link"), 0),
                      0, {}, {}, 0)


def test_confidence_interval_oracle():
    values = [0.8, 0.9, 0.8, 0.9]
    # oracle: s = sqrt(0.01 / 3), t(0.975, 3) = 3.182446305284263
    expected = 3.182446305284263 * math.sqrt(0.01 / 3) / 2
    assert confidence_half_width(values) == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(0.0919, abs=5e-5)
    report = aggregate(ScenarioConfig(runs=4), [1, 2, 3, 4], [_metrics(v) for v in values])
    assert report.summary["satisfaction_ratio"].mean == pytest.approx(0.85)


def test_single_run_has_zero_half_width():
    assert confidence_half_width([0.7]) == 0.0


# -- reports ------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_report():
    return run_scenario(parse_config(SMALL))


def test_csv_layout(small_report):
    lines = emit_report(small_report, "csv").splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[0] == ("run,seed,satisfaction_ratio,cache_hit_ratio,mean_hop_count,"
                        "drop_loop,drop_queue,drop_fd,drop_link")
    assert [l.split(",")[:2] for l in lines[1:]] == [["0", "3"], ["1", "4"], ["mean", ""]]


def test_reemit_is_byte_identical(small_report, tmp_path):
    a = emit_report(small_report, "csv", tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text() == a
    assert emit_report(run_scenario(parse_config(SMALL)), "csv") == a
    assert emit_report(small_report, "report") == emit_report(small_report, "report")


def test_report_lists_every_link(small_report):
    doc = json.loads(emit_report(small_report, "report"))
    cfg = small_report.config
    for run in doc["runs"]:
        topo = topology_for(cfg, run["seed"])
        assert set(run["links"]) == {f"{u}-{v}" for u, v in topo.edges}
        assert set(run["nodes"]) == {str(r) for r in topo.routers}
        i = run["interests"]
        assert i["issued"] == i["satisfied"] + i["timed_out"] + i["pending"]


def test_parallel_matches_serial():
    cfg = parse_config(SMALL)
    assert emit_report(run_scenario(cfg, parallel=2), "csv") == emit_report(run_scenario(cfg), "csv")


def test_unknown_format(small_report):
    with pytest.raises(ValueError):
        emit_report(small_report, "xml")


# -- command line -------------------------------------------------------------

def test_cli_run(tmp_path, capsys):
    cfg = tmp_path / "s.ini"
    cfg.write_text(SMALL)
    out = tmp_path / "out.csv"
    assert cli.main(["run", str(cfg), "--runs", "1", "--out", str(out)]) == 0
    assert out.read_text().startswith("run,seed,")
    assert cli.main(["run", str(cfg), "--runs", "1", "--format", "report"]) == 0
    assert json.loads(capsys.readouterr().out)["config"]["runs"] == 1


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nruns = 0\n")
    assert cli.main(["run", str(bad)]) == 1
    assert cli.main(["run", str(tmp_path / "missing.ini")]) == 1
    garbled = tmp_path / "g.ini"
    garbled.write_text("[run]\nsim_time = soon\n")
    assert cli.main(["run", str(garbled)]) == 1
    assert "line 2" in capsys.readouterr().err
    broken = tmp_path / "b.ini"
    broken.write_text("[topology]\nfile = nowhere.topo\n")
    assert cli.main(["run", str(broken)]) == 1
    good = tmp_path / "s.ini"
    good.write_text(SMALL)
    # the simulation runs, then the report cannot be written
    assert cli.main(["run", str(good), "--runs", "1", "--out", str(tmp_path)]) == 2


def test_cli_topo_gen_and_check(tmp_path, capsys):
    cfg = tmp_path / "s.ini"
    cfg.write_text(SMALL)
    topo = tmp_path / "t.topo"
    assert cli.main(["topo", "gen", str(cfg), "--out", str(topo)]) == 0
    assert cli.main(["topo", "check", str(topo)]) == 0
    assert "routers 8" in capsys.readouterr().out
    (tmp_path / "x.topo").write_text("node 0 router 0\nnode 1 router 0\n")
    assert cli.main(["topo", "check", str(tmp_path / "x.topo")]) == 1


def test_cli_golden_examples(capsys):
    assert cli.main(["golden-examples"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out and all(line.startswith("PASS") for line in out)
