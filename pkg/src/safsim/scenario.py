"""Scenario configs, workloads, batched runs and reports."""
from __future__ import annotations

import configparser
import csv
import io
import json
import math
import os
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from scipy import stats as _stats

from .ndn import DATA_SIZE, Name
from .saf import SafParams
from .sim import SimConfig, Simulation, apply_failure_schedule
from .strategies import STRATEGIES, strategy_param_names
from .topology import (
    CONNECTIVITY_CLASSES,
    Topology,
    TopologySpec,
    generate,
    load_topology,
)

__all__ = [
    "ParseError",
    "ValidationError",
    "ScenarioConfig",
    "load_config",
    "parse_config",
    "default_cache_capacity",
    "chunks_per_server",
    "zipf_shares",
    "generate_workload",
    "draw_failures",
    "topology_for",
    "MetricSummary",
    "AggregateReport",
    "confidence_half_width",
    "run_once",
    "run_scenario",
    "aggregate",
    "emit_report",
    "render_csv",
    "render_report",
    "CSV_COLUMNS",
    "PARALLEL_ENV",
]

PARALLEL_ENV = "SAFSIM_PARALLEL"
METRICS = ("satisfaction_ratio", "cache_hit_ratio", "mean_hop_count",
           "drop_loop", "drop_queue", "drop_fd", "drop_link")
CSV_COLUMNS = ("run", "seed") + METRICS


class ParseError(ValueError):
    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


class ValidationError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid scenario: " + "; ".join(self.violations))


@dataclass
class ScenarioConfig:
    topology: Optional[TopologySpec] = field(default_factory=TopologySpec)
    topology_file: Optional[str] = None
    strategy: str = "saf"
    strategy_params: dict = field(default_factory=dict)
    sim_time: float = 60.0
    request_rate: int = 30
    popularity: str = "uniform"
    zipf_alpha: float = 0.668
    start_window: float = 30.0
    cache_capacity_bytes: Optional[int] = None
    link_failures: int = 0
    runs: int = 1
    seed: int = 1
    pit_timeout: float = 2.0
    queue_capacity: int = 100
    align_periods: bool = False

    def violations(self) -> list:
        errs = []
        if not self.sim_time > 0:
            errs.append("sim_time must be > 0")
        if self.runs < 1:
            errs.append("runs must be >= 1")
        if self.request_rate < 1:
            errs.append("request_rate must be >= 1")
        if self.popularity not in ("uniform", "zipf"):
            errs.append("popularity must be 'uniform' or 'zipf'")
        if not self.zipf_alpha > 0:
            errs.append("zipf alpha must be > 0")
        if self.start_window < 0:
            errs.append("start_window must be >= 0")
        if self.cache_capacity_bytes is not None and self.cache_capacity_bytes < 0:
            errs.append("cache_capacity_bytes must be >= 0")
        if self.link_failures < 0:
            errs.append("link_failures must be >= 0")
        if not self.pit_timeout > 0:
            errs.append("pit_timeout must be > 0")
        if self.queue_capacity < 1:
            errs.append("queue_capacity must be >= 1")
        if self.strategy not in STRATEGIES:
            errs.append(f"unknown strategy {self.strategy!r}")
        else:
            unknown = set(self.strategy_params) - strategy_param_names(self.strategy)
            if unknown:
                errs.append(f"unknown {self.strategy} parameters: {sorted(unknown)}")
            elif self.strategy == "saf":
                errs.extend(_saf_violations(self.strategy_params))
            elif self.strategy == "rfa" and not 0 <= self.strategy_params.get("beta", 0.1) <= 1:
                errs.append("rfa beta must lie in [0, 1]")
        if self.topology_file is None:
            if self.topology is None:
                errs.append("a topology spec or file is required")
            else:
                errs.extend(self.topology.violations())
        return errs

    def validate(self):
        errs = self.violations()
        if errs:
            raise ValidationError(errs)
        return self


def _saf_violations(params):
    p = SafParams.__new__(SafParams)
    for f in fields(SafParams):
        setattr(p, f.name, params.get(f.name, f.default))
    return p.violations()


# --------------------------------------------------------------------------
# Config files
# --------------------------------------------------------------------------

def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() == "none" else float(text)


_TOPOLOGY_KEYS = {
    "file": str,
    "as_count": int,
    "routers_per_as": int,
    "connectivity": str,
    "extra_edges_top": int,
    "extra_edges_bottom": int,
    "bandwidth": str,
    "clients": int,
    "servers": int,
    "propagation_delay": float,
}
_WORKLOAD_KEYS = {
    "request_rate": int,
    "popularity": str,
    "zipf_alpha": float,
    "start_window": float,
    "cache_capacity_bytes": int,
}
_RUN_KEYS = {
    "sim_time": float,
    "runs": int,
    "seed": int,
    "link_failures": int,
    "pit_timeout": float,
    "queue_capacity": int,
    "align_periods": _bool,
}
_STRATEGY_TYPES = {
    "period_tau": float, "t_min": float, "t_max": float, "lam": float, "window_n": int,
    "alpha_override": _opt_float, "min_headroom": float, "initial_fwt": str,
    "beta": float, "update_interval": float, "probe_interval": float, "dead_after": int,
    "ewma_weight": float, "max_timeouts": int,
}
_ALIASES = {"lambda": "lam", "window_N": "window_n"}


def _key_lines(text):
    """Map (section, key) to the line on which it is defined."""
    lines = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif "=" in s:
            lines[(section, s.split("=", 1)[0].strip().lower())] = i
    return lines


def parse_config(text: str, base_dir: str = ".") -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ParseError("malformed line", line=line) from None
    except configparser.Error as exc:
        raise ParseError(str(exc).splitlines()[0], line=getattr(exc, "lineno", None)) from None
    lines = _key_lines(text)

    allowed = {"topology": _TOPOLOGY_KEYS, "strategy": None, "workload": _WORKLOAD_KEYS,
               "run": _RUN_KEYS}
    for section in parser.sections():
        if section not in allowed:
            raise ParseError(f"unknown section [{section}]")

    def convert(section, key, conv):
        raw = parser[section][key]
        try:
            return conv(raw)
        except ValueError:
            raise ParseError(f"cannot parse {raw!r}", line=lines.get((section, key)),
                             field=f"{section}.{key}") from None

    def read(section, table):
        out = {}
        if not parser.has_section(section):
            return out
        for key in parser[section]:
            if key not in table:
                raise ParseError("unknown key", line=lines.get((section, key)),
                                 field=f"{section}.{key}")
            out[key] = convert(section, key, table[key])
        return out

    cfg = ScenarioConfig()
    topo = read("topology", _TOPOLOGY_KEYS)
    if "file" in topo:
        extra = set(topo) - {"file"}
        if extra:
            raise ParseError(f"topology file cannot be combined with {sorted(extra)}",
                             field="topology.file")
        cfg.topology = None
        cfg.topology_file = os.path.join(base_dir, topo["file"])
    else:
        conn = topo.pop("connectivity", "medium")
        if conn not in CONNECTIVITY_CLASSES:
            raise ValidationError([f"connectivity must be one of {sorted(CONNECTIVITY_CLASSES)}"])
        mu = topo.pop("as_count", 5)
        nu = topo.pop("routers_per_as", 20)
        top, bottom = CONNECTIVITY_CLASSES[conn](mu, nu)
        cfg.topology = TopologySpec(
            as_count=mu,
            routers_per_as=nu,
            extra_edges_top=topo.pop("extra_edges_top", top),
            extra_edges_bottom=topo.pop("extra_edges_bottom", bottom),
            bandwidth=topo.pop("bandwidth", "medium"),
            client_count=topo.pop("clients", 100),
            server_count=topo.pop("servers", 10),
            propagation_delay=topo.pop("propagation_delay", 0.005),
        )

    if parser.has_section("strategy"):
        sec = parser["strategy"]
        cfg.strategy = sec.get("name", cfg.strategy).strip()
        for key in sec:
            if key == "name":
                continue
            name = _ALIASES.get(key, key)
            if name not in _STRATEGY_TYPES:
                raise ParseError("unknown key", line=lines.get(("strategy", key)),
                                 field=f"strategy.{key}")
            cfg.strategy_params[name] = convert("strategy", key, _STRATEGY_TYPES[name])

    for key, value in {**read("workload", _WORKLOAD_KEYS), **read("run", _RUN_KEYS)}.items():
        setattr(cfg, key, value)
    return cfg.validate()


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, os.path.dirname(os.path.abspath(path)))


# --------------------------------------------------------------------------
# Workload
# --------------------------------------------------------------------------

def chunks_per_server(cfg: ScenarioConfig) -> int:
    """Catalogue size per server: one client's full stream."""
    return max(1, int(cfg.sim_time * cfg.request_rate))


def default_cache_capacity(cfg: ScenarioConfig, server_count: int) -> int:
    """One percent of the whole catalogue, rounded to whole chunks (at least one)."""
    catalogue = chunks_per_server(cfg) * server_count
    return max(1, round(catalogue / 100)) * DATA_SIZE


def zipf_shares(n: int, alpha: float) -> list:
    weights = [1.0 / k ** alpha for k in range(1, n + 1)]
    total = sum(weights)
    return [w / total for w in weights]


def generate_workload(cfg: ScenarioConfig, topology: Topology, seed: int) -> dict:
    """Request times and chunk names for every client.

    Each client picks one server, starts at a uniform offset in the first
    ``start_window`` seconds (at most half the run) and then issues
    ``request_rate`` Interests in every second, at uniform times inside that
    second, for consecutive chunks starting at chunk 0.
    """
    rng = random.Random(f"workload:{seed}")
    servers = topology.servers
    shares = zipf_shares(len(servers), cfg.zipf_alpha) if cfg.popularity == "zipf" else None
    n_chunks = chunks_per_server(cfg)
    window = min(cfg.start_window, cfg.sim_time / 2)
    out = {}
    for c in topology.clients:
        server = rng.choices(servers, shares)[0] if shares else rng.choice(servers)
        start = rng.uniform(0.0, window)
        prefix = topology.prefixes[server]
        times = []
        second = int(start)
        while second < cfg.sim_time:
            draws = sorted(rng.uniform(second, second + 1) for _ in range(cfg.request_rate))
            times.extend(t for t in draws if start <= t < cfg.sim_time)
            second += 1
        names = [Name(prefix + (f"c{i % n_chunks}",)) for i in range(len(times))]
        out[c] = (times, names)
    return out


def draw_failures(cfg: ScenarioConfig, topology: Topology, seed: int) -> list:
    """``link_failures`` router-router link outages with uniform start and duration."""
    rng = random.Random(f"failures:{seed}")
    links = sorted(topology.router_edges())
    longest = math.floor(cfg.sim_time / 10)
    schedule = []
    for _ in range(cfg.link_failures if links else 0):
        link = rng.choice(links)
        schedule.append((link, rng.uniform(0.0, cfg.sim_time), rng.uniform(0.0, longest)))
    return schedule


# --------------------------------------------------------------------------
# Running
# --------------------------------------------------------------------------

def topology_for(cfg: ScenarioConfig, seed: int) -> Topology:
    """The router graph comes from the scenario seed; end hosts move with ``seed``."""
    if cfg.topology_file is not None:
        topo = load_topology(cfg.topology_file)
        topo.validate()
        return topo
    return generate(cfg.topology, cfg.seed, placement_seed=seed)


def run_once(cfg: ScenarioConfig, run_index: int, trace=None):
    """Run ``run_index`` of ``cfg``; returns ``(seed, RunMetrics)``."""
    seed = cfg.seed + run_index
    topo = topology_for(cfg, seed)
    cache = cfg.cache_capacity_bytes
    if cache is None:
        cache = default_cache_capacity(cfg, len(topo.servers))
    sim = Simulation(
        topo,
        cfg.strategy,
        cfg.strategy_params,
        workload=generate_workload(cfg, topo, seed),
        config=SimConfig(pit_timeout=cfg.pit_timeout, queue_capacity=cfg.queue_capacity,
                         cache_capacity_bytes=cache, align_periods=cfg.align_periods),
        seed=seed,
        trace=trace,
    )
    apply_failure_schedule(sim, draw_failures(cfg, topo, seed), cfg.sim_time)
    sim.run_until(cfg.sim_time)
    return seed, sim.metrics()


def _run_worker(args):
    cfg, i = args
    return run_once(cfg, i)


@dataclass
class MetricSummary:
    mean: float
    half_width: float
    n: int


@dataclass
class AggregateReport:
    config: ScenarioConfig
    seeds: list
    runs: list      # RunMetrics in run-index order
    summary: dict   # metric -> MetricSummary


def confidence_half_width(values, level=0.95) -> float:
    """Student-t half-width of the confidence interval of the mean (0 for one value)."""
    n = len(values)
    if n < 2:
        return 0.0
    s = statistics.stdev(values)
    return float(_stats.t.ppf(0.5 + level / 2, n - 1)) * s / math.sqrt(n)


def aggregate(cfg, seeds, runs) -> AggregateReport:
    summary = {}
    for m in METRICS:
        values = [r.row()[m] for r in runs]
        summary[m] = MetricSummary(math.fsum(values) / len(values),
                                   confidence_half_width(values), len(values))
    return AggregateReport(cfg, list(seeds), list(runs), summary)


def run_scenario(cfg: ScenarioConfig, parallel: Optional[int] = None) -> AggregateReport:
    cfg.validate()
    if parallel is None:
        parallel = int(os.environ.get(PARALLEL_ENV, "1") or 1)
    jobs = [(cfg, i) for i in range(cfg.runs)]
    if parallel > 1 and cfg.runs > 1:
        with ProcessPoolExecutor(max_workers=min(parallel, cfg.runs)) as pool:
            results = list(pool.map(_run_worker, jobs))
    else:
        results = [_run_worker(j) for j in jobs]
    return aggregate(cfg, [s for s, _ in results], [m for _, m in results])


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

def _fmt(x):
    return str(x) if isinstance(x, int) else format(x, ".10g")


def render_csv(report: AggregateReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i, (seed, run) in enumerate(zip(report.seeds, report.runs)):
        row = run.row()
        w.writerow([i, seed] + [_fmt(row[m]) for m in METRICS])
    w.writerow(["mean", ""] + [_fmt(report.summary[m].mean) for m in METRICS])
    return buf.getvalue()


def _config_dict(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    d["strategy_params"] = dict(sorted(cfg.strategy_params.items()))
    return d


def render_report(report: AggregateReport) -> str:
    doc = {
        "config": _config_dict(report.config),
        "summary": {m: asdict(s) for m, s in report.summary.items()},
        "runs": [
            {
                "run": i,
                "seed": seed,
                "metrics": run.row(),
                "interests": {
                    "issued": run.interests_issued,
                    "satisfied": run.interests_satisfied,
                    "timed_out": run.interests_timed_out,
                    "pending": run.interests_pending,
                },
                "unsolicited_data": run.unsolicited_data,
                "links": run.link_counters,
                "nodes": run.node_counters,
            }
            for i, (seed, run) in enumerate(zip(report.seeds, report.runs))
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def emit_report(report: AggregateReport, fmt: str = "csv", path=None) -> str:
    """Render ``report`` as ``csv`` or ``report`` (JSON); write to ``path`` if given."""
    if fmt == "csv":
        text = render_csv(report)
    elif fmt == "report":
        text = render_report(report)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
