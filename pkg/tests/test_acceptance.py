"""Acceptance criteria 1-12.

Each test records a one-line verdict through ``acceptance_log`` (printed in
the terminal summary and on stdout) before asserting. The desk-scale
scenarios live in ``scenarios/desk.ini`` and are shared between criteria 7-9.
"""
import dataclasses
import random
import subprocess
import sys
import time
from pathlib import Path

from scipy import stats as sps

from safsim.harness import (
    EXAMPLE_ONE_LIMIT,
    EXAMPLE_TWO_EXPECTED,
    SingleNodeHarness,
    example_one,
    example_two,
)
from safsim.saf import (
    DROP_FACE,
    PeriodStats,
    SafParams,
    apply_period_update,
    convergence_bound,
    select_face,
)
from safsim.scenario import (
    emit_report,
    generate_workload,
    load_config,
    run_scenario,
    topology_for,
)
from safsim.sim import SimConfig, Simulation
from safsim.topology import Topology, TopologySpec, connectivity

ROOT = Path(__file__).resolve().parent.parent
DESK = ROOT / "scenarios" / "desk.ini"


def verdict(log, n, passed, detail):
    log[n] = (passed, detail)
    print(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
    return passed


# -- 1, 2: worked examples ----------------------------------------------------

def test_criterion_01_example_two_sequence(acceptance_log):
    start = time.perf_counter()
    h = example_two()
    err = max(abs(res.column.get(f, 0.0) - float(v))
              for res, exp in zip(h.history, EXAMPLE_TWO_EXPECTED) for f, v in exp.items())
    res = h.history[1]
    shares = {f: s / res.total for f, s in res.sigmas.items()}
    sigma_err = max(abs(shares[0] - 0.148), abs(shares[1] - 0.111))
    elapsed = time.perf_counter() - start
    ok = len(h.history) == 4 and err <= 1e-6 and sigma_err <= 1e-3 and elapsed < 1
    verdict(acceptance_log, 1, ok,
            f"max column error {err:.1e}, sigma/I {shares[0]:.4f}/{shares[1]:.4f}, {elapsed:.3f}s")
    assert ok


def test_criterion_02_example_one_limit(acceptance_log):
    start = time.perf_counter()
    h = example_one(20)
    reached = next((i for i, r in enumerate(h.history, 1)
                    if max(abs(r.column[f] - float(v)) for f, v in EXAMPLE_ONE_LIMIT.items()) <= 1e-3),
                   None)
    elapsed = time.perf_counter() - start
    ok = reached is not None and reached <= 20 and elapsed < 1
    verdict(acceptance_log, 2, ok, f"limit (1/3, 2/3) reached after {reached} periods, {elapsed:.3f}s")
    assert ok


# -- 3: convergence bound -------------------------------------------------------

def _bound_case(rng):
    """Unreliable faces 0..k-1 plus one ample sink face k, under a constant threshold."""
    k = rng.randint(1, 3)
    total = rng.choice([30, 60, 90, 150, 300, 1000])
    t = rng.uniform(0.3, 0.9)
    alpha = 1.0 if rng.random() < 0.3 else rng.uniform(0.05, 0.99)
    raw = [rng.uniform(0.05, 1.0) for _ in range(k + 1)]
    p = [x / sum(raw) for x in raw]
    caps = {f: rng.uniform(0.02, 0.95) * p[f] * total * t for f in range(k)}
    column = {DROP_FACE: 0.0, **{f: p[f] for f in range(k + 1)}}
    return k, total, t, alpha, column, caps


def test_criterion_03_convergence_bound(acceptance_log):
    start = time.perf_counter()
    rng = random.Random(2024)
    checked, worst = 0, None
    violations = []
    while checked < 150:
        k, total, t, alpha, column, caps = _bound_case(rng)
        bound = convergence_bound({f: column[f] for f in caps}, total, caps, t, alpha)
        h = SingleNodeHarness(column, {**caps, k: 10 * total}, total,
                              SafParams(alpha_override=alpha), threshold=t, t_schedule=[t] * 10_000)
        periods = 0
        while h.unreliable_faces(threshold=t) and periods <= bound + 1:
            h.step()
            periods += 1
        checked += 1
        if periods > bound:
            violations.append((k, total, t, alpha, periods, bound))
        slack = bound - periods
        worst = slack if worst is None else min(worst, slack)
    elapsed = time.perf_counter() - start
    ok = not violations and elapsed < 10
    verdict(acceptance_log, 3, ok,
            f"{checked} tuples, {len(violations)} over the bound, min slack {worst}, {elapsed:.2f}s")
    assert ok, violations[:5]


# -- 4: stability of the fixed point --------------------------------------------

def test_criterion_04_perturbation_returns(acceptance_log):
    """Both faces are saturated at the limit point; push 0.2 onto each in turn."""
    start = time.perf_counter()
    errors = {}
    for src, dst in ((2, 1), (1, 2)):
        h = example_one(40)
        fixed = dict(h.column)
        h.column[src] -= 0.2
        h.column[dst] += 0.2
        h.run(100)
        errors[dst] = max(abs(h.column[f] - fixed[f]) for f in fixed)
    elapsed = time.perf_counter() - start
    ok = all(e <= 1e-3 for e in errors.values()) and elapsed < 1
    verdict(acceptance_log, 4, ok,
            "distance after perturbing onto face 1: %.1e, onto face 2: %.1e, %.3fs"
            % (errors[1], errors[2], elapsed))
    assert ok


# -- 5: stochastic columns ------------------------------------------------------

def test_criterion_05_column_stays_stochastic(acceptance_log):
    rng = random.Random(5)
    worst_sum, worst_neg, updates = 0.0, 0.0, 0
    while updates < 10_000:
        faces = list(range(rng.randint(1, 5)))
        raw = {f: rng.random() ** 3 for f in faces}
        raw[DROP_FACE] = rng.random() ** 3 if rng.random() < 0.5 else 0.0
        s = sum(raw.values()) or 1.0
        column = {f: v / s for f, v in raw.items()}
        if sum(column.values()) == 0:
            column[faces[0]] = 1.0
        params = SafParams(alpha_override=rng.choice([None, 1.0, rng.uniform(0.01, 1)]),
                           window_n=rng.randint(1, 6))
        stats = PeriodStats(faces, params.window_n)
        t = rng.uniform(params.t_min, params.t_max)
        # a short chain of updates on the same column, with fresh random outcomes
        for _ in range(rng.randint(1, 8)):
            for f in faces:
                if rng.random() < 0.8:
                    stats.record(f, True, rng.randint(0, 200))
                    stats.record(f, False, rng.randint(0, 200))
            stats.record_drop(rng.randint(0, 50))
            res = apply_period_update(column, stats, t, params)
            column, t = res.column, res.threshold
            worst_sum = max(worst_sum, abs(sum(column.values()) - 1.0))
            worst_neg = min(worst_neg, min(column.values()))
            updates += 1
    ok = worst_sum <= 1e-9 and worst_neg >= 0.0
    verdict(acceptance_log, 5, ok,
            f"{updates} updates, max |sum-1| {worst_sum:.1e}, min p {worst_neg:.1e}")
    assert ok


# -- 6: forwarding draws -----------------------------------------------------------

def test_criterion_06_sampling_matches_column(acceptance_log):
    column = {DROP_FACE: 0.1, 1: 0.2, 2: 0.3, 3: 0.4}
    n = 100_000
    pvalues = []
    in_face_seen = False
    for in_face in (None, 2):
        rng = random.Random(6)
        counts = dict.fromkeys(column, 0)
        for _ in range(n):
            counts[select_face(column, in_face, rng)] += 1
        in_face_seen |= in_face is not None and counts[in_face] > 0
        # target: the column with the incoming face removed and renormalised
        target = {f: p for f, p in column.items() if f != in_face}
        norm = sum(target.values())
        faces = sorted(target)
        pvalues.append(sps.chisquare([counts[f] for f in faces],
                                     [n * target[f] / norm for f in faces]).pvalue)
    ok = all(p > 0.01 for p in pvalues) and not in_face_seen
    verdict(acceptance_log, 6, ok,
            "chi-square p-values " + ", ".join(f"{p:.3f}" for p in pvalues)
            + f", in_face returned: {in_face_seen}")
    assert ok


# -- 7, 8, 9: desk-scale scenarios -----------------------------------------------------

_DESK_CACHE = {}


def desk(strategy, failures=0, **params):
    key = (strategy, failures, tuple(sorted(params.items())))
    if key not in _DESK_CACHE:
        cfg = load_config(DESK)
        cfg = dataclasses.replace(cfg, strategy=strategy, strategy_params=params,
                                  link_failures=failures)
        start = time.perf_counter()
        report = run_scenario(cfg)
        _DESK_CACHE[key] = (report.summary["satisfaction_ratio"], time.perf_counter() - start)
    return _DESK_CACHE[key]


def _fmt(s):
    return f"{s.mean:.4f}+-{s.half_width:.4f}"


def test_criterion_07_desk_ordering(acceptance_log):
    saf, t1 = desk("saf")
    bc, t2 = desk("broadcast")
    sr, t3 = desk("shortest-route")
    elapsed = t1 + t2 + t3
    ordered = saf.mean >= bc.mean and saf.mean >= sr.mean
    separated = saf.mean - saf.half_width > bc.mean + bc.half_width
    ok = ordered and separated and elapsed < 300
    verdict(acceptance_log, 7, ok,
            f"SAF {_fmt(saf)}, Broadcast {_fmt(bc)}, ShortestRoute {_fmt(sr)}; "
            f"means ordered: {ordered}, CI separated from Broadcast: {separated}; {elapsed:.0f}s")
    assert ok


def test_criterion_08_link_failures(acceptance_log):
    names = ("saf", "broadcast", "shortest-route")
    base = {s: desk(s)[0].mean for s in names}
    runs = {s: desk(s, failures=5) for s in names}
    after = {s: r[0].mean for s, r in runs.items()}
    elapsed = sum(r[1] for r in runs.values())
    loss = {s: (base[s] - after[s]) / base[s] for s in names}
    decreased = {s: after[s] < base[s] for s in names}
    ok = all(decreased.values()) and loss["saf"] <= loss["broadcast"] + 0.05 and elapsed < 300
    verdict(acceptance_log, 8, ok,
            "; ".join(f"{s} {base[s]:.4f}->{after[s]:.4f} (loss {loss[s]:+.3f})" for s in names)
            + f"; {elapsed:.0f}s")
    assert ok


def test_criterion_09_period_duration(acceptance_log):
    results = {tau: desk("saf", period_tau=tau) if tau != 1.0 else desk("saf")
               for tau in (0.1, 1.0, 10.0)}
    # tau=1 is the default and is shared with criterion 7
    elapsed = sum(r[1] for r in results.values())
    ok = results[1.0][0].mean >= results[10.0][0].mean and elapsed < 300
    verdict(acceptance_log, 9, ok,
            ", ".join(f"tau={tau}: {_fmt(r[0])}" for tau, r in results.items()) + f"; {elapsed:.0f}s")
    assert ok


# -- 10: iNRR with cold caches --------------------------------------------------------

def test_criterion_10_inrr_cold_cache_trace(acceptance_log):
    cfg = load_config(DESK)
    cfg = dataclasses.replace(
        cfg, sim_time=8.0, start_window=2.0,
        topology=TopologySpec.from_connectivity("high", 2, 6, bandwidth="medium",
                                                client_count=4, server_count=2))
    equal, sizes = 0, []
    for seed in range(10):
        cfg_seed = dataclasses.replace(cfg, seed=seed)
        topo = topology_for(cfg_seed, seed)
        workload = generate_workload(cfg_seed, topo, seed)
        traces = {}
        for strategy in ("inrr", "shortest-route"):
            log = []
            sim = Simulation(topo, strategy, workload=workload, seed=seed,
                             config=SimConfig(cache_capacity_bytes=0),
                             trace=lambda now, node, i, f, faces, log=log:
                             log.append((now, node, str(i.name), i.nonce, f, faces)))
            sim.run_until(cfg.sim_time)
            traces[strategy] = log
        sizes.append(len(traces["inrr"]))
        equal += traces["inrr"] == traces["shortest-route"] and len(traces["inrr"]) > 0
    ok = equal == 10
    verdict(acceptance_log, 10, ok,
            f"{equal}/10 micro-topologies with identical traces ({min(sizes)}-{max(sizes)} decisions each)")
    assert ok


# -- 11: connectivity formula --------------------------------------------------------

def _graph(n, edges):
    t = Topology()
    for r in range(n):
        t.add_node(r, "router", 0)
    for u, v in edges:
        t.add_edge(u, v, 1_000_000, 0.005, "bottom")
    return t


def test_criterion_11_connectivity(acceptance_log):
    got = (connectivity(_graph(3, [(0, 1), (1, 2), (0, 2)])),
           connectivity(_graph(3, [(0, 1), (1, 2)])),
           connectivity(_graph(5, [(0, 1), (0, 2), (0, 3), (0, 4)])))
    # exact rationals: 6/6, 4/6, 8/20
    ok = got == (1.0, 4 / 6, 8 / 20)
    verdict(acceptance_log, 11, ok, f"triangle {got[0]}, path-3 {got[1]:.6f}, star-5 {got[2]}")
    assert ok


# -- 12: determinism -------------------------------------------------------------------

def test_criterion_12_byte_identical_csv(acceptance_log, tmp_path):
    cfg_path = ROOT / "scenarios" / "quick.ini"
    cfg = load_config(cfg_path)
    first = emit_report(run_scenario(cfg), "csv")
    second = emit_report(run_scenario(load_config(cfg_path)), "csv")
    out = tmp_path / "cli.csv"
    proc = subprocess.run([sys.executable, "-m", "safsim.cli", "run", str(cfg_path), "--out", str(out)],
                          capture_output=True, text=True)
    third = out.read_bytes() if proc.returncode == 0 else b""
    ok = first == second and third == first.encode()
    verdict(acceptance_log, 12, ok,
            f"in-process runs equal: {first == second}, separate process equal: {third == first.encode()}")
    assert ok
