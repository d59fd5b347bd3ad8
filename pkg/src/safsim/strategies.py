"""Forwarding strategies behind one per-node contract.

A strategy instance lives on one router. The simulator calls

* ``on_interest(prefix, interest, in_face, fib_entry)`` for every Interest
  that created a new PIT entry; it returns the faces to forward on, or
  ``[DROP_FACE]`` to discard the Interest,
* ``on_data(prefix, name, face, delay, hop_count)`` when Data satisfies an
  entry that was forwarded on ``face``,
* ``on_timeout(prefix, name, face)`` for every upstream face of an entry that
  expired unanswered,
* ``on_period(now)`` every ``period`` seconds when ``period`` is not ``None``.

The selection rules themselves are plain functions so they can be tested
without a simulator.
"""
from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field, fields

from .saf import (
    DROP_FACE,
    ForwardingTable,
    OutcomeRecord,
    PeriodStats,
    SafParams,
    ThroughputMeasure,
    apply_period_update,
    select_face,
)
from .topology import shortest_distances

__all__ = [
    "DROP",
    "NoRoute",
    "Strategy",
    "SafStrategy",
    "BroadcastStrategy",
    "ShortestRouteStrategy",
    "DelayRankStrategy",
    "RfaStrategy",
    "OmpIfStrategy",
    "InrrStrategy",
    "CacheOracle",
    "OmpIfShared",
    "STRATEGIES",
    "strategy_param_names",
    "build_strategies",
    "broadcast_select",
    "shortest_route_select",
    "delay_rank_select",
    "ewma",
    "rfa_select",
    "rfa_period_update",
    "wrr_weights",
    "SmoothWrr",
    "node_disjoint_paths",
    "inrr_select",
]

DROP = [DROP_FACE]


class NoRoute(LookupError):
    """Every candidate next hop equals the incoming face."""


# --------------------------------------------------------------------------
# Pure selection rules
# --------------------------------------------------------------------------

def broadcast_select(fib_entry, in_face=None) -> list:
    faces = [f for f in fib_entry.faces if f != in_face]
    return faces or list(DROP)


def shortest_route_select(fib_entry, in_face=None) -> int:
    """Lowest-cost next hop other than ``in_face``; ties go to the lower face id."""
    for face, _ in fib_entry.next_hops:  # already ordered by (cost, face)
        if face != in_face:
            return face
    raise NoRoute(fib_entry.prefix)


def ewma(old, sample, weight=0.3):
    return sample if old is None else (1.0 - weight) * old + weight * sample


def delay_rank_select(delays, timeouts, fib_entry, in_face=None, max_timeouts=2) -> int:
    """Face with the lowest smoothed Data delay.

    Sampled faces rank first, then faces that have never returned Data, then
    faces with ``max_timeouts`` or more consecutive timeouts. Within a tier the
    order is (delay, routing cost, face).
    """
    best = None
    for face, cost in fib_entry.next_hops:
        if face == in_face:
            continue
        d = delays.get(face)
        if timeouts.get(face, 0) >= max_timeouts:
            tier = 2
        else:
            tier = 0 if d is not None else 1
        key = (tier, d if d is not None else 0.0, cost, face)
        if best is None or key < best:
            best = key
    if best is None:
        raise NoRoute(fib_entry.prefix)
    return best[3]


def rfa_select(weights, faces, in_face=None, rng=None) -> int:
    """Draw a face with probability proportional to its weight."""
    cands = [f for f in sorted(faces) if f != in_face]
    if not cands:
        raise NoRoute(None)
    total = sum(weights[f] for f in cands)
    r = (rng or random).random() * total
    acc = 0.0
    for f in cands:
        acc += weights[f]
        if r < acc:
            return f
    return cands[-1]


def rfa_period_update(weights, pending, beta) -> dict:
    """Moving average of the reciprocal pending-Interest count per face."""
    return {
        f: (1.0 - beta) * w + beta / (1.0 + pending.get(f, 0))
        for f, w in weights.items()
    }


def wrr_weights(delays) -> list:
    inv = [1.0 / d for d in delays]
    total = sum(inv)
    return [x / total for x in inv]


class SmoothWrr:
    """Deterministic smooth weighted round robin (the nginx variant)."""

    def __init__(self):
        self.current = {}

    def pick(self, keys, weights):
        total = sum(weights)
        best, best_val = None, None
        for k, w in zip(keys, weights):
            v = self.current.get(k, 0.0) + w
            self.current[k] = v
            if best_val is None or v > best_val:
                best, best_val = k, v
        self.current[best] -= total
        return best


def _bfs_path(adjacency, src, dst, blocked, blocked_edges):
    prev = {src: None}
    frontier = [src]
    while frontier and dst not in prev:
        nxt = []
        for n in frontier:
            for m in adjacency[n]:
                if m in prev or m in blocked or (n, m) in blocked_edges:
                    continue
                prev[m] = n
                nxt.append(m)
        frontier = nxt
    if dst not in prev:
        return None
    path = [dst]
    while path[-1] != src:
        path.append(prev[path[-1]])
    return path[::-1]


def node_disjoint_paths(adjacency, src, dst, allowed=None) -> list:
    """Greedy node-disjoint paths: take a shortest path, remove its interior, repeat."""
    if src == dst:
        return [[src]]
    adj = adjacency
    if allowed is not None:
        allowed = set(allowed)
        adj = {n: [m for m in ms if m in allowed] for n, ms in adjacency.items() if n in allowed}
    blocked, blocked_edges = set(), set()
    paths = []
    while True:
        path = _bfs_path(adj, src, dst, blocked, blocked_edges)
        if path is None:
            return paths
        paths.append(path)
        if len(path) == 2:
            blocked_edges.add((src, dst))
        blocked.update(path[1:-1])


def inrr_select(distances, adjacency, node, in_face, holders, origin):
    """First hop towards the nearest copy of a chunk.

    ``distances(source, excluded)`` returns hop distances over the live graph.
    The nearest target among ``holders`` and ``origin`` wins (ties by node id);
    the next hop is the neighbour other than ``in_face`` with the shortest
    remaining distance to it that does not pass back through ``node``.
    Returns ``None`` when nothing is reachable.
    """
    dist = distances(node, ())
    best = None
    for h in holders:
        if h != node and h in dist:
            key = (dist[h], h)
            if best is None or key < best:
                best = key
    if origin in dist and (best is None or (dist[origin], origin) < best):
        best = (dist[origin], origin)
    if best is None:
        return None
    target = best[1]
    back = distances(target, (node,))
    hop = None
    for u in adjacency[node]:
        if u != in_face and u in back:
            key = (1 + back[u], u)
            if hop is None or key < hop:
                hop = key
    return None if hop is None else hop[1]


# --------------------------------------------------------------------------
# Strategy objects
# --------------------------------------------------------------------------

class Strategy:
    name = ""
    period = None
    params: dict = {}

    def __init__(self, node, sim, shared=None, **params):
        self.node = node
        self.sim = sim
        self.shared = shared
        self.rng = sim.strategy_rng if sim is not None else random.Random(0)

    def on_interest(self, prefix, interest, in_face, fib_entry) -> list:
        raise NotImplementedError

    def on_data(self, prefix, name, face, delay, hop_count):
        pass

    def on_timeout(self, prefix, name, face):
        pass

    def on_period(self, now):
        pass

    @classmethod
    def make_shared(cls, sim):
        return None


class SafStrategy(Strategy):
    name = "saf"

    def __init__(self, node, sim, shared=None, measure=None, **params):
        super().__init__(node, sim, shared)
        self.params_obj = params.pop("saf_params", None) or SafParams(**params)
        self.period = self.params_obj.period_tau
        self.table = ForwardingTable(self.params_obj)
        self.stats = {}
        self.measure = measure or ThroughputMeasure()
        self.last_updates = {}

    def _ensure(self, prefix, fib_entry):
        if prefix not in self.stats:
            self.table.add(prefix, fib_entry.next_hops)
            self.stats[prefix] = PeriodStats(fib_entry.faces, self.params_obj.window_n)

    def on_interest(self, prefix, interest, in_face, fib_entry):
        self._ensure(prefix, fib_entry)
        face = select_face(self.table.columns[prefix], in_face, self.rng)
        if face == DROP_FACE:
            self.stats[prefix].record_drop()
            return DROP
        return [face]

    def on_data(self, prefix, name, face, delay, hop_count):
        self.stats[prefix].record_outcome(face, OutcomeRecord(face, delay, hop_count, True), self.measure)

    def on_timeout(self, prefix, name, face):
        self.stats[prefix].record_outcome(face, OutcomeRecord(face, None, None, False), self.measure)

    def on_period(self, now):
        for prefix, stats in self.stats.items():
            res = apply_period_update(
                self.table.columns[prefix], stats, self.table.thresholds[prefix], self.params_obj
            )
            self.table.columns[prefix] = res.column
            self.table.thresholds[prefix] = res.threshold
            self.last_updates[prefix] = res


class BroadcastStrategy(Strategy):
    name = "broadcast"

    def on_interest(self, prefix, interest, in_face, fib_entry):
        return broadcast_select(fib_entry, in_face)


class ShortestRouteStrategy(Strategy):
    name = "shortest-route"

    def on_interest(self, prefix, interest, in_face, fib_entry):
        try:
            return [shortest_route_select(fib_entry, in_face)]
        except NoRoute:
            return DROP


class DelayRankStrategy(Strategy):
    """Lowest-delay face first, with a timeout-driven exploration rule."""

    name = "delay-rank"

    def __init__(self, node, sim, shared=None, ewma_weight=0.3, max_timeouts=2):
        super().__init__(node, sim, shared)
        self.weight = ewma_weight
        self.max_timeouts = max_timeouts
        self.delays = defaultdict(dict)
        self.timeouts = defaultdict(dict)

    def on_interest(self, prefix, interest, in_face, fib_entry):
        try:
            return [delay_rank_select(self.delays[prefix], self.timeouts[prefix],
                                      fib_entry, in_face, self.max_timeouts)]
        except NoRoute:
            return DROP

    def on_data(self, prefix, name, face, delay, hop_count):
        d = self.delays[prefix]
        d[face] = ewma(d.get(face), delay, self.weight)
        self.timeouts[prefix][face] = 0

    def on_timeout(self, prefix, name, face):
        t = self.timeouts[prefix]
        t[face] = t.get(face, 0) + 1


class RfaStrategy(Strategy):
    """Random choice weighted by a moving average of 1/(1 + pending Interests)."""

    name = "rfa"

    def __init__(self, node, sim, shared=None, beta=0.1, update_interval=1.0):
        super().__init__(node, sim, shared)
        if not 0 <= beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        self.beta = beta
        self.period = update_interval
        self.weights = {}

    def on_interest(self, prefix, interest, in_face, fib_entry):
        w = self.weights.get(prefix)
        if w is None:
            w = self.weights[prefix] = {f: 1.0 for f in fib_entry.faces}
        try:
            return [rfa_select(w, w, in_face, self.rng)]
        except NoRoute:
            return DROP

    def on_period(self, now):
        pending = defaultdict(lambda: defaultdict(int))
        for entry in self.node.pit.entries.values():
            for f in entry.upstream_faces:
                pending[entry.prefix][f] += 1
        for prefix, w in self.weights.items():
            self.weights[prefix] = rfa_period_update(w, pending.get(prefix, {}), self.beta)


@dataclass
class _Path:
    nodes: tuple
    delay: float
    timeouts: int = 0
    alive: bool = True

    @property
    def first_hop(self):
        return self.nodes[1]


@dataclass
class OmpIfShared:
    """Path sets and pinned faces shared by all OMP-IF routers of one run."""

    topology: object
    pins: dict = field(default_factory=dict)    # (router, prefix) -> face
    paths: dict = field(default_factory=dict)   # (router, prefix) -> [_Path]

    def paths_for(self, router, prefix):
        key = (router, prefix)
        if key in self.paths:
            return self.paths[key]
        topo = self.topology
        server = topo.server_of_prefix(prefix)
        egress = topo.attachment(server)
        routers = set(topo.routers)
        found = node_disjoint_paths(topo.adjacency, router, egress, allowed=routers)
        paths = []
        for p in found:
            nodes = tuple(p) + (server,)
            for a, b in zip(nodes[1:-1], nodes[2:]):
                self.pins.setdefault((a, prefix), b)
            paths.append(_Path(nodes, delay=0.02 * (len(nodes) - 1)))
        self.paths[key] = paths
        return paths

    def active_path_sets(self):
        return {k: [p.nodes for p in v if p.alive] for k, v in self.paths.items()}


class OmpIfStrategy(Strategy):
    """Access routers split over node-disjoint paths; transit routers follow a pin.

    Every ``probe_interval`` seconds the next Interest for a prefix is
    broadcast and the face that returns Data first becomes the pinned face.
    """

    name = "ompif"

    def __init__(self, node, sim, shared=None, probe_interval=5.0, dead_after=2,
                 ewma_weight=0.3):
        super().__init__(node, sim, shared)
        self.probe_interval = probe_interval
        self.dead_after = dead_after
        self.weight = ewma_weight
        self.next_probe = {}
        self.probes = set()
        self.wrr = defaultdict(SmoothWrr)

    @classmethod
    def make_shared(cls, sim):
        return OmpIfShared(sim.topology)

    def _path(self, prefix, face):
        for p in self.shared.paths.get((self.node.id, prefix), ()):
            if p.first_hop == face:
                return p
        return None

    def on_interest(self, prefix, interest, in_face, fib_entry):
        now = self.sim.now
        me = self.node.id
        due = self.next_probe.setdefault(prefix, now + self.probe_interval)
        if now >= due:
            self.next_probe[prefix] = now + self.probe_interval
            self.probes.add(interest.name)
            return broadcast_select(fib_entry, in_face)
        if self.sim.topology.roles.get(in_face) == "client":
            alive = [p for p in self.shared.paths_for(me, prefix)
                     if p.alive and p.first_hop != in_face]
            if not alive:
                return DROP
            weights = wrr_weights([p.delay for p in alive])
            return [self.wrr[prefix].pick([p.first_hop for p in alive], weights)]
        pin = self.shared.pins.get((me, prefix))
        if pin is None or pin == in_face:
            try:
                face = shortest_route_select(fib_entry, in_face)
            except NoRoute:
                return DROP
            if pin is None:
                self.shared.pins[(me, prefix)] = face
            return [face]
        return [pin]

    def on_data(self, prefix, name, face, delay, hop_count):
        path = self._path(prefix, face)
        if name in self.probes:
            self.probes.discard(name)
            self.shared.pins[(self.node.id, prefix)] = face
            if path is not None:
                path.alive = True
        if path is not None:
            path.delay = ewma(path.delay, delay, self.weight)
            path.timeouts = 0

    def on_timeout(self, prefix, name, face):
        self.probes.discard(name)
        path = self._path(prefix, face)
        if path is not None:
            path.timeouts += 1
            if path.timeouts >= self.dead_after:
                path.alive = False


class CacheOracle:
    """Global view of which routers cache which chunk, plus live-graph distances."""

    def __init__(self, sim=None):
        self.sim = sim
        self.holders = defaultdict(set)
        self._dist_cache = {}
        self._version = None

    def add(self, node, name):
        self.holders[name].add(node)

    def remove(self, node, name):
        s = self.holders.get(name)
        if s is not None:
            s.discard(node)
            if not s:
                del self.holders[name]

    def holders_of(self, name):
        return self.holders.get(name, ())

    def distances(self, source, excluded=()):
        version = self.sim.topology_version
        if version != self._version:
            self._dist_cache.clear()
            self._version = version
        key = (source, tuple(excluded))
        d = self._dist_cache.get(key)
        if d is None:
            d = self._dist_cache[key] = shortest_distances(self.sim.live_adjacency(), source, excluded)
        return d


class InrrStrategy(Strategy):
    name = "inrr"

    @classmethod
    def make_shared(cls, sim):
        return sim.oracle

    def on_interest(self, prefix, interest, in_face, fib_entry):
        oracle = self.shared
        origin = self.sim.topology.server_of_prefix(prefix)
        face = inrr_select(oracle.distances, self.sim.live_adjacency(), self.node.id,
                           in_face, oracle.holders_of(interest.name), origin)
        return DROP if face is None else [face]


STRATEGIES = {
    cls.name: cls
    for cls in (SafStrategy, BroadcastStrategy, ShortestRouteStrategy, DelayRankStrategy,
                RfaStrategy, OmpIfStrategy, InrrStrategy)
}

_PARAMS = {
    "saf": {f.name for f in fields(SafParams)},
    "broadcast": set(),
    "shortest-route": set(),
    "delay-rank": {"ewma_weight", "max_timeouts"},
    "rfa": {"beta", "update_interval"},
    "ompif": {"probe_interval", "dead_after", "ewma_weight"},
    "inrr": set(),
}


def strategy_param_names(name) -> set:
    return set(_PARAMS[name])


def build_strategies(name, params, sim, nodes) -> dict:
    """One strategy instance per router in ``nodes``; returns ``{node_id: strategy}``."""
    try:
        cls = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}") from None
    shared = cls.make_shared(sim)
    if name == "saf":
        saf_params = SafParams(**params)
        return {n.id: cls(n, sim, shared, saf_params=saf_params) for n in nodes}
    return {n.id: cls(n, sim, shared, **params) for n in nodes}
