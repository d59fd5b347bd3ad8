"""Deterministic discrete-event NDN simulator.

Events sit in a binary heap ordered by ``(time, sequence)``; the sequence
number is assigned when an event is scheduled, so equal-time events run in
scheduling order and a run is a pure function of its inputs and seeds.

Links are full duplex. Each direction serialises packets FIFO at the link
bandwidth, holds at most ``queue_capacity`` packets and adds a fixed
propagation delay. A failed link loses everything queued or in flight and
every packet offered while it is down.
"""
from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .ndn import (
    DATA_SIZE,
    INTEREST_SIZE,
    ContentStore,
    Data,
    Interest,
    Pit,
    PitResult,
)
from .saf import DROP_FACE
from .strategies import CacheOracle, build_strategies
from .topology import Topology, bootstrap_fibs

__all__ = [
    "EVENT_KINDS",
    "SimConfig",
    "Direction",
    "Link",
    "Node",
    "ClientState",
    "RunMetrics",
    "Simulation",
    "apply_failure_schedule",
    "validate_failure_schedule",
]

EVENT_KINDS = ("PacketArrival", "TimerFire", "PeriodBoundary", "LinkDown", "LinkUp", "ClientRequest")

DROP_KINDS = ("loop", "queue", "fd", "link")


@dataclass
class SimConfig:
    pit_timeout: float = 2.0
    queue_capacity: int = 100
    cache_capacity_bytes: int = 0
    interest_size: int = INTEREST_SIZE
    data_size: int = DATA_SIZE
    align_periods: bool = False


class Direction:
    """One direction of a link: FIFO serialisation with a bounded queue."""

    __slots__ = ("src", "dst", "bandwidth", "delay", "capacity", "busy_until", "backlog",
                 "generation", "interests", "data", "up")

    def __init__(self, src, dst, bandwidth, delay, capacity):
        self.src = src
        self.dst = dst
        self.bandwidth = bandwidth
        self.delay = delay
        self.capacity = capacity
        self.busy_until = 0.0
        self.backlog = deque()  # serialisation end times of queued packets
        self.generation = 0
        self.interests = 0
        self.data = 0
        self.up = True

    def offer(self, size, now):
        """Arrival time at the far end, or ``None`` on a queue drop."""
        backlog = self.backlog
        while backlog and backlog[0] <= now:
            backlog.popleft()
        if len(backlog) >= self.capacity:
            return None
        start = self.busy_until if self.busy_until > now else now
        done = start + size * 8.0 / self.bandwidth
        self.busy_until = done
        backlog.append(done)
        return done + self.delay

    def flush(self, now):
        self.backlog.clear()
        self.busy_until = now
        self.generation += 1


@dataclass
class Link:
    u: int
    v: int
    forward: Direction
    backward: Direction
    down_count: int = 0
    failures: int = 0

    @property
    def up(self):
        return self.down_count == 0


@dataclass
class ClientState:
    issued: int = 0
    satisfied: int = 0
    timed_out: int = 0
    hop_total: int = 0
    pending: dict = field(default_factory=dict)  # name -> issue time


class Node:
    __slots__ = ("id", "role", "pit", "cs", "fib", "strategy", "client", "prefix",
                 "cache_hits", "cache_lookups", "interests_in")

    def __init__(self, node_id, role):
        self.id = node_id
        self.role = role
        self.pit = None
        self.cs = None
        self.fib = None
        self.strategy = None
        self.client = None
        self.prefix = None
        self.cache_hits = 0
        self.cache_lookups = 0
        self.interests_in = 0


@dataclass
class RunMetrics:
    interests_issued: int
    interests_satisfied: int
    interests_timed_out: int
    interests_pending: int
    satisfaction_ratio: float
    cache_hit_ratio: float
    mean_hop_count: float
    drops: dict
    unsolicited_data: int
    link_counters: dict   # "u-v" -> {"interests": n, "data": n, "failures": n}
    node_counters: dict   # router id -> {"cache_hits": n, "cache_lookups": n, "interests": n}
    events: int

    def row(self) -> dict:
        return {
            "satisfaction_ratio": self.satisfaction_ratio,
            "cache_hit_ratio": self.cache_hit_ratio,
            "mean_hop_count": self.mean_hop_count,
            "drop_loop": self.drops["loop"],
            "drop_queue": self.drops["queue"],
            "drop_fd": self.drops["fd"],
            "drop_link": self.drops["link"],
        }


class Simulation:
    """One simulation run over ``topology`` with one strategy on every router.

    ``workload`` maps client id to ``(times, names)``: sorted request times and
    the Data names requested at them. ``seed`` feeds the strategy and nonce
    random streams, which are kept apart so that a strategy's random choices
    never shift the nonces drawn for a workload.
    """

    def __init__(self, topology: Topology, strategy: str = "saf", strategy_params=None,
                 workload=None, config: SimConfig = None, seed: int = 0,
                 trace: Optional[Callable] = None):
        self.topology = topology
        self.config = config or SimConfig()
        self.now = 0.0
        self._heap = []
        self._seq = 0
        self.events = 0
        self.trace = trace
        self.strategy_rng = random.Random(f"strategy:{seed}")
        self.nonce_rng = random.Random(f"nonce:{seed}")
        self.topology_version = 0
        self._live_adj = None
        self.drops = dict.fromkeys(DROP_KINDS, 0)
        self.unsolicited = 0
        self.oracle = CacheOracle(self)

        cfg = self.config
        self.nodes = {}
        fibs = bootstrap_fibs(topology)
        for n, role in sorted(topology.roles.items()):
            node = Node(n, role)
            node.fib = fibs[n]
            if role == "router":
                node.pit = Pit(cfg.pit_timeout)
                if cfg.cache_capacity_bytes > 0:
                    node.cs = ContentStore(cfg.cache_capacity_bytes)
            elif role == "client":
                node.client = ClientState()
            else:
                node.prefix = topology.prefixes[n]
            self.nodes[n] = node

        self.links = {}
        self.dirs = {}
        for (u, v), e in sorted(topology.edges.items()):
            fwd = Direction(u, v, e.bandwidth, e.delay, cfg.queue_capacity)
            bwd = Direction(v, u, e.bandwidth, e.delay, cfg.queue_capacity)
            self.links[(u, v)] = Link(u, v, fwd, bwd)
            self.dirs[(u, v)] = fwd
            self.dirs[(v, u)] = bwd

        routers = [self.nodes[r] for r in topology.routers]
        self.strategies = build_strategies(strategy, dict(strategy_params or {}), self, routers)
        for r in routers:
            r.strategy = self.strategies[r.id]
            period = r.strategy.period
            if period:
                offset = 0.0 if cfg.align_periods else period * ((r.id * 0.6180339887498949) % 1.0)
                first = offset if offset > 0 else period
                self.schedule(first, self._period, r, period)

        self._workload = {}
        for c, (times, names) in sorted((workload or {}).items()):
            if len(times) != len(names):
                raise ValueError(f"client {c}: times and names differ in length")
            if self.nodes[c].role != "client":
                raise ValueError(f"node {c} is not a client")
            if len(times):
                self._workload[c] = (times, names)
                self.schedule(times[0], self._request, c, 0)

    # ------------------------------------------------------------------ core
    def schedule(self, time, fn, *args):
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, fn, args))

    def run_until(self, t_end: float) -> int:
        """Process every event with time <= ``t_end``; returns how many ran."""
        heap = self._heap
        pop = heapq.heappop
        count = 0
        while heap and heap[0][0] <= t_end:
            time, _, fn, args = pop(heap)
            self.now = time
            fn(*args)
            count += 1
        self.now = max(self.now, t_end)
        self.events += count
        return count

    def live_adjacency(self):
        if self._live_adj is None:
            adj = {n: [] for n in self.nodes}
            for (u, v), link in self.links.items():
                if link.up:
                    adj[u].append(v)
                    adj[v].append(u)
            self._live_adj = {n: sorted(ns) for n, ns in adj.items()}
        return self._live_adj

    # ------------------------------------------------------------- transport
    def transmit(self, src, dst, packet, is_data):
        d = self.dirs[(src, dst)]
        if not d.up:
            self.drops["link"] += 1
            return None
        arrival = d.offer(self.config.data_size if is_data else self.config.interest_size, self.now)
        if arrival is None:
            self.drops["queue"] += 1
            return None
        if is_data:
            d.data += 1
            self.schedule(arrival, self._data_arrival, d, d.generation, packet)
        else:
            d.interests += 1
            self.schedule(arrival, self._interest_arrival, d, d.generation, packet)
        return arrival

    def _interest_arrival(self, d, generation, interest):
        if generation != d.generation:
            self.drops["link"] += 1
            return
        self.on_interest(self.nodes[d.dst], interest, d.src)

    def _data_arrival(self, d, generation, data):
        if generation != d.generation:
            self.drops["link"] += 1
            return
        self.on_data(self.nodes[d.dst], data, d.src)

    # ---------------------------------------------------------------- events
    def _request(self, c, index):
        times, names = self._workload[c]
        node = self.nodes[c]
        st = node.client
        name = names[index]
        st.issued += 1
        if name in st.pending:
            # a previous request for the same chunk is still outstanding
            st.timed_out += 1
        st.pending[name] = self.now
        interest = Interest(name, self.nonce_rng.getrandbits(64), 0, self.now)
        router = self.topology.attachment(c)
        self.transmit(c, router, interest.forwarded(), False)
        self.schedule(self.now + self.config.pit_timeout, self._client_timeout, node, name, self.now)
        if index + 1 < len(times):
            self.schedule(times[index + 1], self._request, c, index + 1)

    def _client_timeout(self, node, name, issued_at):
        st = node.client
        if st.pending.get(name) == issued_at:
            del st.pending[name]
            st.timed_out += 1

    def _period(self, node, period):
        node.strategy.on_period(self.now)
        self.schedule(self.now + period, self._period, node, period)

    def _expire(self, node, name, entry_id):
        entry = node.pit.expire(name, entry_id)
        if entry is not None:
            strategy = node.strategy
            for f in sorted(entry.upstream_faces):
                strategy.on_timeout(entry.prefix, name, f)

    # -------------------------------------------------------------- pipeline
    def on_interest(self, node, interest, in_face):
        role = node.role
        if role == "server":
            if node.prefix.is_prefix_of(interest.name):
                self.transmit(node.id, in_face, Data(interest.name, self.config.data_size, 1), True)
            return
        if role == "client":
            return
        node.interests_in += 1
        cs = node.cs
        if cs is not None:
            node.cache_lookups += 1
            if cs.lookup(interest.name) is not None:
                node.cache_hits += 1
                self.transmit(node.id, in_face, Data(interest.name, self.config.data_size, 1), True)
                return
        result, entry = node.pit.insert(interest, in_face, self.now)
        if result is PitResult.LOOP_DETECTED:
            self.drops["loop"] += 1
            return
        if result is PitResult.AGGREGATED:
            return
        fib_entry = node.fib.longest_prefix_match(interest.name)
        if fib_entry is None:
            node.pit.take(interest.name)
            self.drops["fd"] += 1
            return
        prefix = fib_entry.prefix
        entry.prefix = prefix
        faces = node.strategy.on_interest(prefix, interest, in_face, fib_entry)
        if self.trace is not None:
            self.trace(self.now, node.id, interest, in_face, tuple(faces))
        if not faces or faces[0] == DROP_FACE:
            node.pit.take(interest.name)
            self.drops["fd"] += 1
            return
        out = interest.forwarded()
        now = self.now
        for f in faces:
            entry.upstream_faces.add(f)
            entry.sent_at[f] = now
            self.transmit(node.id, f, out, False)
        self.schedule(entry.expiry, self._expire, node, interest.name, entry.entry_id)

    def on_data(self, node, data, in_face):
        role = node.role
        if role == "client":
            st = node.client
            if st.pending.pop(data.name, None) is not None:
                st.satisfied += 1
                st.hop_total += data.hop_count
            return
        if role == "server":
            return
        cs = node.cs
        if cs is not None:
            fresh = data.name not in cs
            evicted = cs.insert(data)
            if fresh:
                self.oracle.add(node.id, data.name)
            for name in evicted:
                self.oracle.remove(node.id, name)
        entry = node.pit.take(data.name)
        if entry is None:
            self.unsolicited += 1
            return
        sent = entry.sent_at.get(in_face)
        if sent is not None:
            node.strategy.on_data(entry.prefix, data.name, in_face, self.now - sent, data.hop_count)
        out = data.forwarded()
        for f in sorted(entry.downstream_faces):
            if f != in_face:
                self.transmit(node.id, f, out, True)

    # -------------------------------------------------------------- failures
    def _link_down(self, key):
        link = self.links[key]
        link.down_count += 1
        link.failures += 1
        if link.down_count == 1:
            for d in (link.forward, link.backward):
                d.up = False
                d.flush(self.now)
            self.topology_version += 1
            self._live_adj = None

    def _link_up(self, key):
        link = self.links[key]
        link.down_count -= 1
        if link.down_count == 0:
            link.forward.up = link.backward.up = True
            self.topology_version += 1
            self._live_adj = None

    # --------------------------------------------------------------- metrics
    def metrics(self) -> RunMetrics:
        issued = satisfied = timed_out = pending = hops = 0
        for n in self.topology.clients:
            st = self.nodes[n].client
            issued += st.issued
            satisfied += st.satisfied
            timed_out += st.timed_out
            pending += len(st.pending)
            hops += st.hop_total
        ratios = [self.nodes[r].cache_hits / self.nodes[r].cache_lookups
                  for r in self.topology.routers if self.nodes[r].cache_lookups]
        links = {}
        for (u, v), link in sorted(self.links.items()):
            links[f"{u}-{v}"] = {
                "interests": link.forward.interests + link.backward.interests,
                "data": link.forward.data + link.backward.data,
                "failures": link.failures,
            }
        nodes = {
            str(r): {
                "cache_hits": self.nodes[r].cache_hits,
                "cache_lookups": self.nodes[r].cache_lookups,
                "interests": self.nodes[r].interests_in,
            }
            for r in self.topology.routers
        }
        return RunMetrics(
            interests_issued=issued,
            interests_satisfied=satisfied,
            interests_timed_out=timed_out,
            interests_pending=pending,
            satisfaction_ratio=satisfied / issued if issued else 0.0,
            cache_hit_ratio=sum(ratios) / len(ratios) if ratios else 0.0,
            mean_hop_count=hops / satisfied if satisfied else 0.0,
            drops=dict(self.drops),
            unsolicited_data=self.unsolicited,
            link_counters=links,
            node_counters=nodes,
            events=self.events,
        )

    def fwt_snapshot(self) -> dict:
        """Current SAF columns and thresholds per router (empty for other strategies)."""
        snap = {}
        for n, s in sorted(self.strategies.items()):
            table = getattr(s, "table", None)
            if table is not None:
                snap[n] = {str(p): (dict(sorted(c.items())), table.thresholds[p])
                           for p, c in sorted(table.columns.items())}
        return snap


def validate_failure_schedule(schedule, sim_time=None) -> list:
    errs = []
    for i, (key, start, duration) in enumerate(schedule):
        if start < 0:
            errs.append(f"failure {i}: start must be >= 0")
        if duration < 0 or (sim_time is not None and duration > sim_time / 10):
            errs.append(f"failure {i}: duration must lie in [0, sim_time/10]")
    return errs


def apply_failure_schedule(sim: Simulation, schedule, sim_time=None):
    """Queue ``LinkDown``/``LinkUp`` events for ``[(edge, start, duration), ...]``.

    Overlapping failures of one link are reference counted: the link returns
    only after every interval has elapsed.
    """
    errs = validate_failure_schedule(schedule, sim_time)
    if errs:
        raise ValueError("; ".join(errs))
    for key, start, duration in schedule:
        key = (min(key), max(key))
        if key not in sim.links:
            raise KeyError(f"no link {key}")
        sim.schedule(start, sim._link_down, key)
        sim.schedule(start + duration, sim._link_up, key)
