"""Two-level scale-free topologies, connectivity and FIB bootstrap.

Routers are grouped into autonomous systems. Both the AS-level graph and the
router graph inside each AS grow by preferential attachment with one link
per new node (so both are trees), then random extra edges add redundancy.
Clients and servers hang off uniformly chosen routers.
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

from .ndn import Fib, FibEntry, Name

__all__ = [
    "BANDWIDTH_CLASSES",
    "CONNECTIVITY_CLASSES",
    "InfeasibleSpec",
    "TopologySpec",
    "Edge",
    "Topology",
    "ba_tree",
    "generate",
    "connectivity",
    "bootstrap_fibs",
    "shortest_distances",
    "dump_topology",
    "load_topology",
    "parse_topology",
]

#: Uniform capacity intervals in Mbps: (inter-AS links, intra-AS and access links)
BANDWIDTH_CLASSES = {
    "low": ((2.0, 4.0), (1.0, 2.0)),
    "medium": ((3.0, 5.0), (2.0, 4.0)),
    "high": ((4.0, 6.0), (3.0, 5.0)),
}

#: Extra (top, bottom-per-AS) edges as a function of (as_count, routers_per_as)
CONNECTIVITY_CLASSES = {
    "low": lambda mu, nu: (mu // 2, nu // 3),
    "medium": lambda mu, nu: (mu, nu // 2),
    "high": lambda mu, nu: (mu * 2, nu),
}

ROLES = ("router", "client", "server")


class InfeasibleSpec(ValueError):
    pass


@dataclass
class TopologySpec:
    as_count: int = 5
    routers_per_as: int = 20
    extra_edges_top: int = 0
    extra_edges_bottom: int = 0
    bandwidth: str = "medium"
    client_count: int = 100
    server_count: int = 10
    seed: Optional[int] = None
    propagation_delay: float = 0.005

    @classmethod
    def from_connectivity(cls, connectivity: str, as_count: int, routers_per_as: int, **kw):
        top, bottom = CONNECTIVITY_CLASSES[connectivity](as_count, routers_per_as)
        return cls(as_count=as_count, routers_per_as=routers_per_as,
                   extra_edges_top=top, extra_edges_bottom=bottom, **kw)

    def violations(self) -> list:
        errs = []
        if self.as_count < 1 or self.routers_per_as < 1:
            errs.append("as_count and routers_per_as must be >= 1")
        if self.extra_edges_top < 0 or self.extra_edges_bottom < 0:
            errs.append("extra edge counts must be >= 0")
        if self.client_count < 1 or self.server_count < 1:
            errs.append("client_count and server_count must be >= 1")
        if self.bandwidth not in BANDWIDTH_CLASSES:
            errs.append(f"bandwidth must be one of {sorted(BANDWIDTH_CLASSES)}")
        if self.propagation_delay < 0:
            errs.append("propagation_delay must be >= 0")
        return errs


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    bandwidth: int  # bits per second
    delay: float    # seconds
    level: str      # "top" or "bottom"


@dataclass
class Topology:
    roles: dict = field(default_factory=dict)    # node -> role
    as_of: dict = field(default_factory=dict)    # node -> AS index
    edges: dict = field(default_factory=dict)    # (u, v) with u < v -> Edge
    prefixes: dict = field(default_factory=dict)  # server -> Name

    def __post_init__(self):
        self._adj = None

    # construction ------------------------------------------------------
    def add_node(self, node: int, role: str, as_index: int):
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        self.roles[node] = role
        self.as_of[node] = as_index
        self._adj = None

    def add_edge(self, u, v, bandwidth, delay, level):
        if u == v:
            raise ValueError("self-loops are not allowed")
        key = (min(u, v), max(u, v))
        if key in self.edges:
            raise ValueError(f"parallel edge {key}")
        self.edges[key] = Edge(key[0], key[1], int(bandwidth), float(delay), level)
        self._adj = None

    # queries -------------------------------------------------------------
    def _nodes_with(self, role):
        return sorted(n for n, r in self.roles.items() if r == role)

    @property
    def routers(self):
        return self._nodes_with("router")

    @property
    def clients(self):
        return self._nodes_with("client")

    @property
    def servers(self):
        return self._nodes_with("server")

    @property
    def adjacency(self) -> dict:
        if self._adj is None:
            adj = {n: [] for n in self.roles}
            for u, v in self.edges:
                adj[u].append(v)
                adj[v].append(u)
            self._adj = {n: sorted(ns) for n, ns in adj.items()}
        return self._adj

    def neighbors(self, node):
        return self.adjacency[node]

    def edge(self, u, v) -> Edge:
        return self.edges[(min(u, v), max(u, v))]

    def attachment(self, node):
        """Router a client or server hangs off."""
        (router,) = self.adjacency[node]
        return router

    def router_edges(self):
        return [k for k in self.edges
                if self.roles[k[0]] == "router" and self.roles[k[1]] == "router"]

    def server_of_prefix(self, prefix):
        for s, p in self.prefixes.items():
            if p == prefix:
                return s
        raise KeyError(prefix)

    def is_connected(self, nodes=None) -> bool:
        nodes = set(self.roles if nodes is None else nodes)
        if not nodes:
            return True
        start = min(nodes)
        seen = {start}
        todo = [start]
        while todo:
            n = todo.pop()
            for m in self.adjacency[n]:
                if m in nodes and m not in seen:
                    seen.add(m)
                    todo.append(m)
        return seen == nodes

    def validate(self):
        """Raise ``ValueError`` unless the structural invariants hold."""
        if not self.is_connected():
            raise ValueError("topology is not connected")
        if not self.is_connected(self.routers):
            raise ValueError("router graph is not connected")
        for n in self.clients + self.servers:
            ns = self.adjacency[n]
            if len(ns) != 1 or self.roles[ns[0]] != "router":
                raise ValueError(f"node {n} must attach to exactly one router")
        for s in self.servers:
            if s not in self.prefixes:
                raise ValueError(f"server {s} has no prefix")


# --------------------------------------------------------------------------
# Generation
# --------------------------------------------------------------------------

def ba_tree(n: int, rng: random.Random) -> list:
    """Preferential attachment with one link per new node; returns edges on 0..n-1."""
    if n < 2:
        return []
    edges = [(0, 1)]
    repeated = [0, 1]  # every node listed once per incident edge
    for new in range(2, n):
        target = rng.choice(repeated)
        edges.append((target, new))
        repeated.extend((target, new))
    return edges


def _extra_edges(candidates, k, rng, what):
    if k > len(candidates):
        raise InfeasibleSpec(f"{k} extra {what} edges requested, only {len(candidates)} available")
    return rng.sample(candidates, k)


def _mbps(rng, interval):
    lo, hi = interval
    return int(round(rng.uniform(lo, hi) * 1e6))


def generate(spec: TopologySpec, seed: Optional[int] = None,
             placement_seed: Optional[int] = None) -> Topology:
    """Build a topology from ``spec``; ``seed`` overrides ``spec.seed``.

    Client and server placement normally continues the router-graph random
    stream. With ``placement_seed`` it draws from its own stream instead, so
    one router graph can be repopulated with different end hosts.
    """
    errs = spec.violations()
    if errs:
        raise ValueError("; ".join(errs))
    seed = spec.seed if seed is None else seed
    rng = random.Random(f"topology:{seed}")
    mu, nu = spec.as_count, spec.routers_per_as
    top_bw, bottom_bw = BANDWIDTH_CLASSES[spec.bandwidth]
    delay = spec.propagation_delay
    topo = Topology()

    for a in range(mu):
        for i in range(nu):
            topo.add_node(a * nu + i, "router", a)

    as_edges = ba_tree(mu, rng)
    gateways = {}
    for a in range(mu):
        base = a * nu
        local = [(base + x, base + y) for x, y in ba_tree(nu, rng)]
        existing = {tuple(sorted(e)) for e in local}
        candidates = [p for p in combinations(range(base, base + nu), 2) if p not in existing]
        local += _extra_edges(candidates, spec.extra_edges_bottom, rng, f"bottom-level (AS {a})")
        degree = {r: 0 for r in range(base, base + nu)}
        for u, v in local:
            topo.add_edge(u, v, _mbps(rng, bottom_bw), delay, "bottom")
        for u, v in local:
            degree[u] += 1
            degree[v] += 1
        gateways[a] = max(sorted(degree), key=lambda r: degree[r])

    for a, b in as_edges:
        topo.add_edge(gateways[a], gateways[b], _mbps(rng, top_bw), delay, "top")

    routers = topo.routers
    candidates = [
        (u, v) for u, v in combinations(routers, 2)
        if topo.as_of[u] != topo.as_of[v] and (u, v) not in topo.edges
    ]
    for u, v in _extra_edges(candidates, spec.extra_edges_top, rng, "top-level"):
        topo.add_edge(u, v, _mbps(rng, top_bw), delay, "top")

    if placement_seed is not None:
        rng = random.Random(f"placement:{placement_seed}")
    next_id = mu * nu
    for role, count in (("client", spec.client_count), ("server", spec.server_count)):
        for _ in range(count):
            router = rng.choice(routers)
            topo.add_node(next_id, role, topo.as_of[router])
            topo.add_edge(router, next_id, _mbps(rng, bottom_bw), delay, "bottom")
            if role == "server":
                topo.prefixes[next_id] = Name((f"srv{next_id}",))
            next_id += 1

    topo.validate()
    return topo


# --------------------------------------------------------------------------
# Metrics and routing bootstrap
# --------------------------------------------------------------------------

def connectivity(topo: Topology) -> float:
    """Normalised mean degree of the router graph: sum(deg) / ((|V|-1)|V|)."""
    routers = topo.routers
    n = len(routers)
    if n < 2:
        raise ValueError("connectivity needs at least two routers")
    degree_sum = 2 * len(topo.router_edges())
    return degree_sum / ((n - 1) * n)


def shortest_distances(adjacency: dict, source, excluded=()) -> dict:
    """Hop distances from ``source`` by BFS, never entering ``excluded`` nodes."""
    excluded = set(excluded)
    dist = {source: 0}
    queue = deque([source])
    while queue:
        n = queue.popleft()
        d = dist[n] + 1
        for m in adjacency[n]:
            if m not in dist and m not in excluded:
                dist[m] = d
                queue.append(m)
    return dist


def bootstrap_fibs(topo: Topology) -> dict:
    """Fill every router's FIB with all loop-free next hops towards each server.

    A neighbour ``u`` of router ``v`` is a next hop for server ``s`` iff ``u``
    reaches ``s`` without passing through ``v``; its cost is one plus that
    distance. Clients get a single root route towards their access router.
    """
    adj = topo.adjacency
    fibs = {n: Fib() for n in topo.roles}
    routers = topo.routers
    for s in topo.servers:
        prefix = topo.prefixes[s]
        for v in routers:
            dist = shortest_distances(adj, s, excluded=(v,))
            hops = [(u, 1 + dist[u]) for u in adj[v] if u in dist]
            if hops:
                fibs[v].add(FibEntry(prefix, tuple(hops)))
    for c in topo.clients:
        fibs[c].add(FibEntry(Name(()), ((topo.attachment(c), 1),)))
    return fibs


# --------------------------------------------------------------------------
# Text format
# --------------------------------------------------------------------------

def dump_topology(topo: Topology) -> str:
    lines = ["# safsim topology"]
    for n in sorted(topo.roles):
        lines.append(f"node {n} {topo.roles[n]} {topo.as_of[n]}")
    for key in sorted(topo.edges):
        e = topo.edges[key]
        lines.append(f"edge {e.u} {e.v} {e.bandwidth} {e.delay!r} {e.level}")
    for s in sorted(topo.prefixes):
        lines.append(f"prefix {s} {topo.prefixes[s]}")
    return "\n".join(lines) + "\n"


def parse_topology(text: str) -> Topology:
    topo = Topology()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            kind = parts[0]
            if kind == "node" and len(parts) == 4:
                topo.add_node(int(parts[1]), parts[2], int(parts[3]))
            elif kind == "edge" and len(parts) == 6:
                if parts[5] not in ("top", "bottom"):
                    raise ValueError(f"bad level {parts[5]!r}")
                topo.add_edge(int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4]), parts[5])
            elif kind == "prefix" and len(parts) == 3:
                topo.prefixes[int(parts[1])] = Name.parse(parts[2])
            else:
                raise ValueError(f"unrecognised record {line!r}")
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    for key in topo.edges:
        for n in key:
            if n not in topo.roles:
                raise ValueError(f"edge {key} references unknown node {n}")
    return topo


def load_topology(path) -> Topology:
    with open(path) as fh:
        return parse_topology(fh.read())
