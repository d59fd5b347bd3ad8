"""NDN node primitives: names, packets, PIT, Content Store and FIB."""
from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field

__all__ = [
    "Name",
    "Interest",
    "Data",
    "PitEntry",
    "PitResult",
    "Pit",
    "ContentStore",
    "OversizedObject",
    "FibEntry",
    "Fib",
    "DATA_SIZE",
    "INTEREST_SIZE",
]

DATA_SIZE = 4096
INTEREST_SIZE = 50


class Name(tuple):
    """Hierarchical content name, e.g. ``/srv3/c17``.

    A ``Name`` is an immutable tuple of non-empty text components. The root
    name ``/`` has no components and is only meaningful as a FIB prefix.
    """

    __slots__ = ()

    def __new__(cls, components=()):
        components = tuple(components)
        for c in components:
            if not isinstance(c, str) or not c or "/" in c:
                raise ValueError(f"invalid name component {c!r}")
        return super().__new__(cls, components)

    @classmethod
    def parse(cls, text: str) -> "Name":
        if not text.startswith("/"):
            raise ValueError(f"name must start with '/': {text!r}")
        parts = text.split("/")[1:]
        if parts == [""]:
            return cls(())
        return cls(parts)

    def __str__(self) -> str:
        return "/" + "/".join(self)

    def __repr__(self) -> str:
        return f"Name({str(self)!r})"

    def prefix(self, n: int) -> "Name":
        return Name(self[:n])

    def is_prefix_of(self, other: "Name") -> bool:
        return len(self) <= len(other) and other[: len(self)] == tuple(self)

    def append(self, component: str) -> "Name":
        return Name(self + (component,))


class Interest:
    __slots__ = ("name", "nonce", "hop_count", "issue_time")

    def __init__(self, name: Name, nonce: int, hop_count: int = 0, issue_time: float = 0.0):
        if not 0 <= nonce < 2**64:
            raise ValueError("nonce must be a 64-bit unsigned integer")
        self.name = name
        self.nonce = nonce
        self.hop_count = hop_count
        self.issue_time = issue_time

    def forwarded(self) -> "Interest":
        """Copy for transmission over one more link."""
        return Interest(self.name, self.nonce, self.hop_count + 1, self.issue_time)

    def __repr__(self):
        return f"Interest({self.name}, nonce={self.nonce}, hops={self.hop_count})"


class Data:
    __slots__ = ("name", "payload_size", "hop_count")

    def __init__(self, name: Name, payload_size: int = DATA_SIZE, hop_count: int = 0):
        if payload_size <= 0:
            raise ValueError("payload_size must be positive")
        self.name = name
        self.payload_size = payload_size
        self.hop_count = hop_count

    def forwarded(self) -> "Data":
        return Data(self.name, self.payload_size, self.hop_count + 1)

    def __repr__(self):
        return f"Data({self.name}, {self.payload_size} B, hops={self.hop_count})"


# --------------------------------------------------------------------------
# Pending Interest Table
# --------------------------------------------------------------------------

class PitResult(enum.Enum):
    NEW_ENTRY = "new"
    AGGREGATED = "aggregated"
    LOOP_DETECTED = "loop"


@dataclass
class PitEntry:
    name: Name
    created: float
    expiry: float
    seen_nonces: set = field(default_factory=set)
    downstream_faces: set = field(default_factory=set)
    upstream_faces: set = field(default_factory=set)
    # face -> time the Interest left on that face, for delay measurement
    sent_at: dict = field(default_factory=dict)
    entry_id: int = 0
    prefix: object = None  # FIB prefix the entry was forwarded under


class Pit:
    """Pending Interest Table with nonce-based loop detection.

    A second Interest for a pending name with a fresh nonce is aggregated:
    its face joins the downstream set and nothing is forwarded upstream.
    """

    def __init__(self, timeout: float = 2.0):
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        self.timeout = timeout
        self.entries: dict[Name, PitEntry] = {}
        self._next_id = 0

    def __len__(self):
        return len(self.entries)

    def __contains__(self, name):
        return name in self.entries

    def get(self, name):
        return self.entries.get(name)

    def insert(self, interest: Interest, in_face: int, now: float = 0.0):
        """Classify ``interest`` and update the table.

        Returns ``(PitResult, PitEntry)``.
        """
        entry = self.entries.get(interest.name)
        if entry is not None:
            if interest.nonce in entry.seen_nonces:
                return PitResult.LOOP_DETECTED, entry
            entry.seen_nonces.add(interest.nonce)
            entry.downstream_faces.add(in_face)
            return PitResult.AGGREGATED, entry
        self._next_id += 1
        entry = PitEntry(
            name=interest.name,
            created=now,
            expiry=now + self.timeout,
            seen_nonces={interest.nonce},
            downstream_faces={in_face},
            entry_id=self._next_id,
        )
        self.entries[interest.name] = entry
        return PitResult.NEW_ENTRY, entry

    def take(self, name: Name):
        """Remove and return the entry for ``name`` (``None`` if absent)."""
        return self.entries.pop(name, None)

    def consume(self, data: Data) -> set:
        """Satisfy the entry matching ``data`` and return its downstream faces.

        Unsolicited Data (no entry) yields an empty set.
        """
        entry = self.entries.pop(data.name, None)
        if entry is None:
            return set()
        return set(entry.downstream_faces)

    def expire(self, name: Name, entry_id: int):
        """Drop the entry if it is still the one created with ``entry_id``."""
        entry = self.entries.get(name)
        if entry is not None and entry.entry_id == entry_id:
            del self.entries[name]
            return entry
        return None


# --------------------------------------------------------------------------
# Content Store
# --------------------------------------------------------------------------

class OversizedObject(ValueError):
    """A Data packet larger than the whole store was offered for caching."""


class ContentStore:
    """Byte-bounded LRU cache keyed by exact name."""

    def __init__(self, capacity_bytes: int):
        if capacity_bytes < 0:
            raise ValueError("capacity_bytes must be non-negative")
        self.capacity_bytes = capacity_bytes
        self.entries: OrderedDict[Name, Data] = OrderedDict()
        self.used_bytes = 0
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self.entries)

    def __contains__(self, name):
        return name in self.entries

    def insert(self, data: Data) -> list:
        """Store ``data`` as most recently used; return evicted names (LRU first)."""
        if data.payload_size > self.capacity_bytes:
            raise OversizedObject(
                f"{data.payload_size} B object exceeds {self.capacity_bytes} B store"
            )
        entries = self.entries
        old = entries.pop(data.name, None)
        if old is not None:
            self.used_bytes -= old.payload_size
        stored = Data(data.name, data.payload_size, 0)
        entries[data.name] = stored
        self.used_bytes += stored.payload_size
        evicted = []
        while self.used_bytes > self.capacity_bytes:
            name, victim = entries.popitem(last=False)
            self.used_bytes -= victim.payload_size
            evicted.append(name)
        return evicted

    def lookup(self, name: Name):
        """Exact-name lookup; a hit refreshes recency. Returns Data or ``None``."""
        data = self.entries.get(name)
        if data is None:
            self.misses += 1
            return None
        self.entries.move_to_end(name)
        self.hits += 1
        return data

    @property
    def lookups(self) -> int:
        return self.hits + self.misses

    @property
    def hit_ratio(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


# --------------------------------------------------------------------------
# Forwarding Information Base
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FibEntry:
    prefix: Name
    next_hops: tuple  # ((face, cost), ...) ordered by (cost, face)

    def __post_init__(self):
        if not self.next_hops:
            raise ValueError("FIB entry needs at least one next hop")
        hops = tuple(sorted((int(f), int(c)) for f, c in self.next_hops))
        for _, cost in hops:
            if cost < 1:
                raise ValueError("next-hop costs must be >= 1")
        object.__setattr__(self, "next_hops", tuple(sorted(hops, key=lambda h: (h[1], h[0]))))

    @property
    def faces(self) -> list:
        return sorted(f for f, _ in self.next_hops)

    def cost(self, face):
        for f, c in self.next_hops:
            if f == face:
                return c
        raise KeyError(face)


class Fib:
    def __init__(self, entries=()):
        self.entries: dict[Name, FibEntry] = {}
        for e in entries:
            self.add(e)

    def add(self, entry: FibEntry):
        self.entries[entry.prefix] = entry

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries.values())

    def longest_prefix_match(self, name: Name):
        """Entry with the longest prefix of ``name``, or ``None`` (no route)."""
        entries = self.entries
        for n in range(len(name), -1, -1):
            # plain tuple slices hash and compare equal to Name keys
            entry = entries.get(name[:n])
            if entry is not None:
                return entry
        return None
