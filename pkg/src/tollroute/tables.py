"""Per-node forwarding state: PIT, FIB with price windows, neighbor
liveness, and the content store.

All times are integer microseconds.  The tables never look at a wall
clock; callers pass `now` in.
"""

from __future__ import annotations

from collections import OrderedDict, deque
from dataclasses import dataclass, field
from enum import Enum

from .wire import Name, NodeAddr

DEFAULT_WINDOW_CAPACITY = 8
DEFAULT_PIT_LIFETIME_US = 4_000_000
DEFAULT_KEEPALIVE_PERIOD_US = 100_000
# Three missed keep-alive periods kill a neighbor.
DEFAULT_KEEPALIVE_TIMEOUT_US = 300_000
DEFAULT_CS_CAPACITY = 1 << 20


class PitResult(Enum):
    NEW = "new"
    AGGREGATED = "aggregated"
    DUPLICATE_NONCE = "duplicate-nonce"


@dataclass
class PitDownstream:
    addr: NodeAddr
    nonce: bytes
    expires_us: int


class Pit:
    """Pending Interest table.

    One entry per exact name; downstreams keep insertion order.  Expired
    downstreams are filtered on consume, so a consumer of this table never
    sees one.
    """

    def __init__(self, lifetime_us: int = DEFAULT_PIT_LIFETIME_US) -> None:
        self.lifetime_us = lifetime_us
        self._entries: dict[Name, list[PitDownstream]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: Name) -> bool:
        return name in self._entries

    def insert(
        self,
        name: Name,
        downstream: NodeAddr,
        nonce: bytes,
        now: int,
        lifetime_us: int | None = None,
    ) -> PitResult:
        life = self.lifetime_us if lifetime_us is None else lifetime_us
        entry = self._entries.get(name)
        if entry is not None:
            # Lazy expiry must stay invisible: an entry whose downstreams
            # have all timed out is no entry at all.
            entry[:] = [ds for ds in entry if ds.expires_us > now]
            if not entry:
                entry = None
                del self._entries[name]
        if entry is None:
            self._entries[name] = [PitDownstream(downstream, nonce, now + life)]
            return PitResult.NEW
        for ds in entry:
            if ds.addr == downstream and ds.nonce == nonce:
                # Same copy again; refresh the deadline but tell the caller
                # to suppress.
                ds.expires_us = max(ds.expires_us, now + life)
                return PitResult.DUPLICATE_NONCE
        entry.append(PitDownstream(downstream, nonce, now + life))
        return PitResult.AGGREGATED

    def consume(self, name: Name, now: int) -> list[tuple[NodeAddr, bytes]]:
        """Remove the entry and return its unexpired downstreams in
        insertion order."""
        entry = self._entries.pop(name, None)
        if entry is None:
            return []
        return [(ds.addr, ds.nonce) for ds in entry if ds.expires_us > now]

    def peek(self, name: Name, now: int) -> list[tuple[NodeAddr, bytes]]:
        """Like consume but leaves the entry in place, for answers that
        must not end the Interest's life (a cache's discovery reply)."""
        entry = self._entries.get(name)
        if entry is None:
            return []
        return [(ds.addr, ds.nonce) for ds in entry if ds.expires_us > now]

    def sweep(self, now: int) -> None:
        """Drop fully expired entries (housekeeping only)."""
        for name in [n for n, e in self._entries.items() if all(d.expires_us <= now for d in e)]:
            del self._entries[name]

    def dump(self, now: int) -> list[str]:
        lines = []
        for name in sorted(self._entries, key=str):
            for ds in self._entries[name]:
                if ds.expires_us > now:
                    lines.append(
                        f"pit name={name} downstream={ds.addr} "
                        f"nonce={ds.nonce.hex()} expires_us={ds.expires_us}"
                    )
        return lines


class PriceWindow:
    """Bounded FIFO of observed prices; the FIB quotes its minimum."""

    def __init__(self, capacity: int = DEFAULT_WINDOW_CAPACITY) -> None:
        if capacity < 1:
            raise ValueError("window capacity must be positive")
        self.capacity = capacity
        self._samples: deque[tuple[int, int]] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._samples)

    def observe(self, price: int, now: int) -> None:
        if price < 0:
            raise ValueError("price cannot be negative")
        self._samples.append((price, now))

    def minimum(self) -> int | None:
        if not self._samples:
            return None
        return min(price for price, _ in self._samples)

    def samples(self) -> list[tuple[int, int]]:
        return list(self._samples)


@dataclass
class FibNextHop:
    window: PriceWindow
    enabled: bool = True


@dataclass
class FibEntry:
    prefix: Name
    next_hops: dict[NodeAddr, FibNextHop] = field(default_factory=dict)


class Fib:
    """Forwarding information base keyed by content prefix (names with
    any packet index stripped)."""

    def __init__(self, window_capacity: int = DEFAULT_WINDOW_CAPACITY) -> None:
        self.window_capacity = window_capacity
        self._entries: dict[tuple[bytes, ...], FibEntry] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def entry(self, prefix: Name) -> FibEntry | None:
        return self._entries.get(prefix.prefix.components)

    def update(self, prefix: Name, next_hop: NodeAddr, price: int, now: int) -> None:
        """Record a price observation for prefix via next_hop and mark the
        hop enabled (discovery Data is proof of life)."""
        key = prefix.prefix.components
        entry = self._entries.get(key)
        if entry is None:
            entry = FibEntry(prefix.prefix)
            self._entries[key] = entry
        hop = entry.next_hops.get(next_hop)
        if hop is None:
            hop = FibNextHop(PriceWindow(self.window_capacity))
            entry.next_hops[next_hop] = hop
        hop.window.observe(price, now)
        hop.enabled = True

    def min_cost_hop(
        self, prefix: Name, exclude: tuple[NodeAddr, ...] = ()
    ) -> tuple[NodeAddr, int] | None:
        """Cheapest enabled next hop for this exact prefix entry.

        Ties break toward the lowest address in byte order.  Returns None
        when no enabled hop has samples.
        """
        entry = self.entry(prefix)
        if entry is None:
            return None
        best: tuple[int, NodeAddr] | None = None
        for addr, hop in entry.next_hops.items():
            if not hop.enabled or addr in exclude:
                continue
            low = hop.window.minimum()
            if low is None:
                continue
            if best is None or (low, addr) < best:
                best = (low, addr)
        if best is None:
            return None
        return best[1], best[0]

    def lookup_min_cost(
        self, name: Name, exclude: tuple[NodeAddr, ...] = ()
    ) -> tuple[NodeAddr, int] | None:
        """Longest-prefix-match lookup over name minus its packet index.

        The longest entry that exists decides; it is not skipped in favor
        of a shorter one when all its hops are disabled.
        """
        comps = name.prefix.components
        for end in range(len(comps), 0, -1):
            key = comps[:end]
            if key in self._entries:
                return self.min_cost_hop(Name(key), exclude)
        return None

    def set_neighbor_enabled(self, neighbor: NodeAddr, enabled: bool) -> list[Name]:
        """Flip every next-hop record through neighbor; returns prefixes
        whose state actually changed."""
        changed = []
        for entry in self._entries.values():
            hop = entry.next_hops.get(neighbor)
            if hop is not None and hop.enabled != enabled:
                hop.enabled = enabled
                changed.append(entry.prefix)
        return changed

    def dump(self) -> list[str]:
        lines = []
        for key in sorted(self._entries, key=lambda k: str(Name(k))):
            entry = self._entries[key]
            for addr in sorted(entry.next_hops):
                hop = entry.next_hops[addr]
                low = hop.window.minimum()
                lines.append(
                    f"fib prefix={entry.prefix} hop={addr} "
                    f"enabled={'true' if hop.enabled else 'false'} "
                    f"window_min={'none' if low is None else low} "
                    f"samples={len(hop.window)}"
                )
        return lines


class NeighborLiveness:
    """Keep-alive bookkeeping.  A neighbor is alive while now - last_seen
    stays under the timeout; a neighbor never heard from is treated as
    alive (there is nothing to expire yet)."""

    def __init__(
        self,
        period_us: int = DEFAULT_KEEPALIVE_PERIOD_US,
        timeout_us: int = DEFAULT_KEEPALIVE_TIMEOUT_US,
    ) -> None:
        self.period_us = period_us
        self.timeout_us = timeout_us
        self._last_seen: dict[NodeAddr, int] = {}
        self._marked_dead: set[NodeAddr] = set()

    def heard(self, neighbor: NodeAddr, now: int) -> bool:
        """Record a keep-alive; returns True when this revived a neighbor
        previously marked dead."""
        self._last_seen[neighbor] = now
        if neighbor in self._marked_dead:
            self._marked_dead.discard(neighbor)
            return True
        return False

    def is_alive(self, neighbor: NodeAddr, now: int) -> bool:
        last = self._last_seen.get(neighbor)
        if last is None:
            return True
        return now - last < self.timeout_us

    def last_seen(self, neighbor: NodeAddr) -> int | None:
        return self._last_seen.get(neighbor)

    def sweep(self, now: int) -> list[NodeAddr]:
        """Neighbors that crossed the timeout since the last sweep, in
        address order."""
        newly_dead = []
        for neighbor in sorted(self._last_seen):
            if neighbor in self._marked_dead:
                continue
            if now - self._last_seen[neighbor] >= self.timeout_us:
                self._marked_dead.add(neighbor)
                newly_dead.append(neighbor)
        return newly_dead

    def dump(self, now: int) -> list[str]:
        return [
            f"liveness neighbor={n} last_seen_us={self._last_seen[n]} "
            f"alive={'true' if self.is_alive(n, now) else 'false'}"
            for n in sorted(self._last_seen)
        ]


class ContentStore:
    """Byte-capacity LRU cache of content packets."""

    def __init__(self, capacity_bytes: int = DEFAULT_CS_CAPACITY) -> None:
        self.capacity_bytes = capacity_bytes
        self._entries: OrderedDict[Name, bytes] = OrderedDict()
        self._used = 0

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def used_bytes(self) -> int:
        return self._used

    def insert(self, name: Name, payload: bytes) -> bool:
        """Cache payload under name; inserting something larger than the
        whole store is a no-op.  Returns True when stored."""
        if len(payload) > self.capacity_bytes:
            return False
        old = self._entries.pop(name, None)
        if old is not None:
            self._used -= len(old)
        while self._used + len(payload) > self.capacity_bytes:
            _, evicted = self._entries.popitem(last=False)
            self._used -= len(evicted)
        self._entries[name] = payload
        self._used += len(payload)
        return True

    def lookup(self, name: Name) -> bytes | None:
        payload = self._entries.get(name)
        if payload is not None:
            self._entries.move_to_end(name)
        return payload

    def dump(self) -> list[str]:
        return [
            f"cs name={name} bytes={len(self._entries[name])}"
            for name in sorted(self._entries, key=str)
        ]


@dataclass
class TableConfig:
    window_capacity: int = DEFAULT_WINDOW_CAPACITY
    pit_lifetime_us: int = DEFAULT_PIT_LIFETIME_US
    keepalive_period_us: int = DEFAULT_KEEPALIVE_PERIOD_US
    keepalive_timeout_us: int = DEFAULT_KEEPALIVE_TIMEOUT_US
    cs_capacity_bytes: int = DEFAULT_CS_CAPACITY


class NodeTables:
    """The full table set for one node, with the keep-alive operations
    that couple liveness to FIB enable bits."""

    def __init__(self, config: TableConfig | None = None) -> None:
        self.config = config or TableConfig()
        self.pit = Pit(self.config.pit_lifetime_us)
        self.fib = Fib(self.config.window_capacity)
        self.cs = ContentStore(self.config.cs_capacity_bytes)
        self.liveness = NeighborLiveness(
            self.config.keepalive_period_us, self.config.keepalive_timeout_us
        )

    def keepalive_heard(self, neighbor: NodeAddr, now: int) -> bool:
        """Refresh a neighbor; re-enables its FIB next hops.  Returns True
        when the neighbor came back from the dead."""
        revived = self.liveness.heard(neighbor, now)
        self.fib.set_neighbor_enabled(neighbor, True)
        return revived

    def keepalive_sweep(self, now: int) -> list[NodeAddr]:
        """Disable FIB hops of every neighbor whose keep-alives timed out;
        returns the newly dead neighbors."""
        newly_dead = self.liveness.sweep(now)
        for neighbor in newly_dead:
            self.fib.set_neighbor_enabled(neighbor, False)
        return newly_dead

    def dump(self, now: int) -> list[str]:
        return (
            self.pit.dump(now) + self.fib.dump() + self.cs.dump() + self.liveness.dump(now)
        )
