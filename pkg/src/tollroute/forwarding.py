"""Per-node forwarding logic.

One ForwardingEngine instance is a node's control plane: packets go in,
a list of link actions comes out, and all state lives in the node's
tables, its payment book, and a couple of engine-local caches.  The
engine is event-driven and clockless; callers pass `now` (microseconds).

Strategy ladder for routed content Interests, in order:

  source-routed   the packet's own route names the next hop and it is
                  believed alive;
  min-cost        the named hop is dead or the route ran dry, so the
                  cheapest enabled FIB hop (excluding the sender) takes
                  over and the route is rewritten to just that hop;
  rediscovery     no usable FIB hop either: the Interest is converted
                  back to discovery form (same name, same nonce, no
                  route, no payment) and broadcast, subject to a
                  round-robin grant across flows; flows not granted get
                  a no-route Nack.

Discovery Interests flood with per-node duplicate suppression and a
one-rebroadcast budget per nonce.  Discovery Data retraces the reverse
path, growing its route stack and adding each relay's forwarding cost
to the carried price.  Content Data follows PIT state only and is never
broadcast.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .keys import KeyPair
from .payment import ChannelBook, PaymentError, relay_process_payment
from .proof import (
    ChunkAssembly,
    ChunkDescriptor,
    ProofError,
    SignedChunk,
    make_chunk,
    sign_chunk,
    split_payload,
)
from .tables import NodeTables, PitResult
from .wire import (
    Data,
    HopInfo,
    Interest,
    Nack,
    NackReason,
    Name,
    NodeAddr,
    Packet,
    RouteStack,
)


class StrategyMode(Enum):
    SOURCE_ROUTED = "source-routed"
    MIN_COST = "min-cost"
    REDISCOVERY = "rediscovery"


@dataclass(frozen=True)
class Send:
    to: NodeAddr
    packet: Packet


@dataclass(frozen=True)
class Broadcast:
    packet: Interest


Action = Send | Broadcast


class OncePerNonce:
    """Default broadcast budget: each nonce may be rebroadcast once."""

    def __init__(self) -> None:
        self._spent: set[bytes] = set()

    def allow(self, nonce: bytes) -> bool:
        if nonce in self._spent:
            return False
        self._spent.add(nonce)
        return True


BROADCAST_POLICIES: dict[str, Callable[[], OncePerNonce]] = {
    "once-per-nonce": OncePerNonce,
}


class RediscoveryScheduler:
    """Round-robin grants across flows that want rediscovery.

    A flow is denied only when it asks twice in a row while another flow
    is known; the denial yields its turn, so a lone greedy flow still
    makes progress every other request and nobody starves.
    """

    def __init__(self) -> None:
        self._known: set[tuple[bytes, ...]] = set()
        self._last: tuple[bytes, ...] | None = None

    def request(self, prefix: Name) -> bool:
        key = prefix.prefix.components
        self._known.add(key)
        if self._last == key and len(self._known) > 1:
            self._last = None
            return False
        self._last = key
        return True


@dataclass(frozen=True)
class ContentSource:
    """Producer-side description of one served prefix."""

    prefix: Name
    packet_size: int
    packets_per_chunk: int
    total_packets: int
    payload_fn: Callable[[int], bytes]

    def covers(self, name: Name) -> bool:
        return (
            name.has_prefix(self.prefix)
            and name.chunk_index is not None
            and 0 <= name.chunk_index < self.total_packets
        )

    def chunk_span(self, index: int) -> tuple[int, int]:
        first = (index // self.packets_per_chunk) * self.packets_per_chunk
        count = min(self.packets_per_chunk, self.total_packets - first)
        return first, count


@dataclass
class EngineHooks:
    """Callbacks into the surrounding application / simulator."""

    trace: Callable[[dict], None] = lambda event: None
    # Consumer-side: the discovery route ended here.  Return True when
    # this node was indeed waiting for it.
    path_discovered: Callable[[Name, RouteStack, int], bool] = lambda n, r, p: False
    # Consumer-side: content Data with no PIT downstream.  Return True to
    # accept (and cache) it.
    deliver_data: Callable[[Data], bool] = lambda pkt: False
    # Consumer-side Nack with no PIT downstream.
    deliver_nack: Callable[[Nack], bool] = lambda pkt: False


@dataclass
class NodeConfig:
    addr: NodeAddr
    forwarding_cost: int = 0
    relay_mode: str = "cutthrough"  # or "storeforward"
    payment_mode: str = "hopbyhop"  # or "payall"
    broadcast_policy: str = "once-per-nonce"
    interest_lifetime_ms: int = 4_000  # wire lifetimes are milliseconds


class ForwardingEngine:
    def __init__(
        self,
        config: NodeConfig,
        tables: NodeTables,
        key: KeyPair,
        book: ChannelBook | None,
        hooks: EngineHooks | None = None,
    ) -> None:
        if config.relay_mode not in ("cutthrough", "storeforward"):
            raise ValueError(f"unknown relay mode {config.relay_mode!r}")
        if config.payment_mode not in ("hopbyhop", "payall"):
            raise ValueError(f"unknown payment mode {config.payment_mode!r}")
        self.config = config
        self.addr = config.addr
        self.tables = tables
        self.key = key
        self.book = book
        self.hooks = hooks or EngineHooks()
        self.sources: list[ContentSource] = []
        self.counters: defaultdict[str, int] = defaultdict(int)
        self._policy = BROADCAST_POLICIES[config.broadcast_policy]()
        self._rediscovery = RediscoveryScheduler()
        self._own_nonces: set[bytes] = set()
        # Producer-side cache: one signed chunk per (prefix, group).
        self._chunk_cache: dict[tuple[tuple[bytes, ...], int], SignedChunk] = {}
        # Store-and-forward: content Data held back until the chunk's
        # proof packet arrives, keyed by prefix.
        self._sf_buffers: dict[tuple[bytes, ...], dict[int, Data]] = {}

    # -- helpers -----------------------------------------------------

    def _trace(self, kind: str, **fields) -> None:
        self.hooks.trace({"event": kind, **fields})

    def _source_for(self, name: Name) -> ContentSource | None:
        for source in self.sources:
            if source.covers(name):
                return source
        return None

    def _serves_prefix(self, name: Name) -> bool:
        return any(name.prefix.has_prefix(s.prefix) for s in self.sources)

    def register_source(self, source: ContentSource) -> None:
        self.sources.append(source)

    def _nack(self, to: NodeAddr, name: Name, nonce: bytes, reason: NackReason) -> Send:
        self.counters["nacks_sent"] += 1
        self._trace("nack_sent", name=str(name), to=str(to), reason=reason.name)
        return Send(to, Nack(name=name, nonce=nonce, reason=reason))

    # -- keep-alive --------------------------------------------------

    def on_keepalive(self, neighbor: NodeAddr, now: int) -> None:
        if self.tables.keepalive_heard(neighbor, now):
            self._trace("neighbor_revived", neighbor=str(neighbor), last_seen_us=now)

    def keepalive_tick(self, now: int) -> list[NodeAddr]:
        newly_dead = self.tables.keepalive_sweep(now)
        for neighbor in newly_dead:
            self._trace(
                "neighbor_dead",
                neighbor=str(neighbor),
                last_seen_us=self.tables.liveness.last_seen(neighbor),
                detected_us=now,
            )
        if self.book is not None:
            self.book.purge_expired(now)
        return newly_dead

    # -- origination (consumer side) ---------------------------------

    def originate_discovery(self, name: Name, nonce: bytes, now: int) -> list[Action]:
        self._own_nonces.add(nonce)
        pkt = Interest(
            name=name,
            nonce=nonce,
            hop_info=HopInfo(self.addr, None),
            lifetime_ms=self.config.interest_lifetime_ms,
        )
        self._trace("discovery_originated", name=str(name), nonce=nonce.hex())
        return [Broadcast(pkt)]

    def originate_interest(self, pkt: Interest) -> list[Action]:
        """Send an app-built routed Interest toward its route top."""
        if pkt.route is None or pkt.hop_info.remote != pkt.route.top:
            raise ValueError("originated content Interests must be source-routed")
        self._own_nonces.add(pkt.nonce)
        return [Send(pkt.route.top, pkt)]

    # -- Interest handling -------------------------------------------

    def on_interest(self, pkt: Interest, now: int) -> list[Action]:
        self.counters["interests_in"] += 1
        if pkt.nonce in self._own_nonces:
            # Our own flood came back around a loop.
            self.counters["dropped_own_nonce"] += 1
            return []
        if pkt.is_discovery:
            return self._on_discovery_interest(pkt, now)
        if pkt.hop_info.remote != self.addr:
            self.counters["dropped_malformed"] += 1
            return []
        return self._on_routed_interest(pkt, now)

    def _on_discovery_interest(self, pkt: Interest, now: int) -> list[Action]:
        sender = pkt.hop_info.local
        result = self.tables.pit.insert(
            pkt.name, sender, pkt.nonce, now, pkt.lifetime_ms * 1_000
        )
        if result is PitResult.DUPLICATE_NONCE:
            self.counters["dropped_duplicate"] += 1
            return []
        if self._serves_prefix(pkt.name) or self._source_for(pkt.name) is not None:
            # Authoritative: nothing upstream can outbid the origin.
            return self._answer_discovery(pkt.name, now)
        actions: list[Action] = []
        if self._can_serve(pkt.name):
            # A cache answer is an offer, not the origin; the search
            # keeps travelling so the consumer also learns a path that
            # can serve packets this cache never held.
            actions.extend(self._answer_discovery(pkt.name, now, consume=False))
        # AGGREGATED with a fresh nonce is a retransmitted discovery: the
        # first broadcast may have died on a partitioned link, so it is
        # forwarded again like any retransmitted Interest.
        if result in (PitResult.NEW, PitResult.AGGREGATED) and self._policy.allow(pkt.nonce):
            self.counters["rebroadcasts"] += 1
            out = Interest(
                name=pkt.name,
                nonce=pkt.nonce,
                hop_info=HopInfo(self.addr, None),
                lifetime_ms=pkt.lifetime_ms,
            )
            self._trace("rebroadcast", name=str(pkt.name), nonce=pkt.nonce.hex())
            actions.append(Broadcast(out))
            return actions
        self.counters["broadcast_suppressed"] += 1
        return actions

    def _answer_discovery(self, name: Name, now: int, consume: bool = True) -> list[Action]:
        """Producer (or caching relay) answers: one discovery Data per
        pending downstream, route seeded [downstream, self].  A cache
        answer passes consume=False so the PIT entry stays alive for the
        reply that may still come back from the true origin."""
        actions: list[Action] = []
        pit = self.tables.pit
        pending = pit.consume(name, now) if consume else pit.peek(name, now)
        for downstream, _nonce in pending:
            data = Data(
                name=name,
                hop_info=HopInfo(self.addr, downstream),
                route=RouteStack((downstream, self.addr)),
                payload=b"",
                price=self.config.forwarding_cost,
            )
            self.counters["discovery_answers"] += 1
            self._trace(
                "discovery_answered",
                name=str(name),
                to=str(downstream),
                price=self.config.forwarding_cost,
            )
            actions.append(Send(downstream, data))
        return actions

    def _can_serve(self, name: Name) -> bool:
        if self._source_for(name) is not None:
            return True
        if self.tables.cs.lookup(name) is not None:
            return True
        # Discovery names may omit the packet index; holding the first
        # packet is good enough to answer for the prefix.
        if name.chunk_index is None:
            return self.tables.cs.lookup(name.with_index(0)) is not None
        return False

    def _on_routed_interest(self, pkt: Interest, now: int) -> list[Action]:
        sender = pkt.hop_info.local
        after_me = pkt.route.pop()
        tag = (pkt.name, pkt.nonce)
        result = self.tables.pit.insert(
            pkt.name, sender, pkt.nonce, now, pkt.lifetime_ms * 1_000
        )
        if result is PitResult.DUPLICATE_NONCE:
            self.counters["dropped_duplicate"] += 1
            return []

        if self._can_serve(pkt.name):
            return self._serve_content(pkt, sender, tag, now)

        if result is PitResult.AGGREGATED:
            # Already fetching this name for someone else; this payment is
            # margin for work already paid for upstream.
            if not self._settle_incoming(pkt, sender, upstream=None, tag=tag, now=now):
                return [self._nack(sender, pkt.name, pkt.nonce, NackReason.INSUFFICIENT_PAYMENT)]
            self.counters["aggregated"] += 1
            return []

        # Strategy ladder.
        named_hop = after_me.top if after_me is not None else None
        named_alive = named_hop is not None and self.tables.liveness.is_alive(named_hop, now)
        if named_alive:
            mode, next_hop, out_route = StrategyMode.SOURCE_ROUTED, named_hop, after_me
        else:
            exclude = (sender,) if named_hop is None else (sender, named_hop)
            fallback = self.tables.fib.lookup_min_cost(pkt.name, exclude=exclude)
            if fallback is not None:
                hop, _price = fallback
                mode, next_hop, out_route = StrategyMode.MIN_COST, hop, RouteStack((hop,))
            else:
                return self._rediscover_or_refuse(pkt, sender, named_hop, now)
        self._trace(
            "decision",
            name=str(pkt.name),
            mode=mode.value,
            next_hop=str(next_hop),
            named_hop=None if named_hop is None else str(named_hop),
            named_hop_alive=named_alive,
        )
        self.counters[f"mode_{mode.value.replace('-', '_')}"] += 1

        payment = None
        if self.config.payment_mode == "hopbyhop":
            try:
                kept, payment = relay_process_payment(
                    self.book,
                    self.addr,
                    sender,
                    pkt.payment,
                    self.config.forwarding_cost,
                    next_hop,
                    tag,
                    now,
                    pkt.lifetime_ms * 1_000,
                )
            except PaymentError as err:
                self.counters["payment_rejects"] += 1
                self._trace("payment_rejected", name=str(pkt.name), reason=err.reason)
                return [self._nack(sender, pkt.name, pkt.nonce, NackReason.INSUFFICIENT_PAYMENT)]
            self.counters["tokens_kept"] += kept

        out = Interest(
            name=pkt.name,
            nonce=pkt.nonce,
            hop_info=HopInfo(self.addr, next_hop),
            route=out_route,
            payment=payment,
            lifetime_ms=pkt.lifetime_ms,
        )
        return [Send(next_hop, out)]

    def _rediscover_or_refuse(
        self, pkt: Interest, sender: NodeAddr, named_hop: NodeAddr | None, now: int
    ) -> list[Action]:
        self._trace(
            "decision",
            name=str(pkt.name),
            mode=StrategyMode.REDISCOVERY.value,
            next_hop=None,
            named_hop=None if named_hop is None else str(named_hop),
            named_hop_alive=False,
        )
        if self._rediscovery.request(pkt.name):
            self.counters["mode_rediscovery"] += 1
            out = Interest(
                name=pkt.name,
                nonce=pkt.nonce,  # keep the nonce: replies correlate upstream and back
                hop_info=HopInfo(self.addr, None),
                lifetime_ms=pkt.lifetime_ms,
            )
            self._trace("rediscovery", name=str(pkt.name), nonce=pkt.nonce.hex())
            return [Broadcast(out)]
        self.counters["rediscovery_refused"] += 1
        return [self._nack(sender, pkt.name, pkt.nonce, NackReason.NO_ROUTE)]

    def _settle_incoming(
        self,
        pkt: Interest,
        sender: NodeAddr,
        upstream: NodeAddr | None,
        tag: tuple[Name, bytes],
        now: int,
    ) -> bool:
        """Commit the payment on an Interest we will answer or absorb
        ourselves.  True on success (including payall mode, where
        Interests carry no payment to settle)."""
        if self.config.payment_mode != "hopbyhop":
            return True
        try:
            kept, _ = relay_process_payment(
                self.book,
                self.addr,
                sender,
                pkt.payment,
                self.config.forwarding_cost,
                upstream,
                tag,
                now,
                pkt.lifetime_ms * 1_000,
            )
        except PaymentError as err:
            self.counters["payment_rejects"] += 1
            self._trace("payment_rejected", name=str(pkt.name), reason=err.reason)
            return False
        self.counters["tokens_kept"] += kept
        return True

    def _serve_content(
        self, pkt: Interest, sender: NodeAddr, tag: tuple[Name, bytes], now: int
    ) -> list[Action]:
        # A cache or producer hit keeps the full remaining payment; no
        # upstream does any work for it.
        if not self._settle_incoming(pkt, sender, upstream=None, tag=tag, now=now):
            return [self._nack(sender, pkt.name, pkt.nonce, NackReason.INSUFFICIENT_PAYMENT)]
        actions: list[Action] = []
        for downstream, _nonce in self.tables.pit.consume(pkt.name, now):
            data = self._build_content(pkt.name, downstream)
            if data is None:
                actions.append(self._nack(downstream, pkt.name, pkt.nonce, NackReason.NO_ROUTE))
                continue
            self.counters["data_served"] += 1
            actions.append(Send(downstream, data))
        return actions

    def _build_content(self, name: Name, downstream: NodeAddr) -> Data | None:
        source = self._source_for(name)
        if source is not None:
            payload = source.payload_fn(name.chunk_index)
            proof = self._producer_proof(source, name.chunk_index)
        else:
            payload = self.tables.cs.lookup(name)
            if payload is None:
                return None
            proof = self._cached_proof(name)
        return Data(
            name=name,
            hop_info=HopInfo(self.addr, downstream),
            payload=payload,
            proof=proof,
        )

    def _producer_proof(self, source: ContentSource, index: int):
        first, count = source.chunk_span(index)
        if index != first + count - 1:
            return None  # proof rides only the chunk's final packet
        key = (source.prefix.components, first)
        chunk = self._chunk_cache.get(key)
        if chunk is None:
            payload = b"".join(source.payload_fn(i) for i in range(first, first + count))
            chunk = make_chunk(self.key, source.prefix, first, payload, source.packet_size)
            self._chunk_cache[key] = chunk
            self.counters["signatures_produced"] += 1
            self._trace("chunk_signed", prefix=str(source.prefix), first=first, count=count)
        return chunk.proof()

    def _cached_proof(self, name: Name):
        for (prefix_comps, first), chunk in self._chunk_cache.items():
            if (
                prefix_comps == name.prefix.components
                and name.chunk_index == first + chunk.descriptor.count - 1
            ):
                return chunk.proof()
        return None

    # -- Data handling -----------------------------------------------

    def on_data(self, pkt: Data, now: int) -> list[Action]:
        self.counters["data_in"] += 1
        if pkt.hop_info.remote != self.addr:
            self.counters["dropped_malformed"] += 1
            return []
        if pkt.is_discovery:
            return self._on_discovery_data(pkt, now)
        return self._on_content_data(pkt, now)

    def _on_discovery_data(self, pkt: Data, now: int) -> list[Action]:
        sender = pkt.hop_info.local
        # Price observation first, unconditionally: even a misaddressed
        # reply is a genuine price signal from this neighbor.
        self.tables.fib.update(pkt.name, sender, pkt.price, now)
        self._trace(
            "fib_update", prefix=str(pkt.name.prefix), hop=str(sender), price=pkt.price
        )
        if pkt.route.top != self.addr:
            self.counters["dropped_malformed"] += 1
            return []
        after_me = pkt.route.pop()
        if after_me is None:
            # A route of just ourselves records no path back to anyone.
            self.counters["dropped_malformed"] += 1
            return []
        # after_me runs next-hop-first to producer-last: exactly the stack
        # a content Interest from here must carry.
        consumed = self.hooks.path_discovered(pkt.name, after_me, pkt.price)
        if consumed:
            self._trace("path_recorded", name=str(pkt.name), price=pkt.price)
        downstreams = self.tables.pit.consume(pkt.name, now)
        seen: set[NodeAddr] = set()
        actions: list[Action] = []
        for downstream, _nonce in downstreams:
            if downstream in seen:
                continue
            seen.add(downstream)
            if downstream in pkt.route.hops:
                # The recorded path already visits that neighbor; handing
                # the reply back would advertise a looping route.
                self.counters["reply_loop_suppressed"] += 1
                continue
            out = Data(
                name=pkt.name,
                hop_info=HopInfo(self.addr, downstream),
                route=pkt.route.push(downstream),
                payload=b"",
                price=pkt.price + self.config.forwarding_cost,
            )
            self.counters["discovery_forwarded"] += 1
            actions.append(Send(downstream, out))
        if not consumed and not actions:
            self.counters["dropped_unsolicited"] += 1
        return actions

    def _on_content_data(self, pkt: Data, now: int) -> list[Action]:
        if (
            self.config.relay_mode == "storeforward"
            and pkt.name.chunk_index is not None
            and pkt.name in self.tables.pit
        ):
            return self._store_and_forward(pkt, now)
        return self._relay_content(pkt, now)

    def _relay_content(self, pkt: Data, now: int) -> list[Action]:
        downstreams = self.tables.pit.consume(pkt.name, now)
        if not downstreams:
            if self.hooks.deliver_data(pkt):
                self.tables.cs.insert(pkt.name, pkt.payload)
                return []
            self.counters["dropped_unsolicited"] += 1
            return []
        outgoing = pkt
        if pkt.proof is not None:
            outgoing = self._extend_proof(pkt, now)
        self.tables.cs.insert(pkt.name, pkt.payload)
        actions: list[Action] = []
        seen: set[NodeAddr] = set()
        for downstream, _nonce in downstreams:
            if downstream in seen:
                continue
            seen.add(downstream)
            actions.append(
                Send(
                    downstream,
                    Data(
                        name=outgoing.name,
                        hop_info=HopInfo(self.addr, downstream),
                        payload=outgoing.payload,
                        proof=outgoing.proof,
                    ),
                )
            )
            self.counters["data_forwarded"] += 1
        return actions

    def _extend_proof(self, pkt: Data, now: int) -> Data:
        """Cut-through signing: pull the chunk's earlier packets from the
        content store, reassemble, and append our signature.  If the
        chunk cannot be reassembled or fails validation the proof is
        forwarded untouched (the consumer will notice the gap)."""
        proof = pkt.proof
        prefix = pkt.name.prefix
        descriptor = ChunkDescriptor(prefix, proof.first, proof.count, self._packet_size_of(pkt))
        try:
            assembly = ChunkAssembly(descriptor)
            for index in descriptor.indices:
                if index == pkt.name.chunk_index:
                    assembly.add(index, pkt.payload, now)
                    continue
                cached = self.tables.cs.lookup(prefix.with_index(index))
                if cached is None:
                    raise ProofError(f"packet {index} not in content store")
                assembly.add(index, cached, now)
            chunk = SignedChunk(descriptor, assembly.payload(), proof.digest, proof.chain)
            signed = sign_chunk(self.key, chunk)
        except ProofError as err:
            self.counters["proof_forwarded_unsigned"] += 1
            self._trace("proof_pass_through", name=str(pkt.name), reason=str(err))
            return pkt
        self.counters["signatures_produced"] += 1
        self._trace(
            "chunk_signed", prefix=str(prefix), first=proof.first, count=proof.count
        )
        # Remember the extended chain so a later cache hit on this chunk
        # can hand out the same proof.
        self._chunk_cache[(prefix.components, proof.first)] = signed
        return Data(name=pkt.name, hop_info=pkt.hop_info, payload=pkt.payload, proof=signed.proof())

    def _packet_size_of(self, pkt: Data) -> int:
        # The proof packet may be the chunk's short tail; any earlier
        # cached packet of the chunk tells the true size.
        if pkt.proof.count == 1:
            return len(pkt.payload)
        cached = self.tables.cs.lookup(pkt.name.prefix.with_index(pkt.proof.first))
        if cached is not None:
            return len(cached)
        return len(pkt.payload)

    def _store_and_forward(self, pkt: Data, now: int) -> list[Action]:
        """Hold content packets until their chunk's proof packet arrives,
        then validate and flush the whole chunk in order."""
        key = pkt.name.prefix.components
        buffer = self._sf_buffers.setdefault(key, {})
        buffer[pkt.name.chunk_index] = pkt
        if pkt.proof is None:
            self.counters["sf_buffered"] += 1
            return []
        proof = pkt.proof
        wanted = range(proof.first, proof.first + proof.count)
        if any(i not in buffer for i in wanted):
            # Chunk has holes; keep waiting (upstream retransmits will
            # carry the proof again on the final packet).
            self.counters["sf_buffered"] += 1
            return []
        actions: list[Action] = []
        self.counters["sf_flushes"] += 1
        for index in wanted:
            actions.extend(self._relay_content(buffer.pop(index), now))
        return actions

    # -- Nack handling -----------------------------------------------

    def on_nack(self, pkt: Nack, now: int) -> list[Action]:
        # Nacks carry no hop header; link-level delivery already
        # guaranteed this node is the addressee.
        self.counters["nacks_in"] += 1
        if self.book is not None:
            cancelled = self.book.cancel_tag((pkt.name, pkt.nonce))
            if cancelled:
                self._trace(
                    "offer_cancelled", name=str(pkt.name), nonce=pkt.nonce.hex(), count=cancelled
                )
        downstreams = self.tables.pit.consume(pkt.name, now)
        if not downstreams:
            if not self.hooks.deliver_nack(pkt):
                self.counters["dropped_unsolicited"] += 1
            return []
        actions: list[Action] = []
        for downstream, dnonce in downstreams:
            actions.append(Send(downstream, Nack(name=pkt.name, nonce=dnonce, reason=pkt.reason)))
            self.counters["nacks_forwarded"] += 1
        return actions

    # -- dispatch ----------------------------------------------------

    def on_packet(self, pkt: Packet, now: int) -> list[Action]:
        if isinstance(pkt, Interest):
            return self.on_interest(pkt, now)
        if isinstance(pkt, Data):
            return self.on_data(pkt, now)
        if isinstance(pkt, Nack):
            return self.on_nack(pkt, now)
        raise TypeError(f"not a packet: {type(pkt).__name__}")
