"""Forwarding engine behavior: discovery flood and reply, the strategy
ladder, payments riding Interests, and proof handling on content Data."""

import random

from tollroute.forwarding import (
    Broadcast,
    ContentSource,
    EngineHooks,
    ForwardingEngine,
    NodeConfig,
    OncePerNonce,
    RediscoveryScheduler,
    Send,
)
from tollroute.keys import KeyPair
from tollroute.payment import ChannelBook, Ledger, channel_id_for
from tollroute.proof import ChunkAssembly, ChunkDescriptor, SignedChunk, verify_chain
from tollroute.tables import NodeTables, TableConfig
from tollroute.wire import (
    Data,
    HopInfo,
    Interest,
    Nack,
    NackReason,
    Name,
    NodeAddr,
    RouteStack,
)

A = NodeAddr.parse("00-0a-00-00-00-01")  # consumer
B = NodeAddr.parse("00-0a-00-00-00-02")  # relay, cost 3
C = NodeAddr.parse("00-0a-00-00-00-03")  # producer, cost 12
D = NodeAddr.parse("00-0a-00-00-00-04")  # spare relay
PREFIX = Name((b"video", b"clip"))
NONCE = b"\x11" * 8


def interest(name, nonce, local, remote=None, route=None, payment=None):
    return Interest(
        name=name,
        nonce=nonce,
        hop_info=HopInfo(local, remote),
        lifetime_ms=4_000,
        route=route,
        payment=payment,
    )


class Capture:
    """Hook sink recording app-facing callbacks."""

    def __init__(self):
        self.paths = []
        self.data = []
        self.nacks = []
        self.events = []
        self.expect_paths = False
        self.expect_data = False

    def hooks(self):
        return EngineHooks(
            trace=self.events.append,
            path_discovered=self._path,
            deliver_data=self._data,
            deliver_nack=self._nack,
        )

    def _path(self, name, route, price):
        if self.expect_paths:
            self.paths.append((name, route, price))
            return True
        return False

    def _data(self, pkt):
        if self.expect_data:
            self.data.append(pkt)
            return True
        return False

    def _nack(self, pkt):
        self.nacks.append(pkt)
        return True


def make_node(addr, cost=0, book=None, **cfg):
    tables = NodeTables(TableConfig())
    key = KeyPair.from_seed(addr, b"fwd-tests")
    cap = Capture()
    engine = ForwardingEngine(
        NodeConfig(addr=addr, forwarding_cost=cost, **cfg), tables, key, book, cap.hooks()
    )
    if book is not None:
        book.register_key(key)
    return engine, cap


def payment_fabric(*addrs, balance=1_000):
    ledger = Ledger()
    book = ChannelBook(ledger, {})
    for addr in addrs:
        ledger.mint(addr, balance)
    return ledger, book


def content_source(total=4, size=100, ppc=4):
    def payload_fn(i):
        return bytes([i]) * (size if i < total - 1 else size // 2)

    return ContentSource(
        prefix=PREFIX,
        packet_size=size,
        packets_per_chunk=ppc,
        total_packets=total,
        payload_fn=payload_fn,
    )


class TestDiscovery:
    def test_flood_answer_and_price_accumulation(self):
        """Consumer floods, relay rebroadcasts once, producer answers, and
        the reply retraces with the route growing and the price summing."""
        ledger, book = payment_fabric(A, B, C)
        consumer, cap_a = make_node(A, 0, book)
        relay, _ = make_node(B, 3, book)
        producer, _ = make_node(C, 12, book)
        producer.register_source(content_source())
        cap_a.expect_paths = True

        (bcast,) = consumer.originate_discovery(PREFIX, NONCE, now=0)
        assert isinstance(bcast, Broadcast)
        assert bcast.packet.is_discovery and bcast.packet.payment is None

        (rebcast,) = relay.on_interest(bcast.packet, now=5)
        assert isinstance(rebcast, Broadcast)
        assert rebcast.packet.nonce == NONCE
        assert rebcast.packet.hop_info.local == B

        (answer,) = producer.on_interest(rebcast.packet, now=10)
        assert isinstance(answer, Send) and answer.to == B
        assert answer.packet.route == RouteStack((B, C))
        assert answer.packet.price == 12 and answer.packet.payload == b""

        (reply,) = relay.on_data(answer.packet, now=15)
        assert reply.to == A
        assert reply.packet.route == RouteStack((A, B, C))
        assert reply.packet.price == 15

        assert consumer.on_data(reply.packet, now=20) == []
        (name, route, price) = cap_a.paths[0]
        assert (name, price) == (PREFIX, 15)
        # The recorded route is ready to ride a content Interest: next hop
        # first, producer last.
        assert route == RouteStack((B, C))
        # Both relay and consumer learned prices from the reply.
        assert relay.tables.fib.min_cost_hop(PREFIX) == (C, 12)
        assert consumer.tables.fib.min_cost_hop(PREFIX) == (B, 15)

    def test_duplicate_nonce_dropped_and_aggregation_suppresses_rebroadcast(self):
        relay, _ = make_node(B, 3)
        first = interest(PREFIX, NONCE, A)
        assert len(relay.on_interest(first, now=0)) == 1
        # Same copy again: silent drop.
        assert relay.on_interest(first, now=1) == []
        assert relay.counters["dropped_duplicate"] == 1
        # Same nonce via another neighbor: aggregated, budget already spent.
        assert relay.on_interest(interest(PREFIX, NONCE, D), now=2) == []
        assert relay.counters["broadcast_suppressed"] == 1

    def test_producer_answers_every_aggregated_downstream(self):
        producer, _ = make_node(C, 12)
        producer.register_source(content_source())
        producer.on_interest(interest(PREFIX, b"\x01" * 8, A), 0)
        # First arrival answered immediately; a later copy from another
        # neighbor gets its own answer.
        out = producer.on_interest(interest(PREFIX, b"\x02" * 8, B), 1)
        assert [a.to for a in out] == [B]
        assert all(a.packet.route == RouteStack((a.to, C)) for a in out)

    def test_own_flood_echo_dropped(self):
        consumer, _ = make_node(A, 0)
        consumer.originate_discovery(PREFIX, NONCE, now=0)
        assert consumer.on_interest(interest(PREFIX, NONCE, B), now=1) == []
        assert consumer.counters["dropped_own_nonce"] == 1

    def test_relay_forwards_discovery_reply_to_each_downstream_once(self):
        relay, _ = make_node(B, 3)
        for nonce, neighbor in ((b"\x01" * 8, A), (b"\x02" * 8, A), (b"\x03" * 8, D)):
            relay.on_interest(interest(PREFIX, nonce, neighbor), 0)
        answer = Data(
            name=PREFIX,
            hop_info=HopInfo(C, B),
            route=RouteStack((B, C)),
            payload=b"",
            price=12,
        )
        out = relay.on_data(answer, now=5)
        # A appears twice in the PIT but receives a single copy.
        assert sorted(str(a.to) for a in out) == sorted([str(A), str(D)])


class TestStrategyLadder:
    def _routed(self, index=0, nonce=NONCE):
        return interest(PREFIX.with_index(index), nonce, A, remote=B, route=RouteStack((B, C)))

    def test_source_routed_when_named_hop_alive(self):
        relay, _ = make_node(B, 3, payment_mode="payall")
        relay.tables.keepalive_heard(C, 0)
        (out,) = relay.on_interest(self._routed(), now=10)
        assert out.to == C
        assert out.packet.route == RouteStack((C,))
        assert relay.counters["mode_source_routed"] == 1

    def test_min_cost_takes_over_when_named_hop_dead(self):
        relay, cap = make_node(B, 3, payment_mode="payall")
        relay.tables.keepalive_heard(C, 0)
        relay.tables.keepalive_heard(D, 0)
        relay.tables.fib.update(PREFIX, C, 12, 0)
        relay.tables.fib.update(PREFIX, D, 14, 0)
        relay.keepalive_tick(400_000)  # everyone quiet too long
        relay.tables.keepalive_heard(D, 400_000)  # D comes back
        (out,) = relay.on_interest(self._routed(), now=400_001)
        assert out.to == D
        assert out.packet.route == RouteStack((D,))
        assert relay.counters["mode_min_cost"] == 1
        decision = next(e for e in cap.events if e["event"] == "decision")
        assert decision["named_hop_alive"] is False
        assert decision["mode"] == "min-cost"

    def test_min_cost_never_returns_to_sender(self):
        relay, _ = make_node(B, 3, payment_mode="payall")
        # Only known hop for the prefix is the sender itself; named hop dead.
        relay.tables.fib.update(PREFIX, A, 2, 0)
        relay.tables.keepalive_heard(C, 0)
        relay.keepalive_tick(800_000)
        out = relay.on_interest(self._routed(index=1, nonce=b"\x22" * 8), now=800_001)
        # No usable hop: falls through to rediscovery, not back to A.
        assert isinstance(out[0], Broadcast)

    def test_rediscovery_keeps_name_and_nonce_strips_route_and_payment(self):
        relay, _ = make_node(B, 3, payment_mode="payall")
        relay.tables.keepalive_heard(C, 0)
        relay.keepalive_tick(400_000)
        (out,) = relay.on_interest(self._routed(), now=400_001)
        assert isinstance(out, Broadcast)
        assert out.packet.name == PREFIX.with_index(0)
        assert out.packet.nonce == NONCE
        assert out.packet.route is None and out.packet.payment is None
        assert relay.counters["mode_rediscovery"] == 1

    def test_round_robin_denial_nacks_no_route(self):
        relay, _ = make_node(B, 3, payment_mode="payall")
        relay.tables.keepalive_heard(C, 0)
        relay.keepalive_tick(400_000)
        f1a = interest(Name((b"f1",), chunk_index=0), b"\x01" * 8, A, B, RouteStack((B, C)))
        f1b = interest(Name((b"f1",), chunk_index=1), b"\x03" * 8, A, B, RouteStack((B, C)))
        f2 = interest(Name((b"f2",), chunk_index=0), b"\x02" * 8, A, B, RouteStack((B, C)))
        assert isinstance(relay.on_interest(f1a, 400_001)[0], Broadcast)
        assert isinstance(relay.on_interest(f2, 400_002)[0], Broadcast)
        # f2 went last; an immediate repeat for f2's flow yields, but f1
        # took turns properly so it broadcasts again.
        assert isinstance(relay.on_interest(f1b, 400_003)[0], Broadcast)
        f2b = interest(Name((b"f2",), chunk_index=1), b"\x04" * 8, A, B, RouteStack((B, C)))
        f2c = interest(Name((b"f2",), chunk_index=2), b"\x05" * 8, A, B, RouteStack((B, C)))
        assert isinstance(relay.on_interest(f2b, 400_004)[0], Broadcast)
        (nack,) = relay.on_interest(f2c, 400_005)
        assert isinstance(nack.packet, Nack)
        assert nack.packet.reason is NackReason.NO_ROUTE
        assert nack.packet.nonce == b"\x05" * 8

    def test_malformed_remote_dropped(self):
        relay, _ = make_node(B, 3, payment_mode="payall")
        pkt = interest(PREFIX.with_index(0), NONCE, A, remote=D, route=RouteStack((D, C)))
        assert relay.on_interest(pkt, now=0) == []
        assert relay.counters["dropped_malformed"] == 1


class TestScheduler:
    def test_single_flow_always_granted(self):
        sched = RediscoveryScheduler()
        assert all(sched.request(Name((b"only",))) for _ in range(5))

    def test_two_flows_taking_turns_are_always_granted(self):
        sched = RediscoveryScheduler()
        f1, f2 = Name((b"f1",)), Name((b"f2",))
        assert [sched.request(f) for f in (f1, f2, f1, f2, f1, f2)] == [True] * 6

    def test_greedy_flow_yields_every_other_turn(self):
        sched = RediscoveryScheduler()
        f1, f2 = Name((b"f1",)), Name((b"f2",))
        assert sched.request(f1)
        assert sched.request(f2)
        assert [sched.request(f2) for _ in range(4)] == [False, True, False, True]

    def test_broadcast_budget_is_one_per_nonce(self):
        policy = OncePerNonce()
        assert policy.allow(b"n1")
        assert not policy.allow(b"n1")
        assert policy.allow(b"n2")


class TestPaymentsOnPath:
    def test_relay_keeps_cost_and_forwards_remainder(self):
        ledger, book = payment_fabric(A, B, C)
        make_node(A, 0, book)
        relay, _ = make_node(B, 3, book)
        producer, _ = make_node(C, 12, book)
        producer.register_source(content_source())
        book.open(A, B, 200, 200)
        book.open(B, C, 200, 200)
        relay.tables.keepalive_heard(C, 0)

        name = PREFIX.with_index(0)
        offer = book.make_offer(A, channel_id_for(A, B), 15, (name, NONCE), now=0)
        pkt = interest(name, NONCE, A, remote=B, route=RouteStack((B, C)), payment=offer)
        (to_producer,) = relay.on_interest(pkt, now=1)
        assert to_producer.to == C
        assert to_producer.packet.payment.amount == 12
        (data,) = producer.on_interest(to_producer.packet, now=2)
        assert isinstance(data.packet, Data)
        # Committed balances: A paid 15 to B, B paid 12 on to C.
        assert book.state(channel_id_for(A, B)).balance_of(B) == 215
        assert book.state(channel_id_for(B, C)).balance_of(C) == 212
        assert book.settle_all() == 2
        assert ledger.balance(A) == 1_000 - 15
        assert ledger.balance(B) == 1_000 + 3
        assert ledger.balance(C) == 1_000 + 12
        assert ledger.conserved()

    def test_underpayment_rejected_with_nack_and_no_commit(self):
        ledger, book = payment_fabric(A, B, C)
        make_node(A, 0, book)
        relay, _ = make_node(B, 3, book)
        make_node(C, 12, book)
        book.open(A, B, 200, 200)
        book.open(B, C, 200, 200)
        relay.tables.keepalive_heard(C, 0)
        name = PREFIX.with_index(0)
        offer = book.make_offer(A, channel_id_for(A, B), 2, (name, NONCE), now=0)
        pkt = interest(name, NONCE, A, remote=B, route=RouteStack((B, C)), payment=offer)
        (nack,) = relay.on_interest(pkt, now=1)
        assert isinstance(nack.packet, Nack)
        assert nack.packet.reason is NackReason.INSUFFICIENT_PAYMENT
        assert book.state(channel_id_for(A, B)).sequence == 0
        assert relay.counters["payment_rejects"] == 1

    def test_aggregated_interest_pays_margin_without_forwarding(self):
        ledger, book = payment_fabric(A, B, D)
        relay, _ = make_node(B, 3, book)
        make_node(D, 0, book)
        book.open(A, B, 200, 200)
        book.open(D, B, 200, 200)
        relay.tables.keepalive_heard(C, 0)
        name = PREFIX.with_index(0)
        # First consumer's Interest is already pending (simulate by direct
        # PIT insert, as if forwarded upstream earlier).
        relay.tables.pit.insert(name, A, b"\x01" * 8, 0)
        offer = book.make_offer(D, channel_id_for(D, B), 15, (name, NONCE), now=0)
        pkt = interest(name, NONCE, D, remote=B, route=RouteStack((B, C)), payment=offer)
        assert relay.on_interest(pkt, now=1) == []
        assert relay.counters["aggregated"] == 1
        assert book.state(channel_id_for(D, B)).balance_of(B) == 215

    def test_nack_cancels_pending_offer(self):
        ledger, book = payment_fabric(A, B)
        consumer, cap = make_node(A, 0, book)
        make_node(B, 3, book)
        book.open(A, B, 200, 200)
        name = PREFIX.with_index(0)
        book.make_offer(A, channel_id_for(A, B), 15, (name, NONCE), now=0)
        assert book.pending_count() == 1
        consumer.on_nack(Nack(name=name, nonce=NONCE, reason=NackReason.NO_ROUTE), now=5)
        assert book.pending_count() == 0
        assert cap.nacks and cap.nacks[0].reason is NackReason.NO_ROUTE


class TestContentPlane:
    def _chain(self, relay_mode="cutthrough"):
        producer, _ = make_node(C, 12, payment_mode="payall")
        relay, _ = make_node(B, 3, payment_mode="payall", relay_mode=relay_mode)
        consumer, cap = make_node(A, 0, payment_mode="payall")
        cap.expect_data = True
        producer.register_source(content_source(total=4, size=100, ppc=4))
        relay.tables.keepalive_heard(C, 0)
        return producer, relay, consumer, cap

    def _fetch(self, producer, relay, index, nonce):
        name = PREFIX.with_index(index)
        pkt = interest(name, nonce, A, remote=B, route=RouteStack((B, C)))
        (fwd,) = relay.on_interest(pkt, now=index * 10)
        (data,) = producer.on_interest(fwd.packet, now=index * 10 + 1)
        return data.packet

    def test_proof_rides_only_group_final_packet_and_relay_extends(self):
        producer, relay, consumer, cap = self._chain()
        for i in range(4):
            from_producer = self._fetch(producer, relay, i, bytes([i + 1]) * 8)
            if i < 3:
                assert from_producer.proof is None
            (to_consumer,) = relay.on_data(from_producer, now=i * 10 + 2)
            assert consumer.on_data(to_consumer.packet, now=i * 10 + 3) == []
        assert producer.counters["signatures_produced"] == 1
        assert relay.counters["signatures_produced"] == 1
        final = cap.data[-1]
        assert final.proof is not None
        assert [h.signer for h in final.proof.chain] == [C, B]
        # Consumer-side verification over its own received payloads.
        directory = {C: producer.key.public, B: relay.key.public}
        descriptor = ChunkDescriptor(PREFIX, 0, 4, 100)
        assembly = ChunkAssembly(descriptor)
        for pkt in cap.data:
            assembly.add(pkt.name.chunk_index, pkt.payload)
        chunk = SignedChunk(descriptor, assembly.payload(), final.proof.digest, final.proof.chain)
        assert verify_chain(chunk, (C, B), directory).valid

    def test_relay_missing_packet_forwards_proof_untouched(self):
        producer, relay, consumer, cap = self._chain()
        # Only the final packet ever transits the relay.
        from_producer = self._fetch(producer, relay, 3, b"\x09" * 8)
        (out,) = relay.on_data(from_producer, now=100)
        assert out.packet.proof is not None
        assert [h.signer for h in out.packet.proof.chain] == [C]
        assert relay.counters["proof_forwarded_unsigned"] == 1

    def test_store_and_forward_buffers_until_proof_then_flushes_in_order(self):
        producer, relay, consumer, cap = self._chain(relay_mode="storeforward")
        packets = [self._fetch(producer, relay, i, bytes([i + 1]) * 8) for i in range(4)]
        # Deliver out of order; nothing moves until the proof packet.
        assert relay.on_data(packets[2], now=50) == []
        assert relay.on_data(packets[0], now=51) == []
        assert relay.on_data(packets[1], now=52) == []
        assert relay.counters["sf_buffered"] == 3
        outs = relay.on_data(packets[3], now=53)
        assert [o.packet.name.chunk_index for o in outs] == [0, 1, 2, 3]
        assert outs[-1].packet.proof is not None
        assert [h.signer for h in outs[-1].packet.proof.chain] == [C, B]
        assert relay.counters["sf_flushes"] == 1

    def test_content_data_is_never_broadcast(self):
        producer, relay, consumer, cap = self._chain()
        for i in range(4):
            pkt = self._fetch(producer, relay, i, bytes([i + 1]) * 8)
            for action in relay.on_data(pkt, now=i * 10 + 2):
                assert isinstance(action, Send)
                assert not action.packet.hop_info.remote.is_broadcast

    def test_unsolicited_content_dropped(self):
        relay, _ = make_node(B, 3, payment_mode="payall")
        stray = Data(name=PREFIX.with_index(0), hop_info=HopInfo(C, B), payload=b"x")
        assert relay.on_data(stray, now=0) == []
        assert relay.counters["dropped_unsolicited"] == 1

    def test_cache_hit_serves_locally_with_cached_proof(self):
        producer, relay, consumer, cap = self._chain()
        for i in range(4):
            pkt = self._fetch(producer, relay, i, bytes([i + 1]) * 8)
            relay.on_data(pkt, now=i * 10 + 2)
        # A fresh consumer asks the relay directly; the relay serves from
        # its store, reusing the extended proof on the final packet.
        name = PREFIX.with_index(3)
        pkt = interest(name, b"\x77" * 8, D, remote=B, route=RouteStack((B, C)))
        (served,) = relay.on_interest(pkt, now=200)
        assert isinstance(served.packet, Data)
        assert served.to == D
        assert served.packet.proof is not None
        assert [h.signer for h in served.packet.proof.chain] == [C, B]
        assert relay.counters["data_served"] == 1

    def test_nack_propagates_to_all_downstreams(self):
        relay, _ = make_node(B, 3, payment_mode="payall")
        name = PREFIX.with_index(0)
        relay.tables.pit.insert(name, A, b"\x01" * 8, 0)
        relay.tables.pit.insert(name, D, b"\x02" * 8, 0)
        outs = relay.on_nack(Nack(name=name, nonce=b"\x09" * 8, reason=NackReason.NO_ROUTE), now=5)
        assert sorted(str(o.to) for o in outs) == sorted([str(A), str(D)])
        # Each downstream gets its own nonce back.
        assert {o.packet.nonce for o in outs} == {b"\x01" * 8, b"\x02" * 8}
        assert name not in relay.tables.pit


class TestPriceAdditivity:
    def test_price_sums_over_longer_chains(self):
        rng = random.Random(5)
        for trial in range(10):
            hops = rng.randrange(2, 6)
            costs = [rng.randrange(1, 20) for _ in range(hops)]
            addrs = [NodeAddr(bytes([0, 0x77, trial, 0, 0, i + 1])) for i in range(hops + 1)]
            consumer_addr, relays = addrs[0], addrs[1:]
            engines = []
            for addr, cost in zip(relays, costs):
                eng, _ = make_node(addr, cost, payment_mode="payall")
                engines.append(eng)
            producer = engines[-1]
            producer.register_source(
                ContentSource(PREFIX, 100, 4, 4, lambda i: bytes([i]) * 100)
            )
            # Flood consumer -> chain -> producer.
            pkt = interest(PREFIX, bytes([trial + 1]) * 8, consumer_addr)
            for eng in engines[:-1]:
                (action,) = eng.on_interest(pkt, now=0)
                pkt = action.packet
            (reply,) = producer.on_interest(pkt, now=1)
            data = reply.packet
            for eng in reversed(engines[:-1]):
                (action,) = eng.on_data(data, now=2)
                data = action.packet
            assert data.price == sum(costs)
            assert data.route.hops[0] == consumer_addr
            assert data.route.hops[-1] == relays[-1]
