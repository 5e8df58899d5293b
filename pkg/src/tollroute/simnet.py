"""Deterministic discrete-event simulator for the toll-route protocol.

One `Simulator` owns a topology of protocol nodes joined by scripted
point-to-point links, a shared broadcast medium per node neighborhood,
and the consumer-side flow logic that drives discovery, paced fetching,
retransmission, path fallback, and chunk verification.

Determinism rules, enforced throughout:

* time is integer microseconds; floats never touch the clock
* every event carries a (time, seq) key, seq assigned at scheduling
* all randomness flows from per-identity generators derived by hashing
  the scenario seed, never from shared or global state
* every packet crosses the wire codec on each hop, so a run exercises
  encode/decode exactly as a deployment would

Run twice with the same scenario, the simulator produces byte-identical
traces, reports, and ledger logs.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field

from .forwarding import (
    Broadcast,
    ContentSource,
    EngineHooks,
    ForwardingEngine,
    NodeConfig,
    Send,
)
from .keys import KeyPair
from .payment import (
    ChannelBook,
    Ledger,
    PaymentError,
    channel_id_for,
    consumer_pay_all,
)
from .proof import ChunkDescriptor, SignedChunk, verify_chain
from .scenario import FetchAction, LinkAction, Scenario, ScenarioError, ServeSpec
from .tables import NodeTables, TableConfig
from .wire import (
    BROADCAST,
    Data,
    HopInfo,
    Interest,
    Nack,
    Name,
    NodeAddr,
    RouteStack,
    decode_packet,
    encode_packet,
)

MS = 1_000  # microseconds per millisecond


def content_bytes(prefix: Name, index: int, size: int) -> bytes:
    """Deterministic payload for one content packet, reproducible on any
    platform from the name alone."""
    out = bytearray()
    counter = 0
    while len(out) < size:
        block = hashlib.sha256(f"{prefix}|{index}|{counter}".encode()).digest()
        out.extend(block)
        counter += 1
    return bytes(out[:size])


def derive_rng(seed: int, *parts: str) -> random.Random:
    material = hashlib.sha256(("|".join([str(seed), *parts])).encode()).digest()
    return random.Random(int.from_bytes(material[:8], "big"))


@dataclass
class Link:
    a: NodeAddr
    b: NodeAddr
    latency_us: int
    drop_rate: float
    up: bool
    rng: random.Random

    def other(self, addr: NodeAddr) -> NodeAddr:
        return self.b if addr == self.a else self.a

    def drops(self) -> bool:
        return self.drop_rate > 0.0 and self.rng.random() < self.drop_rate


@dataclass
class Candidate:
    hops: tuple[NodeAddr, ...]  # next hop first, producer last
    price: int
    failed: bool = False


@dataclass
class Flow:
    node: NodeAddr
    name: Name  # prefix
    requested: int
    serve: ServeSpec
    start_us: int
    state: str = "discovering"
    generation: int = 0
    discovery_attempts: int = 1  # consecutive fruitless rounds; resets on selection
    discoveries: int = 0  # lifetime total, for the report
    candidates: list[Candidate] = field(default_factory=list)
    failed_routes: set[tuple[NodeAddr, ...]] = field(default_factory=set)
    active: Candidate | None = None
    received: dict[int, bytes] = field(default_factory=dict)
    attempts: dict[int, int] = field(default_factory=dict)
    send_queue: list[int] = field(default_factory=list)
    chain_armed: bool = False
    nonces: dict[bytes, tuple[int, int]] = field(default_factory=dict)
    sent_route: dict[int, tuple[NodeAddr, ...]] = field(default_factory=dict)
    proofs: dict[int, tuple] = field(default_factory=dict)  # first -> (proof, route)
    verified: dict[int, str] = field(default_factory=dict)  # first -> "strict"|"rerouted"
    chunk_attempts: dict[int, int] = field(default_factory=dict)
    done_us: int | None = None
    fail_reason: str | None = None
    retransmits: int = 0
    nacks: int = 0
    refetches: int = 0
    signatures_verified: int = 0

    @property
    def key(self) -> tuple[NodeAddr, tuple[bytes, ...]]:
        return (self.node, self.name.components)

    def required_spans(self) -> list[tuple[int, int]]:
        """Chunk spans that lie fully inside the requested range; only
        these ever see a proof packet, so only these can be verified."""
        spans = []
        for first in range(0, self.requested, self.serve.packets_per_chunk):
            count = min(self.serve.packets_per_chunk, self.serve.total_packets - first)
            if first + count <= self.requested:
                spans.append((first, count))
        return spans

    def missing(self) -> list[int]:
        return [i for i in range(self.requested) if i not in self.received]

    def is_complete(self) -> bool:
        return not self.missing() and all(
            first in self.verified for first, _ in self.required_spans()
        )


class _Node:
    def __init__(self, engine: ForwardingEngine, rng: random.Random) -> None:
        self.engine = engine
        self.rng = rng

    def fresh_nonce(self) -> bytes:
        return self.rng.getrandbits(64).to_bytes(8, "big")


@dataclass
class RunResult:
    report: dict
    trace: list[dict]
    ledger_records: list[dict]

    def trace_bytes(self) -> bytes:
        return b"".join(
            json.dumps(ev, sort_keys=True, separators=(",", ":")).encode() + b"\n"
            for ev in self.trace
        )

    def report_bytes(self) -> bytes:
        return json.dumps(self.report, sort_keys=True, indent=2).encode() + b"\n"

    def ledger_bytes(self) -> bytes:
        return b"".join(
            json.dumps(rec, sort_keys=True, separators=(",", ":")).encode() + b"\n"
            for rec in self.ledger_records
        )


class Simulator:
    def __init__(self, scenario: Scenario) -> None:
        self.scenario = scenario
        self.defaults = scenario.defaults
        self.now = 0
        self._seq = 0
        self._heap: list = []
        self.trace: list[dict] = []
        self.cost_of = scenario.cost_of()
        self.serves: dict[tuple[bytes, ...], ServeSpec] = {
            s.prefix.components: s for n in scenario.nodes for s in n.serves
        }

        self.ledger = Ledger()
        self.directory: dict[NodeAddr, bytes] = {}
        self.book = ChannelBook(self.ledger, self.directory)

        self.nodes: dict[NodeAddr, _Node] = {}
        for spec in scenario.nodes:
            self.ledger.mint(spec.addr, self.defaults.account_balance)
            tables = NodeTables(
                TableConfig(
                    window_capacity=self.defaults.window_capacity,
                    pit_lifetime_us=self.defaults.interest_lifetime_ms * MS,
                    keepalive_period_us=self.defaults.keepalive_period_ms * MS,
                    keepalive_timeout_us=self.defaults.keepalive_timeout_ms * MS,
                    cs_capacity_bytes=self.defaults.cs_capacity_bytes,
                )
            )
            config = NodeConfig(
                addr=spec.addr,
                forwarding_cost=spec.cost,
                relay_mode=spec.relay_mode or self.defaults.relay_mode,
                payment_mode=self.defaults.payment_mode,
                interest_lifetime_ms=self.defaults.interest_lifetime_ms,
            )
            key = KeyPair.from_seed(spec.addr, str(scenario.seed).encode())
            engine = ForwardingEngine(config, tables, key, self.book, self._hooks(spec.addr))
            for serve in spec.serves:
                engine.register_source(
                    ContentSource(
                        prefix=serve.prefix,
                        packet_size=serve.packet_size,
                        packets_per_chunk=serve.packets_per_chunk,
                        total_packets=serve.total_packets,
                        payload_fn=_payload_fn(serve),
                    )
                )
            self.book.register_key(key)
            self.nodes[spec.addr] = _Node(engine, derive_rng(scenario.seed, "node", str(spec.addr)))

        self.links: dict[tuple[NodeAddr, NodeAddr], Link] = {}
        self.neighbors: dict[NodeAddr, list[tuple[NodeAddr, Link]]] = {
            spec.addr: [] for spec in scenario.nodes
        }
        for ls in sorted(scenario.links, key=lambda l: (str(l.key[0]), str(l.key[1]))):
            link = Link(
                a=ls.key[0],
                b=ls.key[1],
                latency_us=ls.latency_ms * MS,
                drop_rate=ls.drop_rate,
                up=True,
                rng=derive_rng(scenario.seed, "link", str(ls.key[0]), str(ls.key[1])),
            )
            self.links[ls.key] = link
            self.neighbors[link.a].append((link.b, link))
            self.neighbors[link.b].append((link.a, link))
        for addr in self.neighbors:
            self.neighbors[addr].sort(key=lambda pair: pair[0])

        if self.defaults.payment_mode == "hopbyhop":
            self._fund_adjacency_channels()

        self.flows: dict[tuple[NodeAddr, tuple[bytes, ...]], Flow] = {}

        # Prime the schedule: keep-alive ticks, then scripted actions.
        for addr in sorted(self.nodes):
            self.at(0, self._tick_keepalive, addr)
        for action in scenario.schedule:
            if isinstance(action, LinkAction):
                self.at(action.at_ms * MS, self._do_link_change, action)
            elif isinstance(action, FetchAction):
                self.at(action.at_ms * MS, self._do_fetch, action)

    # -- plumbing ------------------------------------------------------

    def at(self, time_us: int, fn, *args) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time_us, self._seq, fn, args))

    def emit(self, origin: NodeAddr | str, event: str, **fields) -> None:
        # Events about a specific node pass node=... in fields, which
        # wins over the origin tag; "sim" marks global happenings.
        record = {"t": self.now, "node": str(origin), "event": event}
        record.update(fields)
        self.trace.append(record)

    def _hooks(self, addr: NodeAddr) -> EngineHooks:
        return EngineHooks(
            trace=lambda ev: self.trace.append({"t": self.now, "node": str(addr), **ev}),
            path_discovered=lambda name, route, price: self._on_path(addr, name, route, price),
            deliver_data=lambda pkt: self._on_flow_data(addr, pkt),
            deliver_nack=lambda pkt: self._on_flow_nack(addr, pkt),
        )

    def _fund_adjacency_channels(self) -> None:
        deposit = self.defaults.channel_deposit
        needed: dict[NodeAddr, int] = {}
        for link in self.links.values():
            needed[link.a] = needed.get(link.a, 0) + deposit
            needed[link.b] = needed.get(link.b, 0) + deposit
        problems = [
            f"node {addr} must fund {amount} in channel deposits "
            f"but holds {self.ledger.balance(addr)}"
            for addr, amount in sorted(needed.items(), key=lambda kv: str(kv[0]))
            if self.ledger.balance(addr) < amount
        ]
        if problems:
            raise ScenarioError(problems)
        for key in sorted(self.links, key=lambda k: (str(k[0]), str(k[1]))):
            link = self.links[key]
            self.book.open(link.a, link.b, deposit, deposit)

    def link_between(self, a: NodeAddr, b: NodeAddr) -> Link | None:
        return self.links.get((a, b) if a < b else (b, a))

    # -- the medium ----------------------------------------------------

    def transmit(self, src: NodeAddr, action) -> None:
        pkt = action.packet
        frame = encode_packet(pkt)
        fields = _frame_fields(pkt)
        if isinstance(action, Broadcast):
            self.emit(src, "tx", to=str(BROADCAST), **fields)
            for peer, link in self.neighbors[src]:
                if link.up and not link.drops():
                    self.at(self.now + link.latency_us, self._arrive, peer, src, frame)
        elif isinstance(action, Send):
            self.emit(src, "tx", to=str(action.to), **fields)
            link = self.link_between(src, action.to)
            # No link, or a link that is down, loses the frame silently:
            # exactly the failure keep-alives exist to surface.
            if link is not None and link.up and not link.drops():
                self.at(self.now + link.latency_us, self._arrive, action.to, src, frame)

    def _arrive(self, dst: NodeAddr, src: NodeAddr, frame: bytes) -> None:
        pkt = decode_packet(frame)
        self.emit(dst, "rx", src=str(src), **_frame_fields(pkt))
        for action in self.nodes[dst].engine.on_packet(pkt, self.now):
            self.transmit(dst, action)

    def _arrive_beacon(self, dst: NodeAddr, src: NodeAddr) -> None:
        self.nodes[dst].engine.on_keepalive(src, self.now)

    def _tick_keepalive(self, addr: NodeAddr) -> None:
        self.nodes[addr].engine.keepalive_tick(self.now)
        for peer, link in self.neighbors[addr]:
            if link.up and not link.drops():
                self.at(self.now + link.latency_us, self._arrive_beacon, peer, addr)
        nxt = self.now + self.defaults.keepalive_period_ms * MS
        if nxt <= self.scenario.duration_ms * MS:
            self.at(nxt, self._tick_keepalive, addr)

    # -- scripted actions ------------------------------------------------

    def _do_link_change(self, action: LinkAction) -> None:
        link = self.link_between(action.a, action.b)
        link.up = action.up
        self.emit("sim", "link_change", a=str(action.a), b=str(action.b), up=action.up)

    def _do_fetch(self, action: FetchAction) -> None:
        serve = self.serves[action.name.components]
        flow = Flow(
            node=action.node,
            name=action.name,
            requested=action.packets,
            serve=serve,
            start_us=self.now,
        )
        self.flows[flow.key] = flow
        self.emit("sim", "fetch", node=str(action.node), name=str(action.name),
                  packets=action.packets)
        engine = self.nodes[action.node].engine
        local = next(
            (s for s in engine.sources if action.name.has_prefix(s.prefix)), None
        )
        if local is not None:
            # Producer-local fetch: served from the node's own store, no
            # tokens move and nothing touches the network.
            for i in range(action.packets):
                flow.received[i] = local.payload_fn(i)
            for first, _count in flow.required_spans():
                flow.verified[first] = "local"
            flow.state = "done"
            flow.active = Candidate(hops=(), price=0)
            flow.done_us = self.now
            self.emit("sim", "flow_local", node=str(action.node), name=str(action.name))
            return
        self._start_discovery(flow)

    # -- consumer flow logic ---------------------------------------------

    def _start_discovery(self, flow: Flow) -> None:
        flow.state = "discovering"
        flow.discoveries += 1
        node = self.nodes[flow.node]
        nonce = node.fresh_nonce()
        for action in node.engine.originate_discovery(flow.name, nonce, self.now):
            self.transmit(flow.node, action)
        self.at(
            self.now + self.defaults.discovery_wait_ms * MS,
            self._discovery_done, flow, flow.discovery_attempts,
        )

    def _discovery_done(self, flow: Flow, attempt: int) -> None:
        if flow.state != "discovering" or attempt != flow.discovery_attempts:
            return
        if any(not c.failed for c in flow.candidates):
            self._select_candidate(flow)
            return
        if flow.discovery_attempts > self.defaults.retries:
            self._fail_flow(flow, "no-route")
            return
        flow.discovery_attempts += 1
        self._start_discovery(flow)

    def _on_path(self, addr: NodeAddr, name: Name, route: RouteStack, price: int) -> bool:
        flow = self.flows.get((addr, name.prefix.components))
        if flow is None or flow.state in ("done", "failed"):
            return False
        hops = route.hops
        if hops in flow.failed_routes or any(c.hops == hops for c in flow.candidates):
            return True
        if len(flow.candidates) < self.defaults.candidate_paths:
            flow.candidates.append(Candidate(hops=hops, price=price))
        return True

    def _select_candidate(self, flow: Flow) -> None:
        live = [c for c in flow.candidates if not c.failed]
        if not live:
            self._rediscover(flow)
            return
        flow.active = min(live, key=lambda c: (c.price, tuple(str(h) for h in c.hops)))
        flow.state = "fetching"
        flow.generation += 1
        flow.send_queue = []
        flow.chain_armed = False
        # Finding a usable path resets discovery patience: the retry
        # budget bounds consecutive fruitless rounds, not a lifetime.
        flow.discovery_attempts = 0
        self.emit(
            "sim", "path_selected",
            node=str(flow.node), name=str(flow.name),
            route=[str(h) for h in flow.active.hops], price=flow.active.price,
        )
        self._schedule_sends(flow, flow.missing())

    def _schedule_sends(self, flow: Flow, indexes: list[int]) -> None:
        # Sends are chained, one event arming the next, rather than all
        # pre-scheduled.  The chain guarantees that packet i's frames
        # (and the channel commit its offer triggers) are processed
        # before packet i+1's offer is signed, keeping consecutive
        # offers on a shared channel from racing each other.
        pending = set(flow.send_queue)
        pending.update(indexes)
        flow.send_queue = sorted(pending)
        if flow.send_queue and not flow.chain_armed:
            flow.chain_armed = True
            self.at(self.now, self._send_next, flow, flow.generation)

    def _send_next(self, flow: Flow, generation: int) -> None:
        if generation != flow.generation or flow.state != "fetching":
            return
        while flow.send_queue and flow.send_queue[0] in flow.received:
            flow.send_queue.pop(0)
        if not flow.send_queue:
            flow.chain_armed = False
            return
        idx = flow.send_queue.pop(0)
        self._send_packet(flow, idx, generation)
        if flow.send_queue and flow.state == "fetching" and generation == flow.generation:
            self.at(
                self.now + self.defaults.send_interval_ms * MS,
                self._send_next, flow, generation,
            )
        else:
            flow.chain_armed = False

    def _send_packet(self, flow: Flow, idx: int, generation: int) -> None:
        if (
            flow.state != "fetching"
            or generation != flow.generation
            or idx in flow.received
        ):
            return
        node = self.nodes[flow.node]
        name = flow.name.with_index(idx)
        nonce = node.fresh_nonce()
        hops = flow.active.hops
        payment = None
        try:
            if self.defaults.payment_mode == "hopbyhop":
                cid = channel_id_for(flow.node, hops[0])
                payment = self.book.make_offer(
                    flow.node, cid, flow.active.price, (name, nonce), self.now,
                    lifetime_us=self.defaults.interest_lifetime_ms * MS,
                )
            else:
                consumer_pay_all(
                    self.book, flow.node,
                    [(hop, self.cost_of[hop]) for hop in hops],
                    (name, nonce), self.now, self.defaults.channel_deposit,
                )
        except PaymentError as err:
            self.emit("sim", "flow_error", node=str(flow.node), name=str(name),
                      reason=err.reason)
            self._fail_flow(flow, f"payment:{err.reason}")
            return
        pkt = Interest(
            name=name,
            nonce=nonce,
            hop_info=HopInfo(flow.node, hops[0]),
            lifetime_ms=self.defaults.interest_lifetime_ms,
            route=RouteStack(hops),
            payment=payment,
        )
        flow.nonces[nonce] = (idx, flow.generation)
        flow.sent_route[idx] = hops
        attempt = flow.attempts.get(idx, 0)
        for action in node.engine.originate_interest(pkt):
            self.transmit(flow.node, action)
        self.at(
            self.now + self.defaults.interest_lifetime_ms * MS,
            self._packet_timeout, flow, idx, flow.generation, attempt,
        )

    def _packet_timeout(self, flow: Flow, idx: int, generation: int, attempt: int) -> None:
        if (
            flow.state != "fetching"
            or generation != flow.generation
            or idx in flow.received
            or flow.attempts.get(idx, 0) != attempt
        ):
            return
        if attempt + 1 > self.defaults.retries:
            self.emit("sim", "route_exhausted", node=str(flow.node),
                      name=str(flow.name.with_index(idx)))
            self._demote_active(flow)
            return
        flow.attempts[idx] = attempt + 1
        flow.retransmits += 1
        # Retransmits ride the same send chain so they cannot land on
        # the wire in the middle of another packet's offer/commit pair.
        self._schedule_sends(flow, [idx])

    def _demote_active(self, flow: Flow) -> None:
        if flow.active is not None:
            flow.active.failed = True
            flow.failed_routes.add(flow.active.hops)
        self._cancel_outstanding_offers(flow)
        flow.generation += 1
        flow.attempts.clear()
        self._select_candidate(flow)

    def _cancel_outstanding_offers(self, flow: Flow) -> None:
        for nonce, (idx, gen) in flow.nonces.items():
            if gen == flow.generation and idx not in flow.received:
                self.book.cancel_tag((flow.name.with_index(idx), nonce))

    def _rediscover(self, flow: Flow) -> None:
        if flow.discovery_attempts > self.defaults.retries:
            self._fail_flow(flow, "no-route")
            return
        flow.discovery_attempts += 1
        # Fresh epoch: the topology has visibly changed, so previously
        # failed routes get another chance.
        flow.candidates.clear()
        flow.failed_routes.clear()
        self._start_discovery(flow)

    def _fail_flow(self, flow: Flow, reason: str) -> None:
        flow.state = "failed"
        flow.fail_reason = reason
        flow.done_us = self.now
        self.emit("sim", "flow_failed", node=str(flow.node), name=str(flow.name),
                  reason=reason)

    def _on_flow_data(self, addr: NodeAddr, pkt: Data) -> bool:
        flow = self.flows.get((addr, pkt.name.prefix.components))
        if flow is None or pkt.name.chunk_index is None:
            return False
        idx = pkt.name.chunk_index
        if flow.state in ("done", "failed") or idx in flow.received:
            return True
        if idx >= flow.requested:
            return True
        flow.received[idx] = pkt.payload
        if pkt.proof is not None:
            route = flow.sent_route.get(idx, flow.active.hops if flow.active else ())
            flow.proofs[pkt.proof.first] = (pkt.proof, tuple(route))
        self._try_verify(flow)
        self._check_complete(flow)
        return True

    def _try_verify(self, flow: Flow) -> None:
        for first in sorted(flow.proofs):
            if first in flow.verified:
                continue
            proof, route = flow.proofs[first]
            span = range(first, first + proof.count)
            if any(i not in flow.received for i in span):
                continue
            payload = b"".join(flow.received[i] for i in span)
            descriptor = ChunkDescriptor(
                flow.name, first, proof.count, flow.serve.packet_size
            )
            chunk = SignedChunk(descriptor, payload, proof.digest, proof.chain)
            expected = tuple(reversed(route))
            result = verify_chain(chunk, expected, self.directory)
            flow.signatures_verified += len(proof.chain)
            how = "strict"
            if not result.valid:
                # A relay may have repaired the path mid-flow; accept the
                # chain it actually took when it anchors at the same
                # producer and every signature checks out.
                observed = tuple(h.signer for h in proof.chain)
                if observed and expected and observed[0] == expected[0]:
                    result = verify_chain(chunk, observed, self.directory)
                    flow.signatures_verified += len(proof.chain)
                    how = "rerouted"
            if result.valid:
                flow.verified[first] = how
                self.emit("sim", "chunk_verified", node=str(flow.node),
                          name=str(flow.name), first=first, how=how)
            else:
                self._chunk_failed(flow, first, result)

    def _chunk_failed(self, flow: Flow, first: int, result) -> None:
        self.emit(
            "sim", "chunk_verify_failed",
            node=str(flow.node), name=str(flow.name), first=first,
            fault=result.fault.value if result.fault else "unknown",
        )
        attempts = flow.chunk_attempts.get(first, 0) + 1
        flow.chunk_attempts[first] = attempts
        if attempts > self.defaults.retries:
            self._fail_flow(flow, "proof")
            return
        proof, _route = flow.proofs.pop(first)
        span = [i for i in range(first, first + proof.count) if i < flow.requested]
        for i in span:
            flow.received.pop(i, None)
            flow.attempts[i] = 0
        flow.refetches += 1
        self._schedule_sends(flow, span)

    def _check_complete(self, flow: Flow) -> None:
        if flow.state == "fetching" and flow.is_complete():
            flow.state = "done"
            flow.done_us = self.now
            self.emit("sim", "flow_complete", node=str(flow.node), name=str(flow.name),
                      latency_ms=(self.now - flow.start_us) // MS)

    def _on_flow_nack(self, addr: NodeAddr, pkt: Nack) -> bool:
        flow = self.flows.get((addr, pkt.name.prefix.components))
        if flow is None:
            return False
        entry = flow.nonces.get(pkt.nonce)
        if entry is None:
            return True
        idx, gen = entry
        if flow.state != "fetching" or gen != flow.generation or idx in flow.received:
            return True
        flow.nacks += 1
        self.emit("sim", "flow_nacked", node=str(flow.node),
                  name=str(flow.name.with_index(idx)), reason=pkt.reason.name)
        self._demote_active(flow)
        return True

    # -- run and report ----------------------------------------------------

    def run(self) -> RunResult:
        horizon = self.scenario.duration_ms * MS
        while self._heap:
            time_us, _seq, fn, args = heapq.heappop(self._heap)
            if time_us > horizon:
                continue
            self.now = time_us
            fn(*args)
        self.now = horizon
        settled = self.book.settle_all()
        self.emit("sim", "settled", channels=settled)
        return RunResult(
            report=self._report(),
            trace=self.trace,
            ledger_records=list(self.ledger.log),
        )

    def _report(self) -> dict:
        flows = []
        for key in sorted(self.flows, key=lambda k: (str(k[0]), str(Name(k[1])))):
            flow = self.flows[key]
            complete = flow.state == "done"
            flows.append({
                "node": str(flow.node),
                "name": str(flow.name),
                "status": flow.state,
                "requested": flow.requested,
                "received": len(flow.received),
                "verified_spans": len(flow.verified),
                "required_spans": len(flow.required_spans()),
                "price": flow.active.price if flow.active else None,
                "route": [str(flow.node)] + [str(h) for h in flow.active.hops]
                if flow.active else None,
                "paths_found": len(flow.candidates),
                "start_ms": flow.start_us // MS,
                "done_ms": flow.done_us // MS if flow.done_us is not None else None,
                "latency_ms": (flow.done_us - flow.start_us) // MS if complete else None,
                "retransmits": flow.retransmits,
                "nacks": flow.nacks,
                "refetches": flow.refetches,
                "rediscoveries": max(flow.discoveries - 1, 0),
                "signatures_verified": flow.signatures_verified,
                "verified_strict": sum(1 for v in flow.verified.values() if v == "strict"),
                "verified_rerouted": sum(1 for v in flow.verified.values() if v == "rerouted"),
                "fail_reason": flow.fail_reason,
            })

        node_counters = {
            str(addr): dict(sorted(self.nodes[addr].engine.counters.items()))
            for addr in sorted(self.nodes)
        }
        fib = {
            str(addr): self.nodes[addr].engine.tables.fib.dump()
            for addr in sorted(self.nodes)
        }
        def total(key: str) -> int:
            return sum(n.engine.counters.get(key, 0) for n in self.nodes.values())

        ops = {"mint": 0, "open": 0, "update": 0, "settle": 0}
        for rec in self.ledger.log:
            ops[rec["op"]] = ops.get(rec["op"], 0) + 1
        initial = self.defaults.account_balance
        incomes = {
            str(addr): self.ledger.balance(addr) - initial for addr in sorted(self.nodes)
        }
        return {
            "scenario": self.scenario.source.rsplit("/", 1)[-1],
            "seed": self.scenario.seed,
            "duration_ms": self.scenario.duration_ms,
            "payment_mode": self.defaults.payment_mode,
            "flows": flows,
            "nodes": node_counters,
            "fib": fib,
            "modes": {
                "source_routed": total("mode_source_routed"),
                "min_cost": total("mode_min_cost"),
                "rediscovery": total("mode_rediscovery"),
            },
            "broadcast": {
                "rebroadcasts": total("rebroadcasts"),
                "suppressed": total("broadcast_suppressed"),
            },
            "signatures": {
                "produced": total("signatures_produced"),
                "verified": sum(f.signatures_verified for f in self.flows.values()),
            },
            "payments": {
                "channels_opened": ops["open"],
                "updates": ops["update"],
                "settlements": ops["settle"],
            },
            "ledger": {
                "minted": self.ledger.minted,
                "conserved": self.ledger.conserved(),
                "accounts": {
                    str(addr): self.ledger.balance(addr) for addr in sorted(self.nodes)
                },
                "incomes": incomes,
            },
        }

    def dump_state(self) -> list[str]:
        lines = []
        for addr in sorted(self.nodes):
            lines.append(f"node {addr}")
            for line in self.nodes[addr].engine.tables.dump(self.now):
                lines.append(f"  {line}")
        return lines


def _payload_fn(serve: ServeSpec):
    return lambda i: content_bytes(serve.prefix, i, serve.packet_size)


def _frame_fields(pkt) -> dict:
    if isinstance(pkt, Interest):
        fields = {
            "kind": "interest",
            "name": str(pkt.name),
            "nonce": pkt.nonce.hex(),
            "routed": not pkt.is_discovery,
        }
        if pkt.route is not None:
            fields["route"] = [str(h) for h in pkt.route.hops]
        if pkt.payment is not None:
            fields["amount"] = pkt.payment.amount
        return fields
    if isinstance(pkt, Data):
        fields = {
            "kind": "data",
            "name": str(pkt.name),
            "discovery": pkt.is_discovery,
        }
        if pkt.is_discovery:
            fields["route"] = [str(h) for h in pkt.route.hops]
            fields["price"] = pkt.price
        else:
            fields["proof"] = pkt.proof is not None
        return fields
    if isinstance(pkt, Nack):
        return {
            "kind": "nack",
            "name": str(pkt.name),
            "nonce": pkt.nonce.hex(),
            "reason": pkt.reason.name,
        }
    raise TypeError(f"not a wire packet: {pkt!r}")


def run_scenario(scenario: Scenario) -> RunResult:
    return Simulator(scenario).run()


def format_report(report: dict) -> str:
    """Stable human-readable summary; the golden CLI tests pin this."""
    lines = [
        f"run {report['scenario']} seed={report['seed']} "
        f"duration_ms={report['duration_ms']} payment={report['payment_mode']}"
    ]
    for flow in report["flows"]:
        route = "->".join(flow["route"]) if flow["route"] else "-"
        latency = flow["latency_ms"] if flow["latency_ms"] is not None else "-"
        price = flow["price"] if flow["price"] is not None else "-"
        lines.append(
            f"flow {flow['name']} @ {flow['node']}: {flow['status']} "
            f"{flow['received']}/{flow['requested']} price={price} "
            f"latency_ms={latency} route={route}"
        )
    modes = report["modes"]
    lines.append(
        f"modes source_routed={modes['source_routed']} "
        f"min_cost={modes['min_cost']} rediscovery={modes['rediscovery']}"
    )
    sig = report["signatures"]
    lines.append(f"signatures produced={sig['produced']} verified={sig['verified']}")
    pay = report["payments"]
    ledger = report["ledger"]
    lines.append(
        f"payments channels={pay['channels_opened']} updates={pay['updates']} "
        f"settlements={pay['settlements']} conserved={str(ledger['conserved']).lower()}"
    )
    income = " ".join(
        f"{addr}={delta:+d}" for addr, delta in sorted(ledger["incomes"].items())
    )
    lines.append(f"income {income}")
    return "\n".join(lines)
