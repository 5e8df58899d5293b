"""Ledger, channel update, offer book, and hop payment semantics."""

import random

import pytest

from tollroute.keys import KeyPair
from tollroute.payment import (
    AuditResult,
    ChannelBook,
    ChannelStatus,
    Ledger,
    PaymentError,
    audit_ledger,
    channel_id_for,
    channel_update,
    consumer_pay_all,
    plan_payment,
    relay_process_payment,
    verify_state,
)
from tollroute.wire import Name, NodeAddr

CONSUMER = NodeAddr.parse("00-cc-00-00-00-01")
RELAY_A = NodeAddr.parse("00-cc-00-00-00-02")
RELAY_B = NodeAddr.parse("00-cc-00-00-00-03")
PRODUCER = NodeAddr.parse("00-cc-00-00-00-04")
ALL = (CONSUMER, RELAY_A, RELAY_B, PRODUCER)
TAG = (Name((b"video", b"clip")), b"\x07" * 8)


def fresh_book(balance=1_000, deposit=100):
    ledger = Ledger()
    directory = {}
    book = ChannelBook(ledger, directory)
    keys = {}
    for addr in ALL:
        kp = KeyPair.from_seed(addr, b"payment-tests")
        keys[addr] = kp
        book.register_key(kp)
        ledger.mint(addr, balance)
    for a, b in zip(ALL, ALL[1:]):
        book.open(a, b, deposit, deposit)
    return ledger, book, keys


class TestLedger:
    def test_open_requires_funds_and_rejects_cleanly(self):
        ledger = Ledger()
        ledger.mint(CONSUMER, 50)
        ledger.mint(RELAY_A, 50)
        with pytest.raises(PaymentError) as err:
            ledger.open_channel(CONSUMER, RELAY_A, 60, 10)
        assert err.value.reason == "insufficient-funds"
        # Nothing moved.
        assert ledger.balance(CONSUMER) == 50 and ledger.balance(RELAY_A) == 50
        assert not ledger.channels and ledger.conserved()

    def test_open_debits_both_parties(self):
        ledger = Ledger()
        ledger.mint(CONSUMER, 100)
        ledger.mint(RELAY_A, 100)
        state = ledger.open_channel(CONSUMER, RELAY_A, 30, 20)
        assert (state.balance_a, state.balance_b, state.sequence) == (30, 20, 0)
        assert ledger.balance(CONSUMER) == 70 and ledger.balance(RELAY_A) == 80
        assert ledger.open_pool_total() == 50 and ledger.conserved()

    def test_seq0_cooperative_close_needs_no_signatures(self):
        ledger = Ledger()
        ledger.mint(CONSUMER, 100)
        ledger.mint(RELAY_A, 100)
        state = ledger.open_channel(CONSUMER, RELAY_A, 30, 20)
        ledger.settle(state, {})
        assert ledger.balance(CONSUMER) == 100 and ledger.balance(RELAY_A) == 100
        assert ledger.conserved()

    def test_settle_twice_rejected(self):
        ledger = Ledger()
        ledger.mint(CONSUMER, 100)
        ledger.mint(RELAY_A, 100)
        state = ledger.open_channel(CONSUMER, RELAY_A, 30, 20)
        ledger.settle(state, {})
        with pytest.raises(PaymentError) as err:
            ledger.settle(state, {})
        assert err.value.reason == "already-settled"

    def test_settle_rejects_pool_mismatch(self):
        ledger = Ledger()
        ledger.mint(CONSUMER, 100)
        ledger.mint(RELAY_A, 100)
        state = ledger.open_channel(CONSUMER, RELAY_A, 30, 20)
        inflated = type(state)(
            state.channel_id, state.party_a, state.party_b, 0, 40, 20, None, None
        )
        with pytest.raises(PaymentError) as err:
            ledger.settle(inflated, {})
        assert err.value.reason == "conservation"
        assert ledger.conserved()

    def test_stale_sequence_settle_rejected(self):
        ledger, book, keys = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        old = book.state(cid)
        s1 = channel_update(old, 10, keys[CONSUMER], keys[RELAY_A])
        s2 = channel_update(s1, 5, keys[CONSUMER], keys[RELAY_A])
        ledger.note_update(s1, CONSUMER, 10)
        ledger.note_update(s2, CONSUMER, 5)
        #.. the payee tries to roll back to the state that favored it less,
        # or the payer replays the richer old state: both are stale.
        with pytest.raises(PaymentError) as err:
            ledger.settle(s1, book.directory)
        assert err.value.reason == "stale-sequence"
        ledger.settle(s2, book.directory)
        assert ledger.conserved()


class TestChannelUpdate:
    def test_update_moves_tokens_and_signs(self):
        _, book, keys = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        state = book.state(cid)
        nxt = channel_update(state, 25, keys[CONSUMER], keys[RELAY_A])
        assert (nxt.sequence, nxt.balance_a, nxt.balance_b) == (1, 75, 125)
        assert verify_state(nxt, book.directory)

    def test_zero_delta_still_advances_sequence(self):
        _, book, keys = fresh_book()
        state = book.state(channel_id_for(CONSUMER, RELAY_A))
        nxt = channel_update(state, 0, keys[CONSUMER], keys[RELAY_A])
        assert nxt.sequence == state.sequence + 1
        assert (nxt.balance_a, nxt.balance_b) == (state.balance_a, state.balance_b)
        assert verify_state(nxt, book.directory)

    def test_overdraw_rejected(self):
        _, book, keys = fresh_book()
        state = book.state(channel_id_for(CONSUMER, RELAY_A))
        with pytest.raises(PaymentError) as err:
            channel_update(state, state.balance_a + 1, keys[CONSUMER], keys[RELAY_A])
        assert err.value.reason == "overdraw"

    def test_tampered_signature_fails_verification(self):
        _, book, keys = fresh_book()
        state = book.state(channel_id_for(CONSUMER, RELAY_A))
        nxt = channel_update(state, 5, keys[CONSUMER], keys[RELAY_A])
        forged = type(nxt)(
            nxt.channel_id, nxt.party_a, nxt.party_b, nxt.sequence,
            nxt.balance_a - 1, nxt.balance_b + 1, nxt.sig_a, nxt.sig_b,
        )
        assert not verify_state(forged, book.directory)


class TestChannelBook:
    def test_offer_then_commit_moves_committed_state(self):
        _, book, _ = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        offer = book.make_offer(CONSUMER, cid, 15, TAG, now=0)
        assert offer.amount == 15 and offer.sequence == 1
        state = book.commit_offer(RELAY_A, CONSUMER, offer)
        assert state.balance_of(CONSUMER) == 85 and state.balance_of(RELAY_A) == 115
        assert verify_state(state, book.directory)
        assert book.pending_count() == 0
        assert book.paid[CONSUMER] == 15 and book.earned[RELAY_A] == 15

    def test_pending_offers_reserve_balance(self):
        _, book, _ = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        book.make_offer(CONSUMER, cid, 60, TAG, now=0)
        assert book.projected_balance(cid, CONSUMER) == 40
        with pytest.raises(PaymentError) as err:
            book.make_offer(CONSUMER, cid, 41, TAG, now=0)
        assert err.value.reason == "insufficient-funds"
        book.make_offer(CONSUMER, cid, 40, TAG, now=0)

    def test_serialized_offers_commit_in_order(self):
        _, book, _ = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        for expected_seq in (1, 2, 3):
            offer = book.make_offer(CONSUMER, cid, 10, TAG, now=0)
            assert offer.sequence == expected_seq
            book.commit_offer(RELAY_A, CONSUMER, offer)
        assert book.state(cid).balance_of(CONSUMER) == 70

    def test_racing_offers_only_first_commits(self):
        # Two offers signed against the same committed state: whichever
        # commits first wins; the loser's balances no longer match what
        # the payee reconstructs and it bounces without mutation.
        _, book, _ = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        first = book.make_offer(CONSUMER, cid, 10, TAG, now=0)
        other_tag = (Name((b"other",)), b"\x01" * 8)
        second = book.make_offer(CONSUMER, cid, 10, other_tag, now=0)
        book.commit_offer(RELAY_A, CONSUMER, first)
        with pytest.raises(PaymentError) as err:
            book.commit_offer(RELAY_A, CONSUMER, second)
        assert err.value.reason == "bad-signature"
        assert book.state(cid).balance_of(CONSUMER) == 90

    def test_lost_offer_leaves_hole_without_poisoning_later_ones(self):
        # An offer that never commits (lost Interest, cancelled flow) must
        # not skew the offers made after it: each one prices the update
        # off the committed state, not off what is still pending.
        _, book, _ = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        lost = book.make_offer(CONSUMER, cid, 10, TAG, now=0)
        other_tag = (Name((b"other",)), b"\x01" * 8)
        retry = book.make_offer(CONSUMER, cid, 10, other_tag, now=0)
        state = book.commit_offer(RELAY_A, CONSUMER, retry)
        # Sequence hole where the lost offer sat; balances move once.
        assert state.sequence == 2 and state.balance_of(CONSUMER) == 90
        with pytest.raises(PaymentError):
            book.commit_offer(RELAY_A, CONSUMER, lost)
        assert book.cancel_tag(TAG) == 1

    def test_commit_rejects_stale_and_overdraw_without_mutation(self):
        _, book, _ = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        offer = book.make_offer(CONSUMER, cid, 10, TAG, now=0)
        book.commit_offer(RELAY_A, CONSUMER, offer)
        before = book.state(cid)
        with pytest.raises(PaymentError) as err:
            book.commit_offer(RELAY_A, CONSUMER, offer)
        assert err.value.reason == "stale-sequence"
        assert book.state(cid) == before

    def test_purge_expired(self):
        _, book, _ = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        book.make_offer(CONSUMER, cid, 10, TAG, now=0, lifetime_us=1_000)
        assert book.purge_expired(now=999) == 0
        assert book.purge_expired(now=1_001) == 1
        assert book.projected_balance(cid, CONSUMER) == 100

    def test_settle_all_closes_everything(self):
        ledger, book, _ = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        offer = book.make_offer(CONSUMER, cid, 10, TAG, now=0)
        book.commit_offer(RELAY_A, CONSUMER, offer)
        assert book.settle_all() == 3
        assert all(c.status is ChannelStatus.SETTLED for c in ledger.channels.values())
        assert ledger.balance(CONSUMER) == 990 and ledger.balance(RELAY_A) == 1010
        assert ledger.conserved()


class TestHopPayments:
    def test_plan_covers_every_hop_cost(self):
        costs = {RELAY_A: 5, RELAY_B: 2, PRODUCER: 3}
        plan = plan_payment((RELAY_A, RELAY_B, PRODUCER), costs)
        assert plan.amounts == (10, 5, 3)
        assert plan.total == sum(costs.values())

    def test_plan_rejects_unknown_cost(self):
        with pytest.raises(PaymentError):
            plan_payment((RELAY_A,), {})

    def test_relay_commits_and_forwards_remainder(self):
        _, book, _ = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        incoming = book.make_offer(CONSUMER, cid, 10, TAG, now=0)
        kept, onward = relay_process_payment(
            book, RELAY_A, CONSUMER, incoming, my_cost=5, upstream=RELAY_B, tag=TAG, now=0
        )
        assert (kept, onward.amount) == (5, 5)
        assert book.state(cid).balance_of(RELAY_A) == 110
        # The onward offer is pending until the next hop commits it.
        kept_b, onward_b = relay_process_payment(
            book, RELAY_B, RELAY_A, onward, my_cost=2, upstream=PRODUCER, tag=TAG, now=0
        )
        assert (kept_b, onward_b.amount) == (2, 3)
        kept_p, none = relay_process_payment(
            book, PRODUCER, RELAY_B, onward_b, my_cost=3, upstream=None, tag=TAG, now=0
        )
        assert (kept_p, none) == (3, None)
        assert book.settle_all() == 3

    def test_underpayment_rejected_without_mutation(self):
        _, book, _ = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        incoming = book.make_offer(CONSUMER, cid, 4, TAG, now=0)
        before = book.state(cid)
        with pytest.raises(PaymentError) as err:
            relay_process_payment(
                book, RELAY_A, CONSUMER, incoming, my_cost=5, upstream=RELAY_B, tag=TAG, now=0
            )
        assert err.value.reason == "insufficient-payment"
        assert book.state(cid) == before
        assert book.earned.get(RELAY_A, 0) == 0

    def test_missing_payment_rejected_when_cost_nonzero(self):
        _, book, _ = fresh_book()
        with pytest.raises(PaymentError):
            relay_process_payment(
                book, RELAY_A, CONSUMER, None, my_cost=5, upstream=None, tag=TAG, now=0
            )

    def test_relay_that_cannot_fund_upstream_rejects_before_commit(self):
        _, book, _ = fresh_book()
        cid_up = channel_id_for(RELAY_A, RELAY_B)
        # Drain relay A's upstream balance first.
        drain = book.make_offer(RELAY_A, cid_up, 100, TAG, now=0)
        book.commit_offer(RELAY_B, RELAY_A, drain)
        cid_down = channel_id_for(CONSUMER, RELAY_A)
        incoming = book.make_offer(CONSUMER, cid_down, 10, TAG, now=0)
        before = book.state(cid_down)
        with pytest.raises(PaymentError) as err:
            relay_process_payment(
                book, RELAY_A, CONSUMER, incoming, my_cost=5, upstream=RELAY_B, tag=TAG, now=0
            )
        assert err.value.reason == "insufficient-payment"
        assert book.state(cid_down) == before

    def test_exact_payment_at_producer(self):
        _, book, _ = fresh_book()
        cid = channel_id_for(RELAY_B, PRODUCER)
        incoming = book.make_offer(RELAY_B, cid, 3, TAG, now=0)
        kept, onward = relay_process_payment(
            book, PRODUCER, RELAY_B, incoming, my_cost=3, upstream=None, tag=TAG, now=0
        )
        assert (kept, onward) == (3, None)


class TestPayAll:
    def test_lazy_channels_and_atomic_prepay(self):
        ledger, book, _ = fresh_book(balance=1_000, deposit=100)
        recipients = [(RELAY_A, 5), (RELAY_B, 2), (PRODUCER, 3)]
        states = consumer_pay_all(book, CONSUMER, recipients, TAG, now=0, deposit=50)
        assert len(states) == 3
        for (node, amount), state in zip(recipients, states):
            assert state.balance_of(node) == amount
        # Direct channels opened lazily, one per recipient.
        assert all(
            channel_id_for(CONSUMER, node, kind="pay") in book.channels
            for node, _ in recipients
        )
        before = ledger.balance(CONSUMER)
        # Second group on the same paths reuses the channels.
        consumer_pay_all(book, CONSUMER, recipients, TAG, now=1, deposit=50)
        assert ledger.balance(CONSUMER) == before
        assert ledger.conserved()

    def test_insufficient_ledger_balance_changes_nothing(self):
        ledger, book, _ = fresh_book(balance=1_000, deposit=100)
        # Lock almost everything the consumer has into an unrelated channel
        # so the three lazy 50-token fundings cannot be covered.
        book.open(CONSUMER, RELAY_B, ledger.balance(CONSUMER) - 40, 0, b"drain")
        channels_before = set(book.channels)
        with pytest.raises(PaymentError) as err:
            consumer_pay_all(
                book, CONSUMER, [(RELAY_A, 5), (RELAY_B, 2), (PRODUCER, 3)], TAG, 0, deposit=50
            )
        assert err.value.reason == "insufficient-funds"
        assert set(book.channels) == channels_before
        assert ledger.balance(CONSUMER) == 40 and ledger.conserved()


class TestConservation:
    def test_random_op_storm_conserves_tokens(self):
        rng = random.Random(4242)
        ledger = Ledger()
        keys = {a: KeyPair.from_seed(a, b"storm") for a in ALL}
        directory = {a: k.public for a, k in keys.items()}
        for a in ALL:
            ledger.mint(a, 500)
        live: dict[bytes, object] = {}
        serial = 0
        for step in range(2_000):
            op = rng.random()
            if op < 0.15:
                ledger.mint(rng.choice(ALL), rng.randrange(1, 50))
            elif op < 0.45:
                a, b = rng.sample(ALL, 2)
                serial += 1
                cid = f"storm:{serial}".encode()
                da = rng.randrange(0, min(60, ledger.balance(a)) + 1)
                db = rng.randrange(0, min(60, ledger.balance(b)) + 1)
                try:
                    live[cid] = ledger.open_channel(a, b, da, db, cid)
                except PaymentError:
                    pass
            elif op < 0.85 and live:
                cid = rng.choice(list(live))
                state = live[cid]
                delta = rng.randrange(0, state.balance_a + 1)
                state = channel_update(
                    state, delta, keys[state.party_a], keys[state.party_b]
                )
                ledger.note_update(state, state.party_a, delta)
                live[cid] = state
            elif live:
                cid = rng.choice(list(live))
                ledger.settle(live.pop(cid), directory)
            assert ledger.conserved(), f"conservation broke at step {step}"
        report = audit_ledger(ledger.log)
        assert report.ok, report.violations[:3]


class TestAudit:
    def test_clean_log_passes(self):
        ledger, book, _ = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        offer = book.make_offer(CONSUMER, cid, 15, TAG, now=0)
        book.commit_offer(RELAY_A, CONSUMER, offer)
        book.settle_all()
        report = audit_ledger(ledger.log)
        assert isinstance(report, AuditResult)
        assert report.ok and report.records == len(ledger.log)

    def test_injected_theft_is_flagged(self):
        ledger, book, _ = fresh_book()
        book.settle_all()
        log = list(ledger.log)
        log.insert(5, {
            "op": "settle", "channel": "ch:bogus", "sequence": 1,
            "balance_a": 10, "balance_b": 0,
        })
        report = audit_ledger(log)
        assert not report.ok
        assert any("non-open channel" in v for v in report.violations)

    def test_balance_inflation_is_flagged(self):
        ledger, book, _ = fresh_book()
        cid = channel_id_for(CONSUMER, RELAY_A)
        offer = book.make_offer(CONSUMER, cid, 15, TAG, now=0)
        book.commit_offer(RELAY_A, CONSUMER, offer)
        log = list(ledger.log)
        doctored = dict(next(r for r in log if r["op"] == "update"))
        doctored["balance_b"] += 7
        log[log.index(next(r for r in log if r["op"] == "update"))] = doctored
        report = audit_ledger(log)
        assert not report.ok
        assert any("break pool" in v for v in report.violations)
