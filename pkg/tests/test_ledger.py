"""Ledger: chain replay, account determinism, token conservation."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualmarket.errors import (
    DuplicateProposal,
    InsufficientBalance,
    InvalidTx,
    UnknownAccount,
)
from dualmarket.ledger import CASH, CURATOR, GENESIS_HEAD, Ledger


def test_genesis_state():
    led = Ledger(run_seed=1)
    assert led.height == 0
    assert led.head_hash == GENESIS_HEAD
    assert led.verify_chain()


def test_account_ids_deterministic_in_seed_and_order():
    a = Ledger(run_seed=9)
    b = Ledger(run_seed=9)
    c = Ledger(run_seed=10)
    ids_a = [a.create_account() for _ in range(5)]
    ids_b = [b.create_account() for _ in range(5)]
    ids_c = [c.create_account() for _ in range(5)]
    assert ids_a == ids_b
    assert set(ids_a).isdisjoint(ids_c)
    assert len(set(ids_a)) == 5
    assert all(len(x) == 64 for x in ids_a)


def test_account_creation_appends_no_tx():
    led = Ledger()
    for _ in range(1000):
        led.create_account()
    assert led.height == 0
    assert led.head_hash == GENESIS_HEAD


def test_mint_and_transfer_happy_path():
    led = Ledger()
    a, b = led.create_account(), led.create_account()
    led.mint(CASH, a, 100)
    led.transfer(CASH, a, b, 30)
    assert led.balance(a, CASH) == 70
    assert led.balance(b, CASH) == 30
    assert led.total_supply(CASH) == 100
    assert led.height == 2


def test_zero_amounts_do_not_touch_the_chain():
    led = Ledger()
    a, b = led.create_account(), led.create_account()
    led.mint(CASH, a, 0)
    led.transfer(CASH, a, b, 0)
    assert led.height == 0


def test_negative_amounts_rejected():
    led = Ledger()
    a, b = led.create_account(), led.create_account()
    with pytest.raises(InvalidTx):
        led.mint(CASH, a, -1)
    with pytest.raises(InvalidTx):
        led.transfer(CASH, a, b, -5)


def test_insufficient_balance():
    led = Ledger()
    a, b = led.create_account(), led.create_account()
    led.mint(CASH, a, 10)
    with pytest.raises(InsufficientBalance):
        led.transfer(CASH, a, b, 11)
    # failed transfer leaves no trace
    assert led.balance(a, CASH) == 10 and led.height == 1


def test_unknown_account():
    led = Ledger()
    a = led.create_account()
    with pytest.raises(UnknownAccount):
        led.balance("ff" * 32, CASH)
    with pytest.raises(UnknownAccount):
        led.transfer(CASH, a, "ff" * 32, 1)


def test_replay_and_verify_chain():
    led = Ledger()
    a, b = led.create_account(), led.create_account()
    led.mint(CASH, a, 50)
    led.mint(CURATOR, b, 3)
    led.transfer(CASH, a, b, 20)
    assert led.replay_head() == led.head_hash
    assert led.replay_head(1) == led.heads[0]
    assert led.verify_chain()
    # tampering is detected
    led.tx_log[1] = led.tx_log[0]
    assert not led.verify_chain()


def test_export_import_roundtrip():
    led = Ledger()
    a, b = led.create_account(), led.create_account()
    led.mint(CASH, a, 7)
    led.transfer(CASH, a, b, 2)
    text = led.export_log()
    txs, head = Ledger.import_log(text)
    assert txs == led.tx_log
    assert head == led.head_hash


def test_import_rejects_out_of_order_heights():
    led = Ledger()
    a = led.create_account()
    led.mint(CASH, a, 1)
    led.mint(CASH, a, 2)
    lines = led.export_log().splitlines()
    with pytest.raises(InvalidTx):
        Ledger.import_log("\n".join(reversed(lines)))
    with pytest.raises(InvalidTx):
        Ledger.import_log("1:zz")


def test_registry_entries():
    led = Ledger()
    c = led.create_account()
    e1 = led.append_registry_entry(b"\x01" * 32, c, proposal_id=10)
    e2 = led.append_registry_entry(b"\x02" * 32, c, proposal_id=11)
    assert (e1.entry_id, e2.entry_id) == (1, 2)
    assert e1.block_height == 1 and e2.block_height == 2
    with pytest.raises(DuplicateProposal):
        led.append_registry_entry(b"\x03" * 32, c, proposal_id=10)


def test_state_digest_tracks_balances():
    led = Ledger()
    a, b = led.create_account(), led.create_account()
    led.mint(CASH, a, 5)
    d1 = led.state_digest()
    led.transfer(CASH, a, b, 1)
    d2 = led.state_digest()
    assert d1 != d2
    assert len(d1) == 32


@settings(max_examples=60, deadline=None)
@given(st.lists(
    st.tuples(
        st.sampled_from(["mint", "transfer"]),
        st.integers(0, 4),
        st.integers(0, 4),
        st.integers(0, 50),
    ),
    max_size=30,
))
def test_conservation_under_random_ops(ops):
    led = Ledger(run_seed=3)
    accts = [led.create_account() for _ in range(5)]
    minted = 0
    for op, i, j, amt in ops:
        if op == "mint":
            led.mint(CASH, accts[i], amt)
            minted += amt
        else:
            try:
                led.transfer(CASH, accts[i], accts[j], amt)
            except InsufficientBalance:
                pass
    held = sum(led.balance(a, CASH) for a in accts)
    assert held == minted == led.total_supply(CASH)
    assert all(led.balance(a, CASH) >= 0 for a in accts)
    assert led.verify_chain()
    assert led.replay_head() == led.head_hash
