"""Shared builders for the test suite."""

from __future__ import annotations

import copy
from fractions import Fraction
from importlib import resources

from dualmarket.compute_market import ComputeMarket
from dualmarket.data_market import DataAssociation, DataRequest
from dualmarket.ledger import CURATOR, Ledger
from dualmarket.report import render_report, run_scenario
from dualmarket.scenario import parse_scenario


def fresh_stack(seed=7, theta=Fraction(1, 2), endowment=0):
    """A wired-up ledger/association/market with treasury and escrow."""
    ledger = Ledger(run_seed=seed)
    treasury = ledger.create_account()
    escrow = ledger.create_account()
    assoc = DataAssociation(
        ledger, treasury, theta=theta, initiator_endowment=endowment
    )
    market = ComputeMarket(ledger, assoc, treasury, escrow)
    return ledger, assoc, market, treasury, escrow


def curators(ledger, n, tokens=1):
    out = []
    for _ in range(n):
        acct = ledger.create_account()
        ledger.mint(CURATOR, acct, tokens)
        out.append(acct)
    return out


def accepted_db(ledger, assoc, initiator, voters, entries=1, shards_per_entry=10):
    """Database with `entries` accepted contributions from `initiator`.

    Voters all vote yes; len(voters) must exceed entries - 1 or later
    proposals stall against the growing snapshot.
    """
    request = DataRequest(
        request_id=1,
        initiator=initiator,
        description="test data",
        shard_count_expected=shards_per_entry,
    )
    database_id = assoc.create_database(initiator, request)
    for i in range(entries):
        ref = bytes([i + 1]) * 32
        pid = assoc.submit_proposal(initiator, database_id, ref)
        for v in voters:
            assoc.cast_vote(v, pid, True)
        assoc.tally_and_finalize(pid)
    return database_id


def bundled_text(name: str) -> str:
    return (resources.files("dualmarket") / "scenarios" / f"{name}.scn").read_text(
        encoding="utf-8"
    )


BUNDLED = ("baseline", "tmr", "split_tmr", "faults", "e2e")

_cache: dict[tuple[str, int | None], tuple[dict, str]] = {}


def run_bundled(name: str, seed: int | None = None) -> tuple[dict, str]:
    """Run a bundled scenario once per (name, seed); returns (data, text)."""
    key = (name, seed)
    if key not in _cache:
        sc = parse_scenario(bundled_text(name))
        if seed is not None:
            sc.seed = seed
        data = run_scenario(sc, name=name)
        _cache[key] = (data, render_report(data))
    data, text = _cache[key]
    return copy.deepcopy(data), text


def run_text(text: str, name: str = "inline") -> dict:
    return run_scenario(parse_scenario(text), name=name)
