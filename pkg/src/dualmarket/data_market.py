"""Proposal lifecycle, token-weighted voting with delegation, dividends.

Three cooperating state machines over the ledger:

  * the association tracks databases, open proposals, and the treasury;
  * each proposal tallies votes against a snapshot of curator-token
    balances taken at submission, so mints landing after submission cannot
    tilt an in-flight vote;
  * each database tracks its accepted registry entries and shareholders.

Acceptance is strict: yes_power > theta * supply_snapshot. Rejection fires
at no_power >= (1 - theta) * supply_snapshot. Both compare exact rationals.

Delegation forwards the delegator's snapshot-measured power to an oracle
account until an expiry height (active while height <= expiry). While
active it blocks the delegator's direct vote; it is not transitive. When an
oracle votes, contributing delegators are recorded as voters too, so an
expiry cannot resurrect power that was already spent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import (
    AlreadyDelegated,
    AlreadyVoted,
    DelegatedAway,
    DuplicateDatasetRef,
    NoShareholders,
    NoTokens,
    NoVotingPower,
    ProposalClosed,
    UnknownDatabase,
)
from .ledger import CASH, CURATOR, AccountId, Ledger, RegistryEntry


class ProposalStatus(enum.Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    REJECTED = "rejected"


class Tally(enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    STILL_PENDING = "still_pending"


@dataclass(frozen=True)
class DataRequest:
    request_id: int
    initiator: AccountId
    description: str
    shard_count_expected: int


@dataclass(frozen=True)
class Delegation:
    delegator: AccountId
    delegate: AccountId
    expiry_height: int

    def active(self, height: int) -> bool:
        return height <= self.expiry_height


@dataclass(frozen=True)
class VoteReceipt:
    proposal_id: int
    voter: AccountId
    approve: bool
    power: int
    height: int


@dataclass
class DataProposal:
    proposal_id: int
    database_id: int
    contributor_wallet: AccountId
    dataset_ref: bytes
    supply_snapshot: int
    balance_snapshot: dict[AccountId, int]
    status: ProposalStatus = ProposalStatus.PENDING
    yes_power: int = 0
    no_power: int = 0
    voters: set[AccountId] = field(default_factory=set)


@dataclass
class Database:
    database_id: int
    request: DataRequest
    accepted_entries: list[RegistryEntry] = field(default_factory=list)
    shareholders: dict[AccountId, int] = field(default_factory=dict)

    @property
    def total_shards(self) -> int:
        """Shards contributed so far: one block per accepted entry."""
        return len(self.accepted_entries) * self.request.shard_count_expected

    @property
    def total_shares(self) -> int:
        return sum(self.shareholders.values())


def compute_dividend(
    shares: dict[AccountId, int], payment: int, rho: Fraction
) -> tuple[dict[AccountId, int], int, int]:
    """Pure dividend arithmetic.

    data_pool = floor(rho * payment); each shareholder gets
    floor(data_pool * shares_i / total); the data pool's integer remainder
    goes to the treasury; the rest of the payment is the compute portion.
    Returns (payouts, treasury_cut, compute_portion); the three always sum
    with the payouts to exactly `payment`.
    """
    if payment < 0:
        raise ValueError("payment must be non-negative")
    if not 0 <= rho <= 1:
        raise ValueError("rho must lie in [0, 1]")
    total = sum(shares.values())
    if total < 1:
        raise NoShareholders("no shares outstanding")
    data_pool = int(Fraction(payment) * rho)  # floor for non-negative values
    payouts = {
        acct: int(Fraction(data_pool * n, total))
        for acct, n in sorted(shares.items())
        if n > 0
    }
    paid = sum(payouts.values())
    return payouts, data_pool - paid, payment - data_pool


class DataAssociation:
    """The root contract: owns databases, proposals, and the treasury."""

    def __init__(
        self,
        ledger: Ledger,
        treasury: AccountId,
        theta: Fraction = Fraction(1, 2),
        initiator_endowment: int = 0,
    ):
        if not 0 < theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        self.ledger = ledger
        self.treasury = treasury
        self.theta = Fraction(theta)
        self.initiator_endowment = int(initiator_endowment)
        self.databases: dict[int, Database] = {}
        self.proposals: dict[int, DataProposal] = {}
        self.delegations: dict[AccountId, Delegation] = {}
        self._next_database_id = 1
        self._next_proposal_id = 1

    # -- databases ---------------------------------------------------------

    def create_database(self, initiator: AccountId, request: DataRequest) -> int:
        self.ledger._require_account(initiator)
        database_id = self._next_database_id
        self._next_database_id += 1
        db = Database(database_id=database_id, request=request)
        if self.initiator_endowment > 0:
            db.shareholders[initiator] = self.initiator_endowment
        self.databases[database_id] = db
        self.ledger.append_tx(
            ("database", database_id, initiator, request.request_id,
             request.shard_count_expected)
        )
        return database_id

    def _db(self, database_id: int) -> Database:
        db = self.databases.get(database_id)
        if db is None:
            raise UnknownDatabase(f"no database {database_id}")
        return db

    # -- proposals -----------------------------------------------------------

    def submit_proposal(
        self, contributor: AccountId, database_id: int, dataset_ref: bytes
    ) -> int:
        self.ledger._require_account(contributor)
        db = self._db(database_id)
        if not dataset_ref:
            raise DuplicateDatasetRef("dataset_ref must be non-empty")
        for p in self.proposals.values():
            if (
                p.database_id == database_id
                and p.dataset_ref == dataset_ref
                and p.status in (ProposalStatus.PENDING, ProposalStatus.ACCEPTED)
            ):
                raise DuplicateDatasetRef(
                    "dataset already pending or accepted in this database"
                )
        proposal_id = self._next_proposal_id
        self._next_proposal_id += 1
        snapshot = self.ledger.total_supply(CURATOR)
        prop = DataProposal(
            proposal_id=proposal_id,
            database_id=database_id,
            contributor_wallet=contributor,
            dataset_ref=bytes(dataset_ref),
            supply_snapshot=snapshot,
            balance_snapshot=self.ledger.balances_of_class(CURATOR),
        )
        self.proposals[proposal_id] = prop
        self.ledger.append_tx(
            ("proposal", proposal_id, database_id, contributor,
             bytes(dataset_ref), snapshot)
        )
        return proposal_id

    def _proposal(self, proposal_id: int) -> DataProposal:
        prop = self.proposals.get(proposal_id)
        if prop is None:
            raise UnknownDatabase(f"no proposal {proposal_id}")
        return prop

    # -- delegation ----------------------------------------------------------

    def delegate_votes(
        self, delegator: AccountId, oracle: AccountId, expiry_height: int
    ) -> None:
        self.ledger._require_account(delegator)
        self.ledger._require_account(oracle)
        if self.ledger.balance(delegator, CURATOR) < 1:
            raise NoTokens("delegator holds no curator tokens")
        height = self.ledger.height
        current = self.delegations.get(delegator)
        if current is not None and current.active(height):
            raise AlreadyDelegated(
                f"active delegation to {current.delegate[:12]}… exists"
            )
        self.delegations[delegator] = Delegation(delegator, oracle, expiry_height)
        self.ledger.append_tx(("delegate", delegator, oracle, expiry_height))

    def _active_inbound(self, voter: AccountId, height: int) -> list[Delegation]:
        return [
            d
            for d in self.delegations.values()
            if d.delegate == voter and d.active(height)
        ]

    # -- voting ----------------------------------------------------------------

    def cast_vote(
        self, voter: AccountId, proposal_id: int, approve: bool
    ) -> VoteReceipt:
        self.ledger._require_account(voter)
        prop = self._proposal(proposal_id)
        if prop.status is not ProposalStatus.PENDING:
            raise ProposalClosed(f"proposal {proposal_id} is {prop.status.value}")
        if voter in prop.voters:
            raise AlreadyVoted(f"{voter[:12]}… already voted on {proposal_id}")
        height = self.ledger.height
        outbound = self.delegations.get(voter)
        if outbound is not None and outbound.active(height):
            raise DelegatedAway(
                f"voting power delegated to {outbound.delegate[:12]}…"
            )
        # all power is measured against the proposal's balance snapshot
        power = prop.balance_snapshot.get(voter, 0)
        contributing: list[AccountId] = []
        for d in self._active_inbound(voter, height):
            if d.delegator in prop.voters:
                continue  # that power was spent directly before delegating
            share = prop.balance_snapshot.get(d.delegator, 0)
            if share > 0:
                power += share
                contributing.append(d.delegator)
        if power < 1:
            raise NoVotingPower("no snapshot balance and no active delegations")
        if approve:
            prop.yes_power += power
        else:
            prop.no_power += power
        prop.voters.add(voter)
        # record delegators whose power was exercised, so a later expiry
        # cannot let them vote the same tokens again
        prop.voters.update(contributing)
        self.ledger.append_tx(("vote", proposal_id, voter, bool(approve), power))
        return VoteReceipt(proposal_id, voter, bool(approve), power,
                           self.ledger.height)

    # -- finalization ------------------------------------------------------------

    def tally_and_finalize(self, proposal_id: int) -> Tally:
        prop = self._proposal(proposal_id)
        if prop.status is not ProposalStatus.PENDING:
            raise ProposalClosed(f"proposal {proposal_id} is {prop.status.value}")
        snapshot = Fraction(prop.supply_snapshot)
        if Fraction(prop.yes_power) > self.theta * snapshot:
            prop.status = ProposalStatus.ACCEPTED
            db = self._db(prop.database_id)
            entry = self.ledger.append_registry_entry(
                prop.dataset_ref, prop.contributor_wallet, proposal_id
            )
            db.accepted_entries.append(entry)
            self.ledger.mint(CURATOR, prop.contributor_wallet, 1)
            db.shareholders[prop.contributor_wallet] = (
                db.shareholders.get(prop.contributor_wallet, 0) + 1
            )
            return Tally.ACCEPTED
        if Fraction(prop.no_power) >= (1 - self.theta) * snapshot:
            prop.status = ProposalStatus.REJECTED
            return Tally.REJECTED
        return Tally.STILL_PENDING

    # -- dividends ------------------------------------------------------------------

    def distribute_dividend(
        self,
        database_id: int,
        payment: int,
        rho: Fraction,
        payer: AccountId | None = None,
    ) -> tuple[dict[AccountId, int], int, int]:
        """Split `payment` between shareholders, treasury, and compute side.

        With `payer` given, the data-side amounts actually move as cash
        transfers; the compute portion stays on the payer for the compute
        market to settle. Without it this is pure accounting.
        """
        db = self._db(database_id)
        payouts, treasury_cut, compute_portion = compute_dividend(
            db.shareholders, payment, Fraction(rho)
        )
        if payer is not None:
            for acct, amount in payouts.items():
                self.ledger.transfer(CASH, payer, acct, amount)
            self.ledger.transfer(CASH, payer, self.treasury, treasury_cut)
        return payouts, treasury_cut, compute_portion
