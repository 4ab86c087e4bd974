"""Append-only, hash-chained transaction log with accounts and a registry.

Stands in for the blockchain: single logical writer, every mutation appended
as a canonically serialized transaction, head hash chained as
SHA-256(prev_head || tx_bytes) from a genesis head of 32 zero bytes. Replay
of the log reproduces the head hash; export/import round-trips it.

Token amounts are plain non-negative integers. Two token classes are used by
the markets: "cash" for payments and "curator" for voting tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import canon
from .errors import (
    DuplicateProposal,
    InsufficientBalance,
    InvalidTx,
    UnknownAccount,
)

GENESIS_HEAD = b"\x00" * 32

CASH = "cash"
CURATOR = "curator"

AccountId = str  # 64 hex chars (a 32-byte digest)


@dataclass(frozen=True)
class RegistryEntry:
    """Immutable record of an accepted dataset contribution."""

    entry_id: int
    dataset_ref: bytes
    contributor: AccountId
    proposal_id: int
    block_height: int


class Ledger:
    def __init__(self, run_seed: int = 0):
        self.run_seed = int(run_seed)
        self._n_accounts = 0
        self.accounts: list[AccountId] = []
        self._known: set[AccountId] = set()
        self.balances: dict[tuple[AccountId, str], int] = {}
        self.supply: dict[str, int] = {}
        self.tx_log: list[bytes] = []
        self.heads: list[bytes] = []  # heads[i] = head after tx i+1
        self.registry: list[RegistryEntry] = []
        self._registered_proposals: set[int] = set()

    # -- chain ------------------------------------------------------------

    @property
    def height(self) -> int:
        return len(self.tx_log)

    @property
    def head_hash(self) -> bytes:
        return self.heads[-1] if self.heads else GENESIS_HEAD

    def append_tx(self, tx) -> tuple[int, bytes]:
        """Append an already-validated transaction (any canonical value)."""
        tx_bytes = canon.encode(tx)
        head = canon.chain_hash(self.head_hash, tx_bytes)
        self.tx_log.append(tx_bytes)
        self.heads.append(head)
        return self.height, head

    def replay_head(self, upto: int | None = None) -> bytes:
        """Recompute the chain from genesis over the first `upto` txs."""
        n = self.height if upto is None else upto
        head = GENESIS_HEAD
        for tx_bytes in self.tx_log[:n]:
            head = canon.chain_hash(head, tx_bytes)
        return head

    def verify_chain(self) -> bool:
        """Recomputed head at every height must match the recorded one."""
        head = GENESIS_HEAD
        for tx_bytes, recorded in zip(self.tx_log, self.heads):
            head = canon.chain_hash(head, tx_bytes)
            if head != recorded:
                return False
        return True

    def export_log(self) -> str:
        """One tx per line: `<height>:<hex canonical bytes>`."""
        return "\n".join(
            f"{i + 1}:{tx.hex()}" for i, tx in enumerate(self.tx_log)
        )

    @staticmethod
    def import_log(text: str) -> tuple[list[bytes], bytes]:
        """Parse an exported log; returns (tx list, recomputed head)."""
        txs: list[bytes] = []
        head = GENESIS_HEAD
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            height_s, _, hex_s = line.partition(":")
            try:
                height = int(height_s)
                tx = bytes.fromhex(hex_s)
            except ValueError as exc:
                raise InvalidTx(f"log line {lineno}: {exc}") from exc
            if height != len(txs) + 1:
                raise InvalidTx(f"log line {lineno}: height out of order")
            txs.append(tx)
            head = canon.chain_hash(head, tx)
        return txs, head

    # -- accounts & tokens --------------------------------------------------

    def create_account(self) -> AccountId:
        """Fresh id, deterministic in (run seed, creation order).

        Creation appends no transaction; an account exists by construction
        and only balance-changing operations hit the chain.
        """
        ordinal = self._n_accounts
        self._n_accounts += 1
        acct = canon.digest(("account", self.run_seed, ordinal)).hex()
        self.accounts.append(acct)
        self._known.add(acct)
        return acct

    def account_exists(self, acct: AccountId) -> bool:
        return acct in self._known

    def _require_account(self, acct: AccountId) -> None:
        if acct not in self._known:
            raise UnknownAccount(f"unknown account {acct[:12]}…")

    def balance(self, acct: AccountId, token_class: str) -> int:
        self._require_account(acct)
        return self.balances.get((acct, token_class), 0)

    def total_supply(self, token_class: str) -> int:
        return self.supply.get(token_class, 0)

    def balances_of_class(self, token_class: str) -> dict[AccountId, int]:
        return {
            acct: amt
            for (acct, cls), amt in self.balances.items()
            if cls == token_class and amt > 0
        }

    def mint(self, token_class: str, to: AccountId, amount: int) -> None:
        self._require_account(to)
        amount = int(amount)
        if amount < 0:
            raise InvalidTx("mint amount must be non-negative")
        if amount == 0:
            return
        self.balances[(to, token_class)] = (
            self.balances.get((to, token_class), 0) + amount
        )
        self.supply[token_class] = self.supply.get(token_class, 0) + amount
        self.append_tx(("mint", token_class, to, amount))

    def transfer(
        self, token_class: str, frm: AccountId, to: AccountId, amount: int
    ) -> None:
        self._require_account(frm)
        self._require_account(to)
        amount = int(amount)
        if amount < 0:
            raise InvalidTx("transfer amount must be non-negative")
        if amount == 0:
            return  # no state change, no tx
        have = self.balances.get((frm, token_class), 0)
        if have < amount:
            raise InsufficientBalance(
                f"{frm[:12]}… holds {have} {token_class}, needs {amount}"
            )
        self.balances[(frm, token_class)] = have - amount
        self.balances[(to, token_class)] = (
            self.balances.get((to, token_class), 0) + amount
        )
        self.append_tx(("transfer", token_class, frm, to, amount))

    # -- registry -----------------------------------------------------------

    def append_registry_entry(
        self, dataset_ref: bytes, contributor: AccountId, proposal_id: int
    ) -> RegistryEntry:
        self._require_account(contributor)
        if proposal_id in self._registered_proposals:
            raise DuplicateProposal(
                f"proposal {proposal_id} already has a registry entry"
            )
        entry_id = len(self.registry) + 1
        height, _ = self.append_tx(
            ("registry", entry_id, dataset_ref, contributor, proposal_id)
        )
        entry = RegistryEntry(
            entry_id=entry_id,
            dataset_ref=bytes(dataset_ref),
            contributor=contributor,
            proposal_id=proposal_id,
            block_height=height,
        )
        self.registry.append(entry)
        self._registered_proposals.add(proposal_id)
        return entry

    # -- snapshots ------------------------------------------------------------

    def state_digest(self) -> bytes:
        """Digest of head hash plus sorted balances and supplies."""
        bal = sorted(
            (acct, cls, amt) for (acct, cls), amt in self.balances.items() if amt
        )
        sup = sorted(self.supply.items())
        flat_bal = [x for row in bal for x in row]
        flat_sup = [x for row in sup for x in row]
        return canon.digest(("state", self.head_hash, flat_bal, flat_sup))
