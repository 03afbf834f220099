'''
Purpose:
Append-only journal of entries and the balance queries built on it.

Entries are posted in zero-sum pairs: the negative side is the source of
funds and the positive side is the destination. Internal entries stand for
the external bank account and carry no wallet reference.

Balances are served from running sums kept per (subwallet, balance type);
`scan_balance` recomputes the same value from the raw entries.
'''

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from digiwallet.domain import (
    BalanceType,
    EntryId,
    IdFactory,
    LogicalClock,
    Money,
    SubwalletId,
    TransactionId,
    UnknownSubwallet,
    Wallet,
    WalletEngineError,
    WalletId,
    WalletStore,
    WalletType,
    check_money,
    random_ids,
)

logger = logging.getLogger(__name__)

EXPORT_FIELDS = (
    "entry_id", "transaction_id", "wallet_id", "subwallet_id",
    "amount", "balance_type", "seq", "created_at",
)


class LedgerError(WalletEngineError):
    pass


class UnbalancedPair(LedgerError):
    pass


class ZeroAmountEntry(LedgerError):
    pass


class MalformedEntry(LedgerError):
    pass


class NegativeBalance(LedgerError):
    pass


@dataclass(frozen=True)
class JournalEntry:
    transaction_id: TransactionId
    wallet_id: Optional[WalletId]
    subwallet_id: Optional[SubwalletId]
    amount: Money
    balance_type: BalanceType
    # assigned on commit
    entry_id: Optional[EntryId] = None
    seq: Optional[int] = None
    created_at: Optional[datetime] = None

    @property
    def committed(self) -> bool:
        return self.seq is not None

    def to_dict(self) -> dict:
        return {
            "entry_id": self.entry_id,
            "transaction_id": self.transaction_id,
            "wallet_id": self.wallet_id,
            "subwallet_id": self.subwallet_id,
            "amount": self.amount,
            "balance_type": self.balance_type.value,
            "seq": self.seq,
            "created_at": format_timestamp(self.created_at) if self.created_at else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "JournalEntry":
        if list(data) != list(EXPORT_FIELDS):
            raise MalformedEntry(f"expected fields {list(EXPORT_FIELDS)}, got {list(data)}")
        amount, seq = data["amount"], data["seq"]
        if type(amount) is not int or type(seq) is not int:
            raise MalformedEntry("amount and seq must be integers")
        return cls(
            entry_id=data["entry_id"],
            transaction_id=data["transaction_id"],
            wallet_id=data["wallet_id"],
            subwallet_id=data["subwallet_id"],
            amount=amount,
            balance_type=BalanceType(data["balance_type"]),
            seq=seq,
            created_at=parse_timestamp(data["created_at"]),
        )


@dataclass(frozen=True)
class EntryPair:
    first: JournalEntry
    second: JournalEntry

    def __iter__(self) -> Iterator[JournalEntry]:
        return iter((self.first, self.second))


def format_timestamp(when: datetime) -> str:
    return when.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_timestamp(text: str) -> datetime:
    when = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if when.tzinfo is None:
        when = when.replace(tzinfo=timezone.utc)
    return when.astimezone(timezone.utc)


def check_entry_shape(entry: JournalEntry) -> None:
    if entry.amount == 0:
        raise ZeroAmountEntry(f"zero amount entry for transaction {entry.transaction_id}")
    check_money(entry.amount)
    internal = entry.balance_type is BalanceType.INTERNAL
    if internal != (entry.wallet_id is None) or internal != (entry.subwallet_id is None):
        raise MalformedEntry(
            f"entry for {entry.transaction_id}: wallet reference must be absent exactly for INTERNAL entries"
        )


def check_pair_shape(pair: EntryPair) -> None:
    for entry in pair:
        check_entry_shape(entry)
    if pair.first.transaction_id != pair.second.transaction_id:
        raise MalformedEntry("both entries of a pair must share one transaction id")
    if pair.first.amount + pair.second.amount != 0:
        raise UnbalancedPair(
            f"pair for {pair.first.transaction_id} sums to {pair.first.amount + pair.second.amount}"
        )


BalanceKey = Tuple[Optional[SubwalletId], BalanceType]


def _key(entry: JournalEntry) -> BalanceKey:
    return (entry.subwallet_id, entry.balance_type)


def _apply(sums: Dict[BalanceKey, int], entries: Iterable[JournalEntry]) -> Dict[BalanceKey, int]:
    """Returns a copy of `sums` with entries applied, asserting non-negative wallet balances."""
    updated = dict(sums)
    for entry in entries:
        key = _key(entry)
        updated[key] = check_money(updated.get(key, 0) + entry.amount)
    for entry in entries:
        if entry.balance_type is not BalanceType.INTERNAL and updated[_key(entry)] < 0:
            raise NegativeBalance(
                f"{entry.balance_type.value} balance of subwallet {entry.subwallet_id} "
                f"would become {updated[_key(entry)]}"
            )
    return updated


class Ledger:
    """Single-writer append-only ledger. Readers always see whole pairs."""

    def __init__(self, wallets: WalletStore, clock: Optional[LogicalClock] = None, new_id: IdFactory = random_ids):
        self.wallets = wallets
        self.clock = clock or LogicalClock()
        self._new_id = new_id
        self._entries: List[JournalEntry] = []
        self._sums: Dict[BalanceKey, int] = {}
        self._by_txn: Dict[TransactionId, List[JournalEntry]] = {}
        self._lock = threading.RLock()

    # ---- writes ----

    def check_references(self, pair: EntryPair) -> None:
        for entry in pair:
            if entry.wallet_id is None:
                continue
            wallet = self.wallets.get_wallet(entry.wallet_id)
            sub = self.wallets.get_subwallet(entry.subwallet_id)
            if sub.wallet_id != wallet.id:
                raise UnknownSubwallet(f"subwallet {sub.id} does not belong to wallet {wallet.id}")

    def post_pair(self, pair: EntryPair) -> EntryPair:
        """Appends both entries atomically and returns them with seq numbers assigned."""
        return self.commit([pair])[0]

    def commit(self, pairs: Sequence[EntryPair]) -> List[EntryPair]:
        """Appends several pairs as one unit; nothing is appended unless all of them are good."""
        with self._lock:
            for pair in pairs:
                check_pair_shape(pair)
                self.check_references(pair)
                if pair.first.transaction_id in self._by_txn:
                    raise MalformedEntry(f"transaction {pair.first.transaction_id} already has entries")
            sums = self._sums
            for pair in pairs:
                sums = _apply(sums, list(pair))

            now = self.clock.now()
            committed: List[EntryPair] = []
            seq = len(self._entries)
            for pair in pairs:
                stamped = []
                for entry in pair:
                    seq += 1
                    stamped.append(replace(entry, entry_id=self._new_id(), seq=seq, created_at=now))
                committed.append(EntryPair(*stamped))

            for pair in committed:
                self._entries.extend(pair)
                self._by_txn[pair.first.transaction_id] = list(pair)
            self._sums = sums
        for pair in committed:
            logger.debug("posted pair for %s (seq %d-%d)", pair.first.transaction_id, pair.first.seq, pair.second.seq)
        return committed

    def stage(self) -> "StagedLedger":
        return StagedLedger(self)

    # ---- reads ----

    @property
    def entries(self) -> Tuple[JournalEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def entries_since(self, count: int) -> List[JournalEntry]:
        """Entries appended after the first `count`."""
        with self._lock:
            return self._entries[count:]

    def balance_of_key(self, key: BalanceKey) -> Money:
        """Running sum for any key, the shared INTERNAL key (None, INTERNAL) included."""
        with self._lock:
            return self._sums.get(key, 0)

    def balance_of(self, subwallet_id: SubwalletId, balance_type: BalanceType) -> Money:
        if not self.wallets.has_subwallet(subwallet_id):
            raise UnknownSubwallet(f"unknown subwallet {subwallet_id}")
        with self._lock:
            return self._sums.get((subwallet_id, balance_type), 0)

    def scan_balance(self, subwallet_id: SubwalletId, balance_type: BalanceType) -> Money:
        """Full-scan summation over the entry sequence; the definition `balance_of` must agree with."""
        return sum(
            entry.amount for entry in self.entries
            if entry.subwallet_id == subwallet_id and entry.balance_type is balance_type
        )

    def total(self) -> Money:
        return sum(entry.amount for entry in self.entries)

    def entries_for_transaction(self, txn_id: TransactionId) -> List[JournalEntry]:
        with self._lock:
            return list(self._by_txn.get(txn_id, ()))

    def entries_for_wallet(self, wallet_id: WalletId) -> List[JournalEntry]:
        return [entry for entry in self.entries if entry.wallet_id == wallet_id]

    def transaction_ids(self) -> List[TransactionId]:
        with self._lock:
            return list(self._by_txn)

    # ---- export / import ----

    def export_lines(self) -> List[str]:
        return [json.dumps(entry.to_dict(), separators=(",", ":")) for entry in self.entries]

    def to_jsonl(self) -> str:
        lines = self.export_lines()
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(
        cls, text: str, wallets: WalletStore, clock: Optional[LogicalClock] = None, new_id: IdFactory = random_ids,
    ) -> "Ledger":
        """Rebuilds a ledger, re-checking pairing, zero sums, seq order and non-negative balances."""
        ledger = cls(wallets, clock=clock, new_id=new_id)
        entries: List[JournalEntry] = []
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                entries.append(JournalEntry.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError, AttributeError) as e:
                raise MalformedEntry(f"line {number}: {e}") from e
        if len(entries) % 2:
            raise UnbalancedPair("ledger holds an odd number of entries")
        for position, entry in enumerate(entries, start=1):
            if entry.seq != position:
                raise MalformedEntry(f"entry {entry.entry_id} has seq {entry.seq}, expected {position}")
        pairs = [EntryPair(entries[i], entries[i + 1]) for i in range(0, len(entries), 2)]
        with ledger._lock:
            for pair in pairs:
                check_pair_shape(pair)
                ledger.check_references(pair)
                if pair.first.transaction_id in ledger._by_txn:
                    raise MalformedEntry(f"transaction {pair.first.transaction_id} has more than one pair")
                ledger._sums = _apply(ledger._sums, list(pair))
                ledger._entries.extend(pair)
                ledger._by_txn[pair.first.transaction_id] = list(pair)
        return ledger


class StagedLedger:
    """Buffers pairs on top of a ledger; nothing reaches the ledger until `commit`."""

    def __init__(self, base: Ledger):
        self.base = base
        self.wallets = base.wallets
        self._pairs: List[EntryPair] = []
        self._deltas: Dict[BalanceKey, int] = {}

    def post_pair(self, pair: EntryPair) -> EntryPair:
        check_pair_shape(pair)
        self.base.check_references(pair)
        txn_id = pair.first.transaction_id
        if self.base.entries_for_transaction(txn_id) or any(p.first.transaction_id == txn_id for p in self._pairs):
            raise MalformedEntry(f"transaction {txn_id} already has entries")
        view = {key: self.balance_of_key(key) for key in map(_key, pair)}
        _apply(view, list(pair))
        for entry in pair:
            self._deltas[_key(entry)] = self._deltas.get(_key(entry), 0) + entry.amount
        self._pairs.append(pair)
        return pair

    def balance_of_key(self, key: BalanceKey) -> Money:
        subwallet_id, balance_type = key
        base = (
            self.base.balance_of(subwallet_id, balance_type) if subwallet_id is not None
            else self.base.balance_of_key(key)
        )
        return base + self._deltas.get(key, 0)

    def balance_of(self, subwallet_id: SubwalletId, balance_type: BalanceType) -> Money:
        return self.balance_of_key((subwallet_id, balance_type))

    @property
    def pending(self) -> List[EntryPair]:
        return list(self._pairs)

    def commit(self) -> List[EntryPair]:
        committed = self.base.commit(self._pairs)
        self._pairs, self._deltas = [], {}
        return committed

    def discard(self) -> None:
        if self._pairs:
            logger.warning("discarding %d staged pairs", len(self._pairs))
        self._pairs, self._deltas = [], {}


# ----------------------- Wallet balance queries -----------------------

def _balance_queries(wallet: Wallet, balance_type: BalanceType) -> List[Tuple[SubwalletId, BalanceType]]:
    """The list of ledger queries whose sum is a wallet's balance of one type."""
    match wallet.wallet_type:
        case WalletType.REAL_MONEY | WalletType.EMERGENCY_FUNDS:
            return [(wallet.main_subwallet.id, balance_type)]
        case WalletType.INVESTMENT:
            return [(sub.id, balance_type) for sub in wallet.subwallets]
    raise AssertionError(f"unhandled wallet type {wallet.wallet_type!r}")


def _wallet_balance(ledger: Ledger, wallet: Wallet, balance_type: BalanceType) -> Money:
    ledger.wallets.get_wallet(wallet.id)
    return sum(ledger.balance_of(sub_id, kind) for sub_id, kind in _balance_queries(wallet, balance_type))


def available_balance(ledger: Ledger, wallet: Wallet) -> Money:
    return _wallet_balance(ledger, wallet, BalanceType.AVAILABLE)


def holding_balance(ledger: Ledger, wallet: Wallet) -> Money:
    return _wallet_balance(ledger, wallet, BalanceType.HOLDING)


def scan_wallet_balance(ledger: Ledger, wallet: Wallet, balance_type: BalanceType) -> Money:
    return sum(ledger.scan_balance(sub_id, kind) for sub_id, kind in _balance_queries(wallet, balance_type))
