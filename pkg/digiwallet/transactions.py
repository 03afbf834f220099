'''
Purpose:
The transaction service: creation, validation, execution, the status state
machine, the generic retry combinator and atomic batches.

Expected failures never raise. Validation returns Valid/Invalid, execution
returns an Outcome, and processing reports through the returned
transaction's status and last_error.
'''

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from tenacity import Retrying, after_log, retry_if_result, stop_after_attempt, wait_none

from digiwallet.domain import (
    BatchId,
    External,
    Failure,
    IdFactory,
    LogicalClock,
    MONEY_LIMIT,
    Money,
    Outcome,
    Party,
    Subwallet,
    Success,
    TransactionId,
    TransactionStatus,
    TransactionType,
    BalanceType,
    Wallet,
    WalletEngineError,
    WalletRef,
    WalletStore,
    WalletType,
    random_ids,
)
from digiwallet.gateway import BankGateway, Direction, GatewayRequest
from digiwallet.ledger import EntryPair, JournalEntry, Ledger, StagedLedger

logger = logging.getLogger(__name__)

LedgerView = Union[Ledger, StagedLedger]

GATEWAY_TYPES = (TransactionType.DEPOSIT, TransactionType.WITHDRAWAL)


class UnknownTransaction(WalletEngineError):
    pass


class BatchMemberRetry(WalletEngineError):
    """Batch members only move together; re-run the request that created the batch."""


# ----------------------- Types -----------------------

class TxnEvent(str, Enum):
    VALIDATION_FAILED = "ValidationFailed"
    EXECUTION_SUCCEEDED = "ExecutionSucceeded"
    EXECUTION_FAILED_TRANSIENTLY = "ExecutionFailedTransiently"
    RETRIES_EXHAUSTED = "RetriesExhausted"


@dataclass(frozen=True)
class Transaction:
    id: TransactionId
    txn_type: TransactionType
    amount: Money
    originator: Party
    beneficiary: Party
    created_at: datetime
    status: TransactionStatus = TransactionStatus.PROCESSING
    attempts: int = 0
    batch_id: Optional[BatchId] = None
    last_error: Optional[str] = None
    history: Tuple[TxnEvent, ...] = ()


class InvalidReason(str, Enum):
    INCOMPATIBLE_WALLET = "IncompatibleWallet"
    INCOMPATIBLE_ROUTE = "IncompatibleRoute"
    INSUFFICIENT_FUNDS = "InsufficientFunds"
    SAME_SUBWALLET = "SameSubwallet"
    UNKNOWN_PARTY = "UnknownParty"
    NON_POSITIVE_AMOUNT = "NonPositiveAmount"
    BALANCE_OVERFLOW = "BalanceOverflow"


@dataclass(frozen=True)
class Valid:
    pass


@dataclass(frozen=True)
class Invalid:
    reason: InvalidReason
    detail: str = ""


ValidationOutcome = Union[Valid, Invalid]
VALID = Valid()


class ExecutionErrorKind(str, Enum):
    TRANSIENT_GATEWAY = "TransientGatewayError"
    LEDGER_POST = "LedgerPostError"


@dataclass(frozen=True)
class ExecutionError:
    kind: ExecutionErrorKind
    message: str


class StateErrorKind(str, Enum):
    TERMINAL_STATE = "TerminalState"
    ILLEGAL_TRANSITION = "IllegalTransition"


@dataclass(frozen=True)
class StateError:
    kind: StateErrorKind
    status: TransactionStatus
    event: TxnEvent


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be at least 1, got {self.max_attempts}")


class BatchStatus(str, Enum):
    PENDING = "PENDING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"


@dataclass(frozen=True)
class Batch:
    id: BatchId
    transactions: Tuple[Transaction, ...]
    status: BatchStatus = BatchStatus.PENDING

    def failing_member(self) -> Optional[Transaction]:
        for txn in self.transactions:
            if txn.status in (TransactionStatus.FAILED, TransactionStatus.TRANSIENT_ERROR):
                return txn
        return None


# ----------------------- State machine -----------------------

TRANSITIONS: Dict[Tuple[TransactionStatus, TxnEvent], TransactionStatus] = {
    (TransactionStatus.PROCESSING, TxnEvent.VALIDATION_FAILED): TransactionStatus.FAILED,
    (TransactionStatus.PROCESSING, TxnEvent.EXECUTION_SUCCEEDED): TransactionStatus.COMPLETED,
    (TransactionStatus.PROCESSING, TxnEvent.EXECUTION_FAILED_TRANSIENTLY): TransactionStatus.TRANSIENT_ERROR,
    (TransactionStatus.TRANSIENT_ERROR, TxnEvent.EXECUTION_SUCCEEDED): TransactionStatus.COMPLETED,
    (TransactionStatus.TRANSIENT_ERROR, TxnEvent.EXECUTION_FAILED_TRANSIENTLY): TransactionStatus.TRANSIENT_ERROR,
    (TransactionStatus.TRANSIENT_ERROR, TxnEvent.RETRIES_EXHAUSTED): TransactionStatus.FAILED,
}


def transition(txn: Transaction, event: TxnEvent) -> Outcome[StateError, Transaction]:
    if txn.status.terminal:
        return Failure(StateError(StateErrorKind.TERMINAL_STATE, txn.status, event))
    target = TRANSITIONS.get((txn.status, event))
    if target is None:
        return Failure(StateError(StateErrorKind.ILLEGAL_TRANSITION, txn.status, event))
    logger.debug("transaction %s: %s --%s--> %s", txn.id, txn.status.value, event.value, target.value)
    return Success(replace(txn, status=target, history=txn.history + (event,)))


def replay(history: Sequence[TxnEvent]) -> Outcome[StateError, TransactionStatus]:
    """Runs an event history from Processing, stopping at the first illegal edge."""
    status = TransactionStatus.PROCESSING
    for event in history:
        if status.terminal:
            return Failure(StateError(StateErrorKind.TERMINAL_STATE, status, event))
        target = TRANSITIONS.get((status, event))
        if target is None:
            return Failure(StateError(StateErrorKind.ILLEGAL_TRANSITION, status, event))
        status = target
    return Success(status)


def _advance(txn: Transaction, event: TxnEvent, **changes) -> Transaction:
    moved = transition(txn, event)
    if isinstance(moved, Failure):
        raise AssertionError(f"illegal transition for {txn.id}: {moved.error}")
    return replace(moved.value, **changes)


# ----------------------- Retry combinator -----------------------

def retry(op: Callable[[], Outcome], policy: RetryPolicy) -> Outcome:
    """
    Calls `op` up to policy.max_attempts times, returning the first Success
    straight away or the last Failure once attempts run out. Works for any
    operation that reports failure as a Failure value.
    """
    retrying = Retrying(
        stop=stop_after_attempt(policy.max_attempts),
        wait=wait_none(),
        sleep=lambda seconds: None,
        retry=retry_if_result(lambda outcome: isinstance(outcome, Failure)),
        retry_error_callback=lambda state: state.outcome.result(),
        after=after_log(logger, logging.DEBUG),
    )
    return retrying(op)


# ----------------------- Validation -----------------------

def _resolve(party: Party, wallets: WalletStore) -> Optional[Tuple[Wallet, Subwallet]]:
    if isinstance(party, External):
        return None
    return wallets.resolve(party)


def _check_route(
    txn: Transaction,
    origin: Optional[Tuple[Wallet, Subwallet]],
    target: Optional[Tuple[Wallet, Subwallet]],
) -> ValidationOutcome:
    def route(detail: str) -> Invalid:
        return Invalid(InvalidReason.INCOMPATIBLE_ROUTE, detail)

    def wallet(detail: str) -> Invalid:
        return Invalid(InvalidReason.INCOMPATIBLE_WALLET, detail)

    match txn.txn_type:
        case TransactionType.DEPOSIT:
            if origin is not None or target is None:
                return route("deposits go from an external account to a wallet")
            if target[0].wallet_type is not WalletType.REAL_MONEY:
                return wallet("deposits only reach the RealMoney wallet")
            return VALID

        case TransactionType.WITHDRAWAL:
            if origin is None or target is not None:
                return route("withdrawals go from a wallet to an external account")
            if origin[0].wallet_type is not WalletType.REAL_MONEY:
                return wallet("withdrawals only leave the RealMoney wallet")
            return VALID

        case TransactionType.TRANSFER:
            if origin is None or target is None:
                return route("transfers move funds between two wallets")
            if origin[1].id == target[1].id:
                return Invalid(InvalidReason.SAME_SUBWALLET, "transfer to the same subwallet")
            if {origin[0].wallet_type, target[0].wallet_type} != {WalletType.REAL_MONEY, WalletType.EMERGENCY_FUNDS}:
                return wallet("transfers run between RealMoney and EmergencyFunds")
            if origin[0].customer != target[0].customer:
                return route("transfers stay within one customer")
            return VALID

        case TransactionType.HOLD:
            if origin is None or target is None:
                return route("holds are placed on a wallet")
            if origin[1].id != target[1].id or origin[0].id != target[0].id:
                return route("a hold keeps funds in the same subwallet")
            if origin[0].wallet_type not in (WalletType.REAL_MONEY, WalletType.INVESTMENT):
                return wallet("holds are placed on RealMoney or Investment wallets")
            return VALID

        case TransactionType.TRANSFER_FROM_HOLD:
            if origin is None or target is None:
                return route("held funds move between two wallets")
            if origin[1].id == target[1].id:
                return Invalid(InvalidReason.SAME_SUBWALLET, "transfer from hold to the same subwallet")
            if {origin[0].wallet_type, target[0].wallet_type} != {WalletType.REAL_MONEY, WalletType.INVESTMENT}:
                return wallet("held funds move between RealMoney and Investment")
            if origin[0].customer != target[0].customer:
                return route("held funds stay within one customer")
            return VALID

    raise AssertionError(f"unhandled transaction type {txn.txn_type!r}")


def _required_balance(txn_type: TransactionType) -> Optional[BalanceType]:
    match txn_type:
        case TransactionType.DEPOSIT:
            return None
        case TransactionType.WITHDRAWAL | TransactionType.TRANSFER | TransactionType.HOLD:
            return BalanceType.AVAILABLE
        case TransactionType.TRANSFER_FROM_HOLD:
            return BalanceType.HOLDING
    raise AssertionError(f"unhandled transaction type {txn_type!r}")


def validate(txn: Transaction, ledger: LedgerView) -> ValidationOutcome:
    """Checks amount, parties, the route matrix and funds, in that order."""
    if txn.amount <= 0:
        return Invalid(InvalidReason.NON_POSITIVE_AMOUNT, f"amount {txn.amount}")

    wallets = ledger.wallets
    for party in (txn.originator, txn.beneficiary):
        if isinstance(party, WalletRef) and wallets.resolve(party) is None:
            return Invalid(InvalidReason.UNKNOWN_PARTY, f"{party.wallet_id}/{party.subwallet_id}")
    origin = _resolve(txn.originator, wallets)
    target = _resolve(txn.beneficiary, wallets)

    routed = _check_route(txn, origin, target)
    if isinstance(routed, Invalid):
        return routed

    balance_type = _required_balance(txn.txn_type)
    if balance_type is not None:
        available = ledger.balance_of(origin[1].id, balance_type)
        if available < txn.amount:
            return Invalid(
                InvalidReason.INSUFFICIENT_FUNDS,
                f"{balance_type.value} balance {available} below {txn.amount}",
            )
    overflow = _overflow(journal_pair_for(txn), ledger)
    if overflow is not None:
        return Invalid(InvalidReason.BALANCE_OVERFLOW, overflow)
    return VALID


# ----------------------- Journal pairs and execution -----------------------

def journal_pair_for(txn: Transaction) -> EntryPair:
    amount = txn.amount

    def side(party: Party, balance_type: BalanceType, signed: Money) -> JournalEntry:
        if isinstance(party, External):
            return JournalEntry(txn.id, None, None, signed, BalanceType.INTERNAL)
        return JournalEntry(txn.id, party.wallet_id, party.subwallet_id, signed, balance_type)

    origin, target = txn.originator, txn.beneficiary
    match txn.txn_type:
        case TransactionType.DEPOSIT:
            return EntryPair(side(origin, BalanceType.INTERNAL, -amount), side(target, BalanceType.AVAILABLE, amount))
        case TransactionType.WITHDRAWAL:
            return EntryPair(side(origin, BalanceType.AVAILABLE, -amount), side(target, BalanceType.INTERNAL, amount))
        case TransactionType.TRANSFER:
            return EntryPair(side(origin, BalanceType.AVAILABLE, -amount), side(target, BalanceType.AVAILABLE, amount))
        case TransactionType.HOLD:
            return EntryPair(side(origin, BalanceType.AVAILABLE, -amount), side(origin, BalanceType.HOLDING, amount))
        case TransactionType.TRANSFER_FROM_HOLD:
            return EntryPair(side(origin, BalanceType.HOLDING, -amount), side(target, BalanceType.AVAILABLE, amount))
    raise AssertionError(f"unhandled transaction type {txn.txn_type!r}")


def _overflow(pair: EntryPair, ledger: LedgerView) -> Optional[str]:
    for entry in pair:
        after = ledger.balance_of_key((entry.subwallet_id, entry.balance_type)) + entry.amount
        if abs(entry.amount) > MONEY_LIMIT or abs(after) > MONEY_LIMIT:
            return f"{entry.balance_type.value} balance would reach {after}"
    return None


def _gateway_request(txn: Transaction) -> Optional[GatewayRequest]:
    match txn.txn_type:
        case TransactionType.DEPOSIT:
            return GatewayRequest(Direction.INBOUND, txn.amount, txn.originator.ref or "", txn.id)
        case TransactionType.WITHDRAWAL:
            return GatewayRequest(Direction.OUTBOUND, txn.amount, txn.beneficiary.ref or "", txn.id)
        case TransactionType.TRANSFER | TransactionType.HOLD | TransactionType.TRANSFER_FROM_HOLD:
            return None
    raise AssertionError(f"unhandled transaction type {txn.txn_type!r}")


def execute(txn: Transaction, ledger: LedgerView, gateway: BankGateway) -> Outcome[ExecutionError, EntryPair]:
    """Calls the bank for external types, then posts the journal pair."""
    pair = journal_pair_for(txn)
    overflow = _overflow(pair, ledger)
    if overflow is not None:
        # the bank is never asked to move money the ledger cannot record
        return Failure(ExecutionError(ExecutionErrorKind.LEDGER_POST, overflow))
    request = _gateway_request(txn)
    if request is not None:
        sent = gateway.external_transfer(request)
        if isinstance(sent, Failure):
            return Failure(ExecutionError(ExecutionErrorKind.TRANSIENT_GATEWAY, sent.error.message))
    try:
        posted = ledger.post_pair(pair)
    except WalletEngineError as e:
        if request is not None:
            gateway.compensate(txn.id)
        logger.warning("posting %s failed: %s", txn.id, e)
        return Failure(ExecutionError(ExecutionErrorKind.LEDGER_POST, str(e)))
    return Success(posted)


# ----------------------- Processing -----------------------

def process_transaction(
    txn: Transaction, policy: RetryPolicy, ledger: LedgerView, gateway: BankGateway,
) -> Transaction:
    """
    Validates a Processing transaction (failing it permanently when invalid),
    then executes with retries. A transaction that runs out of attempts stays
    TransientError and can be processed again later.
    """
    if txn.status.terminal:
        logger.warning("transaction %s is already %s", txn.id, txn.status.value)
        return txn

    current = txn
    if current.status is TransactionStatus.PROCESSING:
        checked = validate(current, ledger)
        if isinstance(checked, Invalid):
            logger.info("transaction %s failed validation: %s %s", txn.id, checked.reason.value, checked.detail)
            return _advance(current, TxnEvent.VALIDATION_FAILED, last_error=checked.reason.value)

    def attempt() -> Outcome[ExecutionError, EntryPair]:
        nonlocal current
        current = replace(current, attempts=current.attempts + 1)
        outcome = execute(current, ledger, gateway)
        if isinstance(outcome, Success):
            current = _advance(current, TxnEvent.EXECUTION_SUCCEEDED, last_error=None)
        else:
            current = _advance(current, TxnEvent.EXECUTION_FAILED_TRANSIENTLY, last_error=outcome.error.kind.value)
        return outcome

    retry(attempt, policy)
    return current


def retry_batch(batch: Batch, policy: RetryPolicy, ledger: Ledger, gateway: BankGateway) -> Batch:
    """
    Processes members in order against a staging overlay. Either every pair
    is committed together, or the ledger is left exactly as it was and
    members that had gone through are put back to their pre-batch state.
    """
    if batch.status is not BatchStatus.PENDING:
        logger.warning("batch %s is already %s", batch.id, batch.status.value)
        return batch

    stage = ledger.stage()
    results: List[Transaction] = []
    for txn in batch.transactions:
        if txn.status is TransactionStatus.COMPLETED:
            results.append(txn)
            continue
        processed = process_transaction(txn, policy, stage, gateway)
        results.append(processed)
        if processed.status is TransactionStatus.COMPLETED:
            continue

        stage.discard()
        restored: List[Transaction] = []
        for before, after in zip(batch.transactions, results[:-1]):
            if after is not before:
                if after.txn_type in GATEWAY_TYPES:
                    gateway.compensate(after.id)
                restored.append(before)
            else:
                restored.append(after)
        restored.append(processed)
        restored.extend(batch.transactions[len(results):])
        logger.warning("batch %s rolled back: %s ended %s (%s)",
                       batch.id, processed.id, processed.status.value, processed.last_error)
        return replace(batch, transactions=tuple(restored), status=BatchStatus.FAILED)

    stage.commit()
    logger.info("batch %s committed %d transactions", batch.id, len(results))
    return replace(batch, transactions=tuple(results), status=BatchStatus.COMPLETED)


# ----------------------- Store and engine -----------------------

class TransactionStore:
    """Latest version of every transaction, in creation order."""

    def __init__(self, transactions: Sequence[Transaction] = ()):
        self._txns: Dict[TransactionId, Transaction] = {txn.id: txn for txn in transactions}

    def put(self, txn: Transaction) -> Transaction:
        self._txns[txn.id] = txn
        return txn

    def get(self, txn_id: TransactionId) -> Transaction:
        try:
            return self._txns[txn_id]
        except KeyError:
            raise UnknownTransaction(f"unknown transaction {txn_id}") from None

    def __contains__(self, txn_id: TransactionId) -> bool:
        return txn_id in self._txns

    def __len__(self) -> int:
        return len(self._txns)

    def all(self) -> List[Transaction]:
        return list(self._txns.values())

    def touching(self, wallet_ids: Sequence[str]) -> List[Transaction]:
        ids = set(wallet_ids)
        return [
            txn for txn in self._txns.values()
            if any(isinstance(p, WalletRef) and p.wallet_id in ids for p in (txn.originator, txn.beneficiary))
        ]


class TransactionEngine:
    """
    Serialized front door to the transaction lifecycle; keeps the store current.
    One lock covers validate-then-execute so concurrent callers never both
    spend the same balance.
    """

    def __init__(
        self,
        wallets: WalletStore,
        ledger: Ledger,
        gateway: BankGateway,
        clock: LogicalClock,
        policy: Optional[RetryPolicy] = None,
        store: Optional[TransactionStore] = None,
        new_id: IdFactory = random_ids,
    ):
        self.wallets = wallets
        self.ledger = ledger
        self.gateway = gateway
        self.clock = clock
        self.policy = policy or RetryPolicy()
        self.store = store or TransactionStore()
        self._new_id = new_id
        self._lock = threading.RLock()
        self.batches: Dict[BatchId, Batch] = {}

    def create_transaction(
        self, txn_type: TransactionType, amount: Money, originator: Party, beneficiary: Party,
        batch_id: Optional[BatchId] = None,
    ) -> Transaction:
        with self._lock:
            txn = Transaction(
                id=self._new_id(),
                txn_type=txn_type,
                amount=amount,
                originator=originator,
                beneficiary=beneficiary,
                created_at=self.clock.now(),
                batch_id=batch_id,
            )
            return self.store.put(txn)

    def process(self, txn: Transaction, policy: Optional[RetryPolicy] = None) -> Transaction:
        with self._lock:
            # another caller may have moved it on since `txn` was read
            current = self.store.get(txn.id) if txn.id in self.store else txn
            processed = process_transaction(current, policy or self.policy, self.ledger, self.gateway)
            return self.store.put(processed)

    def submit(self, txn_type: TransactionType, amount: Money, originator: Party, beneficiary: Party) -> Transaction:
        with self._lock:
            return self.process(self.create_transaction(txn_type, amount, originator, beneficiary))

    def retry_transaction(self, txn_id: TransactionId, policy: Optional[RetryPolicy] = None) -> Transaction:
        with self._lock:
            txn = self.store.get(txn_id)
            if txn.batch_id is not None and not txn.status.terminal:
                raise BatchMemberRetry(f"transaction {txn_id} belongs to batch {txn.batch_id}")
            return self.process(txn, policy)

    def create_batch(self, specs: Sequence[Tuple[TransactionType, Money, Party, Party]]) -> Batch:
        with self._lock:
            batch_id = self._new_id()
            members = tuple(self.create_transaction(*spec, batch_id=batch_id) for spec in specs)
            batch = Batch(id=batch_id, transactions=members)
            self.batches[batch_id] = batch
            return batch

    def retry_batch(self, batch: Batch, policy: Optional[RetryPolicy] = None) -> Batch:
        with self._lock:
            done = retry_batch(batch, policy or self.policy, self.ledger, self.gateway)
            for txn in done.transactions:
                self.store.put(txn)
            self.batches[done.id] = done
            return done
