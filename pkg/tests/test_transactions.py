import threading
import time
from itertools import product

import pytest
from hypothesis import given, settings, strategies as st

from conftest import FRIDAY, make_system
from digiwallet.domain import (
    BalanceType,
    External,
    Failure,
    MONEY_LIMIT,
    Success,
    TransactionStatus,
    TransactionType,
    WalletRef,
    ref_to,
)
from digiwallet.gateway import FaultConfig
from digiwallet.ledger import EntryPair, JournalEntry
from digiwallet.transactions import (
    BatchMemberRetry,
    BatchStatus,
    ExecutionErrorKind,
    Invalid,
    InvalidReason,
    RetryPolicy,
    StateErrorKind,
    Transaction,
    TxnEvent,
    VALID,
    execute,
    journal_pair_for,
    replay,
    retry,
    transition,
    validate,
)

RM_ONLY = FaultConfig()


# ----------------------- Validation matrix -----------------------

PARTIES = ["ext", "rm", "ef", "inv1", "inv2", "bob_rm", "bob_inv1", "unknown"]

ACCEPTED = {
    TransactionType.DEPOSIT: {("ext", "rm"), ("ext", "bob_rm")},
    TransactionType.WITHDRAWAL: {("rm", "ext"), ("bob_rm", "ext")},
    TransactionType.TRANSFER: {("rm", "ef"), ("ef", "rm")},
    TransactionType.HOLD: {("rm", "rm"), ("inv1", "inv1"), ("inv2", "inv2"), ("bob_rm", "bob_rm"),
                           ("bob_inv1", "bob_inv1")},
    TransactionType.TRANSFER_FROM_HOLD: {("rm", "inv1"), ("rm", "inv2"), ("inv1", "rm"), ("inv2", "rm"),
                                         ("bob_rm", "bob_inv1"), ("bob_inv1", "bob_rm")},
}


def _fund(system, wallet, sub, number):
    """1000 available and 1000 holding on one subwallet."""
    for offset, balance_type in enumerate((BalanceType.AVAILABLE, BalanceType.HOLDING)):
        txn_id = f"fund-{number}-{offset}"
        system.ledger.post_pair(EntryPair(
            JournalEntry(txn_id, None, None, -1000, BalanceType.INTERNAL),
            JournalEntry(txn_id, wallet.id, sub.id, 1000, balance_type),
        ))


@pytest.fixture(scope="module")
def matrix():
    system = make_system()
    alice = system.create_customer("alice", ["stocks", "bonds"])
    bob = system.create_customer("bob", ["gold"])
    for number, wallet in enumerate(system.wallets.all_wallets()):
        for sub in wallet.subwallets:
            _fund(system, wallet, sub, f"{number}-{sub.name}")
    parties = {
        "ext": External("bank-1"),
        "rm": ref_to(alice.real_money),
        "ef": ref_to(alice.emergency_funds),
        "inv1": ref_to(alice.investment, alice.investment.subwallets[0]),
        "inv2": ref_to(alice.investment, alice.investment.subwallets[1]),
        "bob_rm": ref_to(bob.real_money),
        "bob_inv1": ref_to(bob.investment),
        "unknown": WalletRef("no-wallet", "no-subwallet"),
    }
    return system, parties


def make_txn(txn_type, originator, beneficiary, amount=100):
    return Transaction("t", txn_type, amount, originator, beneficiary, created_at=FRIDAY)


@pytest.mark.parametrize("txn_type,origin,target", list(product(TransactionType, PARTIES, PARTIES)))
def test_validation_matrix(matrix, txn_type, origin, target):
    system, parties = matrix
    outcome = validate(make_txn(txn_type, parties[origin], parties[target]), system.ledger)

    if (origin, target) in ACCEPTED[txn_type]:
        assert outcome == VALID
    else:
        assert isinstance(outcome, Invalid)
        if "unknown" in (origin, target):
            assert outcome.reason is InvalidReason.UNKNOWN_PARTY


@pytest.mark.parametrize("txn_type,origin,target,reason", [
    (TransactionType.DEPOSIT, "ext", "inv1", InvalidReason.INCOMPATIBLE_WALLET),
    (TransactionType.DEPOSIT, "rm", "ef", InvalidReason.INCOMPATIBLE_ROUTE),
    (TransactionType.WITHDRAWAL, "ef", "ext", InvalidReason.INCOMPATIBLE_WALLET),
    (TransactionType.TRANSFER, "rm", "rm", InvalidReason.SAME_SUBWALLET),
    (TransactionType.TRANSFER, "rm", "inv1", InvalidReason.INCOMPATIBLE_WALLET),
    (TransactionType.TRANSFER, "ext", "rm", InvalidReason.INCOMPATIBLE_ROUTE),
    (TransactionType.HOLD, "rm", "ef", InvalidReason.INCOMPATIBLE_ROUTE),
    (TransactionType.HOLD, "ef", "ef", InvalidReason.INCOMPATIBLE_WALLET),
    (TransactionType.TRANSFER_FROM_HOLD, "inv1", "inv1", InvalidReason.SAME_SUBWALLET),
    (TransactionType.TRANSFER_FROM_HOLD, "rm", "bob_inv1", InvalidReason.INCOMPATIBLE_ROUTE),
    (TransactionType.TRANSFER_FROM_HOLD, "ef", "inv1", InvalidReason.INCOMPATIBLE_WALLET),
])
def test_rejection_reasons(matrix, txn_type, origin, target, reason):
    system, parties = matrix
    outcome = validate(make_txn(txn_type, parties[origin], parties[target]), system.ledger)
    assert isinstance(outcome, Invalid)
    assert outcome.reason is reason


@pytest.mark.parametrize("amount", [0, -1])
def test_amount_checked_first(matrix, amount):
    system, parties = matrix
    outcome = validate(make_txn(TransactionType.DEPOSIT, parties["unknown"], parties["rm"], amount), system.ledger)
    assert outcome.reason is InvalidReason.NON_POSITIVE_AMOUNT


@pytest.mark.parametrize("txn_type,origin,target", [
    (TransactionType.WITHDRAWAL, "rm", "ext"),
    (TransactionType.TRANSFER, "rm", "ef"),
    (TransactionType.HOLD, "inv1", "inv1"),
    (TransactionType.TRANSFER_FROM_HOLD, "inv1", "rm"),
])
def test_balance_checked_for_all_but_deposit(matrix, txn_type, origin, target):
    system, parties = matrix
    assert validate(make_txn(txn_type, parties[origin], parties[target], 1000), system.ledger) == VALID
    outcome = validate(make_txn(txn_type, parties[origin], parties[target], 1001), system.ledger)
    assert outcome.reason is InvalidReason.INSUFFICIENT_FUNDS


def test_deposit_needs_no_balance(matrix):
    system, parties = matrix
    big = make_txn(TransactionType.DEPOSIT, parties["ext"], parties["rm"], 10**12)
    assert validate(big, system.ledger) == VALID


# ----------------------- Journal pairs -----------------------

def test_pair_layouts(system, alice):
    rm, ef = ref_to(alice.real_money), ref_to(alice.emergency_funds)
    stocks = ref_to(alice.investment, alice.investment.subwallets[0])

    def shape(txn_type, origin, target):
        pair = journal_pair_for(make_txn(txn_type, origin, target, 4000))
        return [(e.subwallet_id, e.balance_type, e.amount) for e in pair]

    assert shape(TransactionType.HOLD, rm, rm) == [
        (rm.subwallet_id, BalanceType.AVAILABLE, -4000), (rm.subwallet_id, BalanceType.HOLDING, 4000)]
    assert shape(TransactionType.DEPOSIT, External(), rm) == [
        (None, BalanceType.INTERNAL, -4000), (rm.subwallet_id, BalanceType.AVAILABLE, 4000)]
    assert shape(TransactionType.WITHDRAWAL, rm, External()) == [
        (rm.subwallet_id, BalanceType.AVAILABLE, -4000), (None, BalanceType.INTERNAL, 4000)]
    assert shape(TransactionType.TRANSFER, rm, ef) == [
        (rm.subwallet_id, BalanceType.AVAILABLE, -4000), (ef.subwallet_id, BalanceType.AVAILABLE, 4000)]
    assert shape(TransactionType.TRANSFER_FROM_HOLD, stocks, rm) == [
        (stocks.subwallet_id, BalanceType.HOLDING, -4000), (rm.subwallet_id, BalanceType.AVAILABLE, 4000)]


# ----------------------- State machine -----------------------

LEGAL = {
    (TransactionStatus.PROCESSING, TxnEvent.VALIDATION_FAILED): TransactionStatus.FAILED,
    (TransactionStatus.PROCESSING, TxnEvent.EXECUTION_SUCCEEDED): TransactionStatus.COMPLETED,
    (TransactionStatus.PROCESSING, TxnEvent.EXECUTION_FAILED_TRANSIENTLY): TransactionStatus.TRANSIENT_ERROR,
    (TransactionStatus.TRANSIENT_ERROR, TxnEvent.EXECUTION_SUCCEEDED): TransactionStatus.COMPLETED,
    (TransactionStatus.TRANSIENT_ERROR, TxnEvent.EXECUTION_FAILED_TRANSIENTLY): TransactionStatus.TRANSIENT_ERROR,
    (TransactionStatus.TRANSIENT_ERROR, TxnEvent.RETRIES_EXHAUSTED): TransactionStatus.FAILED,
}


@pytest.mark.parametrize("status,event", list(product(TransactionStatus, TxnEvent)))
def test_transition_table(status, event):
    txn = Transaction("t", TransactionType.DEPOSIT, 1, External(), External(), FRIDAY, status=status)
    outcome = transition(txn, event)
    if (status, event) in LEGAL:
        assert isinstance(outcome, Success)
        assert outcome.value.status is LEGAL[(status, event)]
        assert outcome.value.history == (event,)
    else:
        assert isinstance(outcome, Failure)
        expected = StateErrorKind.TERMINAL_STATE if status.terminal else StateErrorKind.ILLEGAL_TRANSITION
        assert outcome.error.kind is expected


@pytest.mark.property
@given(events=st.lists(st.sampled_from(list(TxnEvent)), max_size=12))
def test_terminal_states_never_move(events):
    txn = Transaction("t", TransactionType.DEPOSIT, 1, External(), External(), FRIDAY)
    for event in events:
        outcome = transition(txn, event)
        if txn.status.terminal:
            assert isinstance(outcome, Failure)
            assert outcome.error.kind is StateErrorKind.TERMINAL_STATE
        if isinstance(outcome, Success):
            txn = outcome.value
    if txn.status is TransactionStatus.COMPLETED:
        assert TxnEvent.EXECUTION_SUCCEEDED in txn.history
    assert replay(txn.history) == Success(txn.status)


# ----------------------- Retry combinator -----------------------

def counting(results):
    calls = []

    def op():
        calls.append(1)
        return results[len(calls) - 1]
    return op, calls


def test_retry_returns_first_success():
    op, calls = counting([Success(1)])
    assert retry(op, RetryPolicy(3)) == Success(1)
    assert len(calls) == 1


def test_retry_until_success():
    op, calls = counting([Failure("a"), Failure("b"), Success(3)])
    assert retry(op, RetryPolicy(3)) == Success(3)
    assert len(calls) == 3


def test_retry_returns_last_failure():
    op, calls = counting([Failure("a"), Failure("b"), Failure("c"), Success(4)])
    assert retry(op, RetryPolicy(3)) == Failure("c")
    assert len(calls) == 3


def test_retry_policy_needs_an_attempt():
    with pytest.raises(ValueError):
        RetryPolicy(0)


@pytest.mark.parametrize("k,n", list(product(range(6), range(1, 6))))
def test_retry_law(k, n):
    system = make_system(FaultConfig(fail_next_k=k), retry_policy=RetryPolicy(n))
    system.create_customer("alice", ["stocks"])
    txn = system.service.deposit("alice", 10_000)

    assert (txn.status is TransactionStatus.COMPLETED) == (k < n)
    assert txn.attempts == min(k + 1, n)
    assert len(system.ledger.entries_for_transaction(txn.id)) == (2 if k < n else 0)
    if k >= n:
        assert txn.status is TransactionStatus.TRANSIENT_ERROR
        assert txn.last_error == ExecutionErrorKind.TRANSIENT_GATEWAY.value


# ----------------------- Processing -----------------------

class TestProcessing:
    def test_healthy_deposit(self, system, alice):
        txn = system.service.deposit("alice", 10_000)
        assert txn.status is TransactionStatus.COMPLETED
        assert txn.attempts == 1
        assert len(system.ledger) == 2
        assert txn.history == (TxnEvent.EXECUTION_SUCCEEDED,)

    def test_deposit_to_investment_fails_permanently(self, system, alice):
        txn = system.engine.submit(TransactionType.DEPOSIT, 100, External(), ref_to(alice.investment))
        assert txn.status is TransactionStatus.FAILED
        assert txn.last_error == "IncompatibleWallet"
        assert txn.attempts == 0
        assert len(system.ledger) == 0

    def test_created_transaction_is_processing(self, system, alice):
        rm = ref_to(alice.real_money)
        txn = system.engine.create_transaction(TransactionType.HOLD, 500, rm, rm)
        assert txn.status is TransactionStatus.PROCESSING
        assert txn.attempts == 0
        assert txn.created_at == FRIDAY

    def test_exhausted_then_retried(self):
        system = make_system(FaultConfig(fail_next_k=5))
        system.create_customer("alice", ["stocks"])
        txn = system.service.deposit("alice", 10_000)
        assert txn.status is TransactionStatus.TRANSIENT_ERROR
        assert txn.attempts == 3
        assert len(system.ledger) == 0

        system.gateway.reconfigure(FaultConfig())
        again = system.retry(txn.id)
        assert again.status is TransactionStatus.COMPLETED
        assert again.attempts == 4
        assert replay(again.history) == Success(TransactionStatus.COMPLETED)

    def test_terminal_transaction_is_left_alone(self, system, funded):
        txn = system.engine.store.all()[0]
        assert system.retry(txn.id) == txn
        assert len(system.ledger) == 2

    def test_unfunded_retry_becomes_ledger_post_error(self):
        system = make_system(FaultConfig(fail_next_k=3))
        alice = system.create_customer("alice", ["stocks"])
        system.gateway.reconfigure(FaultConfig())
        system.service.deposit("alice", 1000)
        system.gateway.reconfigure(FaultConfig(fail_next_k=3))
        withdrawal = system.service.withdraw("alice", 1000)
        assert withdrawal.status is TransactionStatus.TRANSIENT_ERROR

        system.service.emergency_allocate("alice", 1000)
        system.gateway.reconfigure(FaultConfig())
        again = system.retry(withdrawal.id)

        assert again.status is TransactionStatus.TRANSIENT_ERROR
        assert again.last_error == ExecutionErrorKind.LEDGER_POST.value
        assert system.ledger.entries_for_transaction(withdrawal.id) == []
        compensations = [c for c in system.gateway.call_log if c.kind == "compensate" and c.ok]
        assert [c.request_id for c in compensations] == [withdrawal.id] * 3
        assert system.service.wallet_summary("alice").wallets[alice.real_money.wallet_type].available == 0

    def test_overflowing_deposit_fails_permanently(self, system, alice):
        assert system.service.deposit("alice", MONEY_LIMIT).status is TransactionStatus.COMPLETED
        calls = len(system.gateway.call_log)

        txn = system.service.deposit("alice", 1)
        assert txn.status is TransactionStatus.FAILED
        assert txn.last_error == InvalidReason.BALANCE_OVERFLOW.value
        assert txn.attempts == 0
        assert len(system.gateway.call_log) == calls
        assert len(system.ledger) == 2

    def test_concurrent_withdrawals_spend_the_balance_once(self, system, funded, monkeypatch):
        transfer = system.gateway.external_transfer

        def slow_transfer(request):
            time.sleep(0.05)
            return transfer(request)

        monkeypatch.setattr(system.gateway, "external_transfer", slow_transfer)
        results = []
        workers = [
            threading.Thread(target=lambda: results.append(system.service.withdraw("alice", 10_000)))
            for _ in range(2)
        ]
        for worker in workers:
            worker.start()
        for worker in workers:
            worker.join()

        assert sorted(t.status.value for t in results) == ["COMPLETED", "FAILED"]
        [refused] = [t for t in results if t.status is TransactionStatus.FAILED]
        assert refused.last_error == "InsufficientFunds"
        outbound = [c for c in system.gateway.call_log if c.direction.value == "OUTBOUND"]
        assert [c.kind for c in outbound] == ["transfer"]
        assert system.ledger.balance_of(funded.real_money.main_subwallet.id, BalanceType.AVAILABLE) == 0


class TestExecute:
    def test_gateway_failure_leaves_ledger_alone(self, system, alice):
        system.gateway.reconfigure(FaultConfig(fail_next_k=1))
        txn = make_txn(TransactionType.DEPOSIT, External(), ref_to(alice.real_money), 10_000)
        outcome = execute(txn, system.ledger, system.gateway)
        assert isinstance(outcome, Failure)
        assert outcome.error.kind is ExecutionErrorKind.TRANSIENT_GATEWAY
        assert len(system.ledger) == 0

    def test_internal_types_skip_the_gateway(self, system, funded):
        system.gateway.reconfigure(FaultConfig(fail_probability=1))
        rm = ref_to(funded.real_money)
        outcome = execute(make_txn(TransactionType.HOLD, rm, rm, 500), system.ledger, system.gateway)
        assert isinstance(outcome, Success)

    def test_post_failure_compensates_gateway(self, system, alice):
        txn = make_txn(TransactionType.WITHDRAWAL, ref_to(alice.real_money), External("bank"), 500)
        outcome = execute(txn, system.ledger, system.gateway)
        assert isinstance(outcome, Failure)
        assert outcome.error.kind is ExecutionErrorKind.LEDGER_POST
        assert [c.kind for c in system.gateway.call_log] == ["transfer", "compensate"]

    def test_overflow_is_refused_before_the_bank(self, system, alice):
        system.service.deposit("alice", MONEY_LIMIT)
        calls = len(system.gateway.call_log)
        txn = make_txn(TransactionType.DEPOSIT, External(), ref_to(alice.real_money), 1)
        outcome = execute(txn, system.ledger, system.gateway)
        assert isinstance(outcome, Failure)
        assert outcome.error.kind is ExecutionErrorKind.LEDGER_POST
        assert len(system.gateway.call_log) == calls


# ----------------------- Batches -----------------------

class TestBatches:
    def test_all_members_succeed(self, system, alice):
        rm = ref_to(alice.real_money)
        batch = system.engine.create_batch([
            (TransactionType.DEPOSIT, 100, External(), rm),
            (TransactionType.HOLD, 50, rm, rm),
        ])
        assert all(t.batch_id == batch.id for t in batch.transactions)

        done = system.engine.retry_batch(batch)
        assert done.status is BatchStatus.COMPLETED
        assert len(system.ledger) == 4
        assert [e.seq for e in system.ledger.entries] == [1, 2, 3, 4]

    def test_failure_restores_ledger_and_members(self, system, funded):
        rm = ref_to(funded.real_money)
        before = system.ledger.to_jsonl()
        batch = system.engine.create_batch([
            (TransactionType.DEPOSIT, 100, External(), rm),
            (TransactionType.WITHDRAWAL, 999_999, rm, External()),
        ])
        done = system.engine.retry_batch(batch)

        assert done.status is BatchStatus.FAILED
        assert system.ledger.to_jsonl() == before
        deposit, withdrawal = done.transactions
        assert deposit == batch.transactions[0]
        assert withdrawal.status is TransactionStatus.FAILED
        assert withdrawal.last_error == "InsufficientFunds"
        assert system.gateway.call_log[-1].kind == "compensate"
        assert system.gateway.call_log[-1].request_id == deposit.id

    def test_empty_batch(self, system):
        done = system.engine.retry_batch(system.engine.create_batch([]))
        assert done.status is BatchStatus.COMPLETED
        assert len(system.ledger) == 0

    def test_transient_member_fails_batch(self, system, funded):
        rm = ref_to(funded.real_money)
        before = system.ledger.to_jsonl()
        system.gateway.reconfigure(FaultConfig(fail_next_k=3))
        done = system.engine.retry_batch(system.engine.create_batch([
            (TransactionType.HOLD, 50, rm, rm),
            (TransactionType.DEPOSIT, 100, External(), rm),
        ]))

        assert done.status is BatchStatus.FAILED
        assert system.ledger.to_jsonl() == before
        hold, deposit = done.transactions
        assert hold.status is TransactionStatus.PROCESSING
        assert hold.attempts == 0
        assert deposit.status is TransactionStatus.TRANSIENT_ERROR
        assert deposit.attempts == 3
        assert done.failing_member() == deposit

    def test_members_cannot_be_retried_alone(self):
        system = make_system(FaultConfig(fail_next_k=10))
        alice = system.create_customer("alice", ["stocks"])
        batch = system.engine.retry_batch(system.engine.create_batch([
            (TransactionType.DEPOSIT, 100, External(), ref_to(alice.real_money)),
        ]))
        assert batch.status is BatchStatus.FAILED
        member = batch.transactions[0]
        assert member.status is TransactionStatus.TRANSIENT_ERROR
        with pytest.raises(BatchMemberRetry):
            system.retry(member.id)


FAILURES = ["insufficient", "wrong_wallet", "transient"]


@pytest.mark.property
@settings(max_examples=1000)
@given(
    kinds=st.lists(st.sampled_from(["deposit", "hold", "allocate"]), max_size=6),
    amounts=st.lists(st.integers(min_value=1, max_value=4000), min_size=6, max_size=6),
    position=st.integers(min_value=0, max_value=6),
    failure=st.sampled_from(FAILURES),
)
def test_failed_batch_leaves_export_identical(kinds, amounts, position, failure):
    system = make_system()
    alice = system.create_customer("alice", ["stocks"])
    system.service.deposit("alice", 10_000)
    rm, ef = ref_to(alice.real_money), ref_to(alice.emergency_funds)

    specs = []
    for kind, amount in zip(kinds, amounts):
        match kind:
            case "deposit":
                specs.append((TransactionType.DEPOSIT, amount, External(), rm))
            case "hold":
                specs.append((TransactionType.HOLD, amount, rm, rm))
            case "allocate":
                specs.append((TransactionType.TRANSFER, amount, rm, ef))
    match failure:
        case "insufficient":
            bad = (TransactionType.WITHDRAWAL, 10**9, rm, External())
        case "wrong_wallet":
            bad = (TransactionType.DEPOSIT, 100, External(), ref_to(alice.investment))
        case "transient":
            bad = (TransactionType.DEPOSIT, 100, External(), rm)
    position = min(position, len(specs))
    specs.insert(position, bad)

    before = system.ledger.to_jsonl()
    if failure == "transient":
        # every gateway call from here on fails, so the first deposit in the batch is stuck
        system.gateway.reconfigure(FaultConfig(fail_probability=1))
    done = system.engine.retry_batch(system.engine.create_batch(specs))

    assert done.status is BatchStatus.FAILED
    assert system.ledger.to_jsonl() == before
    assert all(t.status is not TransactionStatus.COMPLETED for t in done.transactions)
    assert sum(t.status is not TransactionStatus.PROCESSING for t in done.transactions) == 1


@pytest.mark.property
@given(amounts=st.lists(st.integers(min_value=1, max_value=1000), max_size=8))
def test_successful_batch_appends_all_pairs(amounts):
    system = make_system()
    alice = system.create_customer("alice", ["stocks"])
    rm = ref_to(alice.real_money)
    before = system.ledger.export_lines()
    done = system.engine.retry_batch(system.engine.create_batch(
        [(TransactionType.DEPOSIT, amount, External(), rm) for amount in amounts]
    ))

    assert done.status is BatchStatus.COMPLETED
    lines = system.ledger.export_lines()
    assert lines[:len(before)] == before
    assert len(lines) == len(before) + 2 * len(amounts)
