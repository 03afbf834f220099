'''
Purpose:
Deterministic simulation harness. A seeded generator creates customers and
policies, then drives a random mix of wallet requests, settlement ticks,
clock moves, gateway fault changes and retries through one wallet system.

Checks after every operation:
- the entries added sum to zero and come in same-transaction pairs
- touched (subwallet, balance type) balances stay non-negative
- customer funds move only by completed deposits and withdrawals
- touched transactions replay cleanly and are Completed iff they have a pair

A full sweep over the whole ledger and store runs once at the end.
'''

from __future__ import annotations

import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from fractions import Fraction
from typing import Any, Dict, List, Optional, Set, Union

from digiwallet.domain import (
    BASIS_POINTS_TOTAL,
    BalanceType,
    LogicalClock,
    Money,
    Success,
    TransactionStatus,
    TransactionType,
    WalletEngineError,
    WalletType,
    seeded_ids,
)
from digiwallet.gateway import FaultConfig
from digiwallet.investments import RequestStatus
from digiwallet.ledger import JournalEntry, available_balance, holding_balance
from digiwallet.system import WalletSystem, build_system
from digiwallet.transactions import Transaction, TxnEvent, replay

logger = logging.getLogger(__name__)

OPTION_NAMES = ("stocks", "bonds", "index", "cash", "gold")
START = datetime(2025, 1, 6, 9, tzinfo=timezone.utc)

OPERATION_WEIGHTS = {
    "deposit": 22,
    "withdraw": 9,
    "emergency_allocate": 8,
    "emergency_release": 6,
    "invest": 12,
    "liquidate": 8,
    "settle": 8,
    "advance": 8,
    "reconfigure": 5,
    "retry": 8,
    "policy": 3,
}


class InvariantViolation(WalletEngineError):
    def __init__(self, step: int, check: str, detail: str):
        super().__init__(f"step {step}: {check}: {detail}")
        self.step = step
        self.check = check
        self.detail = detail


@dataclass
class SimulationReport:
    seed: int
    operations: int
    gateway_probability: Optional[str] = None
    outcomes: Counter = field(default_factory=Counter)
    by_kind: Counter = field(default_factory=Counter)
    checks: int = 0
    violations: List[str] = field(default_factory=list)
    ledger_entries: int = 0
    external_in: Money = 0
    external_out: Money = 0
    balances: Dict[str, Dict[str, Dict[str, Money]]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "operations": self.operations,
            "gateway_probability": self.gateway_probability,
            "attempted": sum(self.outcomes.values()),
            "completed": self.outcomes["completed"],
            "failed": self.outcomes["failed"],
            "transient": self.outcomes["transient"],
            "skipped": self.outcomes["skipped"],
            "by_kind": dict(sorted(self.by_kind.items())),
            "checks": self.checks,
            "violations": list(self.violations),
            "ledger_entries": self.ledger_entries,
            "external_in": self.external_in,
            "external_out": self.external_out,
            "balances": self.balances,
        }


def random_policy(rng: random.Random, count: int) -> List[int]:
    """Basis points for `count` buckets summing to 10000; zero buckets allowed."""
    cuts = sorted(rng.randint(0, BASIS_POINTS_TOTAL) for _ in range(count - 1))
    bounds = [0, *cuts, BASIS_POINTS_TOTAL]
    return [high - low for low, high in zip(bounds, bounds[1:])]


class Simulation:
    def __init__(
        self,
        seed: int,
        gateway_probability: Union[None, str, float, Fraction] = None,
        customers: int = 3,
        strict: bool = False,
    ):
        self.rng = random.Random(seed)
        self.probability = None if gateway_probability is None else Fraction(str(gateway_probability))
        self.strict = strict
        self.customer_count = customers
        self.system: WalletSystem = build_system(
            clock=LogicalClock(START),
            fault_config=FaultConfig(fail_probability=self.probability or 0, seed=self.rng.getrandbits(32)),
            new_id=seeded_ids(random.Random(self.rng.getrandbits(64))),
        )
        self.report = SimulationReport(
            seed=seed, operations=0,
            gateway_probability=None if self.probability is None else str(self.probability),
        )
        self.step = 0
        self._seen_entries = 0
        self._seen_txns = 0
        self._customer_funds: Money = 0
        self._completed: Set[str] = set()
        self._stuck: Set[str] = set()
        self._retried: Optional[str] = None

    # ---- setup ----

    def setup(self) -> None:
        for number in range(1, self.customer_count + 1):
            options = self.rng.sample(OPTION_NAMES, self.rng.randint(1, 4))
            self.system.create_customer(f"customer-{number}", options)
            self._set_random_policy(f"customer-{number}")

    def _set_random_policy(self, customer: str) -> None:
        investment = self.system.wallets.wallets_for(customer).investment
        shares = random_policy(self.rng, len(investment.subwallets))
        outcome = self.system.investments.set_policy(
            customer, {sub.id: bp for sub, bp in zip(investment.subwallets, shares)}
        )
        if not isinstance(outcome, Success):
            self._violation("policy", f"generated policy rejected: {outcome.error}")

    # ---- operations ----

    def _customer(self) -> str:
        return self.rng.choice(self.system.customers())

    def _amount_around(self, balance: Money) -> Money:
        # mostly affordable, sometimes a little over
        return self.rng.randint(1, max(1, balance + balance // 4 + 1))

    def _txn_outcome(self, txn: Transaction) -> str:
        match txn.status:
            case TransactionStatus.COMPLETED:
                return "completed"
            case TransactionStatus.TRANSIENT_ERROR:
                return "transient"
            case _:
                return "failed"

    def run_operation(self) -> str:
        kinds = list(OPERATION_WEIGHTS)
        kind = self.rng.choices(kinds, weights=[OPERATION_WEIGHTS[k] for k in kinds])[0]
        self.report.by_kind[kind] += 1
        system = self.system
        customer = self._customer()
        wallets = system.wallets.wallets_for(customer)

        match kind:
            case "deposit":
                return self._txn_outcome(system.service.deposit(customer, self.rng.randint(1, 100_000), f"bank-{customer}"))
            case "withdraw":
                amount = self._amount_around(available_balance(system.ledger, wallets.real_money))
                return self._txn_outcome(system.service.withdraw(customer, amount, f"bank-{customer}"))
            case "emergency_allocate":
                amount = self._amount_around(available_balance(system.ledger, wallets.real_money))
                return self._txn_outcome(system.service.emergency_allocate(customer, amount))
            case "emergency_release":
                amount = self._amount_around(available_balance(system.ledger, wallets.emergency_funds))
                return self._txn_outcome(system.service.emergency_release(customer, amount))
            case "invest":
                amount = self._amount_around(available_balance(system.ledger, wallets.real_money))
                outcome = system.investments.invest(customer, amount)
                if isinstance(outcome, Success):
                    return "completed"
                return "transient" if outcome.error.transient else "failed"
            case "liquidate":
                amount = self._amount_around(available_balance(system.ledger, wallets.investment))
                outcome = system.investments.liquidate(customer, amount)
                if isinstance(outcome, Success):
                    return "completed"
                return "transient" if outcome.error.transient else "failed"
            case "settle":
                attempted = system.investments.settle(system.clock.today())
                return "transient" if any(r.status is RequestStatus.PENDING for r in attempted) else "completed"
            case "advance":
                system.clock.advance(timedelta(hours=self.rng.randint(1, 60)))
                return "completed"
            case "reconfigure":
                probability = self.probability
                if probability is None:
                    probability = self.rng.choice((Fraction(0), Fraction(1, 10), Fraction(1, 4), Fraction(1, 2)))
                system.gateway.reconfigure(FaultConfig(
                    fail_next_k=self.rng.randint(0, 3),
                    fail_probability=probability,
                    seed=self.rng.getrandbits(32),
                ))
                return "completed"
            case "retry":
                if not self._stuck:
                    return "skipped"
                self._retried = self.rng.choice(sorted(self._stuck))
                return self._txn_outcome(system.retry(self._retried))
            case "policy":
                self._set_random_policy(customer)
                return "completed"
        raise AssertionError(f"unhandled operation {kind!r}")

    # ---- checks ----

    def _violation(self, check: str, detail: str) -> None:
        violation = InvariantViolation(self.step, check, detail)
        logger.error("invariant violated: %s", violation)
        self.report.violations.append(str(violation))
        if self.strict:
            raise violation

    def check_step(self) -> None:
        ledger, store = self.system.ledger, self.system.engine.store
        self.report.checks += 1

        fresh: List[JournalEntry] = ledger.entries_since(self._seen_entries)
        self._seen_entries += len(fresh)
        if sum(entry.amount for entry in fresh) != 0:
            self._violation("zero-sum", f"new entries sum to {sum(e.amount for e in fresh)}")
        if len(fresh) % 2:
            self._violation("pairing", "odd number of new entries")
        for first, second in zip(fresh[::2], fresh[1::2]):
            if first.transaction_id != second.transaction_id or first.amount + second.amount != 0:
                self._violation("pairing", f"entries {first.seq}/{second.seq} do not form a zero-sum pair")

        for subwallet_id, balance_type in {(e.subwallet_id, e.balance_type) for e in fresh if e.subwallet_id}:
            if ledger.balance_of(subwallet_id, balance_type) < 0:
                self._violation("non-negative", f"{balance_type.value} of {subwallet_id} is negative")

        self._customer_funds += sum(e.amount for e in fresh if e.balance_type is not BalanceType.INTERNAL)

        touched = store.all()[self._seen_txns:]
        self._seen_txns = len(store)
        if self._retried is not None:
            touched.append(store.get(self._retried))
            self._retried = None
        for txn in touched:
            self._check_transaction(txn)
            if txn.status is TransactionStatus.TRANSIENT_ERROR and txn.batch_id is None:
                self._stuck.add(txn.id)
            else:
                self._stuck.discard(txn.id)
            if txn.status is TransactionStatus.COMPLETED and txn.id not in self._completed:
                self._completed.add(txn.id)
                if txn.txn_type is TransactionType.DEPOSIT:
                    self.report.external_in += txn.amount
                elif txn.txn_type is TransactionType.WITHDRAWAL:
                    self.report.external_out += txn.amount

        expected = self.report.external_in - self.report.external_out
        if self._customer_funds != expected:
            self._violation("conservation", f"customer funds {self._customer_funds}, external net {expected}")

    def _check_transaction(self, txn: Transaction) -> None:
        replayed = replay(txn.history)
        if not isinstance(replayed, Success) or replayed.value is not txn.status:
            self._violation("state-machine", f"history of {txn.id} does not replay to {txn.status.value}")
        if txn.status is TransactionStatus.COMPLETED and TxnEvent.EXECUTION_SUCCEEDED not in txn.history:
            self._violation("state-machine", f"{txn.id} completed without a successful execution")
        entries = self.system.ledger.entries_for_transaction(txn.id)
        if (txn.status is TransactionStatus.COMPLETED) != (len(entries) == 2):
            self._violation("exactly-once", f"{txn.id} is {txn.status.value} with {len(entries)} entries")

    def full_sweep(self) -> None:
        system = self.system
        ledger = system.ledger
        if ledger.total() != 0:
            self._violation("zero-sum", f"ledger sums to {ledger.total()}")
        for txn_id in ledger.transaction_ids():
            entries = ledger.entries_for_transaction(txn_id)
            if len(entries) != 2 or sum(e.amount for e in entries) != 0:
                self._violation("pairing", f"transaction {txn_id} has an unbalanced set of entries")
        for txn in system.engine.store.all():
            self._check_transaction(txn)

        funds = 0
        for wallet in system.wallets.all_wallets():
            for sub in wallet.subwallets:
                for balance_type in (BalanceType.AVAILABLE, BalanceType.HOLDING):
                    running = ledger.balance_of(sub.id, balance_type)
                    if running != ledger.scan_balance(sub.id, balance_type):
                        self._violation("balance-oracle", f"{balance_type.value} of {sub.id} disagrees with a scan")
                    if running < 0:
                        self._violation("non-negative", f"{balance_type.value} of {sub.id} is negative")
                    funds += running
        if funds != self.report.external_in - self.report.external_out:
            self._violation("conservation", f"customer funds {funds} after the run")

    # ---- driver ----

    def run(self, n_ops: int) -> SimulationReport:
        if n_ops < 0:
            raise ValueError(f"n_ops must be non-negative, got {n_ops}")
        self.report.operations = n_ops
        if n_ops:
            self.setup()
            self.check_step()
        for step in range(1, n_ops + 1):
            self.step = step
            self.report.outcomes[self.run_operation()] += 1
            self.check_step()
        self.full_sweep()
        self._summarise()
        return self.report

    def _summarise(self) -> None:
        ledger = self.system.ledger
        self.report.ledger_entries = len(ledger)
        for customer in self.system.customers():
            wallets = self.system.wallets.wallets_for(customer)
            self.report.balances[customer] = {
                wallet_type.value: {
                    "available": available_balance(ledger, wallets.wallet_for(wallet_type)),
                    "holding": holding_balance(ledger, wallets.wallet_for(wallet_type)),
                }
                for wallet_type in WalletType
            }


def run_simulation(
    seed: int,
    n_ops: int,
    gateway_probability: Union[None, str, float, Fraction] = None,
    strict: bool = False,
) -> SimulationReport:
    simulation = Simulation(seed, gateway_probability=gateway_probability, strict=strict)
    report = simulation.run(n_ops)
    logger.info("simulation seed=%d ops=%d: %d violations", seed, n_ops, len(report.violations))
    return report
