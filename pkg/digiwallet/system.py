'''
Purpose:
Assembles one wallet system: wallet store, ledger, bank gateway,
transaction engine and the wallet and investment services sharing them.
'''

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

from digiwallet.domain import CustomerId, CustomerWallets, IdFactory, LogicalClock, WalletStore, random_ids
from digiwallet.gateway import FaultConfig, GatewayCall, SimulatedBankGateway
from digiwallet.investments import BusinessCalendar, InvestmentService
from digiwallet.ledger import Ledger
from digiwallet.transactions import RetryPolicy, Transaction, TransactionEngine, TransactionStore
from digiwallet.wallets import CustomerSummary, WalletService


@dataclass
class WalletSystem:
    clock: LogicalClock
    wallets: WalletStore
    ledger: Ledger
    gateway: SimulatedBankGateway
    engine: TransactionEngine
    investments: InvestmentService
    service: WalletService

    def create_customer(self, customer: CustomerId, investment_options: List[str]) -> CustomerWallets:
        return self.wallets.create_customer_wallets(customer, investment_options)

    def customers(self) -> List[CustomerId]:
        return self.wallets.customers()

    def summary(self, customer: CustomerId) -> CustomerSummary:
        return self.service.wallet_summary(customer)

    def retry(self, txn_id: str) -> Transaction:
        """Re-processes a transaction and records the investment behind it if it was a parked hold."""
        txn = self.engine.retry_transaction(txn_id)
        self.investments.resume_hold(txn)
        return txn


def build_system(
    *,
    clock: Optional[LogicalClock] = None,
    fault_config: Optional[FaultConfig] = None,
    retry_policy: Optional[RetryPolicy] = None,
    calendar: Optional[BusinessCalendar] = None,
    new_id: IdFactory = random_ids,
    wallets: Optional[WalletStore] = None,
    ledger: Optional[Ledger] = None,
    transactions: Sequence[Transaction] = (),
    call_log: Sequence[GatewayCall] = (),
) -> WalletSystem:
    clock = clock or LogicalClock()
    wallets = wallets or WalletStore(new_id=new_id)
    ledger = ledger or Ledger(wallets, clock=clock, new_id=new_id)
    gateway = SimulatedBankGateway(fault_config, call_log=list(call_log))
    engine = TransactionEngine(
        wallets, ledger, gateway, clock,
        policy=retry_policy, store=TransactionStore(transactions), new_id=new_id,
    )
    investments = InvestmentService(engine, calendar=calendar or BusinessCalendar(), new_id=new_id)
    return WalletSystem(
        clock=clock,
        wallets=wallets,
        ledger=ledger,
        gateway=gateway,
        engine=engine,
        investments=investments,
        service=WalletService(engine, investments),
    )
