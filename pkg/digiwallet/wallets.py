'''
Purpose:
The wallet service: turns customer money movements into transactions and
answers balance questions.
'''

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Union

from digiwallet.domain import (
    BalanceType,
    CustomerId,
    CustomerWallets,
    External,
    Money,
    Outcome,
    TransactionType,
    Wallet,
    WalletType,
    ref_to,
)
from digiwallet.investments import InvestError, InvestmentService, PendingRequest
from digiwallet.ledger import available_balance, holding_balance
from digiwallet.transactions import Transaction, TransactionEngine


class RequestType(str, Enum):
    DEPOSIT = "Deposit"
    WITHDRAW = "Withdraw"
    EMERGENCY_ALLOCATION = "EmergencyAllocation"
    EMERGENCY_RELEASE = "EmergencyRelease"
    INVESTMENT = "Investment"
    LIQUIDATION = "Liquidation"


@dataclass(frozen=True)
class WalletRequest:
    kind: RequestType
    customer: CustomerId
    amount: Money


@dataclass(frozen=True)
class SubwalletBalance:
    subwallet_id: str
    name: str
    available: Money
    holding: Money


@dataclass(frozen=True)
class WalletBalance:
    wallet_id: str
    wallet_type: WalletType
    available: Money
    holding: Money
    subwallets: List[SubwalletBalance]


@dataclass(frozen=True)
class CustomerSummary:
    customer: CustomerId
    wallets: Dict[WalletType, WalletBalance]

    @property
    def total(self) -> Money:
        return sum(w.available + w.holding for w in self.wallets.values())


class WalletService:
    def __init__(self, engine: TransactionEngine, investments: InvestmentService):
        self.engine = engine
        self.investments = investments

    def _wallets(self, customer: CustomerId) -> CustomerWallets:
        return self.engine.wallets.wallets_for(customer)

    def deposit(self, customer: CustomerId, amount: Money, external_ref: str = "") -> Transaction:
        wallets = self._wallets(customer)
        return self.engine.submit(
            TransactionType.DEPOSIT, amount, External(external_ref or None), ref_to(wallets.real_money),
        )

    def withdraw(self, customer: CustomerId, amount: Money, external_ref: str = "") -> Transaction:
        wallets = self._wallets(customer)
        return self.engine.submit(
            TransactionType.WITHDRAWAL, amount, ref_to(wallets.real_money), External(external_ref or None),
        )

    def emergency_allocate(self, customer: CustomerId, amount: Money) -> Transaction:
        wallets = self._wallets(customer)
        return self.engine.submit(
            TransactionType.TRANSFER, amount, ref_to(wallets.real_money), ref_to(wallets.emergency_funds),
        )

    def emergency_release(self, customer: CustomerId, amount: Money) -> Transaction:
        wallets = self._wallets(customer)
        return self.engine.submit(
            TransactionType.TRANSFER, amount, ref_to(wallets.emergency_funds), ref_to(wallets.real_money),
        )

    def handle(self, request: WalletRequest) -> Union[Transaction, Outcome[InvestError, PendingRequest]]:
        match request.kind:
            case RequestType.DEPOSIT:
                return self.deposit(request.customer, request.amount)
            case RequestType.WITHDRAW:
                return self.withdraw(request.customer, request.amount)
            case RequestType.EMERGENCY_ALLOCATION:
                return self.emergency_allocate(request.customer, request.amount)
            case RequestType.EMERGENCY_RELEASE:
                return self.emergency_release(request.customer, request.amount)
            case RequestType.INVESTMENT:
                return self.investments.invest(request.customer, request.amount)
            case RequestType.LIQUIDATION:
                return self.investments.liquidate(request.customer, request.amount)
        raise AssertionError(f"unhandled request {request.kind!r}")

    def wallet_balance(self, wallet: Wallet) -> WalletBalance:
        ledger = self.engine.ledger
        return WalletBalance(
            wallet_id=wallet.id,
            wallet_type=wallet.wallet_type,
            available=available_balance(ledger, wallet),
            holding=holding_balance(ledger, wallet),
            subwallets=[
                SubwalletBalance(
                    subwallet_id=sub.id,
                    name=sub.name,
                    available=ledger.balance_of(sub.id, BalanceType.AVAILABLE),
                    holding=ledger.balance_of(sub.id, BalanceType.HOLDING),
                )
                for sub in wallet.subwallets
            ],
        )

    def wallet_summary(self, customer: CustomerId) -> CustomerSummary:
        wallets = self._wallets(customer)
        return CustomerSummary(
            customer=customer,
            wallets={wallet.wallet_type: self.wallet_balance(wallet) for wallet in wallets},
        )
