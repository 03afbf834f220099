'''
Purpose:
Core value objects, entities and enumerations shared by every other module,
plus the wallet store and investment-policy validation.

All amounts are signed integers in minor units (cents) of one implicit
currency.
'''

from __future__ import annotations

import logging
import random
import uuid
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from enum import Enum
from typing import Callable, Dict, Generic, Iterator, List, Mapping, Optional, Tuple, TypeVar, Union

logger = logging.getLogger(__name__)

Money = int
MONEY_LIMIT = 2**63 - 1
BASIS_POINTS_TOTAL = 10_000

CustomerId = str
WalletId = str
SubwalletId = str
TransactionId = str
BatchId = str
EntryId = str

E = TypeVar("E")
T = TypeVar("T")


# ----------------------- Errors -----------------------

class WalletEngineError(Exception):
    """Base class for precondition and store errors."""


class DuplicateCustomer(WalletEngineError):
    pass


class EmptyInvestmentOptions(WalletEngineError):
    pass


class UnknownCustomer(WalletEngineError):
    pass


class UnknownWallet(WalletEngineError):
    pass


class UnknownSubwallet(WalletEngineError):
    pass


class MoneyOverflow(WalletEngineError):
    pass


class InvalidPolicy(WalletEngineError):
    pass


def check_money(value: int) -> Money:
    """Returns value unchanged, raising MoneyOverflow outside the representable range."""
    if not -MONEY_LIMIT <= value <= MONEY_LIMIT:
        raise MoneyOverflow(f"amount {value} outside ±{MONEY_LIMIT}")
    return value


# ----------------------- Outcome -----------------------

@dataclass(frozen=True)
class Success(Generic[T]):
    value: T

    @property
    def ok(self) -> bool:
        return True


@dataclass(frozen=True)
class Failure(Generic[E]):
    error: E

    @property
    def ok(self) -> bool:
        return False


Outcome = Union[Failure[E], Success[T]]


# ----------------------- Enumerations -----------------------

class WalletType(str, Enum):
    REAL_MONEY = "REAL_MONEY"
    EMERGENCY_FUNDS = "EMERGENCY_FUNDS"
    INVESTMENT = "INVESTMENT"


class TransactionType(str, Enum):
    DEPOSIT = "DEPOSIT"
    WITHDRAWAL = "WITHDRAWAL"
    TRANSFER = "TRANSFER"
    HOLD = "HOLD"
    TRANSFER_FROM_HOLD = "TRANSFER_FROM_HOLD"


class TransactionStatus(str, Enum):
    PROCESSING = "PROCESSING"
    FAILED = "FAILED"
    TRANSIENT_ERROR = "TRANSIENT_ERROR"
    COMPLETED = "COMPLETED"

    @property
    def terminal(self) -> bool:
        return self in (TransactionStatus.FAILED, TransactionStatus.COMPLETED)


class BalanceType(str, Enum):
    INTERNAL = "INTERNAL"
    AVAILABLE = "AVAILABLE"
    HOLDING = "HOLDING"


# ----------------------- Entities -----------------------

@dataclass(frozen=True)
class Subwallet:
    id: SubwalletId
    wallet_id: WalletId
    name: str


@dataclass(frozen=True)
class Wallet:
    id: WalletId
    customer: CustomerId
    wallet_type: WalletType
    subwallets: Tuple[Subwallet, ...]

    @property
    def main_subwallet(self) -> Subwallet:
        """The single subwallet of a RealMoney or EmergencyFunds wallet."""
        return self.subwallets[0]

    def subwallet_named(self, name: str) -> Subwallet:
        for sub in self.subwallets:
            if sub.name == name:
                return sub
        raise UnknownSubwallet(f"{self.wallet_type.value} wallet of {self.customer} has no subwallet {name!r}")


@dataclass(frozen=True)
class External:
    ref: Optional[str] = None


@dataclass(frozen=True)
class WalletRef:
    wallet_id: WalletId
    subwallet_id: SubwalletId


Party = Union[External, WalletRef]


def ref_to(wallet: Wallet, subwallet: Optional[Subwallet] = None) -> WalletRef:
    sub = subwallet or wallet.main_subwallet
    return WalletRef(wallet_id=wallet.id, subwallet_id=sub.id)


@dataclass(frozen=True)
class InvestmentPolicy:
    customer: CustomerId
    allocations: Mapping[SubwalletId, int]

    @property
    def total(self) -> int:
        return sum(self.allocations.values())


@dataclass(frozen=True)
class CustomerWallets:
    real_money: Wallet
    emergency_funds: Wallet
    investment: Wallet

    def wallet_for(self, wallet_type: WalletType) -> Wallet:
        match wallet_type:
            case WalletType.REAL_MONEY:
                return self.real_money
            case WalletType.EMERGENCY_FUNDS:
                return self.emergency_funds
            case WalletType.INVESTMENT:
                return self.investment
        raise AssertionError(f"unhandled wallet type {wallet_type!r}")

    def __iter__(self) -> Iterator[Wallet]:
        return iter((self.real_money, self.emergency_funds, self.investment))


# ----------------------- Clock and ids -----------------------

class LogicalClock:
    """Injected time source. Only moves when told to."""

    def __init__(self, start: Optional[datetime] = None):
        self._now = (start or datetime(2025, 1, 1, tzinfo=timezone.utc)).astimezone(timezone.utc)

    def now(self) -> datetime:
        return self._now

    def today(self) -> date:
        return self._now.date()

    def set(self, when: datetime) -> None:
        if when.tzinfo is None:
            when = when.replace(tzinfo=timezone.utc)
        self._now = when.astimezone(timezone.utc)

    def advance(self, delta: timedelta) -> None:
        self._now = self._now + delta

    def move_to_date(self, day: date) -> None:
        """Moves to the start of `day`, never backwards."""
        target = datetime(day.year, day.month, day.day, tzinfo=timezone.utc)
        if target > self._now:
            self._now = target


IdFactory = Callable[[], str]


def random_ids() -> str:
    return str(uuid.uuid4())


def seeded_ids(rng: random.Random) -> IdFactory:
    def new_id() -> str:
        return str(uuid.UUID(int=rng.getrandbits(128), version=4))
    return new_id


# ----------------------- Wallet store -----------------------

class WalletStore:
    """Single-writer registry of wallets, indexed by customer, wallet and subwallet."""

    def __init__(self, new_id: IdFactory = random_ids):
        self._new_id = new_id
        self._wallets: Dict[WalletId, Wallet] = {}
        self._by_customer: Dict[CustomerId, CustomerWallets] = {}
        self._subwallets: Dict[SubwalletId, Subwallet] = {}

    def create_customer_wallets(self, customer: CustomerId, investment_options: List[str]) -> CustomerWallets:
        if not customer:
            raise UnknownCustomer("customer id must be non-empty")
        if customer in self._by_customer:
            raise DuplicateCustomer(f"customer {customer} already has wallets")
        if not investment_options:
            raise EmptyInvestmentOptions(f"customer {customer} needs at least one investment option")
        if len(set(investment_options)) != len(investment_options):
            raise EmptyInvestmentOptions(f"investment options for {customer} must be distinct")

        real_money = self._build(customer, WalletType.REAL_MONEY, ["realMoney"])
        emergency = self._build(customer, WalletType.EMERGENCY_FUNDS, ["emergencyFunds"])
        investment = self._build(customer, WalletType.INVESTMENT, list(investment_options))
        wallets = CustomerWallets(real_money, emergency, investment)
        self.add(wallets)
        logger.info("created wallets for %s with options %s", customer, investment_options)
        return wallets

    def _build(self, customer: CustomerId, wallet_type: WalletType, names: List[str]) -> Wallet:
        wallet_id = self._new_id()
        subwallets = tuple(Subwallet(id=self._new_id(), wallet_id=wallet_id, name=name) for name in names)
        return Wallet(id=wallet_id, customer=customer, wallet_type=wallet_type, subwallets=subwallets)

    def add(self, wallets: CustomerWallets) -> None:
        """Registers an already-built set of wallets (also used when loading state)."""
        customer = wallets.real_money.customer
        if customer in self._by_customer:
            raise DuplicateCustomer(f"customer {customer} already has wallets")
        for wallet in wallets:
            if wallet.customer != customer:
                raise UnknownWallet(f"wallet {wallet.id} does not belong to {customer}")
            self._wallets[wallet.id] = wallet
            for sub in wallet.subwallets:
                self._subwallets[sub.id] = sub
        self._by_customer[customer] = wallets

    def customers(self) -> List[CustomerId]:
        return sorted(self._by_customer)

    def wallets_for(self, customer: CustomerId) -> CustomerWallets:
        try:
            return self._by_customer[customer]
        except KeyError:
            raise UnknownCustomer(f"unknown customer {customer}") from None

    def get_wallet(self, wallet_id: WalletId) -> Wallet:
        try:
            return self._wallets[wallet_id]
        except KeyError:
            raise UnknownWallet(f"unknown wallet {wallet_id}") from None

    def get_subwallet(self, subwallet_id: SubwalletId) -> Subwallet:
        try:
            return self._subwallets[subwallet_id]
        except KeyError:
            raise UnknownSubwallet(f"unknown subwallet {subwallet_id}") from None

    def has_subwallet(self, subwallet_id: SubwalletId) -> bool:
        return subwallet_id in self._subwallets

    def resolve(self, ref: WalletRef) -> Optional[Tuple[Wallet, Subwallet]]:
        """Returns (wallet, subwallet) or None when the ref does not point at a real pair."""
        wallet = self._wallets.get(ref.wallet_id)
        sub = self._subwallets.get(ref.subwallet_id)
        if wallet is None or sub is None or sub.wallet_id != wallet.id:
            return None
        return wallet, sub

    def all_wallets(self) -> List[Wallet]:
        return [wallet for customer in self.customers() for wallet in self._by_customer[customer]]


# ----------------------- Policy validation -----------------------

class PolicyErrorKind(str, Enum):
    POLICY_SUM_INVALID = "PolicySumInvalid"
    FOREIGN_SUBWALLET = "ForeignSubwallet"


@dataclass(frozen=True)
class PolicyError:
    kind: PolicyErrorKind
    actual_sum: Optional[int] = None
    subwallet_id: Optional[SubwalletId] = None

    def __str__(self) -> str:
        if self.kind is PolicyErrorKind.POLICY_SUM_INVALID:
            return f"{self.kind.value}({self.actual_sum})"
        return f"{self.kind.value}({self.subwallet_id})"


def validate_policy(policy: InvestmentPolicy, wallets: WalletStore) -> Outcome[PolicyError, InvestmentPolicy]:
    """Valid iff basis points sum to 10000 and every key is a subwallet of the customer's Investment wallet."""
    investment = wallets.wallets_for(policy.customer).investment
    own = {sub.id for sub in investment.subwallets}
    for subwallet_id, bp in sorted(policy.allocations.items()):
        if subwallet_id not in own:
            return Failure(PolicyError(PolicyErrorKind.FOREIGN_SUBWALLET, subwallet_id=subwallet_id))
        if not 0 <= bp <= BASIS_POINTS_TOTAL:
            return Failure(PolicyError(PolicyErrorKind.POLICY_SUM_INVALID, actual_sum=policy.total))
    if policy.total != BASIS_POINTS_TOTAL:
        return Failure(PolicyError(PolicyErrorKind.POLICY_SUM_INVALID, actual_sum=policy.total))
    return Success(policy)


def policy_by_name(customer: CustomerId, investment: Wallet, percentages: Mapping[str, int]) -> InvestmentPolicy:
    """Builds a policy keyed by subwallet id from a name -> basis points map."""
    return InvestmentPolicy(
        customer=customer,
        allocations={investment.subwallet_named(name).id: bp for name, bp in percentages.items()},
    )
