'''
Purpose:
Investment policies, proportional allocation, the hold-based investment and
liquidation requests, and business-day settlement.

An investment holds funds on the RealMoney subwallet; a liquidation holds
funds on each Investment subwallet. Neither moves money between wallets
until `settle` runs on a later business day.
'''

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from digiwallet.domain import (
    BASIS_POINTS_TOTAL,
    CustomerId,
    Failure,
    IdFactory,
    InvalidPolicy,
    InvestmentPolicy,
    Money,
    Outcome,
    PolicyError,
    SubwalletId,
    Success,
    TransactionId,
    TransactionStatus,
    TransactionType,
    WalletStore,
    random_ids,
    ref_to,
    validate_policy,
)
from digiwallet.transactions import BatchStatus, InvalidReason, Transaction, TransactionEngine

logger = logging.getLogger(__name__)


# ----------------------- Allocation -----------------------

def allocate(amount: Money, policy: InvestmentPolicy) -> Dict[SubwalletId, Money]:
    """
    Splits `amount` by basis points. Every bucket gets its floored share and
    the leftover units go one each to the largest fractional remainders, ties
    broken by ascending subwallet id. The result always sums to `amount`;
    buckets that end up with nothing are left out.
    """
    if policy.total != BASIS_POINTS_TOTAL or any(bp < 0 for bp in policy.allocations.values()):
        raise InvalidPolicy(f"policy for {policy.customer} sums to {policy.total} basis points")
    if amount <= 0:
        raise ValueError(f"allocation needs a positive amount, got {amount}")

    shares: Dict[SubwalletId, Money] = {}
    remainders: List[Tuple[int, SubwalletId]] = []
    for subwallet_id, bp in policy.allocations.items():
        if bp == 0:
            continue
        whole, rest = divmod(amount * bp, BASIS_POINTS_TOTAL)
        shares[subwallet_id] = whole
        remainders.append((rest, subwallet_id))

    leftover = amount - sum(shares.values())
    for _, subwallet_id in sorted(remainders, key=lambda item: (-item[0], item[1]))[:leftover]:
        shares[subwallet_id] += 1

    return {subwallet_id: share for subwallet_id, share in sorted(shares.items()) if share > 0}


# ----------------------- Calendar -----------------------

@dataclass(frozen=True)
class BusinessCalendar:
    """Monday to Friday, minus holidays."""

    holidays: Tuple[date, ...] = ()

    @property
    def _busdays(self) -> np.busdaycalendar:
        return np.busdaycalendar(weekmask="1111100", holidays=[np.datetime64(d, "D") for d in self.holidays])

    def is_business_day(self, day: date) -> bool:
        return bool(np.is_busday(np.datetime64(day, "D"), busdaycal=self._busdays))

    def next_business_day(self, day: date) -> date:
        # roll back onto a business day first so the step of one always lands strictly after `day`
        nxt = np.busday_offset(np.datetime64(day, "D"), 1, roll="backward", busdaycal=self._busdays)
        return nxt.astype(object)

    @classmethod
    def from_file(cls, path: Path) -> "BusinessCalendar":
        """One ISO date per line; blank lines and # comments are skipped."""
        holidays = []
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                holidays.append(date.fromisoformat(line))
        return cls(holidays=tuple(sorted(set(holidays))))


def next_business_day(day: date, calendar: Optional[BusinessCalendar] = None) -> date:
    return (calendar or BusinessCalendar()).next_business_day(day)


# ----------------------- Requests -----------------------

class RequestKind(str, Enum):
    INVESTMENT = "INVESTMENT"
    LIQUIDATION = "LIQUIDATION"


class RequestStatus(str, Enum):
    PENDING = "PENDING"
    SETTLED = "SETTLED"
    FAILED = "FAILED"


@dataclass(frozen=True)
class PendingRequest:
    id: str
    customer: CustomerId
    kind: RequestKind
    amount: Money
    policy_snapshot: InvestmentPolicy
    hold_txn_ids: Tuple[TransactionId, ...]
    per_subwallet_amounts: Mapping[SubwalletId, Money]
    initiated_on: date
    status: RequestStatus = RequestStatus.PENDING
    settled_on: Optional[date] = None
    settlement_txn_ids: Tuple[TransactionId, ...] = ()


@dataclass(frozen=True)
class AwaitingHold:
    """An investment whose hold ended TransientError; recorded once a retry completes it."""

    txn_id: TransactionId
    customer: CustomerId
    amount: Money
    policy_snapshot: InvestmentPolicy
    initiated_on: date


class InvestErrorKind(str, Enum):
    POLICY_NOT_FOUND = "PolicyNotFound"
    HOLD_FAILED = "HoldFailed"
    HOLD_TRANSIENT = "HoldTransient"
    BATCH_FAILED = "BatchFailed"
    NON_POSITIVE_AMOUNT = "NonPositiveAmount"


@dataclass(frozen=True)
class InvestError:
    kind: InvestErrorKind
    reason: Optional[str] = None
    txn_id: Optional[TransactionId] = None

    @property
    def transient(self) -> bool:
        return self.kind is InvestErrorKind.HOLD_TRANSIENT or (
            self.kind is InvestErrorKind.BATCH_FAILED and self.reason in ("TransientGatewayError", "LedgerPostError")
        )

    def __str__(self) -> str:
        return f"{self.kind.value}({self.reason})" if self.reason else self.kind.value


# ----------------------- Service -----------------------

@dataclass
class InvestmentService:
    engine: TransactionEngine
    calendar: BusinessCalendar = field(default_factory=BusinessCalendar)
    policies: Dict[CustomerId, InvestmentPolicy] = field(default_factory=dict)
    requests: Dict[str, PendingRequest] = field(default_factory=dict)
    awaiting: Dict[TransactionId, AwaitingHold] = field(default_factory=dict)
    new_id: IdFactory = random_ids

    @property
    def wallets(self) -> WalletStore:
        return self.engine.wallets

    def set_policy(self, customer: CustomerId, allocations: Mapping[SubwalletId, int]) -> Outcome[PolicyError, InvestmentPolicy]:
        """Replaces the customer's policy; requests already pending keep their own snapshot."""
        policy = InvestmentPolicy(customer=customer, allocations=dict(allocations))
        checked = validate_policy(policy, self.wallets)
        if isinstance(checked, Success):
            self.policies[customer] = policy
            logger.info("policy for %s set to %s", customer, dict(allocations))
        return checked

    def policy_for(self, customer: CustomerId) -> Optional[InvestmentPolicy]:
        self.wallets.wallets_for(customer)
        return self.policies.get(customer)

    def invest(self, customer: CustomerId, amount: Money) -> Outcome[InvestError, PendingRequest]:
        wallets = self.wallets.wallets_for(customer)
        policy = self.policies.get(customer)
        if policy is None:
            return Failure(InvestError(InvestErrorKind.POLICY_NOT_FOUND))

        real_money = ref_to(wallets.real_money)
        hold = self.engine.submit(TransactionType.HOLD, amount, real_money, real_money)
        match hold.status:
            case TransactionStatus.COMPLETED:
                return Success(self._record_investment(hold, customer, amount, policy, self.engine.clock.today()))
            case TransactionStatus.FAILED:
                return Failure(InvestError(InvestErrorKind.HOLD_FAILED, hold.last_error, hold.id))
            case TransactionStatus.TRANSIENT_ERROR:
                self.awaiting[hold.id] = AwaitingHold(hold.id, customer, amount, policy, self.engine.clock.today())
                return Failure(InvestError(InvestErrorKind.HOLD_TRANSIENT, hold.last_error, hold.id))
            case TransactionStatus.PROCESSING:
                raise AssertionError(f"hold {hold.id} left Processing")
        raise AssertionError(f"unhandled status {hold.status!r}")

    def _record_investment(
        self, hold: Transaction, customer: CustomerId, amount: Money, policy: InvestmentPolicy, initiated_on: date,
    ) -> PendingRequest:
        request = PendingRequest(
            id=self.new_id(),
            customer=customer,
            kind=RequestKind.INVESTMENT,
            amount=amount,
            policy_snapshot=policy,
            hold_txn_ids=(hold.id,),
            per_subwallet_amounts=allocate(amount, policy),
            initiated_on=initiated_on,
        )
        self.requests[request.id] = request
        logger.info("investment %s of %d for %s pending", request.id, amount, customer)
        return request

    def resume_hold(self, txn: Transaction) -> Optional[PendingRequest]:
        """Records the investment behind a hold that a later retry completed."""
        parked = self.awaiting.get(txn.id)
        if parked is None or txn.status is not TransactionStatus.COMPLETED:
            return None
        del self.awaiting[txn.id]
        return self._record_investment(txn, parked.customer, parked.amount, parked.policy_snapshot, parked.initiated_on)

    def liquidate(self, customer: CustomerId, amount: Money) -> Outcome[InvestError, PendingRequest]:
        wallets = self.wallets.wallets_for(customer)
        policy = self.policies.get(customer)
        if policy is None:
            return Failure(InvestError(InvestErrorKind.POLICY_NOT_FOUND))
        if amount <= 0:
            return Failure(InvestError(InvestErrorKind.NON_POSITIVE_AMOUNT, InvalidReason.NON_POSITIVE_AMOUNT.value))

        per_subwallet = allocate(amount, policy)
        investment = wallets.investment
        specs = []
        for subwallet_id, share in per_subwallet.items():
            ref = ref_to(investment, self.wallets.get_subwallet(subwallet_id))
            specs.append((TransactionType.HOLD, share, ref, ref))
        batch = self.engine.retry_batch(self.engine.create_batch(specs))
        if batch.status is not BatchStatus.COMPLETED:
            culprit = batch.failing_member()
            return Failure(InvestError(
                InvestErrorKind.BATCH_FAILED,
                culprit.last_error if culprit else None,
                culprit.id if culprit else None,
            ))

        request = PendingRequest(
            id=self.new_id(),
            customer=customer,
            kind=RequestKind.LIQUIDATION,
            amount=amount,
            policy_snapshot=policy,
            hold_txn_ids=tuple(txn.id for txn in batch.transactions),
            per_subwallet_amounts=per_subwallet,
            initiated_on=self.engine.clock.today(),
        )
        self.requests[request.id] = request
        logger.info("liquidation %s of %d for %s pending", request.id, amount, customer)
        return Success(request)

    def pending(self, customer: Optional[CustomerId] = None) -> List[PendingRequest]:
        return [
            request for request in self.requests.values()
            if request.status is RequestStatus.PENDING and (customer is None or request.customer == customer)
        ]

    def eligible(self, request: PendingRequest, as_of: date) -> bool:
        return self.calendar.next_business_day(request.initiated_on) <= as_of

    def settle(self, as_of: date) -> List[PendingRequest]:
        """
        Settles every pending request initiated on an earlier business day, one
        atomic batch per request. Returns the requests attempted, settled or
        still pending when their batch failed.
        """
        attempted = []
        due = sorted(
            (r for r in self.pending() if self.eligible(r, as_of)),
            key=lambda r: (r.initiated_on, r.id),
        )
        for request in due:
            batch = self.engine.retry_batch(self.engine.create_batch(self._settlement_specs(request)))
            if batch.status is BatchStatus.COMPLETED:
                request = replace(
                    request,
                    status=RequestStatus.SETTLED,
                    settled_on=as_of,
                    settlement_txn_ids=tuple(txn.id for txn in batch.transactions),
                )
                self.requests[request.id] = request
                logger.info("settled %s %s on %s", request.kind.value, request.id, as_of)
            else:
                culprit = batch.failing_member()
                logger.warning("settlement of %s failed (%s); stays pending",
                               request.id, culprit.last_error if culprit else "unknown")
            attempted.append(request)
        return attempted

    def _settlement_specs(self, request: PendingRequest) -> List[tuple]:
        wallets = self.wallets.wallets_for(request.customer)
        real_money = ref_to(wallets.real_money)
        specs = []
        for subwallet_id, share in request.per_subwallet_amounts.items():
            bucket = ref_to(wallets.investment, self.wallets.get_subwallet(subwallet_id))
            match request.kind:
                case RequestKind.INVESTMENT:
                    specs.append((TransactionType.TRANSFER_FROM_HOLD, share, real_money, bucket))
                case RequestKind.LIQUIDATION:
                    specs.append((TransactionType.TRANSFER_FROM_HOLD, share, bucket, real_money))
        return specs
