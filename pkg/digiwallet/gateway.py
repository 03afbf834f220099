'''
Purpose:
Interface to the third-party bank API used by deposits and withdrawals,
and the deterministic fault-injecting simulator that stands in for it.

Methods:
- external_transfer: move money in or out of the system
- compensate: reverse an earlier successful transfer (batch rollback)
'''

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Protocol

from digiwallet.domain import Failure, Money, Outcome, Success, TransactionId

logger = logging.getLogger(__name__)


class Direction(str, Enum):
    INBOUND = "INBOUND"
    OUTBOUND = "OUTBOUND"


@dataclass(frozen=True)
class GatewayRequest:
    direction: Direction
    amount: Money
    external_ref: str
    request_id: TransactionId

    def __post_init__(self):
        if self.amount <= 0:
            raise ValueError(f"gateway request {self.request_id} needs a positive amount, got {self.amount}")


@dataclass(frozen=True)
class Confirmation:
    request_id: TransactionId
    token: str


@dataclass(frozen=True)
class TransientGatewayError:
    request_id: TransactionId
    message: str

    def __str__(self) -> str:
        return f"TransientGatewayError({self.message})"


@dataclass(frozen=True)
class UnknownRequest:
    request_id: TransactionId

    def __str__(self) -> str:
        return f"UnknownRequest({self.request_id})"


@dataclass(frozen=True)
class Acknowledgement:
    request_id: TransactionId


@dataclass(frozen=True)
class FaultConfig:
    fail_next_k: int = 0
    fail_probability: Fraction = Fraction(0)
    seed: int = 0

    def __post_init__(self):
        if self.fail_next_k < 0:
            raise ValueError("fail_next_k must be non-negative")
        probability = Fraction(self.fail_probability)
        if not 0 <= probability <= 1:
            raise ValueError(f"fail_probability must be within [0, 1], got {self.fail_probability}")
        object.__setattr__(self, "fail_probability", probability)
        if not -(2**63) <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class GatewayCall:
    kind: str  # "transfer" or "compensate"
    request_id: TransactionId
    ok: bool
    direction: Optional[Direction] = None
    amount: Optional[Money] = None
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "request_id": self.request_id,
            "ok": self.ok,
            "direction": self.direction.value if self.direction else None,
            "amount": self.amount,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GatewayCall":
        return cls(
            kind=data["kind"],
            request_id=data["request_id"],
            ok=bool(data["ok"]),
            direction=Direction(data["direction"]) if data.get("direction") else None,
            amount=data.get("amount"),
            detail=data.get("detail", ""),
        )


class BankGateway(Protocol):
    """Callers serialize calls per instance."""

    def external_transfer(self, req: GatewayRequest) -> Outcome[TransientGatewayError, Confirmation]:
        ...

    def compensate(self, request_id: TransactionId) -> Outcome[UnknownRequest, Acknowledgement]:
        ...


class SimulatedBankGateway:
    """
    Fails a call when fail_next_k credits remain (consuming one), otherwise when
    a draw from the seeded generator falls below fail_probability. The outcome
    depends only on the fault config and the order of calls.
    """

    def __init__(self, config: Optional[FaultConfig] = None, call_log: Optional[List[GatewayCall]] = None):
        self.call_log: List[GatewayCall] = list(call_log or [])
        self._open: Dict[TransactionId, GatewayCall] = {}
        for call in self.call_log:
            if call.kind == "transfer" and call.ok:
                self._open[call.request_id] = call
            elif call.kind == "compensate" and call.ok:
                self._open.pop(call.request_id, None)
        self.reconfigure(config or FaultConfig())

    def reconfigure(self, config: FaultConfig) -> None:
        self.config = config
        self._fail_next_k = config.fail_next_k
        self._rng = random.Random(config.seed)
        logger.info("gateway faults: next_k=%d probability=%s seed=%d",
                    config.fail_next_k, config.fail_probability, config.seed)

    def _should_fail(self) -> bool:
        if self._fail_next_k > 0:
            self._fail_next_k -= 1
            return True
        if self.config.fail_probability > 0:
            return Fraction(self._rng.random()) < self.config.fail_probability
        return False

    def external_transfer(self, req: GatewayRequest) -> Outcome[TransientGatewayError, Confirmation]:
        if self._should_fail():
            self.call_log.append(GatewayCall("transfer", req.request_id, False, req.direction, req.amount, "injected"))
            logger.info("gateway fault on %s %s of %d", req.direction.value, req.request_id, req.amount)
            return Failure(TransientGatewayError(req.request_id, "bank API unavailable"))

        call = GatewayCall("transfer", req.request_id, True, req.direction, req.amount, req.external_ref)
        self.call_log.append(call)
        self._open[req.request_id] = call
        return Success(Confirmation(req.request_id, token=f"conf-{len(self.call_log)}"))

    def compensate(self, request_id: TransactionId) -> Outcome[UnknownRequest, Acknowledgement]:
        original = self._open.pop(request_id, None)
        if original is None:
            self.call_log.append(GatewayCall("compensate", request_id, False, detail="unknown request"))
            return Failure(UnknownRequest(request_id))
        self.call_log.append(
            GatewayCall("compensate", request_id, True, original.direction, original.amount, "reversal")
        )
        logger.info("compensated gateway transfer %s", request_id)
        return Success(Acknowledgement(request_id))
