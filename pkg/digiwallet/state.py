'''
Purpose:
Saving and loading a whole wallet system to a directory.

Layout:
- ledger.jsonl       one journal entry per line, in seq order
- wallets.json       customers, wallets and subwallets
- transactions.json  latest version of every transaction
- policies.json      investment policies
- pending.json       investment/liquidation requests and parked holds
- clock.json         the logical clock
- gateway.json       the bank gateway call log

Loading re-checks the invariants and raises CorruptState on any mismatch.
'''

from __future__ import annotations

import json
import logging
from datetime import date
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from digiwallet.domain import (
    CustomerWallets,
    External,
    InvestmentPolicy,
    LogicalClock,
    Party,
    Subwallet,
    TransactionStatus,
    TransactionType,
    Wallet,
    WalletEngineError,
    WalletRef,
    WalletStore,
    WalletType,
    IdFactory,
    Success,
    random_ids,
    validate_policy,
)
from digiwallet.gateway import FaultConfig, GatewayCall
from digiwallet.investments import AwaitingHold, BusinessCalendar, PendingRequest, RequestKind, RequestStatus
from digiwallet.ledger import Ledger, format_timestamp, parse_timestamp
from digiwallet.system import WalletSystem, build_system
from digiwallet.transactions import RetryPolicy, Transaction, TxnEvent, journal_pair_for, replay

logger = logging.getLogger(__name__)

STATE_FILES = (
    "ledger.jsonl", "wallets.json", "transactions.json", "policies.json",
    "pending.json", "clock.json", "gateway.json",
)


class CorruptState(WalletEngineError):
    def __init__(self, file: str, reason: str):
        super().__init__(f"{file}: {reason}")
        self.file = file
        self.reason = reason


# ----------------------- Serializers -----------------------

def wallet_to_dict(wallet: Wallet) -> dict:
    return {
        "id": wallet.id,
        "customer": wallet.customer,
        "wallet_type": wallet.wallet_type.value,
        "subwallets": [{"id": sub.id, "name": sub.name} for sub in wallet.subwallets],
    }


def wallet_from_dict(data: dict) -> Wallet:
    return Wallet(
        id=data["id"],
        customer=data["customer"],
        wallet_type=WalletType(data["wallet_type"]),
        subwallets=tuple(Subwallet(id=s["id"], wallet_id=data["id"], name=s["name"]) for s in data["subwallets"]),
    )


def party_to_dict(party: Party) -> dict:
    if isinstance(party, External):
        return {"external": party.ref}
    return {"wallet_id": party.wallet_id, "subwallet_id": party.subwallet_id}


def party_from_dict(data: dict) -> Party:
    if "external" in data:
        return External(data["external"])
    return WalletRef(wallet_id=data["wallet_id"], subwallet_id=data["subwallet_id"])


def transaction_to_dict(txn: Transaction) -> dict:
    return {
        "id": txn.id,
        "txn_type": txn.txn_type.value,
        "amount": txn.amount,
        "originator": party_to_dict(txn.originator),
        "beneficiary": party_to_dict(txn.beneficiary),
        "status": txn.status.value,
        "attempts": txn.attempts,
        "batch_id": txn.batch_id,
        "created_at": format_timestamp(txn.created_at),
        "last_error": txn.last_error,
        "history": [event.value for event in txn.history],
    }


def transaction_from_dict(data: dict) -> Transaction:
    return Transaction(
        id=data["id"],
        txn_type=TransactionType(data["txn_type"]),
        amount=int(data["amount"]),
        originator=party_from_dict(data["originator"]),
        beneficiary=party_from_dict(data["beneficiary"]),
        created_at=parse_timestamp(data["created_at"]),
        status=TransactionStatus(data["status"]),
        attempts=int(data["attempts"]),
        batch_id=data.get("batch_id"),
        last_error=data.get("last_error"),
        history=tuple(TxnEvent(event) for event in data.get("history", [])),
    )


def policy_to_dict(policy: InvestmentPolicy) -> dict:
    return {"customer": policy.customer, "allocations": dict(sorted(policy.allocations.items()))}


def policy_from_dict(data: dict) -> InvestmentPolicy:
    return InvestmentPolicy(customer=data["customer"], allocations={k: int(v) for k, v in data["allocations"].items()})


def request_to_dict(request: PendingRequest) -> dict:
    return {
        "id": request.id,
        "customer": request.customer,
        "kind": request.kind.value,
        "amount": request.amount,
        "policy_snapshot": policy_to_dict(request.policy_snapshot),
        "hold_txn_ids": list(request.hold_txn_ids),
        "per_subwallet_amounts": dict(request.per_subwallet_amounts),
        "initiated_on": request.initiated_on.isoformat(),
        "status": request.status.value,
        "settled_on": request.settled_on.isoformat() if request.settled_on else None,
        "settlement_txn_ids": list(request.settlement_txn_ids),
    }


def request_from_dict(data: dict) -> PendingRequest:
    return PendingRequest(
        id=data["id"],
        customer=data["customer"],
        kind=RequestKind(data["kind"]),
        amount=int(data["amount"]),
        policy_snapshot=policy_from_dict(data["policy_snapshot"]),
        hold_txn_ids=tuple(data["hold_txn_ids"]),
        per_subwallet_amounts={k: int(v) for k, v in data["per_subwallet_amounts"].items()},
        initiated_on=date.fromisoformat(data["initiated_on"]),
        status=RequestStatus(data["status"]),
        settled_on=date.fromisoformat(data["settled_on"]) if data.get("settled_on") else None,
        settlement_txn_ids=tuple(data.get("settlement_txn_ids", [])),
    )


def awaiting_to_dict(parked: AwaitingHold) -> dict:
    return {
        "txn_id": parked.txn_id,
        "customer": parked.customer,
        "amount": parked.amount,
        "policy_snapshot": policy_to_dict(parked.policy_snapshot),
        "initiated_on": parked.initiated_on.isoformat(),
    }


def awaiting_from_dict(data: dict) -> AwaitingHold:
    return AwaitingHold(
        txn_id=data["txn_id"],
        customer=data["customer"],
        amount=int(data["amount"]),
        policy_snapshot=policy_from_dict(data["policy_snapshot"]),
        initiated_on=date.fromisoformat(data["initiated_on"]),
    )


# ----------------------- Export -----------------------

def _dump(path: Path, payload: Any) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")


def export_state(system: WalletSystem, directory: Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    (directory / "ledger.jsonl").write_text(system.ledger.to_jsonl())
    _dump(directory / "wallets.json", {
        "customers": [
            {"customer": customer, "wallets": [wallet_to_dict(w) for w in system.wallets.wallets_for(customer)]}
            for customer in system.wallets.customers()
        ]
    })
    _dump(directory / "transactions.json", [transaction_to_dict(t) for t in system.engine.store.all()])
    _dump(directory / "policies.json", [policy_to_dict(p) for _, p in sorted(system.investments.policies.items())])
    _dump(directory / "pending.json", {
        "requests": [request_to_dict(r) for r in system.investments.requests.values()],
        "awaiting_holds": [awaiting_to_dict(a) for a in system.investments.awaiting.values()],
    })
    _dump(directory / "clock.json", {"now": format_timestamp(system.clock.now())})
    _dump(directory / "gateway.json", [call.to_dict() for call in system.gateway.call_log])
    logger.info("exported state to %s (%d entries)", directory, len(system.ledger))
    return directory


# ----------------------- Import -----------------------

def _load(directory: Path, name: str, parse: Callable[[str], Any], default: Any = None) -> Any:
    path = directory / name
    if not path.exists():
        if default is not None:
            return default
        raise CorruptState(name, "missing")
    try:
        return parse(path.read_text())
    except CorruptState:
        raise
    except (ValueError, KeyError, TypeError, AttributeError, WalletEngineError) as e:
        raise CorruptState(name, f"{type(e).__name__}: {e}") from e


def import_state(
    directory: Path,
    *,
    fault_config: Optional[FaultConfig] = None,
    retry_policy: Optional[RetryPolicy] = None,
    calendar: Optional[BusinessCalendar] = None,
    new_id: IdFactory = random_ids,
) -> WalletSystem:
    directory = Path(directory)
    if not directory.is_dir():
        raise CorruptState(str(directory), "not a directory")

    clock = _load(directory, "clock.json", lambda text: LogicalClock(parse_timestamp(json.loads(text)["now"])))

    wallets = WalletStore(new_id=new_id)

    def parse_wallets(text: str) -> WalletStore:
        for record in json.loads(text)["customers"]:
            by_type = {w.wallet_type: w for w in map(wallet_from_dict, record["wallets"])}
            if set(by_type) != set(WalletType) or len(record["wallets"]) != len(WalletType):
                raise CorruptState("wallets.json", f"customer {record['customer']} needs one wallet of each type")
            for wallet_type in (WalletType.REAL_MONEY, WalletType.EMERGENCY_FUNDS):
                if len(by_type[wallet_type].subwallets) != 1:
                    raise CorruptState("wallets.json", f"{wallet_type.value} wallet must have one subwallet")
            if not by_type[WalletType.INVESTMENT].subwallets:
                raise CorruptState("wallets.json", "investment wallet has no subwallets")
            wallets.add(CustomerWallets(
                by_type[WalletType.REAL_MONEY], by_type[WalletType.EMERGENCY_FUNDS], by_type[WalletType.INVESTMENT],
            ))
        return wallets

    _load(directory, "wallets.json", parse_wallets)
    ledger = _load(directory, "ledger.jsonl", lambda text: Ledger.from_jsonl(text, wallets, clock=clock, new_id=new_id))
    transactions: List[Transaction] = _load(
        directory, "transactions.json", lambda text: [transaction_from_dict(d) for d in json.loads(text)],
    )
    calls = _load(directory, "gateway.json", lambda text: [GatewayCall.from_dict(d) for d in json.loads(text)], [])

    _check_transactions(transactions, ledger, wallets)

    system = build_system(
        clock=clock, fault_config=fault_config, retry_policy=retry_policy, calendar=calendar, new_id=new_id,
        wallets=wallets, ledger=ledger, transactions=transactions, call_log=calls,
    )

    def parse_policies(text: str) -> Dict[str, InvestmentPolicy]:
        policies = {}
        for policy in map(policy_from_dict, json.loads(text)):
            if not isinstance(validate_policy(policy, wallets), Success):
                raise CorruptState("policies.json", f"invalid policy for {policy.customer}")
            policies[policy.customer] = policy
        return policies

    system.investments.policies.update(_load(directory, "policies.json", parse_policies))

    def parse_pending(text: str) -> dict:
        data = json.loads(text)
        requests = [request_from_dict(d) for d in data.get("requests", [])]
        for request in requests:
            if sum(request.per_subwallet_amounts.values()) != request.amount:
                raise CorruptState("pending.json", f"request {request.id} buckets do not sum to its amount")
        return {
            "requests": {r.id: r for r in requests},
            "awaiting": {a.txn_id: a for a in map(awaiting_from_dict, data.get("awaiting_holds", []))},
        }

    pending = _load(directory, "pending.json", parse_pending)
    system.investments.requests.update(pending["requests"])
    system.investments.awaiting.update(pending["awaiting"])
    logger.info("imported state from %s (%d entries)", directory, len(ledger))
    return system


def _check_transactions(transactions: List[Transaction], ledger: Ledger, wallets: WalletStore) -> None:
    known = set()
    for txn in transactions:
        known.add(txn.id)
        for party in (txn.originator, txn.beneficiary):
            if isinstance(party, WalletRef) and wallets.resolve(party) is None:
                raise CorruptState("transactions.json", f"{txn.id} refers to an unknown wallet")
        entries = ledger.entries_for_transaction(txn.id)
        if (txn.status is TransactionStatus.COMPLETED) != (len(entries) == 2):
            raise CorruptState("transactions.json", f"{txn.id} is {txn.status.value} with {len(entries)} entries")
        if entries and [_posting(e) for e in entries] != [_posting(e) for e in journal_pair_for(txn)]:
            raise CorruptState("ledger.jsonl", f"entries for {txn.id} do not match its type, parties and amount")
        replayed = replay(txn.history)
        if not isinstance(replayed, Success) or replayed.value is not txn.status:
            raise CorruptState("transactions.json", f"{txn.id} history does not lead to {txn.status.value}")
    for txn_id in ledger.transaction_ids():
        if txn_id not in known:
            raise CorruptState("ledger.jsonl", f"entries for unknown transaction {txn_id}")


def _posting(entry) -> tuple:
    return entry.wallet_id, entry.subwallet_id, entry.balance_type, entry.amount
