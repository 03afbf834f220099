'''
Purpose:
Amount parsing and formatting, and the dictionary shapes that the CLI prints.

Methods:
- Decimal strings <-> minor units, by string arithmetic only
- Format transactions, requests, summaries and simulation reports to dictionaries
'''

import re
from typing import Any, Dict, List

from digiwallet.domain import MONEY_LIMIT, External, Money, Party, TransactionStatus
from digiwallet.investments import PendingRequest
from digiwallet.transactions import Transaction
from digiwallet.wallets import CustomerSummary

AMOUNT_PATTERN = re.compile(r"^(-?)([0-9]+)(?:\.([0-9]{1,2}))?$")

STATUS_LABELS = {
    TransactionStatus.PROCESSING: "Processing",
    TransactionStatus.FAILED: "Failed",
    TransactionStatus.TRANSIENT_ERROR: "TransientError",
    TransactionStatus.COMPLETED: "Completed",
}


# ----------------------- Amounts -----------------------

def parse_amount(text: str) -> Money:
    """
    "100.00" -> 10000, "0.5" -> 50, "7" -> 700. At most two fraction digits,
    no exponent, no grouping; anything else raises ValueError.
    """
    match = AMOUNT_PATTERN.match(text.strip())
    if match is None:
        raise ValueError(f"{text!r} is not a decimal amount with at most two fraction digits")
    sign, whole, fraction = match.groups()
    minor = int(whole) * 100 + int((fraction or "").ljust(2, "0"))
    if minor > MONEY_LIMIT:
        raise ValueError(f"{text!r} is too large")
    return -minor if sign else minor


def format_amount(amount: Money) -> str:
    whole, cents = divmod(abs(amount), 100)
    return f"{'-' if amount < 0 else ''}{whole}.{cents:02d}"


# ----------------------- Formatters -----------------------

def format_party(party: Party) -> Dict[str, Any]:
    if isinstance(party, External):
        return {"external": party.ref}
    return {"wallet_id": party.wallet_id, "subwallet_id": party.subwallet_id}


def format_transaction_to_dictionary(txn: Transaction) -> Dict[str, Any]:
    return {
        "id": txn.id,
        "type": txn.txn_type.value,
        "amount": format_amount(txn.amount),
        "status": STATUS_LABELS[txn.status],
        "attempts": txn.attempts,
        "last_error": txn.last_error,
        "batch_id": txn.batch_id,
        "originator": format_party(txn.originator),
        "beneficiary": format_party(txn.beneficiary),
        "created_at": txn.created_at.isoformat().replace("+00:00", "Z"),
    }


def format_request_to_dictionary(request: PendingRequest, names: Dict[str, str]) -> Dict[str, Any]:
    """`names` maps subwallet ids to their option names."""
    return {
        "id": request.id,
        "customer": request.customer,
        "kind": request.kind.value,
        "amount": format_amount(request.amount),
        "status": request.status.value,
        "initiated_on": request.initiated_on.isoformat(),
        "settled_on": request.settled_on.isoformat() if request.settled_on else None,
        "buckets": {names.get(k, k): format_amount(v) for k, v in request.per_subwallet_amounts.items()},
    }


def format_summary_to_dictionary(summary: CustomerSummary) -> Dict[str, Any]:
    wallets = {}
    for wallet_type, balance in summary.wallets.items():
        wallets[wallet_type.value] = {
            "available": format_amount(balance.available),
            "holding": format_amount(balance.holding),
            "subwallets": {
                sub.name: {"available": format_amount(sub.available), "holding": format_amount(sub.holding)}
                for sub in balance.subwallets
            },
        }
    return {"customer": summary.customer, "total": format_amount(summary.total), "wallets": wallets}


def summary_lines(summary: CustomerSummary) -> List[str]:
    lines = [f"{summary.customer}  total {format_amount(summary.total)}"]
    for wallet_type, balance in summary.wallets.items():
        lines.append(
            f"  {wallet_type.value:<16} available {format_amount(balance.available):>12}"
            f"  holding {format_amount(balance.holding):>12}"
        )
        if len(balance.subwallets) > 1:
            for sub in balance.subwallets:
                lines.append(
                    f"    {sub.name:<14} available {format_amount(sub.available):>12}"
                    f"  holding {format_amount(sub.holding):>12}"
                )
    return lines
