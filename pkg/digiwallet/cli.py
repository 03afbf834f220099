'''
Purpose:
Command-line front end. Each invocation builds the Flask app, loads the
wallet system from the state directory, runs one command and saves the
state back when the command changed it.

Exit codes:
- 0 success
- 2 validation or permanent failure, and engine errors
- 3 transient failure (retry later)
- 4 usage error
'''

import functools
import json
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import click

from digiwallet.app import create_app
from digiwallet.config import ConfigError
from digiwallet.domain import CustomerId, Failure, Outcome, TransactionStatus, WalletEngineError, policy_by_name
from digiwallet.extensions import wallet
from digiwallet.helpers import (
    format_amount,
    format_request_to_dictionary,
    format_summary_to_dictionary,
    format_transaction_to_dictionary,
    parse_amount,
    summary_lines,
    STATUS_LABELS,
)
from digiwallet.investments import InvestError, PendingRequest, RequestStatus
from digiwallet.sim import run_simulation
from digiwallet.state import import_state
from digiwallet.transactions import Transaction

EXIT_OK = 0
EXIT_FAILED = 2
EXIT_TRANSIENT = 3
EXIT_USAGE = 4


class AmountType(click.ParamType):
    """Decimal amount such as 100.00, converted to minor units."""

    name = "amount"

    def convert(self, value: Any, param: Optional[click.Parameter], ctx: Optional[click.Context]) -> int:
        if isinstance(value, int):
            return value
        try:
            return parse_amount(str(value))
        except ValueError as e:
            self.fail(str(e), param, ctx)


AMOUNT = AmountType()
DAY = click.DateTime(formats=["%Y-%m-%d"])


# ----------------------- Output -----------------------

def _as_json() -> bool:
    return click.get_current_context().find_root().meta.get("digiwallet.json", False)


def emit(payload: Any, lines: Sequence[str] = ()) -> None:
    if _as_json():
        click.echo(json.dumps(payload, sort_keys=True))
    else:
        for line in lines:
            click.echo(line)


def _names() -> Dict[str, str]:
    return {sub.id: sub.name for w in wallet.system.wallets.all_wallets() for sub in w.subwallets}


def report_transaction(txn: Transaction) -> int:
    label = STATUS_LABELS[txn.status]
    detail = f" {txn.last_error}" if txn.last_error else ""
    emit(format_transaction_to_dictionary(txn), [f"{label} {txn.id}{detail}"])
    match txn.status:
        case TransactionStatus.COMPLETED:
            return EXIT_OK
        case TransactionStatus.TRANSIENT_ERROR:
            click.echo(f"error: {txn.last_error}; retry with `retry --txn-id {txn.id}`", err=True)
            return EXIT_TRANSIENT
        case _:
            click.echo(f"error: {txn.last_error}", err=True)
            return EXIT_FAILED


def report_request(outcome: Outcome[InvestError, PendingRequest]) -> int:
    if isinstance(outcome, Failure):
        error = outcome.error
        payload = {"error": error.kind.value, "reason": error.reason, "txn_id": error.txn_id}
        emit(payload, [f"{error.kind.value} {error.reason or ''}".rstrip()])
        click.echo(f"error: {error}", err=True)
        return EXIT_TRANSIENT if error.transient else EXIT_FAILED
    request = outcome.value
    emit(
        format_request_to_dictionary(request, _names()),
        [f"{request.status.value} {request.kind.value} {request.id} {format_amount(request.amount)}"],
    )
    return EXIT_OK


def saves_state(command: Callable[..., int]) -> Callable[..., int]:
    @functools.wraps(command)
    def wrapper(*args, **kwargs) -> int:
        code = command(*args, **kwargs)
        wallet.save()
        return code
    return wrapper


# ----------------------- Commands -----------------------

@click.group()
@click.option("--state-dir", type=click.Path(file_okay=False, path_type=Path), help="State directory.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.option("--now", help="ISO timestamp for the logical clock.")
@click.option("--gw-fail-next-k", type=int, envvar="GW_FAIL_NEXT_K", help="Fail the next K gateway calls.")
@click.option("--gw-fail-prob", envvar="GW_FAIL_PROB", help="Gateway failure probability, e.g. 0.25 or 1/4.")
@click.option("--gw-seed", type=int, envvar="GW_SEED", help="Seed for gateway faults.")
@click.option("--max-attempts", type=int, help="Attempts per transaction.")
@click.option("--holidays-file", type=click.Path(dir_okay=False, path_type=Path), help="Bank holidays, one date per line.")
@click.option("--log-level", help="Log level for engine logs.")
@click.pass_context
def cli(ctx: click.Context, state_dir, as_json, now, gw_fail_next_k, gw_fail_prob, gw_seed, max_attempts,
        holidays_file, log_level) -> None:
    """Digital wallet engine."""
    app = create_app({
        "STATE_DIR": state_dir,
        "NOW": now,
        "GW_FAIL_NEXT_K": gw_fail_next_k,
        "GW_FAIL_PROB": gw_fail_prob,
        "GW_SEED": gw_seed,
        "MAX_ATTEMPTS": max_attempts,
        "HOLIDAYS_FILE": holidays_file,
        "LOG_LEVEL": log_level,
    })
    ctx.meta["digiwallet.json"] = as_json
    ctx.with_resource(app.app_context())


@cli.group()
def customer() -> None:
    """Customer wallets."""


@customer.command("create")
@click.option("--customer", "customer_id", required=True)
@click.option("--options", required=True, help="Comma-separated investment options, e.g. stocks,bonds.")
@saves_state
def customer_create(customer_id: CustomerId, options: str) -> int:
    names = [name.strip() for name in options.split(",") if name.strip()]
    wallets = wallet.system.create_customer(customer_id, names)
    payload = {
        "customer": customer_id,
        "wallets": {
            w.wallet_type.value: {"id": w.id, "subwallets": {sub.name: sub.id for sub in w.subwallets}}
            for w in wallets
        },
    }
    emit(payload, [f"created {customer_id}"] + [f"  {w.wallet_type.value:<16} {w.id}" for w in wallets])
    return EXIT_OK


@cli.group()
def policy() -> None:
    """Investment policies."""


def _parse_allocation(text: str) -> Tuple[str, int]:
    name, sep, value = text.partition("=")
    if not sep or not name.strip():
        raise click.BadParameter(f"{text!r} is not NAME=BASIS_POINTS or NAME=PERCENT%")
    value = value.strip()
    try:
        # 50% is 5000 basis points, the same digits shift as amounts
        bp = parse_amount(value[:-1]) if value.endswith("%") else int(value)
    except ValueError:
        raise click.BadParameter(f"{text!r} has a bad share") from None
    return name.strip(), bp


@policy.command("set")
@click.option("--customer", "customer_id", required=True)
@click.option("--allocation", "allocations", multiple=True, required=True,
              help="NAME=BASIS_POINTS or NAME=PERCENT%, repeated per option.")
@saves_state
def policy_set(customer_id: CustomerId, allocations: Sequence[str]) -> int:
    shares = dict(_parse_allocation(text) for text in allocations)
    system = wallet.system
    investment = system.wallets.wallets_for(customer_id).investment
    proposed = policy_by_name(customer_id, investment, shares)
    outcome = system.investments.set_policy(customer_id, proposed.allocations)
    if isinstance(outcome, Failure):
        emit({"error": str(outcome.error)}, [str(outcome.error)])
        click.echo(f"error: {outcome.error}", err=True)
        return EXIT_FAILED
    emit({"customer": customer_id, "allocations": shares}, [f"policy set for {customer_id}"])
    return EXIT_OK


@cli.command()
@click.option("--customer", "customer_id", required=True)
@click.option("--amount", type=AMOUNT, required=True)
@click.option("--external-ref", default="", help="External bank account reference.")
@saves_state
def deposit(customer_id: CustomerId, amount: int, external_ref: str) -> int:
    return report_transaction(wallet.system.service.deposit(customer_id, amount, external_ref))


@cli.command()
@click.option("--customer", "customer_id", required=True)
@click.option("--amount", type=AMOUNT, required=True)
@click.option("--external-ref", default="", help="External bank account reference.")
@saves_state
def withdraw(customer_id: CustomerId, amount: int, external_ref: str) -> int:
    return report_transaction(wallet.system.service.withdraw(customer_id, amount, external_ref))


@cli.group()
def emergency() -> None:
    """Moves between RealMoney and EmergencyFunds."""


@emergency.command("allocate")
@click.option("--customer", "customer_id", required=True)
@click.option("--amount", type=AMOUNT, required=True)
@saves_state
def emergency_allocate(customer_id: CustomerId, amount: int) -> int:
    return report_transaction(wallet.system.service.emergency_allocate(customer_id, amount))


@emergency.command("release")
@click.option("--customer", "customer_id", required=True)
@click.option("--amount", type=AMOUNT, required=True)
@saves_state
def emergency_release(customer_id: CustomerId, amount: int) -> int:
    return report_transaction(wallet.system.service.emergency_release(customer_id, amount))


@cli.command()
@click.option("--customer", "customer_id", required=True)
@click.option("--amount", type=AMOUNT, required=True)
@saves_state
def invest(customer_id: CustomerId, amount: int) -> int:
    return report_request(wallet.system.investments.invest(customer_id, amount))


@cli.command()
@click.option("--customer", "customer_id", required=True)
@click.option("--amount", type=AMOUNT, required=True)
@saves_state
def liquidate(customer_id: CustomerId, amount: int) -> int:
    return report_request(wallet.system.investments.liquidate(customer_id, amount))


@cli.command()
@click.option("--date", "as_of", type=DAY, required=True, help="Settlement date, YYYY-MM-DD.")
@saves_state
def settle(as_of: datetime) -> int:
    system = wallet.system
    day = as_of.date()
    system.clock.move_to_date(day)
    attempted = system.investments.settle(day)
    names = _names()
    emit(
        {"date": day.isoformat(), "requests": [format_request_to_dictionary(r, names) for r in attempted]},
        [f"{r.status.value} {r.kind.value} {r.id} {format_amount(r.amount)}" for r in attempted]
        or [f"nothing due on {day.isoformat()}"],
    )
    if any(r.status is RequestStatus.PENDING for r in attempted):
        click.echo("error: some settlements failed and stay pending", err=True)
        return EXIT_TRANSIENT
    return EXIT_OK


@cli.command()
@click.option("--txn-id", required=True)
@saves_state
def retry(txn_id: str) -> int:
    return report_transaction(wallet.system.retry(txn_id))


@cli.command()
@click.option("--customer", "customer_id", help="Only this customer; all customers when omitted.")
def balance(customer_id: Optional[CustomerId]) -> int:
    system = wallet.system
    customers: List[CustomerId] = [customer_id] if customer_id else system.customers()
    summaries = [system.summary(c) for c in customers]
    emit(
        {"customers": [format_summary_to_dictionary(s) for s in summaries]},
        [line for s in summaries for line in summary_lines(s)] or ["no customers"],
    )
    return EXIT_OK


@cli.command()
@click.option("--customer", "customer_id", required=True)
def transactions(customer_id: CustomerId) -> int:
    system = wallet.system
    wallet_ids = [w.id for w in system.wallets.wallets_for(customer_id)]
    found = system.engine.store.touching(wallet_ids)
    emit(
        {"customer": customer_id, "transactions": [format_transaction_to_dictionary(t) for t in found]},
        [f"{t.id} {t.txn_type.value:<18} {format_amount(t.amount):>12} {STATUS_LABELS[t.status]}" for t in found],
    )
    return EXIT_OK


@cli.command()
@click.option("--customer", "customer_id", help="Only this customer's requests.")
def pending(customer_id: Optional[CustomerId]) -> int:
    """Investment and liquidation requests waiting for settlement."""
    system = wallet.system
    if customer_id:
        system.wallets.wallets_for(customer_id)
    requests = system.investments.pending(customer_id)
    names = _names()
    emit(
        {"requests": [format_request_to_dictionary(r, names) for r in requests]},
        [f"{r.kind.value} {r.id} {format_amount(r.amount)} since {r.initiated_on.isoformat()}" for r in requests],
    )
    return EXIT_OK


@cli.group()
def ledger() -> None:
    """Journal entries."""


@ledger.command("dump")
@click.option("--customer", "customer_id", help="Only entries on this customer's wallets.")
def ledger_dump(customer_id: Optional[CustomerId]) -> int:
    """Prints the ledger as JSON Lines in seq order."""
    system = wallet.system
    if customer_id is None:
        click.echo(system.ledger.to_jsonl(), nl=False)
        return EXIT_OK
    entries = [e for w in system.wallets.wallets_for(customer_id) for e in system.ledger.entries_for_wallet(w.id)]
    for entry in sorted(entries, key=lambda e: e.seq):
        click.echo(json.dumps(entry.to_dict(), separators=(",", ":")))
    return EXIT_OK


@cli.group()
def state() -> None:
    """Copies of the whole system state."""


@state.command("export")
@click.option("--dir", "directory", type=click.Path(file_okay=False, path_type=Path), required=True)
def state_export(directory: Path) -> int:
    wallet.save(directory)
    emit({"exported": str(directory)}, [f"exported to {directory}"])
    return EXIT_OK


@state.command("import")
@click.option("--dir", "directory", type=click.Path(file_okay=False, path_type=Path), required=True)
def state_import(directory: Path) -> int:
    settings = wallet.settings
    wallet.replace(import_state(
        directory,
        fault_config=settings.fault_config,
        retry_policy=settings.retry_policy,
        calendar=settings.calendar,
    ))
    wallet.save()
    emit({"imported": str(directory)}, [f"imported from {directory}"])
    return EXIT_OK


@cli.command()
@click.option("--seed", type=int, required=True)
@click.option("--ops", "n_ops", type=click.IntRange(min=0), required=True)
@click.option("--gw-fail-prob", "probability", help="Gateway failure probability for the run.")
def simulate(seed: int, n_ops: int, probability: Optional[str]) -> int:
    """Runs a seeded random workload and checks the ledger invariants."""
    try:
        report = run_simulation(seed, n_ops, gateway_probability=probability)
    except (ValueError, ZeroDivisionError) as e:
        raise click.BadParameter(str(e), param_hint="--gw-fail-prob") from None
    payload = report.to_dict()
    emit(payload, [json.dumps(payload, sort_keys=True, indent=2)])
    if report.violations:
        click.echo(f"error: {len(report.violations)} invariant violations", err=True)
        return EXIT_FAILED
    return EXIT_OK


# ----------------------- Entry points -----------------------

def run_command(argv: Optional[Sequence[str]] = None) -> int:
    try:
        code = cli.main(args=list(argv) if argv is not None else None, prog_name="digiwallet", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_USAGE
    except ConfigError as e:
        click.echo(f"error: configuration: {e}", err=True)
        return EXIT_USAGE
    except WalletEngineError as e:
        click.echo(f"error: {type(e).__name__}: {e}", err=True)
        return EXIT_FAILED
    return code if isinstance(code, int) else EXIT_OK


def main() -> None:
    sys.exit(run_command())
