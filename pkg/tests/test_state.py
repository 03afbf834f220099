import json
from datetime import date

import pytest

from conftest import make_system
from digiwallet.cli import run_command
from digiwallet.domain import BalanceType
from digiwallet.helpers import format_summary_to_dictionary
from digiwallet.sim import Simulation
from digiwallet.state import STATE_FILES, CorruptState, export_state, import_state, request_to_dict, transaction_to_dict


def snapshot(system):
    balances = {
        sub.id: [system.ledger.balance_of(sub.id, t) for t in (BalanceType.AVAILABLE, BalanceType.HOLDING)]
        for wallet in system.wallets.all_wallets()
        for sub in wallet.subwallets
    }
    return {
        "ledger": system.ledger.to_jsonl(),
        "balances": balances,
        "transactions": [transaction_to_dict(t) for t in system.engine.store.all()],
        "requests": [request_to_dict(r) for r in system.investments.requests.values()],
        "awaiting": sorted(system.investments.awaiting),
        "policies": dict(system.investments.policies),
        "now": system.clock.now(),
        "calls": [c.to_dict() for c in system.gateway.call_log],
    }


@pytest.fixture(params=[11, 23, 42])
def busy_system(request):
    simulation = Simulation(seed=request.param, gateway_probability="1/5")
    simulation.run(300)
    return simulation.system


def test_empty_round_trip(tmp_path):
    system = make_system()
    export_state(system, tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == sorted(STATE_FILES)
    assert snapshot(import_state(tmp_path)) == snapshot(system)


def test_simulated_round_trip(tmp_path, busy_system):
    export_state(busy_system, tmp_path / "a")
    reloaded = import_state(tmp_path / "a")
    assert snapshot(reloaded) == snapshot(busy_system)

    export_state(reloaded, tmp_path / "b")
    for name in STATE_FILES:
        assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()


def test_cli_reads_exported_state(cli_env, capsys, busy_system):
    export_state(busy_system, cli_env)

    assert run_command(["--state-dir", str(cli_env), "--json", "balance"]) == 0
    balances = json.loads(capsys.readouterr().out)
    assert balances == {
        "customers": [format_summary_to_dictionary(busy_system.summary(c)) for c in busy_system.customers()]
    }

    assert run_command(["--state-dir", str(cli_env), "ledger", "dump"]) == 0
    dumped = capsys.readouterr().out
    assert dumped == busy_system.ledger.to_jsonl()
    assert [json.loads(line)["seq"] for line in dumped.splitlines()] == list(range(1, len(busy_system.ledger) + 1))


def test_reloaded_system_keeps_working(tmp_path, system, funded, example_policy):
    system.investments.invest("alice", 10_000)
    export_state(system, tmp_path)
    reloaded = import_state(tmp_path)

    [request] = reloaded.investments.settle(date(2025, 1, 6))
    assert request.status.value == "SETTLED"
    assert reloaded.summary("alice").total == 10_000
    assert reloaded.ledger.total() == 0


class TestCorruption:
    @pytest.fixture
    def exported(self, tmp_path, system, funded):
        system.service.withdraw("alice", 1_000)
        return export_state(system, tmp_path)

    def test_missing_file(self, exported):
        (exported / "transactions.json").unlink()
        with pytest.raises(CorruptState) as e:
            import_state(exported)
        assert e.value.file == "transactions.json"

    def test_not_a_directory(self, tmp_path):
        with pytest.raises(CorruptState):
            import_state(tmp_path / "nowhere")

    def test_unbalanced_pair(self, exported):
        path = exported / "ledger.jsonl"
        lines = path.read_text().splitlines()
        entry = json.loads(lines[-1])
        entry["amount"] += 1
        lines[-1] = json.dumps(entry, separators=(",", ":"))
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorruptState) as e:
            import_state(exported)
        assert e.value.file == "ledger.jsonl"

    def test_completed_transaction_without_entries(self, exported):
        path = exported / "ledger.jsonl"
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-2]) + "\n")
        with pytest.raises(CorruptState, match="entries"):
            import_state(exported)

    def test_entries_for_unknown_transaction(self, exported):
        path = exported / "transactions.json"
        path.write_text(json.dumps(json.loads(path.read_text())[:-1]))
        with pytest.raises(CorruptState) as e:
            import_state(exported)
        assert e.value.file == "ledger.jsonl"

    def test_history_must_match_status(self, exported):
        path = exported / "transactions.json"
        records = json.loads(path.read_text())
        records[0]["history"] = []
        path.write_text(json.dumps(records))
        with pytest.raises(CorruptState, match="history"):
            import_state(exported)

    def test_garbage_json(self, exported):
        (exported / "wallets.json").write_text("{not json")
        with pytest.raises(CorruptState) as e:
            import_state(exported)
        assert e.value.file == "wallets.json"

    def test_entries_must_match_their_transaction(self, exported):
        path = exported / "ledger.jsonl"
        lines = path.read_text().splitlines()
        debit, credit = json.loads(lines[0]), json.loads(lines[1])
        debit["amount"], credit["amount"] = -12_345, 12_345
        lines[0] = json.dumps(debit, separators=(",", ":"))
        lines[1] = json.dumps(credit, separators=(",", ":"))
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(CorruptState, match="do not match") as e:
            import_state(exported)
        assert e.value.file == "ledger.jsonl"
