import random
from datetime import datetime, timezone

import pytest
from hypothesis import settings

from digiwallet.domain import CustomerWallets, InvestmentPolicy, LogicalClock, Success, policy_by_name, seeded_ids
from digiwallet.gateway import FaultConfig
from digiwallet.system import WalletSystem, build_system

settings.register_profile("digiwallet", deadline=None, max_examples=100)
settings.load_profile("digiwallet")

FRIDAY = datetime(2025, 1, 3, 10, tzinfo=timezone.utc)
OPTIONS = ["stocks", "bonds", "index", "cash"]
EXAMPLE_SHARES = {"stocks": 5000, "bonds": 3000, "index": 1500, "cash": 500}


def make_system(fault_config: FaultConfig = None, seed: int = 1234, **kwargs) -> WalletSystem:
    return build_system(
        clock=LogicalClock(FRIDAY),
        fault_config=fault_config,
        new_id=seeded_ids(random.Random(seed)),
        **kwargs,
    )


@pytest.fixture
def system() -> WalletSystem:
    return make_system()


@pytest.fixture
def alice(system: WalletSystem) -> CustomerWallets:
    return system.create_customer("alice", OPTIONS)


@pytest.fixture
def funded(system: WalletSystem, alice: CustomerWallets) -> CustomerWallets:
    """alice with 100.00 on RealMoney."""
    txn = system.service.deposit("alice", 10_000)
    assert txn.status.value == "COMPLETED"
    return alice


@pytest.fixture
def example_policy(system: WalletSystem, alice: CustomerWallets) -> InvestmentPolicy:
    policy = policy_by_name("alice", alice.investment, EXAMPLE_SHARES)
    outcome = system.investments.set_policy("alice", policy.allocations)
    assert isinstance(outcome, Success)
    return outcome.value


@pytest.fixture
def cli_env(tmp_path, monkeypatch):
    """A clean state directory and no gateway env overrides."""
    for name in ("GW_FAIL_NEXT_K", "GW_FAIL_PROB", "GW_SEED"):
        monkeypatch.delenv(name, raising=False)
    return tmp_path / "state"
