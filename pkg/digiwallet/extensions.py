'''
Purpose:
Flask extension owning the app's wallet system. The system is loaded from
STATE_DIR the first time it is needed and written back by `save`.
'''

import logging
from pathlib import Path
from typing import Optional

from flask import Flask, current_app

from digiwallet.config import Settings, load_settings
from digiwallet.state import export_state, import_state
from digiwallet.system import WalletSystem, build_system

logger = logging.getLogger(__name__)


class _WalletState:
    def __init__(self, settings: Settings):
        self.settings = settings
        self.system: Optional[WalletSystem] = None


class DigitalWallet:
    def __init__(self, app: Optional[Flask] = None):
        if app is not None:
            self.init_app(app)

    def init_app(self, app: Flask) -> None:
        app.extensions["digiwallet"] = _WalletState(load_settings(app.config))

    @property
    def _state(self) -> _WalletState:
        return current_app.extensions["digiwallet"]

    @property
    def settings(self) -> Settings:
        return self._state.settings

    @property
    def system(self) -> WalletSystem:
        state = self._state
        if state.system is None:
            state.system = self._load(state.settings)
        return state.system

    def _load(self, settings: Settings) -> WalletSystem:
        options = dict(
            fault_config=settings.fault_config,
            retry_policy=settings.retry_policy,
            calendar=settings.calendar,
        )
        if (settings.state_dir / "clock.json").exists():
            system = import_state(settings.state_dir, **options)
        else:
            logger.info("no state in %s, starting empty", settings.state_dir)
            system = build_system(**options)
        if settings.now is not None:
            system.clock.set(settings.now)
        return system

    def replace(self, system: WalletSystem) -> None:
        self._state.system = system

    def save(self, directory: Optional[Path] = None) -> Path:
        return export_state(self.system, directory or self.settings.state_dir)


wallet = DigitalWallet()
