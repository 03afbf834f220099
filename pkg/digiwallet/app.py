'''
Purpose:
Entry point and set up for the Flask app that hosts one wallet system
'''

import logging
from typing import Any, Mapping, Optional

from flask import Flask
from flask.logging import default_handler

from digiwallet.config import DEFAULTS
from digiwallet.extensions import wallet


def configure_logging(app: Flask) -> None:
    # library modules log under "digiwallet"; route them through Flask's handler
    package_logger = logging.getLogger("digiwallet")
    if default_handler not in package_logger.handlers:
        package_logger.addHandler(default_handler)
    package_logger.setLevel(app.extensions["digiwallet"].settings.log_level)


def create_app(overrides: Optional[Mapping[str, Any]] = None) -> Flask:
    app = Flask(__name__)

    app.config.update(DEFAULTS)
    app.config.from_prefixed_env("DIGIWALLET")
    if overrides:
        app.config.update({key: value for key, value in overrides.items() if value is not None})

    wallet.init_app(app)
    configure_logging(app)

    return app
