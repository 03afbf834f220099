import pytest

from digiwallet.domain import MONEY_LIMIT
from digiwallet.helpers import format_amount, parse_amount


@pytest.mark.parametrize("text, minor", [
    ("100.00", 10_000),
    ("0.5", 50),
    ("7", 700),
    (" 12.34 ", 1_234),
    ("-3.10", -310),
])
def test_parse_amount(text, minor):
    assert parse_amount(text) == minor


@pytest.mark.parametrize("text", [
    "١٠٠.٠٠",
    "１００",
    "१०",
    "1.٥",
])
def test_parse_amount_takes_ascii_digits_only(text):
    with pytest.raises(ValueError):
        parse_amount(text)


def test_parse_amount_refuses_more_than_the_limit():
    assert parse_amount(format_amount(MONEY_LIMIT)) == MONEY_LIMIT
    with pytest.raises(ValueError, match="too large"):
        parse_amount(format_amount(MONEY_LIMIT + 1))


def test_format_amount():
    assert format_amount(0) == "0.00"
    assert format_amount(5) == "0.05"
    assert format_amount(-12_345) == "-123.45"
