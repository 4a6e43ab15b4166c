"""Shared numeric text formats.

All measurement values that cross a wire or land in a file use the same
6-significant-digit scientific notation so golden tests stay byte-stable.
"""

from __future__ import annotations


def sci6(value: float) -> str:
    """6 significant digits, scientific notation, ASCII uppercase E."""
    return f"{float(value):.5E}"


def fmt_um(value: float) -> str:
    """Micrometer positions: plain decimal, trailing zeros trimmed."""
    text = f"{float(value):.6f}".rstrip("0").rstrip(".")
    return text if text else "0"


def fmt_num(value: float) -> str:
    """General-purpose float for command templates; 10 significant digits
    collapse accumulated sweep dust (-0.7000000000000001 -> "-0.7")."""
    return format(float(value), ".10g")
