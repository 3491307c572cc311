def _count_n_decimals(f: int | float) -> int:
    """
    Counts the number of decimal places in a floating-point number.

    :param f: The floating-point number whose decimal places are to be counted.
    :return: The number of decimal places in the input number.
    :raises: TypeError
    """
    if isinstance(f, bool) or not isinstance(f, (float, int)):
        raise TypeError(f"f must be a number, not: {type(f)}")

    s = f"{f}"
    if "e" in s or "E" in s:
        mantissa, exponent = s.lower().split("e")
        return max(0, _count_n_decimals(float(mantissa)) - int(exponent))
    if "." in s:
        _, decimal_part = s.split(".")
        return len(decimal_part.rstrip("0"))
    return 0


def _ci_label(level: int | float) -> str:
    """Label of a confidence level given in percent, e.g. `CI95%` or `CI97.5%`."""
    if not 0 < level < 100:
        raise ValueError(f"`level` must be in (0, 100), not {level}")
    return f"CI{level:.{_count_n_decimals(level)}f}%"
