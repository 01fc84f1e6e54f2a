UNITS = ("B", "KiB", "MiB", "GiB", "TiB")


def humanbytes(size) -> str:
    """Binary-prefixed byte count, e.g. table storage next to the dense weights."""
    size = float(size or 0)
    for unit in UNITS[:-1]:
        if size < 1024:
            break
        size /= 1024
    else:
        unit = UNITS[-1]
    return f"{int(size)} {unit}" if unit == "B" else f"{round(size, 2)} {unit}"
