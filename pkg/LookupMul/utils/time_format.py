def get_readable_time(seconds: float) -> str:
    """Run time for report footers: ``42.3s``, ``5m 07s``, ``2h 03m 09s``, ``1 days, 0h 00m 05s``."""
    seconds = max(0.0, float(seconds))
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes, secs = divmod(int(seconds), 60)
    hours, minutes = divmod(minutes, 60)
    days, hours = divmod(hours, 24)
    if not hours and not days:
        return f"{minutes}m {secs:02d}s"
    readable = f"{hours}h {minutes:02d}m {secs:02d}s"
    return f"{days} days, {readable}" if days else readable
