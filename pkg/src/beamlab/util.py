"""Output formatting, atomic writes, and the worker-pool capability."""

from __future__ import annotations

import os
import tempfile
from concurrent.futures import ThreadPoolExecutor

__all__ = ["fmt", "atomic_write_text", "write_csv", "parallel_map", "thread_count"]


def fmt(x) -> str:
    """Floats with 17 significant digits (round-trip exact); ints/str as-is."""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return format(x, ".17g")
    if isinstance(x, complex):
        return f"{format(x.real, '.17g')}{'+' if x.imag >= 0 else '-'}{format(abs(x.imag), '.17g')}j"
    return str(x)


def atomic_write_text(path: str, text: str):
    """Write via a temp file in the target directory, then rename."""
    d = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".beamlab-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header, rows, footer_json: str | None = None):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    text = "\r\n".join(lines) + "\r\n"
    if footer_json is not None:
        text += "# " + footer_json + "\r\n"
    atomic_write_text(path, text)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("BEAMLAB_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Ordered map over items; honors BEAMLAB_THREADS for the pool size."""
    n = thread_count()
    items = list(items)
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
