"""Process-level allocator tuning.

Batched forward passes allocate many short-lived ~1 MB arrays.  glibc
serves those with fresh mmap() regions by default, so every temporary pays
page faults.  Raising the mmap/trim thresholds keeps them on the heap.
No-op off glibc.
"""
from __future__ import annotations

import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def tune_malloc(threshold: int = 32 * 1024 * 1024) -> bool:
    global _done
    if _done:
        return True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        ok = bool(libc.mallopt(_M_MMAP_THRESHOLD, threshold)) and bool(
            libc.mallopt(_M_TRIM_THRESHOLD, threshold)
        )
    except (OSError, AttributeError):
        return False
    _done = ok
    return ok
