"""Process-level tuning for allocation-heavy numpy loops."""

import ctypes
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def tune_allocator():
    """Keep large numpy buffers on the glibc heap so they are reused.

    Training allocates the same large temporaries every minibatch; served
    from fresh mmap regions each one pays first-touch page faults, which in
    some sandboxes costs more than the arithmetic. No-op off glibc.
    """
    global _done
    if _done or not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30)
        libc.mallopt(_M_TRIM_THRESHOLD, 1 << 31)
    except (OSError, AttributeError):
        pass
    _done = True
