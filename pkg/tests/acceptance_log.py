"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

import contextlib
import time

RESULTS = {}


@contextlib.contextmanager
def criterion(number, title):
    notes = []
    start = time.perf_counter()
    try:
        yield notes
    except BaseException as exc:
        detail = f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        RESULTS[number] = ("FAIL", title, "; ".join(notes + [detail]), time.perf_counter() - start)
        raise
    RESULTS[number] = ("PASS", title, "; ".join(notes), time.perf_counter() - start)


def lines():
    out = []
    for number in sorted(RESULTS):
        status, title, detail, secs = RESULTS[number]
        text = f"{status} criterion {number:>2}: {title} ({secs:.1f}s)"
        if detail:
            text += f" -- {detail}"
        out.append(text)
    return out
