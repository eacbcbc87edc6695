"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

RESULTS: list[str] = []


def record(number: int, title: str, passed: bool, detail: str) -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"
    RESULTS.append(line)
    print(line)
    return passed
