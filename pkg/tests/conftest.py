"""Shared pytest hooks: acceptance verdicts are reported after the run."""
from __future__ import annotations

VERDICTS: dict[int, list[tuple[bool, str]]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    """Register one check towards an acceptance criterion."""
    VERDICTS.setdefault(criterion, []).append((bool(ok), detail))


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(VERDICTS):
        checks = VERDICTS[crit]
        ok = all(c[0] for c in checks)
        detail = "; ".join(d for _, d in checks)
        terminalreporter.write_line(f"CRITERION {crit}: {'PASS' if ok else 'FAIL'} | {detail}")
