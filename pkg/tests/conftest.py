"""Shared fixtures and the acceptance summary printed at the end of a run."""

from collections import OrderedDict

import pytest

_ACCEPTANCE: "OrderedDict[str, list[tuple[str, bool, str]]]" = OrderedDict()


class AcceptanceLog:
    def part(self, criterion: str, name: str, ok: bool, detail: str = "") -> bool:
        _ACCEPTANCE.setdefault(criterion, []).append((name, bool(ok), detail))
        return bool(ok)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE, key=lambda c: int(c.split()[0])):
        parts = _ACCEPTANCE[crit]
        ok = all(p[1] for p in parts)
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {crit}")
        for name, pok, detail in parts:
            tr.write_line(f"    {'ok  ' if pok else 'FAIL'} {name}: {detail}")
