import os
from collections import defaultdict
from pathlib import Path

import pytest

_CRITERIA: dict[int, list[tuple[str, bool, str]]] = defaultdict(list)


@pytest.fixture
def criterion():
    """``record(n, part, ok, detail)`` collects one acceptance check for the summary."""
    def record(n: int, part: str, ok: bool, detail: str) -> bool:
        _CRITERIA[n].append((part, bool(ok), detail))
        return ok
    return record


@pytest.fixture(scope="session")
def acceptance_out(tmp_path_factory) -> Path:
    out = os.environ.get("ACCEPTANCE_OUT")
    if out:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        return path
    return tmp_path_factory.mktemp("acceptance")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 9):
        parts = _CRITERIA.get(n)
        if not parts:
            continue
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{name}: {'ok' if good else 'FAILED'} ({d})" for name, good, d in parts)
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
