import functools

import numpy as np
import pytest

from lrqt import (
    PropagatorPlan,
    build_nn_correlator,
    build_sector_basis,
    build_xxz_hamiltonian,
    full_diagonalize,
)


@functools.lru_cache(maxsize=None)
def chain(L, delta=0.0):
    basis = build_sector_basis(L, 0.0)
    H = build_xxz_hamiltonian(basis, delta)
    C = build_nn_correlator(basis)
    spec = full_diagonalize(H)
    return basis, H, C, spec


@pytest.fixture(scope="session")
def chain10():
    return chain(10)


@pytest.fixture(scope="session")
def plan10(chain10):
    return PropagatorPlan.from_spectrum(chain10[3])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"acceptance {number} {'PASS' if ok else 'FAIL'}: {title}"
        if detail:
            line += f" [{detail}]"
        print(line)
        _VERDICTS.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
