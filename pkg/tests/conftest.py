import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shrinkmatch.signal_model import SystemDims

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion -> list of (part, ok, detail), filled by test_acceptance
ACCEPTANCE: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def tiny_dims():
    return SystemDims(N=8, L_p=2, N_T=1, N_R=2, B=12, A=12, P=1, p_l=0, I=1, L=1)


@pytest.fixture
def desk_dims():
    return SystemDims(N=16, L_p=4, N_T=1, N_R=4, B=36, A=36, P=1, p_l=0, I=2, L=1, ifft_norm="unit")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[crit]
        ok = all(p[1] for p in parts)
        failed = [f"{p[0]} ({p[2]})" for p in parts if not p[1]]
        detail = "; ".join(f"{p[0]}: {p[2]}" for p in parts) if ok else "failed: " + "; ".join(failed)
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {crit}: {detail}")
