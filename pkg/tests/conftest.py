from __future__ import annotations

import numpy as np
import pytest

from burstbench.engine import BimodalResponse, EmpiricalResponse, EngineConfig
from burstbench.workload import synthetic_pool


def toy_engine(**overrides) -> EngineConfig:
    """Small engine whose runs finish in seconds: 16k KV tokens, 20 ms steps,
    short bimodal responses."""
    kw = dict(
        kv_capacity_tokens=16000,
        response_model=BimodalResponse((float(np.log(40)), float(np.log(150))), (0.5, 0.5), 0.5, 512),
        prefill_coeff=1e-7,
        decode_coeff=1e-6,
        step_overhead=0.02,
        timeout=30.0,
    )
    kw.update(overrides)
    return EngineConfig(**kw)


def fixed_engine(lengths=(10,), **overrides) -> EngineConfig:
    kw = dict(kv_capacity_tokens=1000, response_model=EmpiricalResponse(tuple(lengths), 2048), step_overhead=0.01)
    kw.update(overrides)
    return EngineConfig(**kw)


@pytest.fixture(scope="session")
def pool():
    return synthetic_pool(2048)


@pytest.fixture
def engine_cfg():
    return toy_engine()


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        verdict, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {verdict} - {detail}")
