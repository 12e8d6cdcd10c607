import numpy as np
import pytest
from hypothesis import settings

from oblivdp.memory import CryptoMode, EnclaveEnv

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def env():
    return EnclaveEnv(crypto_mode=CryptoMode.PLAINTEXT, rng_seed=7)


@pytest.fixture
def aead_env():
    return EnclaveEnv(crypto_mode=CryptoMode.AEAD, rng_seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    def _record(number: int, passed: bool, detail: str) -> bool:
        line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
