import os

# Positivity of every constructed density matrix is checked in test runs.
os.environ.setdefault("RYDTOMO_CHECK_PSD", "1")

import pytest  # noqa: E402

from rydtomo.dissipation import Decoherence  # noqa: E402
from rydtomo.system_model import table_s1  # noqa: E402


VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[VERDICTS] = {}


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash[VERDICTS]
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(verdicts):
        ok, detail = verdicts[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def verdict(request):
    """Record one acceptance line; ``checks`` maps a label to (passed, detail)."""

    def record(k: int, checks: dict[str, tuple[bool, str]]) -> None:
        ok = all(c[0] for c in checks.values())
        detail = "; ".join(f"{name} {'ok' if c[0] else 'FAILED'} ({c[1]})" for name, c in checks.items())
        request.config.stash[VERDICTS][k] = (ok, detail)
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        failed = [name for name, c in checks.items() if not c[0]]
        assert not failed, f"criterion {k} failed: {', '.join(failed)}"

    return record


@pytest.fixture(scope="session")
def params():
    return table_s1()


@pytest.fixture(scope="session")
def quiet_params(params):
    return params.quiet()


@pytest.fixture(scope="session")
def off():
    return Decoherence.off()


@pytest.fixture(scope="session")
def collapse_runs(params):
    """512 seeded K = 43 sequences on the coherent state α = √2, decoherence on."""
    import math

    import numpy as np

    from rydtomo.hilbert import coherent_state
    from rydtomo.ramsey import qnd_sequence_array

    psi = coherent_state(params.space.oscillator, math.sqrt(2))
    rho = np.outer(psi, psi.conj())
    runs = []
    for ss in np.random.SeedSequence(20240).spawn(512):
        out, record = qnd_sequence_array(rho, params, 43, np.random.default_rng(ss), Decoherence())
        runs.append((record, np.real(np.diagonal(out))))
    return runs
