import re

import pytest

from comemnet.data import SynthConfig, synth_generate
from comemnet.trainer import TrainConfig


def tiny_config(**kw) -> TrainConfig:
    base = dict(epochs=2, batch_size=32, hidden=8, node_dim=4, tod_dim=3, dow_dim=2, layers=1,
                rho=0.2, K=4, sampler_batches=1, sampler_batch_size=16, eval_batch_size=256)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def toy():
    """Three small periods: 8, 11 and 14 nodes over three days each."""
    return synth_generate(SynthConfig(periods=3, nodes=8, growth=3, drift=0.3, days=3, seed=1))


ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, printed after the run."""

    def record(key: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE[key] = f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: (int(re.match(r"\d+", k).group()), k)):
            terminalreporter.write_line(ACCEPTANCE[key])
