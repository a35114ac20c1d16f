import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_model_config(**overrides):
    from edgevtp.model import ModelConfig

    base = dict(t_in=5, t_out=6, d_main=8, d_branch=4, d_model=8, d_ff=16, n_layers=2,
                n_heads=2, dropout=0.0, radius=10.0, k=3)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_model_config()


# -- acceptance reporting ---------------------------------------------------

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    criterion = getattr(report, "criterion", None)
    if criterion is None:
        return
    failed = report.failed
    if report.when == "call" or failed:
        prev = _ACCEPTANCE.get(criterion, True)
        _ACCEPTANCE[criterion] = prev and not failed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    criterion = getattr(getattr(item, "function", None), "criterion", None)
    if criterion is not None:
        outcome.get_result().criterion = criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), ok in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}")
