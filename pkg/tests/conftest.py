import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# Lines recorded by the acceptance module, echoed in the terminal summary so
# they appear in a plain ``pytest -v`` log without ``-s``.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    from h2xpinn.synthetic import oracle_dataset
    return oracle_dataset(60, seed=3)


@pytest.fixture(scope="session")
def tiny_trained(small_dataset):
    """A briefly trained full-sized (8-128-128-1) network with its scaling and splits."""
    from h2xpinn.data import SplitSpec, normalize, stratified_split
    from h2xpinn.training import TrainConfig, train
    tr, va, te = stratified_split(small_dataset, SplitSpec(seed=42))
    tr = normalize(tr)
    net, report = train(tr, va, TrainConfig(max_epochs=30), test_ds=te)
    return net, tr.normalization_stats, report, (tr, va, te)


@pytest.fixture(scope="session")
def extrapolation_result():
    """One NN / PINN / fusion study shared by the acceptance and inference tests."""
    import time

    from h2xpinn.inference import extrapolation_study
    from h2xpinn.synthetic import extrapolation_design
    from h2xpinn.training import TrainConfig
    pressures = (40.0, 120.0, 160.0, 200.0)
    train_ds, test_ds = extrapolation_design(test_pressures=pressures)
    t0 = time.perf_counter()
    rows, context = extrapolation_study(train_ds, test_ds, pressures, TrainConfig(collocation_points=1000))
    context["runtime_s"] = time.perf_counter() - t0
    table = {(r["pressure"], r["method"]): r for r in rows}
    return rows, table, context
