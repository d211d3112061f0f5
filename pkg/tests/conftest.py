import pytest

from menkf.config import parse_config_text

SMALL_BURGERS = """\
seed = 5
output_dir = out

[grid]
n_elements = 160
domain_length = 10.0
coarsening_ratio = 2

[model]
model = burgers
dt = 0.002
reynolds = 200
true_theta = 0.2, 0.0

[filter]
n_ensemble = 12
obs_noise_variance = 0.0025
obs_every_n_steps = 10
param_prior_mean = 0.0, 0.3
param_prior_variance = 0.0025, 0.0025
param_inflation = 0.0, 0.0

[experiment]
spinup_time = 1.0
duration = 0.4
obs_window = 0.0, 1.0
snapshot_times = 0.0, 0.2
"""


@pytest.fixture
def small_text():
    return SMALL_BURGERS


@pytest.fixture
def small_cfg():
    return parse_config_text(SMALL_BURGERS)


def pytest_terminal_summary(terminalreporter):
    import sys

    results = {}
    for name, module in list(sys.modules.items()):
        if name.rsplit(".", 1)[-1] == "test_acceptance":
            results.update(getattr(module, "RESULTS", {}))
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
