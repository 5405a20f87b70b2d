import os

import numpy as np
import pytest

from panelcorr.io import ColumnRoles, ingest
from panelcorr.model import ModelSpec

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures")

# (file, spec, column roles)
FIXTURES = {
    "probit_ae_dynamic": (
        ModelSpec(family="probit", lag_order=1),
        ColumnRoles(x=["x"], lag_order=1)),
    "logit_ds_dynamic": (
        ModelSpec(family="logit", index_form="covariate_loaded_fe", lag_order=1),
        ColumnRoles(x=["x"], u="u", v="v", lag_order=1)),
    "logit_hs_static": (
        ModelSpec(family="logit", index_form="shared_slope_fe"),
        ColumnRoles(x=[], u="u")),
    "gaussian_ar1": (
        ModelSpec(family="gaussian", lag_order=1),
        ColumnRoles(x=[], lag_order=1)),
    "lfp_like": (
        ModelSpec(family="probit", lag_order=1),
        ColumnRoles(x=["kids0_2", "kids3_5", "kids6_17", "log_hinc"], lag_order=1)),
}


def load_fixture(name):
    spec, roles = FIXTURES[name]
    data = ingest(os.path.join(FIXTURE_DIR, name + ".csv"), roles)
    return data, spec


@pytest.fixture(params=sorted(FIXTURES))
def fixture_panel(request):
    return (request.param, *load_fixture(request.param))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request, capsys):
    """Record and immediately print one PASS/FAIL line per criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def log(number, ok, detail):
        line = f"acceptance {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
