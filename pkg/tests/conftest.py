import os
import sys
import time
from importlib import resources

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from cpda.pipeline import collect, model_for_tests  # noqa: E402
from cpda.runtime import parse_suite  # noqa: E402

DATA = resources.files("cpda") / "data"

WC_NMPN = 100
WC_SEED = 2024
WC_GROUPS = {
    "onechar": ["t1", "t2", "t3"],
    "oneword": ["t4", "t5", "t6", "t7"],
    "oneline": ["t8", "t9", "t10"],
    "multiline": ["t11", "t12", "t13", "t14", "t15"],
}

# criterion number -> (passed, description); filled by the acceptance tests
CRITERIA: dict = {}
TIMINGS: dict = {}


def data_text(name: str) -> str:
    return (DATA / name).read_text(encoding="utf-8")


def load_bundled(stem: str):
    return data_text(f"{stem}.mini"), parse_suite(data_text(f"{stem}.suite"))


def record(number: int, passed: bool, description: str):
    prev = CRITERIA.get(number)
    if prev is not None:
        passed = passed and prev[0]
        description = prev[1] + "; " + description
    CRITERIA[number] = (passed, description)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {description}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, description = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {description}")


@pytest.fixture(scope="session")
def wc_collection():
    source, tests = load_bundled("wc")
    start = time.perf_counter()
    col = collect(source, tests, WC_NMPN, WC_SEED)
    TIMINGS["wc_collect"] = time.perf_counter() - start
    return col


@pytest.fixture(scope="session")
def wc_models(wc_collection):
    start = time.perf_counter()
    models = {"full": model_for_tests(wc_collection)}
    for name, ids in WC_GROUPS.items():
        models[name] = model_for_tests(wc_collection, ids)
    TIMINGS["wc_models"] = time.perf_counter() - start
    return models
