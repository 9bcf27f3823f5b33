import copy
import json

import pytest

# four classes, a few seconds of audio: every training-loop test finishes in seconds
TINY = {
    "profile": "desk",
    "filter": {"num_filters": 8, "kernel_len": 101},
    "head": {"conv_channels": 4, "dense_width": 32},
    "data": {"synth": {"n_classes": 4, "utterances_per_class": 6, "test_per_class": 2, "duration": [0.6, 1.0]}},
    "train": {"epochs": 2},
}


def tiny(**sections):
    d = copy.deepcopy(TINY)
    for k, v in sections.items():
        if isinstance(v, dict) and isinstance(d.get(k), dict):
            d[k] = {**d[k], **v}
        else:
            d[k] = v
    return d


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def pytest_configure(config):
    config.acceptance_results = {}


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion; shown in the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.acceptance_results[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "acceptance_results", {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
