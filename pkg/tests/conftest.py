"""Shared fixtures: synthetic datasets and pre-trained frozen components.

The expensive fixtures are session-scoped so the detector and codec are
each trained exactly once per test run and shared by every test that
needs them, including the acceptance suite.
"""

import re

import numpy as np
import pytest
import torch

from handvid.synth import generate_dataset


@pytest.fixture(scope="session")
def dataset200():
    return generate_dataset(200, frames=16, height=64, width=64, seed=123)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(12, frames=8, height=64, width=64, seed=555)


@pytest.fixture(scope="session")
def trained_detector(dataset200):
    from handvid.hand_pose import DetectorTrainConfig, train_detector

    cfg = DetectorTrainConfig(epochs=20, lr=3e-3, batch_size=32, seed=0)
    return train_detector(dataset200, cfg)


@pytest.fixture(scope="session")
def trained_codec(dataset200):
    from handvid.denoiser import CodecTrainConfig, train_codec

    cfg = CodecTrainConfig(epochs=12, lr=2e-3, batch_size=32, seed=0)
    return train_codec(dataset200[:60], cfg)


@pytest.fixture(scope="session")
def text_embedder():
    from handvid.denoiser import TextEmbedder

    return TextEmbedder()


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)
    np.random.seed(0)
    yield


_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion that ran."""
    results = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            m = _CRITERION.search(getattr(report, "nodeid", ""))
            if m:
                label = m.group(2).replace("_", " ")
                verdict = "PASS" if outcome == "passed" else "FAIL"
                results[int(m.group(1))] = (label, verdict)
    if results:
        terminalreporter.write_sep("-", "acceptance criteria")
        for n in sorted(results):
            label, verdict = results[n]
            terminalreporter.write_line(f"criterion {n} ({label}): {verdict}")
