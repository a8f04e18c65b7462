import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from advlogo import cli
from advlogo.config import RunConfig
from advlogo.detector import DetectorModel, evaluate_detector, load_weights
from advlogo.scene import detector_holdout


@dataclass
class Baseline:
    model: DetectorModel
    weights_path: Path
    recall: float
    false_positive_rate: float
    seconds: float
    n_scenes: int
    exit_code: int


@pytest.fixture(scope="session")
def baseline(tmp_path_factory) -> Baseline:
    """The toy detector trained once per session through the CLI stage, default settings."""
    out = tmp_path_factory.mktemp("detector")
    cfg = RunConfig(out_dir=str(out))
    t0 = time.perf_counter()
    code = cli.cmd_train_detector(cfg, log=lambda *_: None)
    seconds = time.perf_counter() - t0
    model = load_weights(cfg.weights_path)
    # score the weights as stored on disk, not the in-memory float64 copy
    hold = detector_holdout(cfg.det_holdout, cli._sub_seed(cfg.seed, 4), cfg.image_size)
    recall, fpr = evaluate_detector(model, np.stack([h[0] for h in hold]), [h[1] for h in hold],
                                    cfg.threshold)
    return Baseline(model, cfg.weights_path, recall, fpr, seconds,
                    cfg.det_scenes_per_epoch * cfg.det_epochs, code)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Criterion number -> result line, printed after the run by the summary hook."""
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
