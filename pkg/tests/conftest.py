import numpy as np
import pytest

from framingattack.classifier import CnnClassifier
from framingattack.data import generate_moving_shapes, generate_shapes


@pytest.fixture(scope="session")
def tiny_images():
    return generate_shapes(seed=11, n_train=512, n_val=64, num_classes=4, h=16, w=16)


@pytest.fixture(scope="session")
def tiny_model(tiny_images):
    train, _ = tiny_images
    return CnnClassifier(widths=(8, 16, 16), strides=(1, 2, 1), epochs=15, lr=5e-3, decay_every=100, seed=0).fit(train.X, train.y, num_classes=4)


@pytest.fixture(scope="session")
def tiny_clips():
    return generate_moving_shapes(seed=12, n_train=32, n_val=16, num_classes=4, T=3, h=16, w=16)


@pytest.fixture(scope="session")
def tiny_clip_model(tiny_clips):
    train, _ = tiny_clips
    return CnnClassifier(widths=(4, 4), strides=(1, 2), epochs=1, seed=0).fit(train.X, train.y, num_classes=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[number])
