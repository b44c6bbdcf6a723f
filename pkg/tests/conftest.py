import numpy as np
import pytest

from normlab.mnist import FILES, write_idx


def make_fake_mnist(directory, n_train=300, n_test=100, seed=0, gz=False):
    """Small learnable IDX dataset: each class lights a different block of pixels."""
    rng = np.random.default_rng(seed)

    def split(n):
        labels = rng.integers(0, 10, n).astype(np.uint8)
        images = rng.integers(0, 60, (n, 28, 28)).astype(np.uint8)
        for k in range(10):
            rows = labels == k
            images[rows, 2 * k:2 * k + 3, 4:24] = 230
        return images, labels

    suffix = ".gz" if gz else ""
    for which, n in (("train", n_train), ("test", n_test)):
        images, labels = split(n)
        write_idx(directory / (FILES[f"{which}_images"] + suffix), images)
        write_idx(directory / (FILES[f"{which}_labels"] + suffix), labels)
    return directory


@pytest.fixture
def fake_mnist(tmp_path):
    return make_fake_mnist(tmp_path)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
