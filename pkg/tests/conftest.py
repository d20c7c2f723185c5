import numpy as np
import pytest
from PIL import Image

from detbench.compositor import Background, ForegroundAsset


def ellipse_mask(h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((((yy - (h - 1) / 2) / (h / 2)) ** 2 + ((xx - (w - 1) / 2) / (w / 2)) ** 2) <= 1).astype(float)


def make_asset(asset_id, kind, h=40, w=30, seed=0, value=None):
    rng = np.random.default_rng(seed)
    img = np.full((h, w, 3), value, np.uint8) if value is not None else rng.integers(20, 256, (h, w, 3), dtype=np.uint8)
    return ForegroundAsset(asset_id, kind, img, ellipse_mask(h, w))


def make_background(bg_id, h=240, w=320, seed=0):
    rng = np.random.default_rng(seed)
    return Background(bg_id, rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


@pytest.fixture
def assets():
    return [make_asset(f"cut{i}", "real-cutout", seed=i) for i in range(3)] + [
        make_asset(f"ren{i}", "render", h=36, w=36, seed=10 + i) for i in range(3)
    ]


@pytest.fixture
def backgrounds():
    return [make_background(f"bg{i}", seed=100 + i) for i in range(4)]


def write_png(path, array):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
