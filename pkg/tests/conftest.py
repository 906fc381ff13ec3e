import numpy as np
import pytest

from zslvideo.features import LabeledDataset, VideoFeatures


def synthetic_zsl(rng, class_emb, videos_per_class=3, clips=4, inverse_map=None, noise=0.0, prefix="v"):
    """Videos whose clip features map exactly (up to noise) onto their class embedding.

    ``inverse_map`` takes embedding space to feature space, so an encoder
    equal to its inverse classifies every noiseless video perfectly.
    """
    class_emb = np.asarray(class_emb, dtype=np.float64)
    n_cls, d_s = class_emb.shape
    if inverse_map is None:
        inverse_map = np.eye(d_s)
    videos, labels = [], []
    for c in range(n_cls):
        base = class_emb[c] @ inverse_map
        for j in range(videos_per_class):
            rows = base[None, :] + noise * rng.standard_normal((clips, base.shape[0]))
            videos.append(VideoFeatures(f"{prefix}{c:03d}_{j}", rows))
            labels.append(c)
    names = [f"class{c:03d}" for c in range(n_cls)]
    return LabeledDataset(names, videos, labels, class_emb)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
