import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from annocalib.core import Annotation, DatasetMeta, Prediction  # noqa: E402
from annocalib.preprocess import build_cluster  # noqa: E402
from annocalib.simulate import SimulationConfig, voc_mix_profiles  # noqa: E402


def make_cluster(boxes, classes, meta, annotators=None):
    annotators = annotators or list(range(1, len(boxes) + 1))
    return build_cluster([Annotation(b, c, k) for b, c, k in zip(boxes, classes, annotators)],
                         meta)


def make_pred(mean, var=(1.0, 1.0, 1.0, 1.0), probs=(0.0, 1.0), certainty=1.0,
              image_id="img"):
    return Prediction(image_id, mean, var, probs, certainty)


def random_box(rng, scale=100.0):
    x1, y1 = rng.uniform(0, scale, 2)
    w, h = rng.uniform(1, scale / 2, 2)
    return np.array([x1, y1, x1 + w, y1 + h])


@pytest.fixture
def meta2():
    return DatasetMeta(num_classes=2, num_annotators=2)


@pytest.fixture
def meta5():
    return DatasetMeta(num_classes=3, num_annotators=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_sim_config():
    return SimulationConfig(seed=7, num_images=20, num_classes=4,
                            profiles=voc_mix_profiles(4, 1, miss_rate=0.1,
                                                      box_jitter_sigma=0.02,
                                                      spurious_rate=0.1))



def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for line in results.values():
            terminalreporter.write_line(line)
