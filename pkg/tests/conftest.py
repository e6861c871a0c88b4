import numpy as np
import pytest
from hypothesis import settings

from covidct.data import PhantomSpec, generate_phantoms

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def small_spec(**kw) -> PhantomSpec:
    base = dict(image_size=64, n_scans=2, slices_min=3, slices_max=4, noise_sigma=0.0)
    base.update(kw)
    return PhantomSpec(**base)


@pytest.fixture(scope="session")
def phantoms64():
    return generate_phantoms(small_spec())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_mask(rng, shape=(32, 32), p=0.5):
    from covidct.imaging import Mask
    return Mask(rng.random(shape) < p)


# 64px lungs hold a few hundred pixels, so the filter policy and the
# extraction disks are scaled down with the image
SMALL_POLICY_ARGS = (150, (100, 50), True)
SMALL_RADII = (1, 3)
SMALL_CLF = dict(conv_channels=(4, 8), dense_units=16, input_size=64, batch_size=8,
                 epochs=20, rng_seed=1)


@pytest.fixture(scope="session")
def phantom_classifier():
    """Small classifier trained on k-means lung extractions of 64px phantoms."""
    from covidct.classifier import ClfConfig, build_classifier, train_classifier
    from covidct.morphology import ExtractionParams
    from covidct.pipeline import Segmenter, extract_scan

    seg = Segmenter("kmeans")
    imgs, labels = [], []
    for ph in generate_phantoms(small_spec(n_scans=12, slices_min=5, slices_max=5,
                                           noise_sigma=5.0, rng_seed=3)):
        ex = extract_scan(ph.scan, seg, 64, ExtractionParams(*SMALL_RADII))
        imgs += ex.slices
        labels += [ph.scan.label] * len(ex)
    model = build_classifier(ClfConfig(**SMALL_CLF))
    train_classifier(model, imgs, labels)
    return model


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:-1])):
            terminalreporter.write_line(line)
