import numpy as np
import pytest

from dpltta import data as D
from dpltta import engine as E
from dpltta.model import ModelConfig, PrototypeClassifier, load_checkpoint, save_checkpoint


@pytest.fixture(scope="session")
def suite_specs():
    sources, target = D.make_domain_suite(shift_level=1.0, seed=0)
    return sources, target


@pytest.fixture(scope="session")
def small_sources(suite_specs):
    return [D.generate(s, 80) for s in suite_specs[0]]


@pytest.fixture(scope="session")
def small_target(suite_specs):
    return D.generate(suite_specs[1], 96)


@pytest.fixture(scope="session")
def tiny_ckpt_path(tmp_path_factory, small_sources):
    """A briefly pre-trained checkpoint; enough signal for plumbing tests.

    Epoch count matters: a near-chance model pseudo-labels every confident
    sample into one class, and the aggregated prototype loss over a single
    present class is identically zero with zero gradient.
    """
    model = PrototypeClassifier(ModelConfig(class_count=5), seed=0)
    E.pretrain(model, D.concat_datasets(small_sources), epochs=12, seed=0)
    path = tmp_path_factory.mktemp("ckpt") / "tiny.bin"
    save_checkpoint(model, str(path))
    return str(path)


@pytest.fixture
def tiny_model(tiny_ckpt_path):
    model, _ = load_checkpoint(tiny_ckpt_path)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(0)
