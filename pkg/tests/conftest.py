import numpy as np
import pytest

from embedlens.classifier import labelset_anchor_mode
from embedlens.encoder import EncoderConfig, init_params, vision_embedder
from embedlens.harness.dataset import SyntheticDatasetSpec, generate_dataset
from embedlens.matcher import class_representatives


@pytest.fixture(scope="session")
def toy_config():
    return EncoderConfig()


@pytest.fixture(scope="session")
def params0(toy_config):
    return init_params(toy_config, seed=0)


@pytest.fixture(scope="session")
def dataset0():
    return generate_dataset(SyntheticDatasetSpec(per_class=20, seed=0))


@pytest.fixture(scope="session")
def labels0(params0, dataset0):
    train = dataset0.train
    return labelset_anchor_mode(vision_embedder(params0), train.images, train.labels,
                                train.class_names, train.class_tokens)


@pytest.fixture(scope="session")
def reps0(params0, dataset0):
    return class_representatives(params0, dataset0.train)


@pytest.fixture(scope="session")
def random_image(toy_config):
    from embedlens.encoder import ImageTensor

    rng = np.random.default_rng(1234)
    return ImageTensor(rng.random((toy_config.image_hw, toy_config.image_hw,
                                   toy_config.channels)))
