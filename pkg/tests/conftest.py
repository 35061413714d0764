import pytest

from bouncenet.dataset import generate_dataset


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """4 trajectories per class for training, 2 per class for test."""
    return generate_dataset(4, 2, 123, tmp_path_factory.mktemp("tiny"))
