import numpy as np
import pytest

from chef.dataio import Dataset, LabelState, make_blobs_dataset, synth_probabilistic_labels
from chef.model import TrainConfig


def dataset_from_arrays(features, classes, num_classes, split=None, ground_truth=True):
    """Small Dataset with deterministic labels from explicit arrays."""
    features = np.asarray(features, dtype=float)
    n = features.shape[0]
    labels = [LabelState.deterministic(int(c)) for c in classes]
    if split is None:
        split = {"train": list(range(n)), "validation": [], "test": []}
    gt = [int(c) for c in classes] if ground_truth else None
    return Dataset(features, labels, num_classes, split, gt)


@pytest.fixture
def noisy_blobs():
    """200-sample binary blob task with 30% probabilistic training labels."""
    ds = make_blobs_dataset(200, 10, 2, seed=7)
    return synth_probabilistic_labels(ds, 0.3, seed=11)


@pytest.fixture
def small_train_config():
    return TrainConfig(learning_rate=0.3, lam=0.05, epochs=40, batch_size=64,
                       gamma=0.8, seed=3)
