import numpy as np
import pytest

from retag.provider import MockProvider
from retag.store import build_index, store_from_texts

# Caption phrasings for planted concepts; varied filler keeps the mock
# embeddings from collapsing to a single point per concept.
_CAPTION_SHAPES = [
    "a photo of a {} in the garden",
    "close view of a {} resting",
    "my {} near the window",
    "the {} sitting on the grass",
    "one {} seen from above",
    "a small {} beside the fence",
    "that {} during the afternoon",
    "a {} next to the old tree",
]


@pytest.fixture
def mock():
    return MockProvider(seed=0, dim=64)


def planted_captions(concepts, per_concept=40):
    texts = []
    for concept in concepts:
        for i in range(per_concept):
            shape = _CAPTION_SHAPES[i % len(_CAPTION_SHAPES)]
            texts.append(shape.format(concept) + f" take {i}")
    return texts


def planted_index(mock_provider, concepts=("cat", "dog"), per_concept=40):
    texts = planted_captions(concepts, per_concept)
    embs = mock_provider.embed_texts("joint-text", texts)
    store = store_from_texts(texts, embs)
    return build_index(store)


@pytest.fixture
def cat_dog_index(mock):
    return planted_index(mock)


def random_unit_rows(rng, n, dim):
    m = rng.standard_normal((n, dim)).astype(np.float32)
    m /= np.linalg.norm(m.astype(np.float64), axis=1, keepdims=True).astype(np.float32)
    return m
