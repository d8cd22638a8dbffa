import numpy as np
import pytest

from diffetm.corpus import Dataset, build_vocabulary, split_corpus, tokenize_line, vectorize
from diffetm.model import ModelConfig
from diffetm.synth import generate_docs


def dataset_from_lines(lines, min_df=1, fractions=(0.6, 0.2, 0.2), seed=11) -> Dataset:
    token_docs = [tokenize_line(line) for line in lines]
    vocab = build_vocabulary(token_docs, min_df)
    docs = [d for d in (vectorize(t, vocab) for t in token_docs) if d is not None]
    train, valid, test = split_corpus(docs, fractions, seed, vocab.ref_id)
    return Dataset(vocab, train, valid, test)


@pytest.fixture(scope="session")
def tiny_dataset() -> Dataset:
    """~20 train docs over a ~30-word vocabulary; enough to learn on."""
    lines = generate_docs(
        34, vocab_size=30, n_topics=3, seed=5, doc_len_range=(15, 40),
        topic_concentration=0.2,
    )
    return dataset_from_lines(lines, fractions=(0.62, 0.19, 0.19))


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(num_topics=5, embed_size=8, hidden_size=16, seed=3)


def batch_of(dataset: Dataset, split="train", n=6, seed=0) -> np.ndarray:
    from diffetm.corpus import dense_counts

    corpus = dataset.split(split)
    idx = list(range(min(n, len(corpus))))
    return dense_counts(corpus, idx, dataset.vocab.V)
