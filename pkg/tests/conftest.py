import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthdata import all_fixture_texts, qg_examples  # noqa: E402

from eduqg.datasets import DatasetSplit, SplitName  # noqa: E402
from eduqg.model import init_model, toy_config  # noqa: E402
from eduqg.textproc import Tokenizer  # noqa: E402
from eduqg.trainer import Stage, TrainSpec, finetune  # noqa: E402


@pytest.fixture(scope="session")
def fixture_tokenizer():
    return Tokenizer.build(all_fixture_texts(), max_words=2000, num_sentinels=32)


@pytest.fixture(scope="session")
def memorization_examples():
    return qg_examples(10, seed=1)


@pytest.fixture(scope="session")
def overfit_checkpoint(fixture_tokenizer, memorization_examples):
    """Toy model trained to memorize ten QG examples; shared where an
    approximately deterministic generator is needed."""
    base = init_model(toy_config(fixture_tokenizer.vocab_size), fixture_tokenizer, seed=0)
    spec = TrainSpec(stage=Stage.FINETUNE, dataset_id="memorization", epochs=100,
                     batch_size=5, learning_rate=1e-3, seed=0, log_every=50)
    trained, _ = finetune(base, DatasetSplit(SplitName.TRAIN, memorization_examples), spec)
    return trained
