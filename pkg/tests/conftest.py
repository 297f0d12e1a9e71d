import numpy as np
import pytest

from seqcascade import autodiff as ad


@pytest.fixture(autouse=True)
def _clean_tape():
    ad.tape_reset()
    yield
    ad.tape_reset()


@pytest.fixture
def f64():
    """Run the block in float64 so finite differences are meaningful."""
    with ad.using_dtype(np.float64):
        yield


@pytest.fixture(scope="session")
def overfit_toy_run():
    """One shared training run that memorizes the 32-sentence toy corpus
    (several acceptance criteria and module tests reuse it)."""
    from seqcascade.training import train

    from helpers import prepared_toy3, toy3_config

    schemas, vocab, examples = prepared_toy3(32, seed=7)
    config = toy3_config(seed=11)
    result = train(config, schemas, vocab, examples, examples)
    return {
        "result": result,
        "schemas": schemas,
        "vocab": vocab,
        "examples": examples,
        "config": config,
    }
