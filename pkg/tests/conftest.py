import importlib.resources

import numpy as np
import pytest

from synplan.datagen import DatagenConfig, build_shards, generate_dataset
from synplan.features import FeatureConfig, Featurizer
from synplan.neural import ModelDims, TrainConfig, init_model, train
from synplan.planner import build_block_index
from synplan.reactions import load_blocks, load_templates
from synplan.synthtree import SynthesisEnv

DATA = importlib.resources.files("synplan") / "data"

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def templates_path():
    return DATA / "toy_templates.txt"


@pytest.fixture(scope="session")
def blocks_path():
    return DATA / "toy_blocks.smi"


@pytest.fixture(scope="session")
def toy_env(templates_path, blocks_path):
    return SynthesisEnv(load_templates(templates_path), load_blocks(blocks_path))


@pytest.fixture(scope="session")
def featurizer():
    return Featurizer(FeatureConfig())


@pytest.fixture(scope="session")
def toy_dataset(toy_env):
    return generate_dataset(toy_env, DatagenConfig(n_target_trees=500, seed=0))


@pytest.fixture(scope="session")
def block_index(toy_env, featurizer):
    return build_block_index(toy_env, featurizer)


@pytest.fixture(scope="session")
def trained_model(toy_env, toy_dataset, featurizer, block_index):
    shards = build_shards(toy_dataset["train"], toy_env, featurizer)
    model = init_model(ModelDims(n_templates=toy_env.n_templates), seed=0, templates_hash=toy_env.templates_hash)
    history = train(model, shards, TrainConfig(lr=1e-3, epochs=30, seed=0), block_index)
    model.history = history
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
