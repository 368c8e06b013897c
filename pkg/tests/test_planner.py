import numpy as np
import pytest

from synplan.errors import CompatibilityError
from synplan.neural import ModelDims, init_model, knn_build
from synplan.planner import (
    DecodeConfig,
    check_compatible,
    decode,
    evaluate_random_baseline,
    featurizer_for,
    plan,
    similarity,
    summarize,
)
from synplan.synthtree import ADD, check_tree, serialize


@pytest.fixture(scope="module")
def train_targets(toy_dataset):
    return [t.molecule(t.roots[0]) for t in toy_dataset["train"][:20]]


def test_decode_from_random_model(toy_env, block_index):
    # even an untrained policy must only produce valid, replayable trees
    model = init_model(ModelDims(n_templates=toy_env.n_templates), seed=4, templates_hash=toy_env.templates_hash)
    feat = featurizer_for(model)
    rng = np.random.default_rng(1)
    done = 0
    for _ in range(10):
        z = (rng.random(feat.config.mlp_bits) < 0.05).astype(np.float32)
        tree = decode(z, model, block_index, toy_env)
        if tree is None:
            continue
        done += 1
        assert tree.action_log[0].act == ADD
        check_tree(tree, toy_env)
        assert serialize(toy_env.replay(tree.action_log)) == serialize(tree)
    assert done > 0


def test_decode_respects_t_max(toy_env, block_index, trained_model, train_targets):
    feat = featurizer_for(trained_model)
    for target in train_targets[:5]:
        tree = decode(feat.mlp(target), trained_model, block_index, toy_env, DecodeConfig(t_max=1))
        assert tree is None or len(tree.reactions) <= 1


def test_plan_candidates_and_best(toy_env, block_index, trained_model, train_targets):
    for target in train_targets[:10]:
        res = plan(target, trained_model, block_index, toy_env)
        assert len(res.candidates) <= 3
        if res.candidates:
            assert res.similarity == max(c.similarity for c in res.candidates)
            first_blocks = [c.tree.action_log[0].rt1 for c in res.candidates]
            assert len(set(first_blocks)) == len(first_blocks)
        if res.recovered:
            assert res.similarity == 1.0 and res.smiles == target.smiles
        d = res.to_dict()
        assert d["target"] == target.smiles and set(d) >= {"recovered", "similarity", "tree"}


def test_k1_gives_single_candidate(toy_env, block_index, trained_model, train_targets):
    res = plan(train_targets[0], trained_model, block_index, toy_env, DecodeConfig(k_rt1=1))
    assert len(res.candidates) <= 1


def test_planning_is_deterministic(toy_env, block_index, trained_model, train_targets):
    a = [plan(t, trained_model, block_index, toy_env).smiles for t in train_targets]
    b = [plan(t, trained_model, block_index, toy_env).smiles for t in train_targets]
    assert a == b


def test_sampled_decoding_is_seeded(toy_env, block_index, trained_model, train_targets):
    cfg = DecodeConfig(greedy=False, temperature=2.0, seed=5)
    a = plan(train_targets[1], trained_model, block_index, toy_env, cfg)
    b = plan(train_targets[1], trained_model, block_index, toy_env, cfg)
    assert a.smiles == b.smiles


def test_trained_policy_beats_random(toy_env, block_index, trained_model, train_targets):
    ours = summarize([plan(t, trained_model, block_index, toy_env) for t in train_targets])
    base = evaluate_random_baseline(train_targets, toy_env, seed=0)
    assert ours.recovery_rate > base.recovery_rate
    assert ours.average_similarity > base.average_similarity


def test_similarity_is_tanimoto(train_targets):
    a, b = train_targets[:2]
    assert similarity(a, a) == 1.0
    assert similarity(a, b) == similarity(b, a) < 1.0


def test_incompatible_model_is_refused(toy_env, block_index, featurizer):
    wrong = init_model(ModelDims(n_templates=toy_env.n_templates + 1))
    with pytest.raises(CompatibilityError):
        check_compatible(wrong, block_index, toy_env)
    other = init_model(ModelDims(n_templates=toy_env.n_templates), templates_hash="0" * 64)
    with pytest.raises(CompatibilityError):
        check_compatible(other, block_index, toy_env)
    ok = init_model(ModelDims(n_templates=toy_env.n_templates), templates_hash=toy_env.templates_hash)
    with pytest.raises(CompatibilityError):
        check_compatible(ok, knn_build(np.zeros((3, 128))), toy_env)


def test_decode_config_validation():
    with pytest.raises(ValueError):
        DecodeConfig(k_rt1=0)
    with pytest.raises(ValueError):
        DecodeConfig(greedy=False, temperature=0.0)
