import json

import numpy as np
import pytest

from synplan.datagen import DatagenConfig, random_rollout
from synplan.errors import FormatError, InvalidAction, ReplayDivergence
from synplan.molgraph import parse_smiles
from synplan.synthtree import (
    ADD,
    END,
    EXPAND,
    MERGE,
    Action,
    SyntheticTree,
    check_tree,
    deserialize,
    read_trees,
    serialize,
    tree_from_dict,
    tree_to_dict,
    write_trees,
)

AMIDE, ESTER, SUZUKI, REDAM, NITRO = range(5)
ACID_BR, ACETIC, METHYLAMINE, AMINO_BORONIC = 3, 0, 10, 37


def merge_tree(env):
    """Two amide couplings, then a Suzuki merge whose reactants arrive in swapped order."""
    tree = SyntheticTree()
    tree, _ = env.apply_action(tree, Action(ADD, ACID_BR, AMIDE, METHYLAMINE))
    tree, _ = env.apply_action(tree, Action(ADD, ACETIC, AMIDE, AMINO_BORONIC))
    return tree


def test_first_step_only_add(toy_env):
    assert toy_env.action_mask(SyntheticTree()).tolist() == [True, False, False, False]


def test_add_then_end(toy_env):
    tree, state = toy_env.apply_action(SyntheticTree(), Action(ADD, ACETIC, AMIDE, METHYLAMINE))
    assert tree.product_smiles == "CNC(C)=O"
    assert state.t == 1 and len(tree.roots) == 1
    assert END in toy_env.valid_action_types(tree)
    done, _ = toy_env.apply_action(tree, Action(END))
    assert done.done and done.root.role == "root"
    assert {m.smiles for m in done.leaves} == {"CC(=O)O", "CN"}
    check_tree(done, toy_env)
    assert toy_env.valid_action_types(done) == set()


def test_merge_handles_reactant_order(toy_env):
    tree = merge_tree(toy_env)
    assert len(tree.roots) == 2
    assert MERGE in toy_env.valid_action_types(tree)
    assert ADD not in toy_env.valid_action_types(tree)
    merged, _ = toy_env.apply_action(tree, Action(MERGE, None, SUZUKI))
    expected = parse_smiles("CNC(=O)c1ccc(cc1)-c1ccc(NC(C)=O)cc1").smiles
    assert merged.product_smiles == expected
    assert len(merged.roots) == 1
    check_tree(merged, toy_env)


def test_expand_uses_most_recent_root(toy_env):
    # the nitro group on the amide product can be reduced
    tree2, _ = toy_env.apply_action(SyntheticTree(), Action(ADD, 4, AMIDE, METHYLAMINE))
    out, _ = toy_env.apply_action(tree2, Action(EXPAND, None, NITRO))
    assert out.product_smiles == parse_smiles("CNC(=O)c1ccc(N)cc1").smiles
    assert len(out.reactions) == 2 and out.reactions[1].children == (tree2.roots[0],)


@pytest.mark.parametrize(
    "action",
    [
        Action(END),
        Action(EXPAND, None, AMIDE),
        Action(ADD, ACETIC, AMIDE, 0),
        Action(ADD, ACETIC, AMIDE, None),
        Action(ADD, 999, AMIDE, METHYLAMINE),
        Action(ADD, METHYLAMINE, AMIDE, METHYLAMINE),
        Action(ADD, ACETIC, 17, METHYLAMINE),
    ],
)
def test_invalid_first_actions(toy_env, action):
    with pytest.raises(InvalidAction):
        toy_env.apply_action(SyntheticTree(), action)


def test_merge_rejects_explicit_reactants(toy_env):
    tree = merge_tree(toy_env)
    with pytest.raises(InvalidAction):
        toy_env.apply_action(tree, Action(MERGE, None, SUZUKI, 5))
    with pytest.raises(InvalidAction):
        toy_env.apply_action(tree, Action(MERGE, None, AMIDE))


def test_t_max_forces_end(toy_env):
    env = toy_env.with_t_max(1)
    tree, _ = env.apply_action(SyntheticTree(), Action(ADD, ACETIC, AMIDE, METHYLAMINE))
    assert env.valid_action_types(tree) == {END}
    two = merge_tree(toy_env.with_t_max(2))
    assert toy_env.with_t_max(2).valid_action_types(two) == set()


def test_state_is_immutable(toy_env):
    tree = SyntheticTree()
    new, _ = toy_env.apply_action(tree, Action(ADD, ACETIC, AMIDE, METHYLAMINE))
    assert tree.t == 0 and tree.molecules == ()
    with pytest.raises(AttributeError):
        new.t = 5


def random_trees(env, n, seed=3):
    out = []
    i = 0
    while len(out) < n:
        tree = random_rollout(env, DatagenConfig(), np.random.default_rng([seed, i]))
        i += 1
        if tree is not None:
            out.append(tree)
    return out


def test_random_trees_satisfy_invariants_and_replay(toy_env):
    for tree in random_trees(toy_env, 60):
        check_tree(tree, toy_env)
        assert tree.done and tree.action_log[0].act == ADD and tree.action_log[-1].act == END
        replayed = toy_env.replay(tree.action_log)
        assert serialize(replayed) == serialize(tree)


def test_serialization_round_trip(toy_env, tmp_path):
    trees = random_trees(toy_env, 30)
    for tree in trees:
        text = serialize(tree)
        assert serialize(deserialize(text)) == text
        assert tree_from_dict(tree_to_dict(tree)) == tree
    path = tmp_path / "trees.jsonl"
    write_trees(path, trees)
    assert [serialize(t) for t in read_trees(path)] == [serialize(t) for t in trees]


def test_deserialize_errors():
    with pytest.raises(FormatError):
        deserialize("not json")
    with pytest.raises(FormatError):
        deserialize(json.dumps({"version": 99}))
    with pytest.raises(FormatError):
        deserialize(json.dumps({"version": 1, "nodes": [{"smiles": "C1CC"}]}))


def test_replay_divergence(toy_env):
    tree = random_trees(toy_env, 1)[0]
    log = list(tree.action_log)
    log.insert(0, Action(END))
    with pytest.raises(ReplayDivergence):
        toy_env.replay(log)
