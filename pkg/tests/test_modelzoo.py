import pytest

from modlknns.diffcore import ContractError
from modlknns.modelzoo import ModelSpec, default_zoo, param_count


def test_param_count_hand_value():
    assert param_count(ModelSpec("m", (4,), "relu", 0, 3, 2)) == 26


def test_no_hidden_layer_rejected():
    with pytest.raises(ContractError):
        ModelSpec("m", (), "relu", 0, 2, 1)


def test_default_zoo_shape():
    zoo = default_zoo(32, 5)
    assert len(zoo.references) == 6
    names = [s.name for s in zoo.references] + [zoo.target.name]
    assert len(set(names)) == 7
    assert zoo == default_zoo(32, 5)
    total = sum(param_count(s) for s in zoo.references)
    assert param_count(zoo.target) < total
    assert total >= 6 * min(param_count(s) for s in zoo.references)


def test_spec_serialization():
    s = default_zoo(8, 3, seed=2).target
    assert ModelSpec.from_dict(s.to_dict()) == s


def test_duplicate_names_rejected():
    from modlknns.modelzoo import Zoo
    s = ModelSpec("a", (3,), "tanh", 0, 2, 2)
    with pytest.raises(ContractError):
        Zoo((s, s), ModelSpec("t", (3,), "relu", 0, 2, 2))
