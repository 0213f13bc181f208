import json

import numpy as np
import pytest

from puredp.errors import StructuralError
from puredp.model import (Attack, MessageBatch, Protocol, aggregator, canonical, execute,
                          ideal_aggregator, shuffler)
from puredp.rng import Rng


def test_aggregator_examples():
    assert list(aggregator(MessageBatch([[1, 2], [3, 4]], 5))) == [4, 1]
    assert list(aggregator(MessageBatch([[4], [3]], 5))) == [2]
    assert list(aggregator(MessageBatch(np.zeros((3, 2)), 5))) == [0, 0]
    assert list(aggregator(MessageBatch.empty(3, 7))) == [0, 0, 0]


def test_batch_validation():
    with pytest.raises(StructuralError):
        MessageBatch([[5]], 5)
    with pytest.raises(StructuralError):
        MessageBatch([[0], [1]], 5, capacity=1)
    with pytest.raises(StructuralError):
        MessageBatch.concat([np.array([[1, 2]]), np.array([[1, 2, 3]])], 2, 5)


def test_shuffler_preserves_multiset():
    rows = np.array([[0, 1], [1, 1], [2, 0], [1, 1]])
    out = shuffler(MessageBatch(rows, 3), Rng(5))
    assert canonical(out).rows.tolist() == canonical(MessageBatch(rows, 3)).rows.tolist()
    assert shuffler(MessageBatch([[2, 2]], 3), Rng(0)).rows.tolist() == [[2, 2]]
    same = MessageBatch([[1], [1]], 3)
    assert shuffler(same, Rng(1)).rows.tolist() == [[1], [1]]


def test_shuffler_is_uniform_over_orders():
    batch = MessageBatch([[0], [1], [2]], 3)
    counts = {}
    for k in range(6000):
        key = tuple(shuffler(batch, Rng(11, k)).rows.ravel())
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 6
    assert all(abs(c - 1000) < 150 for c in counts.values())


def test_canonical_binary_is_count():
    a = canonical(MessageBatch([[1], [0], [1], [0]], 2)).rows.ravel().tolist()
    b = canonical(MessageBatch([[0], [1], [0], [1]], 2)).rows.ravel().tolist()
    assert a == b == [0, 0, 1, 1]


def test_aggregator_permutation_invariant():
    batch = MessageBatch(Rng(3).gen.integers(0, 9, (20, 3)), 9)
    assert np.array_equal(aggregator(batch), aggregator(shuffler(batch, Rng(4))))


def _stub_protocol(m=10):
    return Protocol(
        randomizer=lambda x, rng: np.array([[(x * 3) % m]]),
        intermediary=ideal_aggregator,
        analyzer=lambda out: int(out[0]),
        d=1,
        m=m,
    )


def test_execute_composes_stub():
    tr = execute(_stub_protocol(), [1, 2, 4], Attack.none(), Rng(0))
    assert tr.analyzer_output == (3 + 6 + 12) % 10
    assert sorted(tr.honest_messages) == [0, 1, 2]


def test_execute_dropout_and_injection():
    attack = Attack({0: None, 2: np.array([[7]])})
    tr = execute(_stub_protocol(), [1, 2, 4], attack, Rng(0))
    assert tr.analyzer_output == (6 + 7) % 10
    assert tr.view.corrupted == [0, 2]
    assert tr.view.corrupted_inputs == {0: 1, 2: 4}


def test_execute_all_dropped():
    tr = execute(_stub_protocol(), [1, 2], Attack.dropout([0, 1]), Rng(0))
    assert tr.analyzer_output == 0
    assert tr.honest_messages == {}


def test_full_corruption_ignores_inputs():
    attack = Attack({0: np.array([[3]]), 1: np.array([[4]])})
    outs = {execute(_stub_protocol(), xs, attack, Rng(0)).analyzer_output for xs in ([0, 0], [5, 9])}
    assert outs == {7}


def test_attack_validation():
    with pytest.raises(StructuralError):
        execute(_stub_protocol(), [1, 2], Attack.dropout([2]), Rng(0))
    with pytest.raises(StructuralError):
        Attack.dropout([0, 1, 2]).validate(4, robust=True)
    Attack.dropout([0, 1]).validate(4, robust=True)


def test_transcript_json_view_keys():
    tr = execute(_stub_protocol(), [1, 2, 4], Attack({1: None}), Rng(0))
    doc = tr.to_json()
    json.dumps(doc)
    assert set(doc["view"]) == {"C", "W", "x_C", "I_y"}
    assert doc["view"]["C"] == [1]


def test_rng_streams():
    a, b = Rng(1, 2), Rng(1, 2)
    assert np.array_equal(a.random(5), b.random(5))
    assert not np.array_equal(Rng(1, 2).random(5), Rng(1, 3).random(5))
    assert not np.array_equal(Rng(1, 2).child(0).random(5), Rng(1, 2).child(1).random(5))
