import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from czsl_tta.config import EngineConfig
from czsl_tta.prototypes import (
    ConfidenceQueue,
    compute_mapping_matrix,
    generate_unseen_visual_prototypes,
    prediction_entropy,
    queue_insert,
    visual_prototype,
    visual_prototypes,
    warm_start_queues,
)

from .conftest import unit

mp.mp.dps = 30
# entropy of softmax((1, 0)) at tau=1, evaluated with 30-digit arithmetic
H_TWO_CLASS = float(-(mp.e / (mp.e + 1)) * mp.log(mp.e / (mp.e + 1)) - (1 / (mp.e + 1)) * mp.log(1 / (mp.e + 1)))


def test_entropy_uniform_when_all_dots_equal():
    f = np.array([0.0, 0.0, 1.0])
    protos = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    h, p = prediction_entropy(f, protos, 0.01)
    assert np.allclose(p, 0.25)
    assert h == pytest.approx(math.log(4), abs=1e-12)


def test_entropy_two_class_value():
    f = np.array([1.0, 0.0])
    protos = np.array([[1.0, 0.0], [0.0, 1.0]])
    h, p = prediction_entropy(f, protos, 1.0)
    assert p[0] == pytest.approx(math.e / (math.e + 1), abs=1e-12)
    assert H_TWO_CLASS == pytest.approx(0.5822031088882, abs=1e-12)
    assert h == pytest.approx(H_TWO_CLASS, abs=1e-12)


def test_entropy_one_hot_limit():
    f = np.array([1.0, 0.0])
    protos = np.array([[1.0, 0.0], [0.6, 0.8]])
    h, _ = prediction_entropy(f, protos, 1e-4)
    assert h < 1e-12


def test_entropy_batched_matches_single(rng):
    fs, protos = unit(rng, 5, 6), unit(rng, 4, 6)
    hb, pb = prediction_entropy(fs, protos, 0.1)
    for i in range(5):
        h, p = prediction_entropy(fs[i], protos, 0.1)
        assert hb[i] == pytest.approx(h, abs=1e-12)
        assert np.allclose(pb[i], p)
    assert np.allclose(pb.sum(axis=1), 1.0, atol=1e-9)
    assert np.all((hb >= 0) & (hb <= math.log(4)))


def test_mapping_single_seen_is_one(rng):
    M = compute_mapping_matrix(unit(rng, 1, 4), unit(rng, 3, 4), 0.01)
    assert np.array_equal(M, np.ones((1, 3)))


def test_mapping_symmetric_column():
    seen = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    unseen = np.array([[math.sqrt(0.5), math.sqrt(0.5), 0.0]])
    M = compute_mapping_matrix(seen, unseen, 0.01)
    assert np.allclose(M[:, 0], [0.5, 0.5], atol=1e-12)


def test_mapping_value_example():
    # seen dots (0.9, 0.1) with one unseen prototype at tau_M = 0.1
    seen = np.array([[0.9, math.sqrt(1 - 0.81)], [0.1, -math.sqrt(1 - 0.01)]])
    unseen = np.array([[1.0, 0.0]])
    M = compute_mapping_matrix(seen, unseen, 0.1)
    expected = float(mp.exp(9) / (mp.exp(9) + mp.exp(1)))
    assert expected == pytest.approx(0.99966464987, abs=1e-10)
    assert M[0, 0] == pytest.approx(expected, abs=1e-12)
    assert M[1, 0] == pytest.approx(1 - expected, abs=1e-12)


def test_mapping_errors(rng):
    with pytest.raises(ValueError):
        compute_mapping_matrix(np.zeros((0, 3)), unit(rng, 1, 3), 0.1)
    with pytest.raises(ValueError):
        generate_unseen_visual_prototypes(np.ones((2, 1)) / 2, unit(rng, 3, 4))


def test_generated_prototypes(rng):
    v = unit(rng, 1, 5)
    same = generate_unseen_visual_prototypes(np.array([[0.5], [0.5]]), np.vstack([v, v]))
    assert np.allclose(same, v, atol=1e-15)
    seen = unit(rng, 3, 5)
    pick = generate_unseen_visual_prototypes(np.array([[1.0], [0.0], [0.0]]), seen)
    assert np.array_equal(pick[0], seen[0])
    e = np.eye(4)[:2]
    mid = generate_unseen_visual_prototypes(np.array([[0.5], [0.5]]), e)
    assert np.allclose(mid[0], [math.sqrt(0.5), math.sqrt(0.5), 0, 0], atol=1e-15)


def test_queue_examples():
    f = np.zeros(2)
    q = ConfidenceQueue(3)
    q.insert(0.2, f)
    queue_insert(q, 0.1, f)
    assert q.entropies == [0.1, 0.2]

    q = ConfidenceQueue(3)
    for h in (0.9, 0.1, 0.3):
        q.insert(h, f)
    assert q.insert(0.5, f) is True
    assert q.entropies == [0.1, 0.3, 0.5]
    assert q.insert(0.9, f) is False
    assert q.entropies == [0.1, 0.3, 0.5]


def test_sentinel_is_replaced_by_any_real_sample():
    q = ConfidenceQueue(1)
    q.insert_sentinel(np.ones(2))
    assert q.entropies == [math.inf]
    assert q.insert(1e6, np.zeros(2))
    assert q.entropies == [1e6]
    assert not q.insert_sentinel(np.ones(2))


def test_queue_rejects_non_finite_entropy():
    with pytest.raises(ValueError):
        ConfidenceQueue(2).insert(float("nan"), np.zeros(2))


@settings(max_examples=300, deadline=None)
@given(
    st.integers(1, 5),
    st.lists(st.one_of(st.none(), st.floats(0, 5, allow_nan=False)), max_size=40),
)
def test_queue_keeps_k_smallest(k, offers):
    q = ConfidenceQueue(k)
    for h in offers:
        if h is None:
            q.insert_sentinel(np.zeros(1))
        else:
            q.insert(h, np.zeros(1))
    history = sorted(math.inf if h is None else h for h in offers)
    assert q.entropies == history[:k]


def test_visual_prototype_examples(rng):
    f = unit(rng, 6)
    q = ConfidenceQueue(3)
    q.insert(0.1, f)
    assert np.allclose(visual_prototype(q), f, atol=1e-15)
    q.insert(0.2, f)
    q.insert(0.3, f)
    assert np.allclose(visual_prototype(q), f, atol=1e-15)
    q2 = ConfidenceQueue(3)
    q2.insert(0.1, np.eye(3)[0])
    q2.insert(0.2, np.eye(3)[1])
    assert np.allclose(visual_prototype(q2), [math.sqrt(0.5), math.sqrt(0.5), 0.0], atol=1e-15)
    assert visual_prototype(ConfidenceQueue(3)) is None


def test_visual_prototypes_fall_back_to_text(rng):
    text = unit(rng, 2, 4)
    q = ConfidenceQueue(2)
    q.insert(0.1, text[1])
    v, fell_back = visual_prototypes([ConfidenceQueue(2), q], text)
    assert fell_back.tolist() == [True, False]
    assert np.array_equal(v[0], text[0])


def test_warm_start_examples(tiny_space, rng):
    t = unit(rng, 4, 6)
    feats = {(0, 0): unit(rng, 5, 6), (0, 1): unit(rng, 2, 6), (1, 0): unit(rng, 4, 6)}
    queues = warm_start_queues(tiny_space, t, feats, EngineConfig())
    h5, _ = prediction_entropy(feats[(0, 0)], t, 0.01)
    assert len(queues[0]) == 3
    assert np.allclose(queues[0].entropies, np.sort(h5)[:3])
    assert len(queues[1]) == 2
    unseen_q = queues[3]
    assert len(unseen_q) == 1 and unseen_q.entries[0].sentinel
    v_seen, _ = visual_prototypes(queues[:3], t[:3])
    M = compute_mapping_matrix(t[:3], t[3:], 0.01)
    assert np.allclose(unseen_q.entries[0].f, generate_unseen_visual_prototypes(M, v_seen)[0])


def test_warm_start_array_form_and_missing_class(tiny_space, rng, caplog):
    t = unit(rng, 4, 6)
    feats = unit(rng, 4, 6)
    labels = [(0, 0), (0, 0), (0, 1), (0, 1)]
    queues = warm_start_queues(tiny_space, t, feats, EngineConfig(), labels)
    assert [len(q) for q in queues] == [2, 2, 0, 1]
    assert "no training features" in caplog.text


def test_warm_start_switches(tiny_space, rng):
    t = unit(rng, 4, 6)
    feats = {p: unit(rng, 3, 6) for p in tiny_space.seen_pairs}
    cfg = EngineConfig().replace(warmstart_seen=False, warmstart_unseen=False)
    assert all(len(q) == 0 for q in warm_start_queues(tiny_space, t, feats, cfg))
    cfg = EngineConfig().replace(warmstart_seen=False)
    queues = warm_start_queues(tiny_space, t, feats, cfg)
    # with no seen exemplars the unseen prototype is mapped from the text prototypes
    M = compute_mapping_matrix(t[:3], t[3:], 0.01)
    assert np.allclose(queues[3].entries[0].f, generate_unseen_visual_prototypes(M, t[:3])[0])
