import numpy as np
import pytest

from adaplr.ensemble import (
    ConfidenceHistory, EnsembleState, Member, consensus_all, consensus_probs, ensemble_logits,
    member_logits, record_epoch_snapshot,
)
from adaplr.errors import NotReadyError, StateError
from adaplr.model import AdamState, ClassifierModel, Layer
from adaplr.numerics import RngStream, softmax
from oracles import consensus_double_sum


def member(model):
    return Member(model, AdamState.for_model(model))


def random_members(n, seed=0):
    return [member(ClassifierModel.create(3, [5], 4, RngStream(seed, k))) for k in range(n)]


def test_single_member_and_cancellation():
    ms = random_members(1)
    x = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(ensemble_logits(EnsembleState(ms), x), ms[0].model.predict_logits(x))
    w = np.random.default_rng(1).normal(size=(3, 4))
    pos = ClassifierModel([], Layer(w, np.zeros(4)))
    neg = ClassifierModel([], Layer(-w, np.zeros(4)))
    z = ensemble_logits(EnsembleState([member(pos), member(neg)]), x)
    np.testing.assert_array_equal(z, 0.0)
    np.testing.assert_allclose(softmax(z), 0.25)


def test_sum_matches_hand_summation():
    ms = random_members(3)
    x = np.random.default_rng(2).normal(size=(1, 3))
    hand = np.zeros(4)
    for m in ms:
        hand = hand + m.model.predict_logits(x)[0]
    np.testing.assert_allclose(ensemble_logits(EnsembleState(ms), x)[0], hand, rtol=1e-15)
    assert np.all(EnsembleState(ms).weights == 1.0)


def test_empty_ensemble():
    with pytest.raises(StateError):
        ensemble_logits(EnsembleState([]), np.ones((1, 3)))


def test_ring_buffer_semantics():
    h = ConfidenceHistory(2, 3, 1, capacity=10)
    snaps = [np.full((2, 3), float(i)) for i in range(13)]
    h.push(snaps[0])
    assert np.all(h.fill == 1)
    for s in snaps[1:]:
        h.push(s)
    assert np.all(h.fill == 10)
    np.testing.assert_array_equal(h.stored(0)[:, 0], np.arange(3, 13))
    with pytest.raises(StateError):
        h.push(np.zeros((3, 3)))


def test_not_ready():
    h = ConfidenceHistory(2, 3, 1)
    with pytest.raises(NotReadyError):
        consensus_probs(h, 0)
    with pytest.raises(NotReadyError):
        consensus_all(h)


def test_record_snapshot_is_clean_pass():
    ms = random_members(2)
    x = np.random.default_rng(3).normal(size=(5, 3))
    h = ConfidenceHistory(5, 4, 2)
    record_epoch_snapshot(h, EnsembleState(ms), x, batch_size=2)
    np.testing.assert_allclose(h.stored(4)[0], ensemble_logits(EnsembleState(ms), x)[4], rtol=1e-12)
    with pytest.raises(StateError):
        record_epoch_snapshot(h, EnsembleState(ms), x[:4])


def test_two_snapshot_consensus_recompute():
    rng = np.random.default_rng(4)
    h = ConfidenceHistory(3, 4, 2)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    h.push(a)
    h.push(b)
    for i in range(3):
        np.testing.assert_allclose(consensus_probs(h, i), softmax((a[i] + b[i]) / 2 / 2), rtol=1e-14)


def test_consensus_matches_double_sum_oracle():
    rng = np.random.default_rng(5)
    for _ in range(20):
        per_member = rng.normal(0, 3, size=(10, 3, 10))      # l, k, C
        h = ConfidenceHistory(1, 10, 3, capacity=10)
        for snap in per_member:
            h.push(snap.sum(axis=0)[None, :])
        want = consensus_double_sum(per_member.tolist(), 3)
        assert np.max(np.abs(consensus_probs(h, 0) - want)) <= 1e-12
        assert np.max(np.abs(consensus_all(h)[0] - want)) <= 1e-12


def test_single_member_single_snapshot_is_softmax():
    z = np.random.default_rng(6).normal(size=(4, 5))
    h = ConfidenceHistory(4, 5, 1, capacity=1)
    h.push(z)
    np.testing.assert_array_equal(consensus_all(h), softmax(z))


def test_identical_snapshots_and_scaling():
    rng = np.random.default_rng(7)
    z = rng.normal(size=(6, 5))
    h = ConfidenceHistory(6, 5, 2)
    for _ in range(4):
        h.push(z)
    p = consensus_all(h)
    np.testing.assert_array_equal(p.argmax(1), z.argmax(1))
    np.testing.assert_allclose(p, softmax(z / 2), rtol=1e-13)
    h2 = ConfidenceHistory(6, 5, 2)
    for _ in range(4):
        h2.push(3.7 * z)
    np.testing.assert_array_equal(consensus_all(h2).argmax(1), p.argmax(1))


def test_member_order_does_not_matter():
    ms = random_members(3, seed=9)
    x = np.random.default_rng(8).normal(size=(5, 3))
    h1, h2 = ConfidenceHistory(5, 4, 3), ConfidenceHistory(5, 4, 3)
    record_epoch_snapshot(h1, EnsembleState(ms), x)
    record_epoch_snapshot(h2, EnsembleState(ms[::-1]), x)
    np.testing.assert_allclose(consensus_all(h1), consensus_all(h2), rtol=1e-14)
    assert member_logits(EnsembleState(ms), x).shape == (3, 5, 4)
