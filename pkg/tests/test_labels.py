import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from adaplr.ensemble import ConfidenceHistory, consensus_all
from adaplr.errors import ArgumentError, ConfigError, DimensionError, FormatError
from adaplr.labels import (
    PseudoLabelSet, compute_gamma, default_n_rl, infer_pseudo_labels_aggregated,
    infer_pseudo_labels_late_fusion, read_label_csv, reassign, sample_disjoint_residual_batch,
    sample_disjoint_residual_labels, select_hcs, write_label_csv,
)
from adaplr.model import ClassifierModel, Layer
from adaplr.numerics import RngStream
from oracles import gamma_brute, reassign_brute


def linear(w):
    w = np.asarray(w, float)
    return ClassifierModel([], Layer(w, np.zeros(w.shape[1])))


def test_aggregated_inference_and_ties():
    x = np.random.default_rng(0).normal(size=(20, 3))
    zero = linear(np.zeros((3, 4)))
    ls = infer_pseudo_labels_aggregated(zero, x)
    assert np.all(ls.labels == 0)
    with pytest.raises(DimensionError):
        infer_pseudo_labels_aggregated(zero, x, num_classes=5)


def test_self_consistency_with_train_accuracy():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(3, 4))
    m = linear(w)
    x = rng.normal(size=(200, 3))
    y = rng.integers(0, 4, 200)
    ls = infer_pseudo_labels_aggregated(m, x, true_labels=y)
    assert ls.accuracy() == pytest.approx(np.mean(np.argmax(x @ w, 1) == y), abs=1e-15)


def test_late_fusion():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(30, 3))
    ms = [linear(rng.normal(size=(3, 5))) for _ in range(3)]
    one = infer_pseudo_labels_late_fusion(ms[:1], x)
    np.testing.assert_array_equal(one.labels, infer_pseudo_labels_aggregated(ms[0], x).labels)
    w = rng.normal(size=(3, 5))
    opp = infer_pseudo_labels_late_fusion([linear(w), linear(-w)], x)
    assert np.all(opp.labels == 0)
    fused = infer_pseudo_labels_late_fusion(ms, x)
    for j in range(30):
        total = [sum(float(x[j] @ m.head.weights[:, c]) for m in ms) for c in range(5)]
        assert fused.labels[j] == int(np.argmax(total))
    with pytest.raises(ArgumentError):
        infer_pseudo_labels_late_fusion([], x)


def test_drl_full_cover_example():
    rl = sample_disjoint_residual_labels(RngStream(0, 1), 3, 10, 3, 3)
    assert rl.shape == (3, 3)
    assert sorted(rl.ravel()) == [0, 1, 2, 4, 5, 6, 7, 8, 9]
    with pytest.raises(ConfigError):
        sample_disjoint_residual_labels(RngStream(0, 1), 0, 10, 4, 3)
    assert default_n_rl(10, 3) == 3 and default_n_rl(10, 1) == 9


@given(st.integers(0, 2**32), st.integers(2, 12), st.integers(1, 4), st.data())
@settings(max_examples=200, deadline=None)
def test_drl_structure_property(seed, c, n_e, data):
    n_rl = data.draw(st.integers(1, max(1, (c - 1) // n_e)))
    if n_e * n_rl > c - 1:
        return
    y = data.draw(st.integers(0, c - 1))
    rl = sample_disjoint_residual_labels(RngStream(seed, 3), y, c, n_e, n_rl)
    flat = rl.ravel()
    assert len(set(flat)) == flat.size and y not in flat
    assert rl.shape == (n_e, n_rl)


def test_batch_sampler_structure_and_frequency():
    s = RngStream(4, 3)
    y = np.arange(5000) % 10
    rl = sample_disjoint_residual_batch(s, y, 10, 3, 3)
    for i in range(len(y)):
        flat = rl[i].ravel()
        assert sorted(flat) == sorted(set(range(10)) - {y[i]})
    one = sample_disjoint_residual_batch(s, np.zeros(90_000, int), 10, 1, 4)[:, 0, :]
    freq = np.bincount(one.ravel(), minlength=10)[1:] / 90_000
    assert np.all(np.abs(freq - 4 / 9) < 0.01)


def test_gamma_examples():
    assert compute_gamma(np.zeros(5), 0.9) == 0.0
    assert compute_gamma([0.95, 0.91] + [0.5] * 8, 0.9) == 0.2
    conf = np.r_[np.full(15, 0.95), np.full(85, 0.4)]
    assert compute_gamma(conf, 0.9) == pytest.approx(0.15)
    assert compute_gamma([0.9, 0.9], 0.9) == 0.0
    with pytest.raises(ArgumentError):
        compute_gamma([], 0.9)


def history_for(probs_logits, n_members=1):
    h = ConfidenceHistory(len(probs_logits), probs_logits.shape[1], n_members)
    h.push(probs_logits)
    return h


def test_reassign_examples():
    h = history_for(np.log(np.array([[0.1, 0.9]])))
    ls = PseudoLabelSet(np.array([0]), np.array([0.1]), 2)
    out, moved = reassign(ls, h, 0.5)
    assert out.labels[0] == 1 and moved == 1 and out.epoch == 1
    assert out.confidences[0] == pytest.approx(0.9)
    same, moved = reassign(ls, h, 0.0)
    assert same.labels[0] == 0 and moved == 0


def test_gamma_and_reassign_match_brute_force():
    rng = np.random.default_rng(9)
    for _ in range(100):
        z = rng.normal(0, 3, size=(200, 10))
        h = history_for(z)
        p = consensus_all(h)
        labels = rng.integers(0, 10, 200)
        conf = p[np.arange(200), labels]
        alpha = float(rng.uniform(0.3, 0.95))
        gamma = compute_gamma(conf, alpha)
        assert gamma == gamma_brute(conf.tolist(), alpha)
        out, changed = reassign(PseudoLabelSet(labels, conf, 10), h, gamma)
        want, want_changed = reassign_brute(labels.tolist(), p.tolist(), gamma)
        assert out.labels.tolist() == want and changed == want_changed
        # retention branch and conservation
        kept = conf >= gamma
        assert np.all(out.labels[kept] == labels[kept])
        assert int(np.count_nonzero(~kept)) + int(np.count_nonzero(kept)) == 200
        assert compute_gamma(out.confidences, alpha) == gamma_brute(out.confidences.tolist(), alpha)


def test_select_hcs():
    assert select_hcs([0.95, 0.89], 0.9).tolist() == [0]
    assert select_hcs(np.full(4, 1 - 1e-12), 0.9).tolist() == [0, 1, 2, 3]


def test_training_view_drops_truth():
    ls = PseudoLabelSet(np.array([1, 0]), np.array([0.5, 0.6]), 2, 0, np.array([1, 1]))
    assert ls.noise_rate() == 0.5
    v = ls.training_view()
    assert v.true_labels is None and v.noise_rate() is None


def test_label_csv_round_trip(tmp_path):
    ls = PseudoLabelSet(np.array([2, 0, 1]), np.array([0.1, 1 / 3, 0.999]), 3, 0, np.array([2, 1, 1]))
    path = write_label_csv(ls, tmp_path / "l.csv")
    assert path.read_text().splitlines()[0] == "sample_id,pseudo_label,confidence,true_label"
    back = read_label_csv(path, 3)
    np.testing.assert_array_equal(back.labels, ls.labels)
    np.testing.assert_array_equal(back.confidences, ls.confidences)
    np.testing.assert_array_equal(back.true_labels, ls.true_labels)
    bare = write_label_csv(ls.training_view(), tmp_path / "b.csv")
    assert read_label_csv(bare, 3).true_labels is None
    (tmp_path / "x.csv").write_text("id,label\n0,1\n")
    with pytest.raises(FormatError):
        read_label_csv(tmp_path / "x.csv", 3)


@given(st.integers(0, 2**32), st.integers(2, 8), st.floats(0.05, 0.95))
@settings(max_examples=100, deadline=None)
def test_reassign_only_moves_labels_below_gamma(seed, c, alpha):
    rng = np.random.default_rng(seed)
    h = ConfidenceHistory(40, c, 2, capacity=3)
    for _ in range(int(rng.integers(1, 5))):
        h.push(rng.normal(0, 3, (40, c)))
    p = consensus_all(h)
    labels = rng.integers(0, c, 40)
    conf = p[np.arange(40), labels]
    gamma = compute_gamma(conf, alpha)
    out, changed = reassign(PseudoLabelSet(labels, conf, c), h, gamma)
    moved = out.labels != labels
    assert changed == moved.sum()
    assert np.all(conf[moved] < gamma)
    assert np.all(out.labels[moved] == np.argmax(p[moved], axis=1))
