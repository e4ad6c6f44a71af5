import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dcen import nn
import dcen.evaluator as ev
from dcen.evaluator import (GZSLReport, class_embeddings, embed_images, evaluate_gzsl,
                            harmonic_mean, mean_class_accuracy, nearest_class, predict)

pct = st.floats(0, 100, allow_nan=False)


# --- harmonic mean ----------------------------------------------------------

@pytest.mark.parametrize("u,s,h", [(62.4, 75.9, 68.5), (63.8, 78.4, 70.4)])
def test_harmonic_mean_published_pairs(u, s, h):
    assert abs(harmonic_mean(u, s) - h) <= 0.05


def test_harmonic_mean_identities():
    assert harmonic_mean(37.0, 37.0) == pytest.approx(37.0)
    assert harmonic_mean(0.0, 80.0) == 0.0
    assert harmonic_mean(0.0, 0.0) == 0.0


@settings(max_examples=200)
@given(pct, pct)
def test_harmonic_mean_properties(a, b):
    h = harmonic_mean(a, b)
    assert h == pytest.approx(harmonic_mean(b, a))
    assert min(a, b) - 1e-9 <= h <= max(a, b) + 1e-9


# --- mean class accuracy ----------------------------------------------------

def test_mca_all_correct():
    y = np.array([0, 0, 1, 2, 2, 2])
    assert mean_class_accuracy(y, y, {0, 1, 2}) == 100.0


def test_mca_is_class_balanced():
    labels = np.array([0] * 10 + [1] * 2)
    preds = np.array([0] * 10 + [0] * 2)
    assert mean_class_accuracy(preds, labels, {0, 1}) == 50.0


def test_mca_skips_classes_without_samples():
    assert mean_class_accuracy([0, 1], [0, 1], {0, 1, 7}) == 100.0


def test_mca_errors():
    with pytest.raises(ValueError, match="empty"):
        mean_class_accuracy([0], [0], set())
    with pytest.raises(ValueError, match=r"\[3\]"):
        mean_class_accuracy([0, 3], [0, 3], {0, 1})


def test_uniform_guessing_lands_in_the_chance_band():
    """12 classes x 40 samples, uniform predictions. The [4.7, 13.0] band was
    fixed from 20000 simulated draws (0.5% / 99.5% quantiles 5.2 and 11.7);
    here a fresh 2000-draw simulation must agree."""
    rng = np.random.default_rng(99)
    labels = np.repeat(np.arange(12), 40)
    mcas = np.array([mean_class_accuracy(rng.integers(0, 12, 480), labels, range(12))
                     for _ in range(2000)])
    lo, hi = np.quantile(mcas, [0.005, 0.995])
    assert 4.7 <= lo and hi <= 13.0
    assert abs(mcas.mean() - 100 / 12) < 0.2


# --- nearest-neighbour prediction -------------------------------------------

def test_exact_match_wins():
    classes = np.eye(6)
    assert nearest_class(classes[3:4], classes).tolist() == [3]


def test_ties_go_to_lowest_index():
    classes = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
    assert nearest_class(np.array([[1.0, 0.0]]), classes).tolist() == [1]


def test_matches_brute_force_double_loop(rng):
    imgs = nn.l2_normalize(rng.standard_normal((40, 7)))
    cls = nn.l2_normalize(rng.standard_normal((9, 7)))
    brute = []
    for v in imgs:
        best, best_d = None, np.inf
        for j, c in enumerate(cls):
            d = -float(sum(float(a) * float(b) for a, b in zip(v, c)))
            if d < best_d:
                best, best_d = j, d
        brute.append(best)
    assert nearest_class(imgs, cls).tolist() == brute


def test_monotone_transforms_keep_predictions(rng):
    imgs = nn.l2_normalize(rng.standard_normal((30, 5)))
    cls = nn.l2_normalize(rng.standard_normal((8, 5)))
    sims = imgs @ cls.T
    base = nearest_class(imgs, cls)
    for transformed in (sims + 3.0, 2.5 * sims, np.exp(sims), np.tanh(sims)):
        assert np.array_equal(np.argmax(transformed, axis=1), base)
    assert np.array_equal(np.argmin(-sims + 7.0, axis=1), base)  # constant shift of distances


def test_predict_checks_attribute_dim(small_enc, rng):
    with pytest.raises(ValueError, match="attr_dim"):
        predict(small_enc, rng.random((4, 5)), rng.random((2, 16, 16, 3)))


def test_predict_covers_every_class(small_enc, rng):
    preds = predict(small_enc, rng.random((6, 6)), rng.random((10, 16, 16, 3)))
    assert preds.shape == (10,) and np.all((preds >= 0) & (preds < 6))


# --- full evaluation --------------------------------------------------------

def test_oracle_encoder_scores_100(monkeypatch, tiny_ds, small_enc):
    # stands in for a visual encoder that maps every image onto its class embedding
    cls = class_embeddings(small_enc, tiny_ds.attributes.values)
    lookup = {tiny_ds.x[i].tobytes(): tiny_ds.labels[i] for i in range(len(tiny_ds.labels))}
    monkeypatch.setattr(ev, "embed_images",
                        lambda enc, imgs, batch_size=256: cls[[lookup[im.tobytes()] for im in imgs]])
    rep = evaluate_gzsl(small_enc, tiny_ds)
    assert (rep.mca_u, rep.mca_s, rep.h) == (100.0, 100.0, 100.0)


def test_constant_encoder_collapses_h(small_enc, tiny_ds):
    f = dict(small_enc.f)
    f["head.w"] = np.zeros_like(f["head.w"])
    f["head.b"] = np.linspace(1, 2, len(f["head.b"]))
    enc = replace(small_enc, f=f)
    units = embed_images(enc, tiny_ds.x[:5])
    assert np.allclose(units, units[0])
    rep = evaluate_gzsl(enc, tiny_ds)
    assert rep.mca_u == 0.0 or rep.mca_s == 0.0
    assert rep.h == 0.0


def test_report_is_invariant_to_sample_order(small_enc, tiny_ds):
    perm = np.random.default_rng(1).permutation(len(tiny_ds.labels))
    shuffled = replace(tiny_ds, x=tiny_ds.x[perm], labels=tiny_ds.labels[perm], split=tiny_ds.split[perm])
    assert evaluate_gzsl(small_enc, tiny_ds) == evaluate_gzsl(small_enc, shuffled)


def test_report_is_deterministic_and_consistent(small_enc, tiny_ds):
    a, b = evaluate_gzsl(small_enc, tiny_ds), evaluate_gzsl(small_enc, tiny_ds)
    assert a == b
    assert abs(harmonic_mean(a.mca_u, a.mca_s) - a.h) < 1e-9
    assert a.num_test_seen == tiny_ds.count("test_seen")
    assert a.num_test_unseen == tiny_ds.count("test_unseen")
    assert set(a.per_class_acc) == set(tiny_ds.attributes.class_ids)


def test_batching_does_not_change_embeddings(small_enc, tiny_ds):
    assert np.allclose(embed_images(small_enc, tiny_ds.x, batch_size=7),
                       embed_images(small_enc, tiny_ds.x), atol=1e-12)


def test_missing_test_split_is_an_error(small_enc, tiny_ds):
    split = np.where(tiny_ds.split == "test_unseen", "val", tiny_ds.split)
    with pytest.raises(ValueError, match="test_unseen"):
        evaluate_gzsl(small_enc, replace(tiny_ds, split=split))


# --- serialization ----------------------------------------------------------

def test_report_formats():
    rep = GZSLReport(mca_u=62.4, mca_s=75.9, h=harmonic_mean(62.4, 75.9),
                     per_class_acc={"a": 50.0}, num_test_seen=10, num_test_unseen=20)
    table = rep.to_table().splitlines()
    assert table[0].split("|")[1:] == [" MCA_u ", " MCA_s ", "     H"]
    assert table[2] == "DCEN   |  62.4 |  75.9 |  68.5"
    csv_lines = rep.to_csv().splitlines()
    assert csv_lines[0] == "mca_u,mca_s,h,num_test_unseen,num_test_seen"
    assert float(csv_lines[1].split(",")[2]) == rep.h
    back = json.loads(rep.to_json())
    assert back["h"] == rep.h and back["per_class_acc"] == {"a": 50.0}
