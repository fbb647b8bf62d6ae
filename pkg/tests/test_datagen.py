import numpy as np
import pytest

from czsl_tta.datagen import SynthError, SynthSpec, generate, zipf_counts
from czsl_tta.space import l2_normalize


def _frozen_accuracy(bundle):
    space = bundle.space()
    t = bundle.candidate_text(space)
    f = l2_normalize(bundle.test_features)
    pred = np.argmax(f @ t.T, axis=1)
    truth = np.array([space.index_of(tuple(p)) for p in bundle.test_labels])
    return float(np.mean(pred == truth))


def test_generate_is_deterministic():
    a, b = generate(SynthSpec(seed=5)), generate(SynthSpec(seed=5))
    for name in ("text", "train_features", "test_features"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    assert a.test_labels == b.test_labels and a.manifest == b.manifest
    assert generate(SynthSpec(seed=6)).test_features.tobytes() != a.test_features.tobytes()


def test_standard_bundle_shape(standard_bundle):
    m = standard_bundle.manifest
    assert len(m["seen_pairs"]) == 12 and len(m["unseen_pairs"]) == 4
    assert standard_bundle.test_features.shape == (200, 32)
    assert len(standard_bundle.train_labels) == 12 * 20
    standard_bundle.validate()


def test_rows_are_unit_norm(standard_bundle):
    for m in (standard_bundle.text, standard_bundle.train_features, standard_bundle.test_features):
        assert np.allclose(np.linalg.norm(m.astype(np.float64), axis=1), 1.0, atol=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_seen_pairs_cover_every_primitive(seed):
    spec = SynthSpec(seed=seed, n_attributes=5, n_objects=3, seen_fraction=0.4)
    m = generate(spec).manifest
    seen = m["seen_pairs"]
    assert {a for a, _ in seen} == set(range(5))
    assert {o for _, o in seen} == set(range(3))
    assert len(seen) == 6


def test_impossible_coverage_is_an_error():
    with pytest.raises(SynthError, match="covering"):
        generate(SynthSpec(n_attributes=4, n_objects=4, seen_fraction=0.1))


@pytest.mark.parametrize("exponent", [0.0, 1.0, 2.5])
def test_zipf_counts_sum_and_clamp(exponent):
    rng = np.random.default_rng(0)
    counts = zipf_counts(rng, 16, 200, exponent)
    assert counts.sum() == 200 and counts.min() >= 1
    if exponent == 0:
        assert counts.max() - counts.min() <= 1
    with pytest.raises(SynthError):
        zipf_counts(rng, 16, 10, exponent)


def test_long_tail_bundle_counts():
    bundle = generate(SynthSpec(tail_exponent=1.5, seed=2))
    labels = [tuple(p) for p in bundle.test_labels]
    counts = sorted((labels.count(p) for p in set(labels)), reverse=True)
    assert sum(counts) == 200 and len(counts) == 16
    assert counts[0] > 4 * counts[-1]


def test_noiseless_bundle_is_perfectly_separable():
    spec = SynthSpec(text_noise=0.0, visual_noise=0.0, unseen_text_shift=0.0, seed=3)
    assert _frozen_accuracy(generate(spec)) == 1.0


def test_heavy_noise_approaches_chance():
    accs = [_frozen_accuracy(generate(SynthSpec(visual_noise=20.0, test_samples=800, seed=s))) for s in range(5)]
    assert abs(np.mean(accs) - 1 / 16) < 0.03


def test_spec_validation():
    with pytest.raises(SynthError):
        SynthSpec(dim=0)
    with pytest.raises(SynthError, match="unknown"):
        SynthSpec.from_dict({"dimension": 3})
    assert SynthSpec.from_dict(SynthSpec(seed=4).to_dict()) == SynthSpec(seed=4)
