import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import binom, chisquare

from metaplastic.tasks import (
    LEFT,
    RIGHT,
    CharacterClass,
    CharacterEpisodeSpec,
    CueEpisodeSpec,
    DatasetIndex,
    InsufficientClassesError,
    InvalidCueCountError,
    MalformedManifestError,
    MissingFileError,
    ProbabilityDomainError,
    UndecodableImageError,
    augment_rotations,
    build_cue_episode,
    export_raster_csv,
    generate_character_episode,
    generate_cue_trial,
    generate_synthetic_glyphs,
    load_dataset_manifest,
    meta_loss_bce,
    read_pgm,
    sample_permutation,
    split_train_test,
    write_pgm,
)

import oracles


# cue task ----------------------------------------------------------------------------------------


def test_permutation_is_bijection():
    p = sample_permutation(np.random.default_rng(0))
    assert sorted(p.tolist()) == list(range(20))


def test_permutation_determinism():
    a = sample_permutation(np.random.default_rng(3))
    assert np.array_equal(a, sample_permutation(np.random.default_rng(3)))
    assert not np.array_equal(a, sample_permutation(np.random.default_rng(4)))


def test_permutation_space_size():
    assert f"{math.factorial(20):.1e}" == "2.4e+18"


@pytest.mark.parametrize("M", [1, 3, 5, 7, 15])
def test_trial_length(M):
    spec = CueEpisodeSpec(M=M)
    t = generate_cue_trial(np.arange(20), "left", spec, np.random.default_rng(0))
    assert t.raster.shape == (oracles.cue_trial_length(M), 20) == (spec.trial_length, 20)


def test_five_cue_trial_is_350_steps():
    assert CueEpisodeSpec(M=5).trial_length == 350


def test_zero_cues_rejected():
    with pytest.raises(InvalidCueCountError):
        CueEpisodeSpec(M=0)


def test_active_cue_rate_within_binomial_interval():
    spec = CueEpisodeSpec(M=1)
    rng = np.random.default_rng(1)
    perm = sample_permutation(rng)
    spikes = n = 0
    for _ in range(1000):
        t = generate_cue_trial(perm, RIGHT, spec, rng)
        cols = perm[list(spec.group("right"))]
        block = t.raster[: spec.cue_duration, cols]
        spikes += block.sum()
        n += block.size
    lo, hi = binom(n, 0.75).interval(0.99)
    assert lo <= spikes <= hi


def test_single_cue_matches_side():
    spec = CueEpisodeSpec(M=1)
    rng = np.random.default_rng(2)
    for side in (RIGHT, LEFT):
        for _ in range(20):
            assert generate_cue_trial(np.arange(20), side, spec, rng).sides == (side,)


@given(st.integers(1, 15), st.integers(0, 2**31), st.sampled_from([RIGHT, LEFT]))
def test_majority_side_is_label(M, seed, side):
    t = generate_cue_trial(np.arange(20), side, CueEpisodeSpec(M=M), np.random.default_rng(seed))
    assert t.label == side and 2 * sum(s == side for s in t.sides) > M


def test_permutation_relabels_channels():
    spec = CueEpisodeSpec(M=3)
    perm = sample_permutation(np.random.default_rng(5))
    a = generate_cue_trial(np.arange(20), RIGHT, spec, np.random.default_rng(9))
    b = generate_cue_trial(perm, RIGHT, spec, np.random.default_rng(9))
    np.testing.assert_array_equal(b.raster[:, perm], a.raster)


def test_one_shot_episode_structure():
    spec = CueEpisodeSpec(M=5)
    ep = build_cue_episode(spec, rng=np.random.default_rng(0))
    assert len(ep.trials) == 3
    assert ep.inputs.shape == (1050, 20)
    assert sorted(t.label for t in ep.trials[:2]) == [RIGHT, LEFT]
    for t in ep.trials[:2]:
        assert t.feedback[spec.decision_start :, t.label].all()
        assert t.feedback[: spec.decision_start].sum() == 0 and t.feedback[:, 1 - t.label].sum() == 0
    assert ep.trials[2].is_test and ep.trials[2].feedback.sum() == 0
    assert ep.eval_window == (2 * 350 + spec.decision_start, 3 * 350)


def test_bce_perfect_prediction():
    for eps in (1e-3, 1e-6, 1e-9):
        assert meta_loss_bce(np.array([1 - eps, eps]), np.array([1.0, 0.0])) < 3 * eps


def test_bce_uninformative():
    for y in ([1.0, 0.0], [0.0, 1.0]):
        assert meta_loss_bce(np.array([0.5, 0.5]), np.array(y)) == pytest.approx(2 * math.log(2), abs=1e-15)


@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6), st.sampled_from([0, 1]))
def test_bce_symmetric_and_matches_oracle(a, b, k):
    p, y = np.array([a, b]), np.eye(2)[k]
    got = meta_loss_bce(p, y)
    assert got == pytest.approx(meta_loss_bce(p[::-1], y[::-1]), rel=1e-14)
    assert got == pytest.approx(oracles.bce(p, y), rel=1e-12)


@pytest.mark.parametrize("p", [[0.0, 0.5], [0.5, 1.0], [np.nan, 0.5]])
def test_bce_domain(p):
    with pytest.raises(ProbabilityDomainError):
        meta_loss_bce(np.array(p), np.array([1.0, 0.0]))


def test_raster_csv(tmp_path):
    r = np.array([[1, 0], [0, 1], [0, 0]])
    export_raster_csv(r, tmp_path / "r.csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["step", "neuron", "spike"] and len(rows) == 7
    assert rows[4] == ["1", "1", "1"]


# images and datasets ----------------------------------------------------------------------------


def make_fixture(tmp_path, n_classes=2, n_images=2):
    lines = []
    rng = np.random.default_rng(0)
    for c in range(n_classes):
        for k in range(n_images):
            rel = f"c{c}_{k}.pgm"
            write_pgm(tmp_path / rel, rng.integers(0, 256, (32, 32), dtype=np.uint8))
            lines.append(f"class{c} {rel}")
    (tmp_path / "manifest.txt").write_text("# fixture\n" + "\n".join(lines) + "\n")
    return tmp_path / "manifest.txt"


def test_pgm_round_trip(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    write_pgm(tmp_path / "a.pgm", img)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_small_manifest(tmp_path):
    idx = load_dataset_manifest(make_fixture(tmp_path))
    assert len(idx) == 2 and idx.class_ids == ["class0", "class1"]
    assert all(len(c.paths) == 2 for c in idx.classes)
    im = idx.classes[0].images
    assert im.shape == (2, 28, 28) and im.min() >= 0 and im.max() <= 1


def test_wrong_bit_depth_names_file(tmp_path):
    bad = tmp_path / "deep.pgm"
    bad.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    (tmp_path / "m.txt").write_text("a deep.pgm\n")
    with pytest.raises(UndecodableImageError, match="deep.pgm"):
        load_dataset_manifest(tmp_path / "m.txt")


def test_manifest_errors(tmp_path):
    with pytest.raises(MissingFileError):
        load_dataset_manifest(tmp_path / "absent.txt")
    (tmp_path / "m.txt").write_text("only-one-field\n")
    with pytest.raises(MalformedManifestError, match="m.txt:1"):
        load_dataset_manifest(tmp_path / "m.txt")
    (tmp_path / "m2.txt").write_text("a missing.pgm\n")
    with pytest.raises(MissingFileError, match="missing.pgm"):
        load_dataset_manifest(tmp_path / "m2.txt")
    (tmp_path / "t.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    (tmp_path / "m3.txt").write_text("a t.pgm\n")
    with pytest.raises(UndecodableImageError, match="truncated"):
        load_dataset_manifest(tmp_path / "m3.txt")


def _fake_index(n, side=4):
    rng = np.random.default_rng(0)
    return DatasetIndex([CharacterClass(f"k{i}", [], rng.random((2, side, side))) for i in range(n)])


def test_rotation_augmentation_counts():
    assert len(augment_rotations(_fake_index(1))) == 4
    assert len(augment_rotations(_fake_index(1623, side=2))) == 6492


def test_half_turn_twice_is_identity():
    idx = augment_rotations(_fake_index(1))
    base, half = idx.classes[0].images, idx.classes[2].images
    np.testing.assert_array_equal(np.rot90(half, 2, axes=(1, 2)), base)


def test_split_sizes():
    tr, te = split_train_test(_fake_index(10), 0.2, rng=0)
    assert (len(tr), len(te)) == (8, 2)
    tr, te = split_train_test(_fake_index(6492, side=1), 0.2, rng=0)
    assert (len(tr), len(te)) == (5194, 1298)


@given(st.integers(5, 60), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_split_is_partition(n, frac, seed):
    idx = _fake_index(n, side=1)
    tr, te = split_train_test(idx, frac, rng=seed)
    a, b = set(tr.class_ids), set(te.class_ids)
    assert a | b == set(idx.class_ids) and not a & b


def test_character_episode_structure():
    spec = CharacterEpisodeSpec()
    assert spec.length == 120
    idx = _fake_index(30, side=28)
    targets = []
    for s in range(1000):
        ep = generate_character_episode(idx, spec, np.random.default_rng(s))
        assert ep.images.shape == (6, 28, 28)
        assert len(set(ep.class_ids)) == 5  # one copy of the phase-1 class among the slots
        phase1 = ep.class_ids[ep.target]
        # the phase-1 drawing belongs to the target class
        cls = next(c for c in idx.classes if c.class_id == phase1)
        assert any(np.array_equal(ep.images[0], im) for im in cls.images)
        targets.append(ep.target)
    counts = np.bincount(targets, minlength=5)
    # uniform target slot: guessing a fixed slot is right 20% of the time
    assert chisquare(counts).pvalue > 0.001
    assert abs(counts[0] / 1000 - 0.2) < 0.05
    assert ep.modulation_window == (0, 20)


def test_match_uses_a_different_drawing():
    idx = _fake_index(10, side=28)
    ep = generate_character_episode(idx, CharacterEpisodeSpec(), np.random.default_rng(0))
    assert not np.array_equal(ep.images[0], ep.images[1 + ep.target])


def test_too_few_classes():
    with pytest.raises(InsufficientClassesError):
        generate_character_episode(_fake_index(4), CharacterEpisodeSpec(), np.random.default_rng(0))


def test_synthetic_glyphs_load(tmp_path):
    manifest = generate_synthetic_glyphs(tmp_path, n_classes=3, n_samples=2, seed=1)
    idx = load_dataset_manifest(manifest)
    assert len(idx) == 3
    a, b = idx.classes[0].images
    assert a.mean() > 0.02  # ink present after inversion
    assert not np.array_equal(a, b)
