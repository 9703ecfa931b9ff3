import numpy as np
import pytest

from hoimotion.affordance import DEFAULT_TAU, contact_mask
from hoimotion.motion import FOOT_JOINTS, HAND_JOINTS
from hoimotion.synthetic import CONTACT_HEIGHT, PLANTED_HEIGHT, SCENARIOS, generate_synthetic, split_clips


@pytest.fixture(scope="module")
def clips():
    return generate_synthetic(seed=11, n_clips=12)


def test_shapes_and_split(clips):
    assert [c.scenario for c in clips[:3]] == list(SCENARIOS)
    assert sum(c.split == "test" for c in clips) == 3
    for c in clips:
        assert c.motion.frames == c.cloud.frames == 100
        assert c.fps == 30.0
        assert c.joints.shape == (100, 22, 3)
        assert c.hand_contact.shape == (100, 2)


def test_seed_determinism():
    a = generate_synthetic(seed=5, n_clips=2)
    b = generate_synthetic(seed=5, n_clips=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.motion.features, y.motion.features)
        assert np.array_equal(x.cloud.coords, y.cloud.coords)
        assert x.category == y.category


def test_carry_hands_within_tau():
    for c in generate_synthetic(seed=2, n_clips=4, scenario="carry"):
        hands = c.joints[:, list(HAND_JOINTS)]
        computed = contact_mask(hands, c.cloud, DEFAULT_TAU).values
        carry = c.hand_contact.all(axis=1)
        assert carry.any()
        assert computed[carry].all()


def test_contact_labels_match_affordance_module(clips):
    # the stored labels are exactly the tau-contact of the hand joints
    for c in clips:
        hands = c.joints[:, list(HAND_JOINTS)]
        assert np.array_equal(contact_mask(hands, c.cloud, DEFAULT_TAU).values, c.hand_contact)


def test_foot_contact_consistency(clips):
    eps = CONTACT_HEIGHT - PLANTED_HEIGHT
    for c in clips:
        bits = c.motion.foot_contact()[:, [0, 2]]
        low = c.joints[:, list(FOOT_JOINTS), 1] < PLANTED_HEIGHT + eps
        assert (bits == low).all(axis=1).mean() >= 0.95


def test_unknown_scenario():
    with pytest.raises(ValueError):
        generate_synthetic(0, 1, scenario="juggle")


def test_split_clips_counts_and_round_trip(rng):
    seq = rng.normal(size=(250, 4))
    parts = split_clips(seq, 100)
    assert len(parts) == 2
    assert np.array_equal(np.concatenate(parts), seq[:200])
    assert split_clips(seq[:99], 100) == []
