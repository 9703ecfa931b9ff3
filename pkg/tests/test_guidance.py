import numpy as np
import pytest
import torch

from hoimotion import stage2
from hoimotion.diffusion import DiffusionSchedule
from hoimotion.guidance import (
    GuidanceWeights,
    foot_guidance_loss,
    guided_sample,
    joint_guidance_loss,
    refine_posterior_mean,
)
from hoimotion.motion import recover_joints
from hoimotion.synthetic import generate_synthetic
from tests.fd import max_relative_error


def loop_joint_loss(J, T, mask):
    total, frames = 0.0, 0
    for l in range(J.shape[0]):
        if mask[l].any():
            frames += 1
        for j in range(J.shape[1]):
            if mask[l, j]:
                total += float(np.linalg.norm(J[l, j] - T[l, j]))
    return total / (J.shape[1] * frames) if frames else 0.0


def test_joint_loss_examples(rng):
    J = rng.normal(size=(6, 2, 3))
    mask = np.ones((6, 2), bool)
    assert float(joint_guidance_loss(torch.tensor(J), J, mask)) == 0.0
    single = np.zeros((6, 2), bool)
    single[2, 1] = True
    T = J.copy()
    T[2, 1, 0] += 0.03
    assert float(joint_guidance_loss(torch.tensor(J), T, single)) == pytest.approx(0.03 / 2)
    assert float(joint_guidance_loss(torch.tensor(J), rng.normal(size=J.shape), np.zeros((6, 2), bool))) == 0.0


def test_joint_loss_random_fixtures(rng):
    for _ in range(20):
        J, T = rng.normal(size=(2, 8, 2, 3))
        mask = rng.random((8, 2)) < 0.5
        assert float(joint_guidance_loss(torch.tensor(J), T, mask)) == pytest.approx(loop_joint_loss(J, T, mask), rel=1e-6)


def feet_only(left, right):
    j = np.zeros((len(left), 22, 3))
    j[:, 10], j[:, 11] = left, right
    return torch.tensor(j)


def loop_foot_loss(joints, contact, w):
    L = joints.shape[0]
    feet = joints[:, [10, 11]]
    total = 0.0
    for l in range(L):
        total += (min(feet[l, 0, 1], feet[l, 1, 1]) - w.h_g) ** 2
        for k in range(2):
            if not contact[l, k]:
                continue
            if l + 1 < L:
                total += w.alpha * float(np.sum((feet[l + 1, k] - feet[l, k]) ** 2))
            if l + 2 < L:
                a = feet[l + 2, k] - 2 * feet[l + 1, k] + feet[l, k]
                total += w.beta * float(np.sum(a**2))
    return total / L


def test_foot_loss_examples():
    w = GuidanceWeights(alpha=1.0, beta=0.0, h_g=0.02)
    L = 10
    planted = np.tile([0.1, 0.02, 0.0], (L, 1))
    both = np.ones((L, 2), bool)
    assert float(foot_guidance_loss(feet_only(planted, planted), both, w)) == pytest.approx(0.0, abs=1e-15)
    high = np.tile([0.0, 0.12, 0.0], (L, 1))
    assert float(foot_guidance_loss(feet_only(high, high), np.zeros((L, 2), bool), w)) == pytest.approx(0.01)
    slide = planted.copy()
    slide[:, 2] = 0.02 * np.arange(L)
    left_contact = np.zeros((L, 2), bool)
    left_contact[:, 0] = True
    got = float(foot_guidance_loss(feet_only(slide, planted), left_contact, w))
    assert got == pytest.approx((L - 1) * 0.02**2 / L)


def test_foot_loss_random_fixtures(rng):
    for _ in range(20):
        j = rng.normal(size=(7, 22, 3)) * 0.1
        c = rng.random((7, 2)) < 0.5
        w = GuidanceWeights(alpha=rng.uniform(0, 2), beta=rng.uniform(0, 2), h_g=0.02)
        assert float(foot_guidance_loss(torch.tensor(j), c, w)) == pytest.approx(loop_foot_loss(j, c, w), rel=1e-6)


def test_guidance_losses_gradcheck(rng):
    J = torch.tensor(rng.normal(size=(5, 2, 3)), requires_grad=True)
    T, mask = rng.normal(size=(5, 2, 3)), rng.random((5, 2)) < 0.6
    assert max_relative_error(lambda: joint_guidance_loss(J, T, mask), [J]) < 1e-3
    joints = torch.tensor(rng.normal(size=(6, 22, 3)) * 0.2, requires_grad=True)
    contact = rng.random((6, 2)) < 0.5
    w = GuidanceWeights()
    assert max_relative_error(lambda: foot_guidance_loss(joints, contact, w), [joints]) < 1e-3
    feats = torch.tensor(rng.normal(size=(5, 263)) * 0.1, requires_grad=True)
    assert max_relative_error(lambda: recover_joints(feats), [feats]) < 1e-3


def test_weights_validation():
    with pytest.raises(ValueError):
        GuidanceWeights(alpha=-1)
    with pytest.raises(ValueError):
        GuidanceWeights(beta=float("nan"))
    assert not GuidanceWeights(joint_weight=0, foot_weight=0).active
    assert not GuidanceWeights(lbfgs_iters=0).active


def test_refinement_never_increases_loss(rng):
    sched = DiffusionSchedule.cosine(20)
    target = torch.tensor(rng.normal(size=(1, 8, 2, 3)))
    mask = torch.ones(1, 8, 2)
    w = GuidanceWeights()

    def objective(feats):
        return joint_guidance_loss(recover_joints(feats)[..., [20, 21], :], target, mask)

    for t in (1, 10, 19):
        mu = torch.tensor(rng.normal(size=(1, 8, 263)))
        xt = torch.tensor(rng.normal(size=(1, 8, 263)))
        new, before, after = refine_posterior_mean(mu, xt, t, sched, lambda x: x, objective, w)
        assert after <= before
        assert new.shape == mu.shape


@pytest.fixture(scope="module")
def toy():
    torch.manual_seed(0)
    L = 12
    base = stage2.MotionDenoiser(d=16, n_layers=1, n_head=2, seq_len=L)
    clips = generate_synthetic(0, 2, n_frames=L, n_points=8)
    base.set_motion_stats(np.stack([c.motion.features for c in clips]))
    net = stage2.MotionControlNet(base, stage2.SemGeoCondition(4, 8, d=8, n_head=2, seq_len=L)).eval()
    with torch.no_grad():
        cond = net.condition(
            base.text_encoder(["a"]), [["a.", "b.", "c."]], torch.randn(1, L, 24), torch.rand(1, L, 8), torch.randn(1, L, 6)
        )
    hands = clips[0].joints[None, :, [20, 21]]
    return net, cond, hands, np.ones((1, L, 2), bool), L


def test_zero_weights_bit_equal_to_unguided(toy):
    net, cond, hands, mask, L = toy
    sched = DiffusionSchedule.cosine(8)
    off = GuidanceWeights(joint_weight=0, foot_weight=0)
    none = GuidanceWeights(lbfgs_iters=0)
    a = guided_sample(net, cond, sched, off, seed=2, target_hands=hands, hand_mask=mask, seq_len=L)
    b = guided_sample(net, cond, sched, none, seed=2, seq_len=L)
    assert np.array_equal(a[0].features, b[0].features)


def test_guided_sampling_deterministic_and_closer(toy):
    net, cond, hands, mask, L = toy
    sched = DiffusionSchedule.cosine(8)
    w = GuidanceWeights(foot_weight=0, lbfgs_iters=3)
    trace = []
    a = guided_sample(net, cond, sched, w, seed=5, target_hands=hands, hand_mask=mask, seq_len=L, trace=trace)
    b = guided_sample(net, cond, sched, w, seed=5, target_hands=hands, hand_mask=mask, seq_len=L)
    assert np.array_equal(a[0].features, b[0].features)
    assert len(trace) == sched.T and all(after <= before for _, before, after in trace)
    plain = guided_sample(net, cond, sched, GuidanceWeights(lbfgs_iters=0), seed=5, seq_len=L)

    def dist(m):
        return np.linalg.norm(m.joints()[:, [20, 21]] - hands[0], axis=-1).mean()

    assert dist(a[0]) < dist(plain[0])
