import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from app.core.errors import ConfigError, DataError, NumericalFault, ShapeError
from app.models.episode import EpisodeConfig
from app.models.network import Architecture
from app.models.training import PPOConfig
from app.services.network import build_network, load_checkpoint
from app.services.ppo import PPOTrainer, advantage, policy_entropy, ppo_clip_objective, ppo_loss, train, value_loss
from tests.conftest import smooth_image


@pytest.mark.parametrize(
    "ratio,adv,expected",
    [(1.0, 3.5, 3.5), (1.3, 2.0, 2.4), (0.5, -1.0, -0.8), (0.9, 1.0, 0.9), (1.5, -1.0, -1.5)],
)
def test_clip_objective_examples(ratio, adv, expected):
    assert ppo_clip_objective(np.array(ratio), np.array(1.0), np.array(adv), 0.2) == pytest.approx(expected)


def test_clip_objective_uses_probability_ratio():
    out = ppo_clip_objective(np.array([0.26, 0.1]), np.array([0.2, 0.2]), np.array([2.0, -1.0]), 0.2)
    assert out == pytest.approx([2.4, -0.8])


def test_clip_objective_zero_old_probability():
    with pytest.raises(NumericalFault):
        ppo_clip_objective(np.array([0.5]), np.array([0.0]), np.array([1.0]), 0.2)


def test_entropy_examples():
    uniform = np.full((1, 27, 1, 1), 1.0 / 27)
    assert policy_entropy(uniform)[0, 0, 0] == pytest.approx(math.log(27), abs=1e-12)
    one_hot = np.zeros((1, 27, 1, 1))
    one_hot[0, 5] = 1.0
    assert policy_entropy(one_hot)[0, 0, 0] == 0.0
    binary = np.zeros((1, 27, 1, 1))
    binary[0, :2] = 0.5
    assert policy_entropy(binary)[0, 0, 0] == pytest.approx(math.log(2), abs=1e-12)


def test_value_loss_and_advantage():
    returns = np.random.default_rng(0).normal(size=(3, 4, 4))
    assert value_loss(returns, returns) == 0.0
    assert value_loss(returns + 2.0, returns) == pytest.approx(4.0)
    assert advantage(np.array([5.0]), np.array([3.0])).tolist() == [2.0]
    with pytest.raises(ShapeError):
        value_loss(np.zeros(3), np.zeros(4))
    with pytest.raises(ShapeError):
        advantage(np.zeros(3), np.zeros(4))


def test_torch_inputs_stay_differentiable():
    p = torch.full((1, 27, 2, 2), 1.0 / 27, requires_grad=True)
    h = policy_entropy(p).sum()
    h.backward()
    assert p.grad is not None and torch.isfinite(p.grad).all()


def tiny_batch(seed=0, n_actions=27):
    rng = np.random.default_rng(seed)
    states = rng.uniform(0, 255, size=(2, 6, 6))
    actions = rng.integers(0, n_actions, size=(2, 6, 6))
    return rng, states, actions


def test_zero_advantage_without_auxiliary_terms_has_zero_gradient(tiny_net):
    rng, states, actions = tiny_batch()
    cfg = PPOConfig(entropy_coeff=0.0, value_coeff=0.0)
    step = ppo_loss(tiny_net, states, actions, np.full((2, 6, 6), 1.0 / 27), np.zeros((2, 6, 6)), rng.normal(size=(2, 6, 6)), cfg)
    step.loss.backward()
    for p in tiny_net.parameters():
        assert p.grad is None or torch.count_nonzero(p.grad) == 0


def test_two_action_policy_gradient_matches_analytic_form():
    net = build_network(Architecture.tiny(n_actions=2), seed=0, dtype=torch.float64)
    rng, states, actions = tiny_batch(seed=1, n_actions=2)
    adv = rng.normal(size=(2, 6, 6))
    cfg = PPOConfig(entropy_coeff=0.0, value_coeff=0.0)
    # zero-initialized output layer: both actions start at 1/2
    step = ppo_loss(net, states, actions, np.full((2, 6, 6), 0.5), adv, np.zeros((2, 6, 6)), cfg)
    step.loss.backward()
    expected = [-np.mean(adv * ((actions == j) - 0.5)) for j in range(2)]
    assert net.policy_head[-1].bias.grad.numpy() == pytest.approx(expected, abs=1e-12)


def test_ppo_loss_reports_components(tiny_net):
    rng, states, actions = tiny_batch()
    returns = np.full((2, 6, 6), 2.0)
    step = ppo_loss(tiny_net, states, actions, np.full((2, 6, 6), 1.0 / 27), np.zeros((2, 6, 6)), returns, PPOConfig())
    assert step.entropy == pytest.approx(math.log(27), abs=1e-9)
    assert step.surrogate == 0.0
    assert step.value_loss >= 0.0


def small_config(**overrides):
    values = dict(total_epochs=2, batch_size=2, patch_size=12, epochs_per_batch=1, holdout_patches=2,
                  checkpoint_every=1, entropy_floor=0.0)
    values.update(overrides)
    return PPOConfig(**values)


def test_smoke_training_writes_metrics_and_checkpoints(tmp_path):
    images = [smooth_image(24, seed=i) for i in range(3)]
    net = build_network(Architecture.tiny(), seed=0)
    result = train(images, net, small_config(), EpisodeConfig(steps=2), seed=0, output_dir=tmp_path)
    assert len(result.metrics) == 2
    assert all(math.isfinite(m.mean_reward) and m.holdout_psnr is not None for m in result.metrics)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_reward,entropy,value_loss,holdout_psnr"
    assert len(lines) == 3
    for name in ("best.ckpt", "epoch_00001.ckpt", "epoch_00002.ckpt", "final.ckpt"):
        assert (tmp_path / "checkpoints" / name).is_file()
    loaded = load_checkpoint(tmp_path / "checkpoints" / "final.ckpt")
    assert loaded.arch == net.arch


def test_training_from_directory(image_dir):
    result = train(image_dir, build_network(Architecture.tiny(), seed=1), small_config(total_epochs=1, holdout_every=0),
                   EpisodeConfig(steps=1), seed=3)
    assert len(result.metrics) == 1
    assert result.best_holdout_psnr is None


def test_trainer_rejects_bad_setups():
    net = build_network(Architecture.tiny())
    with pytest.raises(DataError):
        PPOTrainer(net, [], small_config())
    with pytest.raises(DataError):
        PPOTrainer(net, [smooth_image(8)], small_config())
    with pytest.raises(ConfigError):
        PPOTrainer(net, [smooth_image(24)], small_config(gamma=0.9), EpisodeConfig(gamma=0.95))


def test_entropy_collapse_is_reported():
    net = build_network(Architecture.tiny())
    trainer = PPOTrainer(net, [smooth_image(24)], small_config(total_epochs=8, entropy_floor=10.0), EpisodeConfig(steps=1))
    with pytest.raises(NumericalFault):
        trainer.run_epoch(1)


@given(st.floats(0.0, 5.0), st.floats(0.01, 1.0), st.floats(-100.0, 100.0), st.floats(0.05, 0.5))
def test_clip_objective_is_bounded_by_clipped_advantage(new_prob, old_prob, adv, epsilon):
    out = ppo_clip_objective(np.array([new_prob]), np.array([old_prob]), np.array([adv]), epsilon)[0]
    assert out <= (1 + epsilon) * abs(adv) + 1e-9
    if adv >= 0:
        assert 0.0 <= out <= (1 + epsilon) * adv + 1e-9


def test_deterministic_policy_without_entropy_does_not_move():
    net = build_network(Architecture.tiny(), seed=0, dtype=torch.float64)
    with torch.no_grad():
        net.policy_head[-1].bias[13] = 1000.0
    before = {name: p.detach().clone() for name, p in net.named_parameters() if name.startswith("policy_head")}
    trainer = PPOTrainer(net, [smooth_image(24)], small_config(entropy_coeff=0.0), EpisodeConfig(steps=2))
    trainer.run_epoch(1)
    for name, p in net.named_parameters():
        if name in before:
            assert torch.equal(p.detach(), before[name]), name
    probs, _ = net.evaluate(np.random.default_rng(0).uniform(0, 255, size=(1, 6, 6)))
    assert np.all(probs[:, 13] == 1.0)


def test_training_is_deterministic_for_a_seed(tmp_path):
    images = [smooth_image(24, seed=i) for i in range(2)]
    outputs = []
    for name in ("first", "second"):
        net = build_network(Architecture.tiny(), seed=0)
        train(images, net, small_config(), EpisodeConfig(steps=2), seed=7, output_dir=tmp_path / name)
        outputs.append((tmp_path / name / "metrics.csv").read_bytes())
    assert outputs[0] == outputs[1]
