import itertools
import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from rcnas.controller import (
    BaselineState,
    Controller,
    ReinforceTrainer,
    load_controller,
    save_controller,
)
from rcnas.search_space import DecisionDim, SearchSpace, enumerate_dimensions, preset

TOY = SearchSpace((DecisionDim("a", ("x", "y"), (0, 1)), DecisionDim("b", ("x", "y"), (0, 1))), "toy")
TOY_REWARD = {(0, 0): 1.0, (0, 1): 0.2, (1, 0): 0.5, (1, 1): 0.0}


def _randomise_heads(ctrl, scale=0.5):
    with torch.no_grad():
        for head in ctrl.heads:
            head.weight.normal_(0, scale)
            head.bias.normal_(0, scale)


def _all_choices(space):
    return torch.tensor(list(itertools.product(*(range(d.cardinality) for d in space.dims))))


def test_uniform_initial_policy():
    space = enumerate_dimensions()
    torch.manual_seed(0)
    ctrl = Controller(space)
    rollout = ctrl.sample(0)
    assert rollout.log_prob == pytest.approx(-math.log(72_900_000), abs=1e-5)
    assert rollout.log_prob == pytest.approx(-18.105, abs=1e-3)
    small = preset("SS-no_inte-start_pool")
    ctrl = Controller(small)
    assert ctrl.sample(1).log_prob == pytest.approx(-math.log(288), abs=1e-6)


def test_log_probs_sum_to_one_by_enumeration():
    torch.manual_seed(1)
    ctrl = Controller(TOY)
    _randomise_heads(ctrl, 1.0)
    total = ctrl.log_prob_tensor(_all_choices(TOY)).exp().sum().detach()
    assert abs(float(total) - 1.0) < 1e-6
    three = SearchSpace(tuple(DecisionDim(n, ("p", "q", "r"), (0, 1, 2)) for n in "abc"), "three")
    ctrl = Controller(three)
    _randomise_heads(ctrl, 2.0)
    assert abs(ctrl.log_prob_tensor(_all_choices(three)).exp().sum().item() - 1.0) < 1e-6


def test_sampling_reproducible_and_consistent():
    space = enumerate_dimensions()
    torch.manual_seed(2)
    ctrl = Controller(space)
    _randomise_heads(ctrl)
    a, b = ctrl.sample(5), ctrl.sample(5)
    assert a.indices == b.indices and a.log_probs == b.log_probs
    assert ctrl.log_prob(a.descriptor()) == pytest.approx(a.log_prob, abs=1e-5)


def test_forced_choice_log_prob_near_zero():
    ctrl = Controller(TOY)
    with torch.no_grad():
        for head in ctrl.heads:
            head.bias.copy_(torch.tensor([40.0, 0.0]))
    assert ctrl.log_prob((0, 0)) == pytest.approx(0.0, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 1000), st.floats(-50, 50))
def test_head_shift_invariance(seed, shift):
    torch.manual_seed(seed)
    ctrl = Controller(TOY)
    _randomise_heads(ctrl)
    choices = _all_choices(TOY)
    before = ctrl.log_prob_tensor(choices)
    with torch.no_grad():
        ctrl.heads[seed % 2].bias.add_(shift)
    assert torch.allclose(ctrl.log_prob_tensor(choices), before, atol=1e-5)


def test_zero_advantage_leaves_parameters():
    torch.manual_seed(3)
    ctrl = Controller(TOY)
    trainer = ReinforceTrainer(ctrl, lr=0.1)
    before = {k: v.clone() for k, v in ctrl.state_dict().items()}
    rollout = ctrl.sample(0)
    trainer.update([rollout], [0.7])  # the first reward is also the baseline
    assert trainer.baseline.value == 0.7
    trainer.update([ctrl.sample(1)], [0.7])
    for k, v in ctrl.state_dict().items():
        assert torch.equal(v, before[k]), k


def test_two_option_hand_gradient():
    one = SearchSpace((DecisionDim("a", ("x", "y"), (0, 1)),), "one")
    ctrl = Controller(one)
    trainer = ReinforceTrainer(ctrl, lr=1.0, optimizer="sgd")
    trainer.baseline.value = 0.0
    rollout = ctrl.sample(0)
    rollout.choices = (0,)
    rollout.indices = (0,)
    grads = trainer.policy_gradient([rollout], [1.0], 0.0)
    assert grads["heads.0.bias"].tolist() == pytest.approx([0.5, -0.5])
    trainer.update([rollout], [1.0])
    assert ctrl.heads[0].bias.tolist() == pytest.approx([0.5, -0.5])


def exact_and_estimated_gradient(seed, n=10_000):
    torch.manual_seed(seed)
    ctrl = Controller(TOY)
    _randomise_heads(ctrl)
    trainer = ReinforceTrainer(ctrl)
    choices = _all_choices(TOY)
    rewards = torch.tensor([TOY_REWARD[tuple(c)] for c in choices.tolist()])
    objective = (ctrl.log_prob_tensor(choices).exp() * rewards).sum()
    params = dict(ctrl.named_parameters())
    exact = torch.autograd.grad(objective, list(params.values()))
    rollouts = ctrl.sample_batch(n, torch.Generator().manual_seed(seed))
    # a constant baseline leaves the estimator unbiased and cuts its variance
    est = trainer.policy_gradient(rollouts, [TOY_REWARD[r.choices] for r in rollouts], objective.item())
    exact_v = torch.cat([g.flatten() for g in exact])
    est_v = torch.cat([est[k].flatten() for k in params])
    return exact_v, est_v


def test_reinforce_unbiased_on_toy_space():
    exact, est = exact_and_estimated_gradient(seed=0)
    assert float((est - exact).norm() / exact.norm()) <= 0.02


def test_probabilities_stay_normalised_after_updates():
    torch.manual_seed(4)
    space = preset("SS-no_inte-start_pool-no_contexts")
    ctrl = Controller(space)
    trainer = ReinforceTrainer(ctrl, lr=0.05)
    gen = torch.Generator().manual_seed(0)
    for step in range(30):
        rollouts = ctrl.sample_batch(4, gen)
        trainer.update(rollouts, [float(r.choices[0] == 1) for r in rollouts])
        tables = ctrl.step_log_probs(torch.tensor([r.choices for r in rollouts]))
        for t in tables:
            assert torch.allclose(t.exp().sum(dim=1), torch.ones(4), atol=1e-6)


def test_baseline_moving_average():
    b = BaselineState()
    assert b.current([0.5]) == 0.5
    b.update([0.5])
    b.update([1.0])
    assert b.value == pytest.approx(0.9 * 0.5 + 0.1 * 1.0)


def test_update_rejects_bad_rewards():
    ctrl = Controller(TOY)
    trainer = ReinforceTrainer(ctrl)
    with pytest.raises(ValueError):
        trainer.update([ctrl.sample(0)], [float("nan")])
    with pytest.raises(ValueError):
        trainer.update([], [])
    with pytest.raises(ValueError):
        ReinforceTrainer(ctrl, optimizer="rmsprop")


def test_rejection_sampling():
    ctrl = Controller(TOY)
    r = ctrl.sample(0, accept=lambda idx: idx == (1, 1))
    assert r.indices == (1, 1)
    with pytest.raises(RuntimeError):
        ctrl.sample(0, accept=lambda idx: False, max_tries=5)


def test_checkpoint_round_trip(tmp_path):
    space = preset("SS-no_inte")
    torch.manual_seed(5)
    ctrl = Controller(space)
    trainer = ReinforceTrainer(ctrl, lr=0.01)
    trainer.update([ctrl.sample(0)], [0.3])
    trainer.update([ctrl.sample(1)], [0.6])
    save_controller(trainer, tmp_path / "c.safetensors")
    back, baseline = load_controller(tmp_path / "c.safetensors")
    assert baseline.value == trainer.baseline.value
    back.check_space(space)
    r = ctrl.sample(9)
    assert back.log_prob(r.indices) == pytest.approx(ctrl.log_prob(r.indices), abs=1e-6)
    with pytest.raises(ValueError):
        back.check_space(enumerate_dimensions())
