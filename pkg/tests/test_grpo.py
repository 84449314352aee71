import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from coevolve.errors import DivergenceUndefinedError, RejectedInputError
from coevolve.grpo import (
    CategoricalPolicy,
    GrpoConfig,
    LossReport,
    ResponseSample,
    RolloutGroup,
    clipped_surrogate_loss,
    compute_advantages,
    grpo_objective,
    grpo_step,
    kl_categorical,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


# -- advantages ---------------------------------------------------------


def test_advantages_symmetric_two_value_group():
    adv = compute_advantages([1, 0, 0, 1], eps_norm=1e-12)
    np.testing.assert_allclose(adv, [1, -1, -1, 1], atol=1e-9)


def test_advantages_constant_group_is_zero():
    assert compute_advantages([1, 1, 1, 1], 1e-6).tolist() == [0, 0, 0, 0]


def test_advantages_single_success_in_ten():
    adv = compute_advantages([1] + [0] * 9, 1e-6)
    # mean 0.1, population std 0.3
    assert adv[0] == pytest.approx(0.9 / (0.3 + 1e-6), abs=1e-12)
    assert adv[0] == pytest.approx(3.0, abs=1e-4)
    np.testing.assert_allclose(adv[1:], -0.1 / (0.3 + 1e-6), atol=1e-12)


@pytest.mark.parametrize("bad", [[], [1.0, float("nan")], [float("inf"), 0.0]])
def test_advantages_reject_bad_rewards(bad):
    with pytest.raises(RejectedInputError):
        compute_advantages(bad, 1e-6)


def test_advantages_reject_nonpositive_eps():
    with pytest.raises(RejectedInputError):
        compute_advantages([0, 1], 0.0)


@given(st.lists(finite, min_size=2, max_size=16))
def test_advantages_match_oracle(rewards):
    np.testing.assert_allclose(compute_advantages(rewards, 1e-6), oracles.zscore(rewards, 1e-6), atol=1e-9)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=16).filter(lambda r: np.ptp(r) > 1e-3))
def test_advantages_zero_mean_unit_std(rewards):
    adv = compute_advantages(rewards, 1e-12)
    assert abs(adv.mean()) < 1e-9
    assert abs(adv.std() - 1.0) < 1e-6


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=16), st.floats(-50, 50))
def test_advantages_shift_invariant(rewards, c):
    # shifting can round a tiny spread to zero; keep groups clearly non-constant or exactly constant
    if 0 < np.ptp(rewards) < 1e-3:
        return
    shifted = compute_advantages([r + c for r in rewards], 1e-6)
    np.testing.assert_allclose(shifted, compute_advantages(rewards, 1e-6), atol=1e-9)


# -- clipped surrogate --------------------------------------------------


def test_surrogate_identity_ratio():
    assert clipped_surrogate_loss([1.0], [1.0], 0.2) == pytest.approx(-1.0, abs=1e-12)


def test_surrogate_clip_binds_above():
    assert clipped_surrogate_loss([1.5], [1.0], 0.2) == pytest.approx(-1.2, abs=1e-12)


def test_surrogate_both_branches():
    assert clipped_surrogate_loss([0.5, 1.0], [-1.0, 1.0], 0.2) == pytest.approx(-0.1, abs=1e-12)


@pytest.mark.parametrize("ratios,adv", [([1.0, 1.0], [1.0]), ([0.0], [1.0]), ([-1.0], [1.0])])
def test_surrogate_rejects(ratios, adv):
    with pytest.raises(RejectedInputError):
        clipped_surrogate_loss(ratios, adv, 0.2)


@given(
    st.lists(st.tuples(st.floats(0.8, 1.2), st.floats(-5, 5)), min_size=1, max_size=10),
)
def test_clip_inert_inside_range(pairs):
    ratios, adv = zip(*pairs)
    unclipped = -sum(r * a for r, a in pairs) / len(pairs)
    assert abs(clipped_surrogate_loss(ratios, adv, 0.2) - unclipped) <= 1e-12


# -- KL -----------------------------------------------------------------


def test_kl_identical():
    assert kl_categorical([0.5, 0.5], [0.5, 0.5]) == 0.0


def test_kl_point_mass():
    assert kl_categorical([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)


def test_kl_hand_value():
    expected = 0.9 * math.log(1.8) + 0.1 * math.log(0.2)
    assert kl_categorical([0.9, 0.1], [0.5, 0.5]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.3681, abs=1e-4)


def test_kl_support_violation():
    with pytest.raises(DivergenceUndefinedError):
        kl_categorical([0.5, 0.5], [1.0, 0.0])


def test_kl_rejects_unnormalised():
    with pytest.raises(RejectedInputError):
        kl_categorical([0.5, 0.6], [0.5, 0.5])


simplex = st.lists(st.floats(0.01, 10), min_size=2, max_size=6).map(lambda w: [x / sum(w) for x in w])


@given(simplex)
def test_kl_self_is_zero(p):
    assert kl_categorical(p, p) == pytest.approx(0.0, abs=1e-12)


@given(st.integers(2, 6).flatmap(lambda k: st.tuples(*[st.lists(st.floats(0.01, 10), min_size=k, max_size=k)] * 2)))
def test_kl_nonnegative(pair):
    p, q = ([x / sum(w) for x in w] for w in pair)
    assert kl_categorical(p, q) >= 0.0


# -- policy -------------------------------------------------------------


def test_policy_normalised_and_roundtrip():
    pol = CategoricalPolicy({"s": [0.3, -1.0, 2.0], "t": [0.0, 0.0]})
    for s in pol.states:
        assert abs(pol.probs(s).sum() - 1.0) < 1e-9
    again = CategoricalPolicy.from_dict(pol.to_dict())
    assert again == pol and again.digest() == pol.digest()


@pytest.mark.parametrize("table", [{}, {"s": []}, {"s": [0.0, float("inf")]}])
def test_policy_rejects(table):
    with pytest.raises(RejectedInputError):
        CategoricalPolicy(table)


def test_config_ranges():
    for bad in (dict(eps_norm=0), dict(clip_eps=1.0), dict(kl_coeff=-1), dict(learning_rate=0), dict(group_size=1)):
        with pytest.raises(RejectedInputError):
            GrpoConfig(**bad)


def test_group_invariants():
    ok = ResponseSample("x", (("s", 0),), -0.5)
    with pytest.raises(RejectedInputError):
        RolloutGroup("p", [ok], [1.0])
    with pytest.raises(RejectedInputError):
        RolloutGroup("p", [ok, ok], [1.0])
    with pytest.raises(RejectedInputError):
        ResponseSample("x", (), 0.1)
    with pytest.raises(RejectedInputError):
        ResponseSample("x", (), float("-inf"))


# -- update step --------------------------------------------------------


def _bandit_group(policy, actions, rewards, state="s"):
    lp = policy.log_probs(state)
    return RolloutGroup(
        "g", [ResponseSample(str(a), ((state, a),), float(lp[a])) for a in actions], list(rewards)
    )


def test_step_equal_rewards_is_noop():
    pol = CategoricalPolicy({"s": [0.2, -0.4, 1.0]})
    group = _bandit_group(pol, [0, 1, 2, 0], [0.5] * 4)
    new, report = grpo_step(pol, [group], GrpoConfig(learning_rate=1.0))
    assert new == pol
    assert report.surrogate == 0.0 and report.kl == 0.0


def test_step_moves_toward_rewarded_action():
    pol = CategoricalPolicy.uniform({"s": 2})
    group = _bandit_group(pol, [0, 1, 0, 1], [1, 0, 1, 0])
    new, _ = grpo_step(pol, [group], GrpoConfig(learning_rate=0.1))
    assert new.probs("s")[0] > pol.probs("s")[0]


def test_step_lowers_loss_without_kl():
    pol = CategoricalPolicy.uniform({"s": 2})
    group = _bandit_group(pol, [0, 1, 0, 1], [1, 0, 1, 0])
    cfg = GrpoConfig(kl_coeff=0.0, clip_eps=0.2, learning_rate=0.1)
    new, before = grpo_step(pol, [group], cfg)
    after, _ = grpo_objective(new, [group], cfg, reference=pol)
    assert after.total < before.total


def test_step_rejects_unknown_state_or_action():
    pol = CategoricalPolicy.uniform({"s": 2})
    bad_state = RolloutGroup("g", [ResponseSample("a", (("x", 0),), -0.7)] * 2, [0, 1])
    bad_action = RolloutGroup("g", [ResponseSample("a", (("s", 5),), -0.7)] * 2, [0, 1])
    for group in (bad_state, bad_action):
        with pytest.raises(RejectedInputError):
            grpo_step(pol, [group], GrpoConfig())


def test_loss_report_serialises():
    rep = LossReport(0.1, 0.2, 0.3, 4)
    assert rep.to_dict() == {"surrogate": 0.1, "kl": 0.2, "total": 0.3, "group_count": 4}


def test_objective_matches_oracle_loss():
    rng = np.random.default_rng(7)
    for _ in range(20):
        inst = random_instance(rng)
        report, _ = grpo_objective(inst["policy"], inst["groups"], inst["config"], inst["reference"])
        expected = oracles.grpo_loss(
            inst["policy"].to_dict(), inst["oracle_groups"], *inst["hyper"], inst["reference"].to_dict()
        )
        assert report.total == pytest.approx(expected, abs=1e-12)


# -- finite differences -------------------------------------------------


def random_instance(rng, min_margin=0.0):
    """A random multi-state policy, a shifted reference, and rollout groups."""
    while True:
        states = {f"s{k}": int(rng.integers(2, 5)) for k in range(int(rng.integers(1, 4)))}
        reference = CategoricalPolicy({s: rng.normal(0, 1, n) for s, n in states.items()})
        policy = reference.updated({s: rng.normal(0, 0.15, n) for s, n in states.items()})
        cfg = GrpoConfig(
            eps_norm=1e-6,
            clip_eps=float(rng.uniform(0.1, 0.3)),
            kl_coeff=float(rng.uniform(0, 0.5)),
            learning_rate=0.1,
            group_size=int(rng.integers(2, 6)),
        )
        groups, oracle_groups, margin = [], [], np.inf
        names = list(states)
        for gi in range(int(rng.integers(1, 4))):
            paths, olds, rewards, samples = [], [], [], []
            for _ in range(cfg.group_size):
                path = tuple(
                    (s, int(rng.integers(states[s]))) for s in rng.choice(names, size=int(rng.integers(1, 3)))
                )
                old = reference.log_prob_path(path)
                ratio = math.exp(policy.log_prob_path(path) - old)
                margin = min(margin, abs(ratio - (1 - cfg.clip_eps)), abs(ratio - (1 + cfg.clip_eps)))
                reward = float(rng.integers(0, 2)) if rng.random() < 0.5 else float(rng.normal())
                paths.append(path)
                olds.append(old)
                rewards.append(reward)
                samples.append(ResponseSample("", path, old))
            groups.append(RolloutGroup(f"g{gi}", samples, rewards))
            oracle_groups.append((paths, olds, rewards))
        if margin > min_margin:
            return dict(
                policy=policy,
                reference=reference,
                config=cfg,
                groups=groups,
                oracle_groups=oracle_groups,
                hyper=(cfg.eps_norm, cfg.clip_eps, cfg.kl_coeff),
            )


def finite_difference_check(inst, h=1e-5, rel_tol=1e-4, floor=1e-6):
    """Worst relative error between analytic and central-difference gradients."""
    _, grad = grpo_objective(inst["policy"], inst["groups"], inst["config"], inst["reference"])
    base = inst["policy"].to_dict()
    ref = inst["reference"].to_dict()
    worst = 0.0
    for state, vec in base.items():
        for k in range(len(vec)):
            plus = {s: list(v) for s, v in base.items()}
            minus = {s: list(v) for s, v in base.items()}
            plus[state][k] += h
            minus[state][k] -= h
            fd = (
                oracles.grpo_loss(plus, inst["oracle_groups"], *inst["hyper"], ref)
                - oracles.grpo_loss(minus, inst["oracle_groups"], *inst["hyper"], ref)
            ) / (2 * h)
            a = grad[state][k]
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), floor))
    return worst


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2024)
    for _ in range(25):
        inst = random_instance(rng, min_margin=1e-3)
        assert finite_difference_check(inst) < 1e-4
