"""
Tests for the discrete-log concept class, feature classifier, training and value bounds
"""

import math
import os
import sys
sys.path.append(os.path.dirname(__file__))

import numpy as np
import pytest
from sympy import nextprime, primerange

from dlp import (
    BinomialShotNoise,
    BoundedUniformNoise,
    DeterministicDlpLearner,
    DlpAgentPolicy,
    DlpInstance,
    classifier_accuracy,
    classify,
    classify_many,
    cliffwalk_bounds,
    desk_interval_exponent,
    discrete_log_bruteforce,
    feature_inner_product,
    feature_inner_product_oracle,
    gap,
    label,
    labels,
    make_noise,
    mod_exp,
    noiseless_matched_accuracy,
    noisy_inner_product,
    overlap_counts,
    read_instances,
    theorem_parameters,
    train_classifier,
    write_instances,
)
from envs import CliffwalkDlpConfig, CliffwalkDlpEnv, DeterministicDlpEnv, action_for_label
from qrl_errors import ConfigurationError, DomainError, OracleRefusedError
from train import evaluate_policy, generate_episodes


def _circular_distance(a: int, b: int, order: int) -> int:
    d = (a - b) % order
    return min(d, order - d)


def test_mod_exp():
    assert mod_exp(3, 0, 7) == 1
    assert mod_exp(3, 2, 7) == 2
    assert mod_exp(5, 117, 19) == pow(5, 117, 19)
    instance = DlpInstance.with_smallest_generator(101, 7)
    assert mod_exp(instance.g, instance.p - 1, instance.p) == 1
    with pytest.raises(DomainError):
        mod_exp(2, 3, 1)


def test_instance_validation():
    with pytest.raises(DomainError):
        DlpInstance(12, 5, 0)
    with pytest.raises(DomainError):
        DlpInstance(11, 3, 0)  # 3 has order 5 mod 11
    with pytest.raises(DomainError):
        DlpInstance(11, 2, 10)
    assert DlpInstance(11, 2, 0).n_bits == 4


def test_discrete_log():
    instance = DlpInstance.with_smallest_generator(101, 0)
    assert discrete_log_bruteforce(1, instance) == 0
    assert discrete_log_bruteforce(instance.g, instance) == 1
    for y in range(100):
        assert discrete_log_bruteforce(mod_exp(instance.g, y, 101), instance) == y


def test_discrete_log_refuses_large_modulus():
    big = DlpInstance.with_smallest_generator(int(nextprime(2 ** 24)), 0)
    with pytest.raises(OracleRefusedError):
        discrete_log_bruteforce(2, big)


def test_labels_small_example():
    instance = DlpInstance(7, 3, 0)
    xs = instance.elements()
    ys = labels(instance, xs)
    assert set(xs[ys == 1].tolist()) == {1, 3, 2}
    assert set(xs[ys == -1].tolist()) == {6, 4, 5}
    with pytest.raises(DomainError):
        label(instance, 0)
    with pytest.raises(DomainError):
        label(instance, 7)


def test_labels_are_balanced():
    for s in range(10):
        assert (labels(DlpInstance(11, 2, s), np.arange(1, 11)) == 1).sum() == 5
    for p in primerange(5, 102):
        for s in range(p - 1):
            instance = DlpInstance.with_smallest_generator(int(p), s)
            assert (labels(instance, instance.elements()) == 1).sum() == (p - 1) // 2


def test_half_shift_flips_labels():
    for s in range(10):
        a = labels(DlpInstance(11, 2, s), np.arange(1, 11))
        b = labels(DlpInstance(11, 2, (s + 5) % 10), np.arange(1, 11))
        assert np.array_equal(a, -b)


@pytest.mark.parametrize("p", [7, 11])
def test_inner_product_matches_set_oracle_exhaustively(p):
    instance = DlpInstance.with_smallest_generator(p, 0)
    for k in range(int(math.log2(instance.half)) + 1):
        for x in range(1, p):
            for s_prime in range(p - 1):
                assert feature_inner_product(x, s_prime, instance, k) == pytest.approx(
                    feature_inner_product_oracle(x, s_prime, instance, k), abs=1e-15)


def test_inner_product_matches_set_oracle_at_101():
    instance = DlpInstance.with_smallest_generator(101, 0)
    k = 4
    m = 2 ** k
    powers = [mod_exp(instance.g, y, 101) for y in range(100)]
    segments = [{powers[(s + j) % 100] for j in range(50)} for s in range(100)]
    for x in range(1, 101):
        feature = {(x * powers[i]) % 101 for i in range(m)}
        for s_prime in range(100):
            expected = len(feature & segments[s_prime]) ** 2 / (m * 50)
            assert feature_inner_product(x, s_prime, instance, k) == pytest.approx(expected, abs=1e-15)
    rng = np.random.default_rng(0)
    for _ in range(200):
        x, s_prime, k = int(rng.integers(1, 101)), int(rng.integers(100)), int(rng.integers(0, 6))
        assert feature_inner_product(x, s_prime, instance, k) == pytest.approx(
            feature_inner_product_oracle(x, s_prime, instance, k), abs=1e-15)


def test_interior_points_give_delta_or_zero():
    instance = DlpInstance.with_smallest_generator(101, 0)
    k = 2
    delta = gap(instance, k)
    assert delta == pytest.approx(0.08)
    s_prime = 30
    inside = int(instance.powers[(s_prime + 10) % 100])
    outside = int(instance.powers[(s_prime + 60) % 100])
    assert feature_inner_product(inside, s_prime, instance, k) == pytest.approx(delta)
    assert feature_inner_product(outside, s_prime, instance, k) == 0.0
    assert classify(inside, s_prime, instance, k) == 1
    assert classify(outside, s_prime, instance, k) == -1
    # any log well inside either half
    for offset in range(4, 47):
        value = feature_inner_product(int(instance.powers[(s_prime + offset) % 100]), s_prime, instance, k)
        assert value == pytest.approx(delta)
        value = feature_inner_product(int(instance.powers[(s_prime + 50 + offset) % 100]), s_prime, instance, k)
        assert value == 0.0


def test_k_bounds():
    instance = DlpInstance(11, 2, 0)
    with pytest.raises(DomainError):
        feature_inner_product(1, 0, instance, 3)
    with pytest.raises(DomainError):
        overlap_counts(np.array([0]), 0, instance, -1)


def test_matched_classifier_accuracy():
    instance = DlpInstance.with_smallest_generator(101, 17)
    for k in range(0, 6):
        accuracy = classifier_accuracy(instance, instance.s, k)
        assert accuracy == pytest.approx(noiseless_matched_accuracy(instance, k))
        assert accuracy == pytest.approx(1 - (2 ** k - 1) / 100)
        assert accuracy >= 1 - gap(instance, k)
    # single-point features reproduce the concept up to the band around 1 - Delta
    assert abs(classifier_accuracy(instance, instance.s, 0) - (1 - gap(instance, 0))) <= 2 / 100 + 1e-12


def test_noisy_inner_product():
    rng = np.random.default_rng(0)
    assert all(noisy_inner_product(0.0, 50, rng) == 0.0 for _ in range(100))
    assert all(noisy_inner_product(1.0, 50, rng) == 1.0 for _ in range(100))
    samples = np.array([noisy_inner_product(0.3, 100, rng) for _ in range(10000)])
    assert abs(samples.mean() - 0.3) <= 4 * math.sqrt(0.21 / 100) / 100
    with pytest.raises(DomainError):
        noisy_inner_product(1.5, 10, rng)
    with pytest.raises(DomainError):
        noisy_inner_product(0.5, 0, rng)


def test_noise_models():
    rng = np.random.default_rng(1)
    bounded = BoundedUniformNoise(400)
    values = np.full(100000, 0.125)
    errors = bounded.estimate(values, 0.125, rng) - values
    assert np.max(np.abs(errors)) <= 0.125
    assert abs(errors.mean()) < 0.001
    assert errors.var() <= 1.02 / 400
    assert isinstance(make_noise("binomial", 10), BinomialShotNoise)
    assert make_noise("binomial", None) is None
    with pytest.raises(ConfigurationError):
        make_noise("gaussian", 10)
    with pytest.raises(ConfigurationError):
        BinomialShotNoise(0)


@pytest.mark.parametrize("shots", [256, 1024])
def test_noisy_misclassification_within_chebyshev_bound(shots):
    instance = DlpInstance.with_smallest_generator(257, 0)
    k = 4
    delta = gap(instance, k)
    assert delta == pytest.approx(1 / 8)
    rng = np.random.default_rng(shots)
    s_prime = 0
    margin = 16
    interior_logs = np.array([y for y in range(256)
                              if margin <= y <= 127 - margin or 128 + margin <= y <= 255 - margin])
    logs = rng.choice(interior_logs, size=100000)
    xs = instance.powers[logs]
    truth = np.where(logs < 128, 1, -1)
    predicted = classify_many(xs, s_prime, instance, k, BinomialShotNoise(shots), rng)
    assert np.mean(predicted != truth) <= 4 / (delta ** 2 * shots)


def test_train_classifier_noiseless_recovers_secret():
    instance = DlpInstance(11, 2, 6)
    assert train_classifier(instance, instance.elements(), k=0) == 6
    bigger = DlpInstance.with_smallest_generator(101, 40)
    trained = train_classifier(bigger, bigger.elements(), k=2)
    assert classifier_accuracy(bigger, trained, 2) >= noiseless_matched_accuracy(bigger, 2)
    with pytest.raises(ConfigurationError):
        train_classifier(instance, [], k=0)


def test_train_classifier_ties_go_to_smallest_candidate():
    instance = DlpInstance(11, 2, 6)
    # logs 5 and 0 sit in opposite halves, so both candidates misclassify one point
    trained = train_classifier(instance, [int(instance.powers[5]), int(instance.powers[0])], k=0,
                               training_labels=[1, 1])
    assert trained == 0


def test_adversarial_training_set_misses_secret():
    instance = DlpInstance.with_smallest_generator(101, 50)
    epsilon = 0.1
    far = [int(instance.powers[y]) for y in range(100)
           if _circular_distance(y, instance.s, 100) > epsilon * 100]
    trained = train_classifier(instance, far, k=0)
    assert _circular_distance(trained, instance.s, 100) / 100 > epsilon


def test_noisy_training_needs_rng():
    instance = DlpInstance(11, 2, 3)
    with pytest.raises(ConfigurationError):
        train_classifier(instance, [1, 2, 3], k=0, shots=10, rng=None)


def test_cliffwalk_bounds():
    report = cliffwalk_bounds(0.51, 0.86, 0.9)
    assert report.gap == pytest.approx(0.0995, abs=5e-4)
    perfect = cliffwalk_bounds(1.0, 0.5, 0.9)
    assert perfect.upper == 0.0 and perfect.lower == 0.0
    assert cliffwalk_bounds(0.5, 0.5, 0.0).random_value == -0.5
    for x in np.linspace(0, 1, 11):
        for slip in (0.0, 0.5, 1.0):
            for gamma in (0.0, 0.5, 0.9):
                bounds = cliffwalk_bounds(float(x), slip, gamma)
                assert bounds.lower <= bounds.upper + 1e-15
    for bad in ((1.2, 0.5, 0.5), (0.5, -0.1, 0.5), (0.5, 0.5, 1.0)):
        with pytest.raises(DomainError):
            cliffwalk_bounds(*bad)


@pytest.mark.parametrize("slip", [0.86, 1.0])
def test_matched_agent_value_inside_bounds(slip):
    instance = DlpInstance.with_smallest_generator(101, 23)
    k, gamma = 2, 0.9
    agent = DlpAgentPolicy(instance, instance.s, k)
    env = CliffwalkDlpEnv(CliffwalkDlpConfig(instance, slip_delta=slip, gamma=gamma))
    result = evaluate_policy(agent, env, 2000, np.random.default_rng(0), gamma=gamma)
    accuracy = classifier_accuracy(instance, instance.s, k)
    lower = cliffwalk_bounds(1 - gap(instance, k), slip, gamma).lower
    upper = cliffwalk_bounds(accuracy, slip, gamma).upper
    assert result.mean_value >= lower
    assert result.mean_value >= cliffwalk_bounds(accuracy, slip, gamma).lower
    assert result.mean_value <= upper + 3 * result.value_stderr


@pytest.mark.parametrize("m", [1, 2, 3])
def test_boosting_beats_chernoff_bound(m):
    instance = DlpInstance.with_smallest_generator(101, 0)
    k = 2
    x = int(instance.powers[10])
    single = DlpAgentPolicy(instance, instance.s, k, shots=50)
    assert single.positive_probability(np.array([x]))[0] >= 0.9
    boosted = DlpAgentPolicy(instance, instance.s, k, shots=50, votes=2 * m + 1)
    rng = np.random.default_rng(m)
    flips = np.mean([boosted.act(x, rng) != 0 for _ in range(5000)])
    assert flips <= math.exp(-2 * m * 0.4 ** 2)
    expected = 1 - boosted.positive_probability(np.array([x]))[0]
    assert abs(flips - expected) <= 4 * math.sqrt(max(expected * (1 - expected), 1e-4) / 5000)


def test_agent_rejects_even_votes_and_handles_limbo():
    instance = DlpInstance(11, 2, 3)
    with pytest.raises(ConfigurationError):
        DlpAgentPolicy(instance, 3, 0, shots=10, votes=2)
    agent = DlpAgentPolicy(instance, 3, 0)
    assert np.array_equal(agent.probabilities(np.array([[0, 0]])), [[1.0, 0.0]])


def test_deterministic_learner_reaches_value_one():
    instance = DlpInstance(11, 2, 7)
    env = DeterministicDlpEnv(instance, instance.elements(), test_state=5)
    learner = DeterministicDlpLearner(instance.p, instance.g, k=0)
    batch = generate_episodes(learner, env, 3, None, np.random.default_rng(0), greedy=True, sequential=True)
    assert [t.total_reward for t in batch] == [1.0, 1.0, 1.0]
    assert learner.s_prime == instance.s


def test_deterministic_learner_queries_do_not_record():
    instance = DlpInstance(11, 2, 7)
    learner = DeterministicDlpLearner(instance.p, instance.g, k=0)
    labeled = np.array([[x, int(y)] for x, y in zip(instance.elements(), labels(instance, instance.elements()))])
    query = np.vstack([labeled, [[5, 0]]])
    assert np.array_equal(learner.probabilities(query), np.tile([1.0, 0.0], (len(query), 1)))
    assert learner.memory == {} and learner.s_prime is None

    learner.observe(query)
    assert len(learner.memory) == 10 and learner.s_prime == instance.s
    before = dict(learner.memory)
    probs = learner.probabilities(np.array([[3, 0], [0, 0], [4, 1]]))
    assert learner.memory == before and learner.s_prime == instance.s
    assert np.array_equal(probs[1:], [[1.0, 0.0], [1.0, 0.0]])
    assert probs[0, action_for_label(label(instance, 3))] == 1.0


def test_theorem_parameters():
    base = theorem_parameters(13, 0.1, 0.1)
    assert set(base) == {"t", "c", "training_size", "shots"}
    assert base["training_size"] == pytest.approx(13 ** base["c"])
    assert base["shots"] >= 128 / 0.1 ** 3
    lemma = theorem_parameters(13, 0.1, 0.1, lemma_epsilon=0.1)
    assert lemma["t"] == base["t"]
    assert lemma["c"] <= base["c"]
    with pytest.raises(DomainError):
        theorem_parameters(1, 0.1, 0.1)


def test_desk_interval_exponent():
    instance = DlpInstance.with_smallest_generator(101, 0)
    assert desk_interval_exponent(instance) == 4
    assert 2 ** desk_interval_exponent(DlpInstance.with_smallest_generator(8191, 0)) <= 8190 // 4


def test_instance_file(tmp_path):
    path = str(tmp_path / "instances.txt")
    records = [(DlpInstance(11, 2, 3), 0), (DlpInstance(7, 3, 5), None)]
    write_instances(path, records)
    assert read_instances(path) == records
    with open(path, "a", encoding="utf-8") as handle:
        handle.write("11 2\n")
    with pytest.raises(ConfigurationError):
        read_instances(path)


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    for name, fn in [(n, f) for n, f in list(globals().items()) if n.startswith("test_") and callable(f)]:
        if name == "test_inner_product_matches_set_oracle_exhaustively":
            fn(7)
            fn(11)
        elif name == "test_noisy_misclassification_within_chebyshev_bound":
            fn(256)
            fn(1024)
        elif name == "test_boosting_beats_chernoff_bound":
            for m in (1, 2, 3):
                fn(m)
        elif name == "test_matched_agent_value_inside_bounds":
            fn(0.86)
            fn(1.0)
        elif name == "test_instance_file":
            with tempfile.TemporaryDirectory() as tmp:
                fn(Path(tmp))
        else:
            fn()
        print(f"[OK] {name}")
    print("[OK] dlp tests passed")
