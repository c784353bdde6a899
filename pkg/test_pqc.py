"""
Tests for PQC policies, parameter-shift derivatives and log-policy gradients
"""

import os
import sys
sys.path.append(os.path.dirname(__file__))

import numpy as np
import pytest
from scipy.special import expit, softmax

from pqc import (
    Entangler,
    GradientMode,
    ParamVector,
    PolicyConfig,
    PolicyKind,
    PqcPolicy,
    PqcTopology,
    action_expectations,
    approximate_log_policy_gradient,
    build_circuit,
    log_policy_gradient,
    log_policy_gradients,
    noisy_expectation,
    observable_expectation,
    observable_preset,
    observable_weight_derivative,
    observables_from_labels,
    parameter_shift_derivative,
    parse_term,
    partition_preset,
    perturbed_softmax_tv,
    raw_policy,
    softmax_policy,
    softmax_tv_bound,
    worst_case_perturbations,
)
from qrl_errors import ConfigurationError, DegenerateProbabilityError, QubitIndexError
from qsim import (
    ActionPartition,
    GateKind,
    ObservableSpec,
    PauliTerm,
    ProjectorTerm,
    apply_circuit,
    expectation,
    init_zero,
)

Z0 = ObservableSpec.single(PauliTerm.z(0))
ZZ = ObservableSpec.single(PauliTerm.z(0, 1))


def _params(topology: PqcTopology, n_weights: int = 0, seed: int = 0) -> ParamVector:
    rng = np.random.default_rng(seed)
    return ParamVector(rng.uniform(0, 2 * np.pi, topology.n_phi), rng.uniform(0.5, 1.5, topology.n_lam),
                       rng.uniform(0.5, 1.5, n_weights))


def _bare_rotation(theta: float):
    """Ry(theta)|0> on one qubit: no H prefix, no encoding"""
    topology = PqcTopology(1, 0, 0, initial_hadamard=False)
    return topology, ParamVector([0.0, theta], [])


def test_topology_sizes():
    topology = PqcTopology(4, 5, 4)
    assert topology.entangling_pairs() == [(0, 1), (2, 3), (1, 2)]
    assert (topology.n_phi, topology.n_lam) == (6 * 8, 5 * 8)
    assert PqcTopology(4, 1, 4, Entangler.CIRCULAR).entangling_pairs()[-1] == (3, 0)
    trainable = PqcTopology(4, 1, 4, "all-to-all", entangler_trainable=True)
    assert len(trainable.entangling_pairs()) == 6
    assert trainable.phi_per_layer == 8 + 6
    with pytest.raises(ConfigurationError):
        PqcTopology(2, 1, 5)
    with pytest.raises(ConfigurationError):
        PqcTopology(2, -1, 2)


def test_circuit_layout_two_qubits_one_encoding_layer():
    topology = PqcTopology(2, 1, 2)
    phi = np.arange(topology.n_phi) * 0.1
    lam = np.array([1.0, 2.0, 3.0, 4.0])
    s = np.array([0.5, -0.25])
    gates = build_circuit(topology, s, phi, lam)
    kinds = [(g.kind, g.targets) for g in gates]
    assert kinds == [
        (GateKind.H, (0,)), (GateKind.H, (1,)),
        (GateKind.RZ, (0,)), (GateKind.RZ, (1,)), (GateKind.RY, (0,)), (GateKind.RY, (1,)), (GateKind.CZ, (0, 1)),
        (GateKind.RY, (0,)), (GateKind.RY, (1,)), (GateKind.RZ, (0,)), (GateKind.RZ, (1,)),
        (GateKind.RZ, (0,)), (GateKind.RZ, (1,)), (GateKind.RY, (0,)), (GateKind.RY, (1,)), (GateKind.CZ, (0, 1)),
    ]
    encoding = [g.angle for g in gates[7:11]]
    assert np.allclose(encoding, [1.0 * 0.5, 2.0 * -0.25, 3.0 * 0.5, 4.0 * -0.25])
    assert np.allclose([g.angle for g in gates[2:6]], phi[:4])
    assert np.allclose([g.angle for g in gates[11:15]], phi[4:])


def test_build_circuit_size_mismatch():
    topology = PqcTopology(2, 1, 2)
    with pytest.raises(ConfigurationError):
        build_circuit(topology, np.zeros(2), np.zeros(topology.n_phi - 1), np.zeros(topology.n_lam))
    with pytest.raises(ConfigurationError):
        PqcPolicy(topology, PolicyConfig("softmax", observables=(ZZ, ZZ)),
                  ParamVector(np.zeros(topology.n_phi), np.zeros(topology.n_lam), np.zeros(3)))


def test_zero_angles_give_zero_zz():
    topology = PqcTopology(2, 1, 2)
    state = apply_circuit(init_zero(2), build_circuit(topology, np.array([0.3, 0.7]), np.zeros(topology.n_phi),
                                                      np.zeros(topology.n_lam)))
    assert expectation(state, ZZ) == pytest.approx(0.0, abs=1e-12)


def test_raw_policy_without_encoding():
    topology = PqcTopology(2, 0, 2)
    params = ParamVector(np.zeros(topology.n_phi), [])
    partition = partition_preset("first-qubit", 2, 2)
    assert np.allclose(raw_policy(np.array([0.1, 0.2]), params, topology, partition), [0.5, 0.5])
    moved = _params(topology)
    assert np.allclose(raw_policy(np.array([0.1, 0.2]), moved, topology, partition),
                       raw_policy(np.array([3.0, -1.0]), moved, topology, partition))


def test_raw_policy_single_rotation():
    for theta in (0.0, 0.4, 1.7, np.pi):
        topology, params = _bare_rotation(theta)
        probs = raw_policy(np.zeros(0), params, topology, ActionPartition.contiguous(1, 2))
        assert np.allclose(probs, [np.cos(theta / 2) ** 2, np.sin(theta / 2) ** 2], atol=1e-12)


def test_raw_policy_sums_to_one():
    rng = np.random.default_rng(2)
    topology = PqcTopology(3, 2, 3, Entangler.CIRCULAR)
    partition = ActionPartition.contiguous(3, 3)
    for seed in range(10):
        probs = raw_policy(rng.normal(size=(5, 3)), _params(topology, seed=seed), topology, partition)
        assert np.all(probs >= 0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-10)


def test_softmax_policy():
    topology = PqcTopology(2, 2, 2)
    observables = observable_preset("zz-sign", 2, 2)
    params = _params(topology, 2)
    params.w[:] = 1.0
    s = np.array([0.4, 1.1])
    v = observable_expectation(s, params, topology, ZZ)
    for beta in (0.5, 1.0, 3.0):
        probs = softmax_policy(s, params, topology, observables, beta)
        assert probs[0] == pytest.approx(expit(2 * beta * v), abs=1e-12)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(softmax_policy(s, params, topology, observables, 1e-12), [0.5, 0.5], atol=1e-10)
    with pytest.raises(ConfigurationError):
        softmax_policy(s, params, topology, observables, 0.0)


def test_equal_expectations_give_uniform_policy():
    topology = PqcTopology(2, 1, 2)
    params = _params(topology, 3)
    params.w[:] = 0.7
    probs = softmax_policy(np.array([0.2, 0.9]), params, topology, (Z0, Z0, Z0), 4.0)
    assert np.allclose(probs, 1 / 3, atol=1e-12)


def test_softmax_argmax_matches_expectations():
    rng = np.random.default_rng(4)
    topology = PqcTopology(2, 2, 2)
    observables = observable_preset("z0-z0z1-z1", 2, 3)
    for seed in range(20):
        params = _params(topology, 3, seed)
        s = rng.uniform(-1, 1, 2)
        values = action_expectations(s, params, topology, observables)
        for beta in (0.1, 1.0, 10.0):
            assert np.argmax(softmax_policy(s, params, topology, observables, beta)) == np.argmax(values)


def test_parameter_shift_single_rotation():
    for theta in (0.0, 0.3, 2.0, -1.2):
        topology, params = _bare_rotation(theta)
        derivative = parameter_shift_derivative(np.zeros(0), params, topology, Z0, 1)
        assert derivative == pytest.approx(-np.sin(theta), abs=1e-12)
        manual = (np.cos(theta + np.pi / 2) - np.cos(theta - np.pi / 2)) / 2
        assert derivative == pytest.approx(manual, abs=1e-12)


def test_parameter_shift_on_encoding_scale():
    topology = PqcTopology(1, 1, 1, initial_hadamard=False)
    for lam, s in ((1.0, 0.5), (0.7, -2.0), (1.3, 1.1)):
        params = ParamVector(np.zeros(topology.n_phi), [lam, 0.4])
        # flat index n_phi is the Ry encoding scale
        derivative = parameter_shift_derivative(np.array([s]), params, topology, Z0, topology.n_phi)
        assert derivative == pytest.approx(-s * np.sin(lam * s), abs=1e-12)


def test_parameter_shift_unreachable_parameter():
    topology = PqcTopology(2, 0, 2, initial_hadamard=False)
    params = _params(topology)
    # the final Rz on qubit 1 cannot change <Z0>
    derivative = parameter_shift_derivative(np.zeros(2), params, topology, Z0, 1)
    assert abs(derivative) < 1e-10


def test_parameter_shift_index_out_of_range():
    topology = PqcTopology(2, 1, 2)
    with pytest.raises(QubitIndexError):
        parameter_shift_derivative(np.zeros(2), _params(topology), topology, Z0, topology.n_phi + topology.n_lam)


def test_parameter_shift_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-5
    for trial in range(20):
        n = int(rng.integers(1, 4))
        topology = PqcTopology(n, int(rng.integers(0, 3)), n)
        params = _params(topology, seed=trial)
        s = rng.uniform(-1, 1, n)
        obs = ObservableSpec.single(PauliTerm.z(*range(n)))
        index = int(rng.integers(params.n_circuit))
        flat = params.flat()
        plus, minus = flat.copy(), flat.copy()
        plus[index] += h
        minus[index] -= h
        fd = (observable_expectation(s, params.with_flat(plus), topology, obs)
              - observable_expectation(s, params.with_flat(minus), topology, obs)) / (2 * h)
        shift = parameter_shift_derivative(s, params, topology, obs, index)
        assert abs(shift - fd) <= 1e-6 * max(1.0, abs(fd))


def test_observable_weight_derivative():
    topology = PqcTopology(1, 0, 0, initial_hadamard=False)
    zero = ParamVector(np.zeros(topology.n_phi), [])
    assert observable_weight_derivative(np.zeros(0), zero, topology, PauliTerm.z(0)) == pytest.approx(1.0)
    assert observable_weight_derivative(np.zeros(0), zero, topology, ProjectorTerm(frozenset())) == 0.0

    topology = PqcTopology(2, 2, 2)
    params = _params(topology)
    s = np.array([0.3, -0.8])
    state = apply_circuit(init_zero(2), build_circuit(topology, s, params.phi, params.lam))
    assert observable_weight_derivative(s, params, topology, PauliTerm.z(0, 1)) == pytest.approx(
        expectation(state, ZZ), abs=1e-12)


def _log_pi(flat: np.ndarray, params: ParamVector, topology: PqcTopology, config: PolicyConfig,
            s: np.ndarray, a: int) -> float:
    moved = params.with_flat(flat)
    if config.kind is PolicyKind.RAW:
        return float(np.log(raw_policy(s, moved, topology, config.partition)[a]))
    return float(np.log(softmax_policy(s, moved, topology, config.observables, config.beta)[a]))


def _finite_difference(params, topology, config, s, a, size, h=1e-5):
    flat = params.flat()
    out = np.zeros(size)
    for i in range(size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        out[i] = (_log_pi(plus, params, topology, config, s, a) - _log_pi(minus, params, topology, config, s, a)) / (2 * h)
    return out


def test_softmax_log_gradient_matches_finite_differences():
    topology = PqcTopology(2, 2, 2)
    observables = observable_preset("z0-z0z1-z1", 2, 3)
    config = PolicyConfig(PolicyKind.SOFTMAX, beta=1.5, observables=observables)
    params = _params(topology, 3)
    s = np.array([0.6, -0.2])
    for a in range(3):
        exact = log_policy_gradient(s, a, params, topology, config)
        fd = _finite_difference(params, topology, config, s, a, exact.size)
        assert np.all(np.abs(exact - fd) <= 1e-5 * np.maximum(1.0, np.abs(fd)))


def test_raw_log_gradient_matches_finite_differences():
    topology = PqcTopology(2, 1, 2, Entangler.ONE_TO_ONE)
    config = PolicyConfig(PolicyKind.RAW, partition=ActionPartition.by_parity(2))
    params = _params(topology, seed=5)
    s = np.array([0.9, 0.1])
    for a in range(2):
        exact = log_policy_gradient(s, a, params, topology, config)
        assert exact.size == params.n_circuit
        fd = _finite_difference(params, topology, config, s, a, exact.size)
        assert np.all(np.abs(exact - fd) <= 1e-5 * np.maximum(1.0, np.abs(fd)))


def test_gradient_modes_agree():
    topology = PqcTopology(2, 1, 2)
    rng = np.random.default_rng(8)
    states = rng.uniform(-1, 1, (4, 2))
    actions = np.array([0, 1, 1, 0])
    for config, n_weights in ((PolicyConfig("softmax", 2.0, observables=observable_preset("zz-sign", 2, 2)), 2),
                              (PolicyConfig("raw", partition=ActionPartition.by_parity(2)), 0)):
        params = _params(topology, n_weights, seed=1)
        exact = log_policy_gradients(states, actions, params, topology, config, GradientMode.EXACT)
        shifted = log_policy_gradients(states, actions, params, topology, config, GradientMode.PARAMETER_SHIFT)
        assert np.allclose(exact, shifted, atol=1e-8)


def test_identical_observables_give_zero_circuit_gradient():
    topology = PqcTopology(2, 1, 2)
    config = PolicyConfig(PolicyKind.SOFTMAX, beta=1.0, observables=(Z0, Z0))
    params = _params(topology, 2)
    params.w[:] = 1.0
    grad = log_policy_gradient(np.array([0.4, 0.5]), 0, params, topology, config)
    assert np.allclose(grad[:params.n_circuit], 0.0, atol=1e-12)
    # each action owns its weight; the two weight components cancel
    assert grad[params.n_circuit:].sum() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("kind", ["softmax", "raw"])
def test_score_identity(kind):
    rng = np.random.default_rng(13)
    checked = 0
    for seed in range(100):
        n = int(rng.integers(2, 4))
        topology = PqcTopology(n, int(rng.integers(1, 3)), n)
        if kind == "softmax":
            config = PolicyConfig("softmax", float(rng.uniform(0.5, 3)), observables=observable_preset("z-per-action", n, 2))
        else:
            config = PolicyConfig("raw", partition=ActionPartition.contiguous(n, 2))
        params = _params(topology, config.n_weights, seed)
        s = rng.uniform(-1, 1, n)
        probs = (raw_policy(s, params, topology, config.partition) if kind == "raw"
                 else softmax_policy(s, params, topology, config.observables, config.beta))
        if np.any(probs <= 1e-6):
            continue
        grads = log_policy_gradients(np.repeat(s[None, :], 2, axis=0), np.arange(2), params, topology, config)
        assert np.max(np.abs(probs @ grads)) < 1e-8
        checked += 1
    assert checked > 50


def test_degenerate_raw_probability():
    topology, params = _bare_rotation(0.0)
    config = PolicyConfig("raw", partition=ActionPartition.contiguous(1, 2))
    with pytest.raises(DegenerateProbabilityError):
        log_policy_gradient(np.zeros(0), 1, params, topology, config)


def test_noisy_expectation():
    rng = np.random.default_rng(0)
    topology, params = _bare_rotation(0.0)
    assert noisy_expectation(np.zeros(0), params, topology, Z0, 10 ** 6, rng) == 1.0

    uniform_topology = PqcTopology(2, 0, 0)
    uniform = ParamVector(np.zeros(uniform_topology.n_phi), [])
    projector = ObservableSpec.single(ProjectorTerm(frozenset({3})))
    estimate = noisy_expectation(np.zeros(0), uniform, uniform_topology, projector, 10 ** 4, rng)
    assert abs(estimate - 0.25) <= 0.013

    tilted_topology, tilted = _bare_rotation(1.0)
    estimates = [noisy_expectation(np.zeros(0), tilted, tilted_topology, Z0, 100, rng) for _ in range(1000)]
    sigma = np.sqrt(1 - np.cos(1.0) ** 2) / np.sqrt(100)
    assert abs(np.mean(estimates) - np.cos(1.0)) <= 4 * sigma / np.sqrt(1000)
    with pytest.raises(ConfigurationError):
        noisy_expectation(np.zeros(0), tilted, tilted_topology, Z0, 0, rng)


def test_shot_gradients_need_rng():
    topology = PqcTopology(2, 1, 2)
    config = PolicyConfig("softmax", observables=observable_preset("zz-sign", 2, 2))
    with pytest.raises(ConfigurationError):
        log_policy_gradients(np.zeros((1, 2)), np.array([0]), _params(topology, 2), topology, config, GradientMode.SHOTS)


def test_softmax_perturbation_bound():
    rng = np.random.default_rng(21)
    for epsilon in (1e-3, 1e-2):
        for beta in (1.0, 5.0):
            bound = softmax_tv_bound(beta, epsilon)
            for _ in range(20):
                values = rng.uniform(-1, 1, 3)
                worst = max(perturbed_softmax_tv(values, d, beta) for d in worst_case_perturbations(3, epsilon))
                assert worst <= bound


def test_approximate_gradient_bound():
    rng = np.random.default_rng(22)
    epsilon = 1e-3
    for beta in (1.0, 5.0):
        # every observable has operator norm 1
        epsilon_expect = epsilon / (4 * beta)
        for _ in range(200):
            values = rng.uniform(-1, 1, 3)
            jacobian = rng.uniform(-1, 1, (3, 6))
            action = int(rng.integers(3))
            exact = approximate_log_policy_gradient(values, jacobian, action, beta)
            approx = approximate_log_policy_gradient(values + rng.choice([-1, 1], 3) * epsilon_expect,
                                                     jacobian + rng.uniform(-epsilon, epsilon, jacobian.shape),
                                                     action, beta)
            assert np.max(np.abs(approx - exact)) <= 3 * beta * epsilon + 1e-6


def test_parse_terms_and_labels():
    assert parse_term("-Z0Z1") == (-1.0, PauliTerm.z(0, 1))
    assert parse_term("0.5*X0") == (0.5, PauliTerm(((0, "X"),)))
    coef, term = parse_term("P0..7")
    assert coef == 1.0 and term == ProjectorTerm.range(0, 7)
    with pytest.raises(ConfigurationError):
        parse_term("bad*Z0")
    observables = observables_from_labels([["Z0Z1"], ["-Z0Z1", "0.5*Z0"]], 2, 2)
    assert observables[1].n_terms == 2
    with pytest.raises(ConfigurationError):
        observables_from_labels([["Z0"]], 2, 2)
    with pytest.raises(QubitIndexError):
        observables_from_labels([["Z0"], ["Z3"]], 2, 2)


def test_presets():
    assert len(observable_preset("z-product-sign", 4, 2)) == 2
    assert len(observable_preset("z0-z0z1-z1", 2, 3)) == 3
    with pytest.raises(ConfigurationError):
        observable_preset("zz-sign", 2, 3)
    with pytest.raises(ConfigurationError):
        observable_preset("nope", 2, 2)
    assert partition_preset("parity", 2, 2).n_actions == 2
    with pytest.raises(ConfigurationError):
        partition_preset("nope", 2, 2)


def test_policy_object():
    rng = np.random.default_rng(3)
    topology = PqcTopology(4, 2, 4)
    config = PolicyConfig("softmax", 1.0, observables=observable_preset("z-product-sign", 4, 2))
    policy = PqcPolicy.initialize(topology, config, rng, lam_init=1.0, w_init=1.0, input_scale=[2.4, 3.0, 0.21, 3.0])
    assert np.all((policy.params.phi >= 0) & (policy.params.phi <= 2 * np.pi))
    assert np.all(policy.params.lam == 1.0) and np.all(policy.params.w == 1.0)
    states = rng.normal(size=(6, 4))
    probs = policy.probabilities(states)
    assert probs.shape == (6, 2) and np.allclose(probs.sum(axis=1), 1.0)
    grads = policy.log_policy_gradients(states, np.zeros(6, dtype=int))
    assert set(grads) == {"phi", "lam", "w"}
    assert grads["phi"].shape == (6, topology.n_phi) and grads["w"].shape == (6, 2)

    raw = PqcPolicy.initialize(topology, PolicyConfig("raw", partition=ActionPartition.contiguous(4, 2)), rng)
    assert raw.group_names == ("phi", "lam")
    with pytest.raises(ConfigurationError):
        raw.set_parameter_groups({"phi": np.zeros(3)})


if __name__ == "__main__":
    tests = [(name, fn) for name, fn in list(globals().items()) if name.startswith("test_") and callable(fn)]
    for name, fn in tests:
        if name == "test_score_identity":
            fn("softmax")
            fn("raw")
        else:
            fn()
        print(f"[OK] {name}")
    print(f"[OK] {len(tests)} pqc tests passed")
