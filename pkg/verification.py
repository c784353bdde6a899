"""
Verification suites behind the gradcheck and dlp-verify subcommands.
Every check yields a CheckResult; a report is the ordered list of checks
plus free-form tables, serialisable to JSON.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from dlp import (
    MAX_BRUTE_FORCE_MODULUS,
    DeterministicDlpLearner,
    DlpAgentPolicy,
    classifier_accuracy,
    cliffwalk_bounds,
    feature_inner_product,
    feature_inner_product_oracle,
    gap,
    labels,
    make_noise,
    noiseless_matched_accuracy,
    random_instance,
    sample_training_set,
    theorem_parameters,
    train_classifier,
)
from envs import CliffwalkDlpConfig, CliffwalkDlpEnv, DeterministicDlpEnv
from experiment_config import DlpSection
from pqc import (
    SHIFT,
    Entangler,
    GradientMode,
    ParamVector,
    PolicyConfig,
    PolicyKind,
    PqcTopology,
    log_policy_gradients,
    observable_expectation,
    parameter_shift_derivative,
    perturbed_softmax_tv,
    raw_policy,
    softmax_policy,
    softmax_tv_bound,
    worst_case_perturbations,
)
from qrl_errors import ConfigurationError, OracleRefusedError
from qsim import ActionPartition, ObservableSpec, PauliTerm
from train import UniformPolicy, evaluate_policy, generate_episodes

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
SHIFT_TOLERANCE = 1e-5
SCORE_TOLERANCE = 1e-8
ADJOINT_TOLERANCE = 1e-8


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    value: Optional[float] = None
    tolerance: Optional[float] = None
    detail: Dict[str, Any] = field(default_factory=dict)


@dataclass
class VerificationReport:
    command: str
    seed: int
    checks: List[CheckResult] = field(default_factory=list)
    tables: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    @property
    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def add(self, check: CheckResult) -> CheckResult:
        self.checks.append(check)
        status = "passed" if check.passed else "FAILED"
        logger.info(f"[{check.suite}] {check.name}: {status} (value {check.value}, tolerance {check.tolerance})")
        return check

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "seed": self.seed,
            "passed": self.passed,
            "n_checks": len(self.checks),
            "n_failed": len(self.failures),
            "checks": [asdict(c) for c in self.checks],
            "tables": self.tables,
        }

    def write_json(self, path: str) -> str:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2, sort_keys=False, default=float)
            handle.write("\n")
        return path


# --- random circuits ----------------------------------------------------------

def random_topology(rng: np.random.Generator, max_qubits: int = 4, max_d_enc: int = 5) -> PqcTopology:
    n = int(rng.integers(1, max_qubits + 1))
    d_enc = int(rng.integers(1, max_d_enc + 1))
    input_dim = int(rng.integers(1, 2 * n + 1))
    entangler = list(Entangler)[int(rng.integers(len(Entangler)))]
    return PqcTopology(n, d_enc, input_dim, entangler, entangler_trainable=bool(rng.integers(2)) and n > 1)


def random_pauli(rng: np.random.Generator, n_qubits: int) -> PauliTerm:
    letters = rng.choice(["I", "X", "Y", "Z"], size=n_qubits)
    if np.all(letters == "I"):
        letters[int(rng.integers(n_qubits))] = "Z"
    return PauliTerm(tuple((q, str(l)) for q, l in enumerate(letters) if l != "I"))


def random_params(topology: PqcTopology, n_weights: int, rng: np.random.Generator) -> ParamVector:
    return ParamVector(
        phi=rng.uniform(0.0, 2 * np.pi, topology.n_phi),
        lam=rng.uniform(-1.5, 1.5, topology.n_lam),
        w=rng.uniform(-2.0, 2.0, n_weights),
    )


def random_policy_config(rng: np.random.Generator, topology: PqcTopology, kind: PolicyKind) -> PolicyConfig:
    n = topology.n_qubits
    if kind is PolicyKind.RAW:
        n_actions = int(rng.integers(2, min(4, 2 ** n) + 1))
        return PolicyConfig(kind, partition=ActionPartition.contiguous(n, n_actions))
    n_actions = int(rng.integers(2, 4))
    observables = tuple(
        ObservableSpec(tuple((float(rng.choice([-1.0, 1.0])), random_pauli(rng, n))
                             for _ in range(int(rng.integers(1, 3)))))
        for _ in range(n_actions))
    return PolicyConfig(kind, beta=float(rng.choice([1.0, 5.0])), observables=observables)


# --- gradcheck suites ---------------------------------------------------------

def check_parameter_shift(rng: np.random.Generator, n_circuits: int = 100, indices_per_circuit: int = 8,
                          shift: float = SHIFT, step: float = FD_STEP,
                          tolerance: float = SHIFT_TOLERANCE) -> CheckResult:
    """Parameter-shift derivatives against central finite differences of exact expectations"""
    worst = 0.0
    worst_case: Dict[str, Any] = {}
    for circuit in range(n_circuits):
        topology = random_topology(rng)
        params = random_params(topology, 0, rng)
        obs = ObservableSpec.single(random_pauli(rng, topology.n_qubits))
        s = rng.uniform(-1.0, 1.0, topology.input_dim)
        flat = params.flat()
        count = min(indices_per_circuit, params.n_circuit)
        for index in rng.choice(params.n_circuit, size=count, replace=False):
            shifted = parameter_shift_derivative(s, params, topology, obs, int(index), shift)
            plus, minus = flat.copy(), flat.copy()
            plus[index] += step
            minus[index] -= step
            finite = (observable_expectation(s, params.with_flat(plus), topology, obs)
                      - observable_expectation(s, params.with_flat(minus), topology, obs)) / (2 * step)
            error = abs(shifted - float(finite)) / max(1.0, abs(float(finite)))
            if error > worst:
                worst = error
                worst_case = {"circuit": circuit, "index": int(index), "n_qubits": topology.n_qubits,
                              "d_enc": topology.d_enc, "shift_rule": shifted, "finite_difference": float(finite)}
    return CheckResult("parameter-shift", f"{n_circuits} random circuits, shift {shift:.6f}",
                       worst <= tolerance, worst, tolerance, worst_case)


def _all_action_gradients(rows: np.ndarray, params: ParamVector, topology: PqcTopology, config: PolicyConfig,
                          mode: GradientMode) -> np.ndarray:
    n_actions = config.n_actions
    states = np.repeat(rows, n_actions, axis=0)
    actions = np.tile(np.arange(n_actions), rows.shape[0])
    grads = log_policy_gradients(states, actions, params, topology, config, mode)
    return grads.reshape(rows.shape[0], n_actions, -1)


def _policy_probabilities(rows: np.ndarray, params: ParamVector, topology: PqcTopology,
                          config: PolicyConfig) -> np.ndarray:
    if config.kind is PolicyKind.RAW:
        return raw_policy(rows, params, topology, config.partition)
    return softmax_policy(rows, params, topology, config.observables, config.beta)


def check_score_identity(rng: np.random.Generator, n_configs: int = 100,
                         mode: GradientMode = GradientMode.EXACT,
                         tolerance: float = SCORE_TOLERANCE) -> CheckResult:
    """sum_a pi(a|s) grad log pi(a|s) vanishes for softmax and raw policies"""
    worst = 0.0
    worst_case: Dict[str, Any] = {}
    for i in range(n_configs):
        kind = PolicyKind.SOFTMAX if i % 2 == 0 else PolicyKind.RAW
        topology = random_topology(rng)
        config = random_policy_config(rng, topology, kind)
        params = random_params(topology, config.n_weights, rng)
        rows = rng.uniform(-1.0, 1.0, (1, topology.input_dim))
        probs = _policy_probabilities(rows, params, topology, config)[0]
        grads = _all_action_gradients(rows, params, topology, config, mode)[0]
        residual = float(np.max(np.abs(probs @ grads))) if grads.size else 0.0
        if residual > worst:
            worst = residual
            worst_case = {"config": i, "kind": kind.value, "n_qubits": topology.n_qubits,
                          "n_actions": config.n_actions}
    return CheckResult("score-identity", f"{n_configs} softmax/raw configurations ({mode.value})",
                       worst < tolerance, worst, tolerance, worst_case)


def check_adjoint_matches_shift(rng: np.random.Generator, n_configs: int = 20, batch: int = 3,
                                tolerance: float = ADJOINT_TOLERANCE) -> CheckResult:
    """One-pass adjoint gradients equal the literal parameter-shift gradients"""
    worst = 0.0
    for i in range(n_configs):
        kind = PolicyKind.SOFTMAX if i % 2 == 0 else PolicyKind.RAW
        topology = random_topology(rng, max_qubits=3, max_d_enc=3)
        config = random_policy_config(rng, topology, kind)
        params = random_params(topology, config.n_weights, rng)
        rows = rng.uniform(-1.0, 1.0, (batch, topology.input_dim))
        actions = rng.integers(config.n_actions, size=batch)
        exact = log_policy_gradients(rows, actions, params, topology, config, GradientMode.EXACT)
        shifted = log_policy_gradients(rows, actions, params, topology, config, GradientMode.PARAMETER_SHIFT)
        worst = max(worst, float(np.max(np.abs(exact - shifted))))
    return CheckResult("adjoint", f"{n_configs} configurations x {batch} states", worst <= tolerance, worst,
                       tolerance)


def check_softmax_tv(rng: np.random.Generator, n_vectors: int = 1000, epsilons: Sequence[float] = (1e-3, 1e-2),
                     betas: Sequence[float] = (1.0, 5.0), n_actions: int = 3) -> List[CheckResult]:
    """Worst-case +-epsilon shifts of the expectations move the softmax by at most 2 sinh(2 beta epsilon)"""
    bases = rng.uniform(-1.0, 1.0, (n_vectors, n_actions))
    results = []
    for epsilon in epsilons:
        perturbations = worst_case_perturbations(n_actions, epsilon)
        for beta in betas:
            bound = softmax_tv_bound(beta, epsilon)
            worst = max(perturbed_softmax_tv(base, delta, beta) for base in bases for delta in perturbations)
            results.append(CheckResult("softmax-tv", f"epsilon {epsilon:g}, beta {beta:g}", worst <= bound,
                                       worst, bound, {"ratio": worst / bound}))
    return results


GRADCHECK_SUITES: Dict[str, Callable[..., Any]] = {
    "parameter-shift": check_parameter_shift,
    "score-identity": check_score_identity,
    "adjoint": check_adjoint_matches_shift,
    "softmax-tv": check_softmax_tv,
}


def run_gradcheck(seed: int, suites: Optional[Sequence[str]] = None, inject_shift: Optional[float] = None,
                  n_circuits: int = 100) -> VerificationReport:
    """
    Run the selected suites (all when suites is None). inject_shift replaces
    the pi/2 shift of the parameter-shift suite, which then has to fail.
    """
    selected = list(GRADCHECK_SUITES) if suites is None else list(suites)
    if not selected:
        raise ConfigurationError("Empty gradcheck suite selection")
    unknown = [s for s in selected if s not in GRADCHECK_SUITES]
    if unknown:
        raise ConfigurationError(f"Unknown gradcheck suite(s) {unknown}; available {list(GRADCHECK_SUITES)}")
    report = VerificationReport("gradcheck", seed)
    report.tables["suites"] = selected
    if inject_shift is not None:
        report.tables["injected_shift"] = inject_shift
        logger.warning(f"Parameter-shift suite runs with injected shift {inject_shift}")
    for name in selected:
        rng = np.random.default_rng([seed, list(GRADCHECK_SUITES).index(name)])
        if name == "parameter-shift":
            shift = SHIFT if inject_shift is None else inject_shift
            report.add(check_parameter_shift(rng, n_circuits=n_circuits, shift=shift))
        elif name == "score-identity":
            report.add(check_score_identity(rng, n_configs=n_circuits))
        elif name == "adjoint":
            report.add(check_adjoint_matches_shift(rng))
        else:
            for check in check_softmax_tv(rng):
                report.add(check)
    return report


# --- dlp-verify ---------------------------------------------------------------

def _valid_k(p: int, k: int) -> int:
    half = (p - 1) // 2
    while k > 0 and 2 ** k > half:
        k -= 1
    return k


def check_label_balance(primes: Sequence[int], n_instances: int, rng: np.random.Generator) -> CheckResult:
    """Exactly (p-1)/2 points of Z_p^* carry the +1 label"""
    offenders = []
    for p in primes:
        for _ in range(n_instances):
            instance = random_instance(p, rng)
            positives = int(np.sum(labels(instance, instance.elements()) == 1))
            if positives != instance.half:
                offenders.append({"p": p, "s": instance.s, "positives": positives})
    return CheckResult("dlp", f"label balance over {n_instances} instance(s) per prime", not offenders,
                       float(len(offenders)), 0.0, {"primes": list(primes), "offenders": offenders[:10]})


def check_oracle_equivalence(primes: Sequence[int], k: int, rng: np.random.Generator) -> CheckResult:
    """Interval-overlap inner products equal explicit set intersections for every (x, s')"""
    mismatches = 0
    compared = 0
    for p in primes:
        instance = random_instance(p, rng)
        kk = _valid_k(p, k)
        for s_prime in range(instance.order):
            for x in range(1, p):
                compared += 1
                if feature_inner_product(x, s_prime, instance, kk) != feature_inner_product_oracle(
                        x, s_prime, instance, kk):
                    mismatches += 1
    return CheckResult("dlp", "inner-product oracle equivalence", mismatches == 0, float(mismatches), 0.0,
                       {"pairs": compared, "primes": list(primes)})


def check_matched_accuracy(section: DlpSection, rng: np.random.Generator) -> List[CheckResult]:
    instance = random_instance(section.p, rng)
    k = _valid_k(section.p, section.k)
    delta = gap(instance, k)
    exact = classifier_accuracy(instance, instance.s, k)
    expected = noiseless_matched_accuracy(instance, k)
    noise = make_noise(section.noise, section.shots)
    noisy = classifier_accuracy(instance, instance.s, k, noise)
    detail = {"p": instance.p, "k": k, "gap": delta, "accuracy": exact, "closed_form": expected,
              "one_minus_gap": 1.0 - delta, "noisy_expected_accuracy": noisy, "shots": section.shots}
    return [
        CheckResult("dlp", "noiseless matched accuracy equals closed form", abs(exact - expected) < 1e-12,
                    exact, 1e-12, detail),
        CheckResult("dlp", "matched accuracy at least 1 - gap", exact >= 1.0 - delta, exact, 1.0 - delta),
        CheckResult("dlp", f"noisy matched accuracy at least 1 - gap ({section.shots} shots)",
                    noisy >= 1.0 - delta, noisy, 1.0 - delta),
    ]


def theorem_table(section: DlpSection, rng: np.random.Generator) -> Dict[str, Any]:
    """Accuracy of classifiers trained on |X| noisy samples, one fresh instance per trial"""
    k = _valid_k(section.theorem_p, section.theorem_k)
    accuracies = []
    for _ in range(section.theorem_trials):
        instance = random_instance(section.theorem_p, rng)
        xs = sample_training_set(instance, section.theorem_training_size, rng)
        s_prime = train_classifier(instance, xs, k, section.theorem_shots, rng, section.noise)
        accuracies.append(classifier_accuracy(instance, s_prime, k))
    accuracies = np.array(accuracies)
    successes = int(np.sum(accuracies >= section.theorem_accuracy))
    n_bits = (section.theorem_p - 2).bit_length()
    return {
        "p": section.theorem_p,
        "k": k,
        "training_size": section.theorem_training_size,
        "shots": section.theorem_shots,
        "trials": section.theorem_trials,
        "target_accuracy": section.theorem_accuracy,
        "successes": successes,
        "mean_accuracy": float(accuracies.mean()),
        "min_accuracy": float(accuracies.min()),
        "asymptotic_requirements": theorem_parameters(n_bits, 1.0 - section.theorem_accuracy, 0.1),
    }


def bound_table(section: DlpSection) -> List[Dict[str, float]]:
    return [asdict(cliffwalk_bounds(*point)) for point in section.bound_points]


def monte_carlo_random_value(p: int, gamma: float, episodes: int, rng: np.random.Generator) -> float:
    instance = random_instance(p, rng)
    env = CliffwalkDlpEnv(CliffwalkDlpConfig(instance, 0.0, gamma))
    return evaluate_policy(UniformPolicy(2), env, episodes, rng, gamma=gamma).mean_value


def check_agent_value_bounds(section: DlpSection, slip: float, gamma: float,
                             rng: np.random.Generator) -> CheckResult:
    """Matched agent's Monte Carlo value lies in [lower, upper + 3 sigma] at its exact accuracy"""
    instance = random_instance(section.p, rng)
    k = _valid_k(section.p, section.k)
    accuracy = classifier_accuracy(instance, instance.s, k)
    bounds = cliffwalk_bounds(accuracy, slip, gamma)
    env = CliffwalkDlpEnv(CliffwalkDlpConfig(instance, slip, gamma))
    result = evaluate_policy(DlpAgentPolicy(instance, instance.s, k), env, section.agent_episodes, rng, gamma=gamma)
    value, sigma = result.mean_value, result.value_stderr
    detail = {"p": instance.p, "k": k, "accuracy": accuracy, "slip": slip, "gamma": gamma,
              "lower": bounds.lower, "upper": bounds.upper, "monte_carlo": value, "stderr": sigma,
              "episodes": section.agent_episodes}
    return CheckResult("dlp", f"matched agent value within bounds (slip {slip:g}, gamma {gamma:g})",
                       bounds.lower <= value <= bounds.upper + 3 * sigma, value, bounds.upper + 3 * sigma, detail)


def deterministic_dlp_table(section: DlpSection, rng: np.random.Generator) -> Dict[str, Any]:
    """Exact matched agent, uniform agent and the online learner on sampled chains"""
    matched_values, uniform_rewards, learner_values = [], [], []
    learner_k = _valid_k(section.p, section.k)
    for _ in range(section.instances):
        instance = random_instance(section.p, rng)
        env = DeterministicDlpEnv.sample(instance, rng)
        agent = DlpAgentPolicy(instance, instance.s, 0)
        traj = generate_episodes(agent, env, 1, None, rng, greedy=True)[0]
        matched_values.append(traj.total_reward)
        for traj in generate_episodes(UniformPolicy(2), env, 20, None, rng):
            uniform_rewards.append(traj.rewards[-1])
        learner = DeterministicDlpLearner(instance.p, instance.g, learner_k, seed=int(rng.integers(2 ** 31)))
        traj = generate_episodes(learner, env, 1, None, rng, greedy=True, sequential=True)[0]
        learner_values.append(traj.total_reward)
    return {
        "instances": section.instances,
        "matched_min_value": float(np.min(matched_values)),
        "uniform_test_reward": float(np.mean(uniform_rewards)),
        "learner_mean_value": float(np.mean(learner_values)),
        "learner_k": learner_k,
    }


def run_dlp_verify(section: DlpSection, seed: int, include_theorem: bool = True) -> VerificationReport:
    oversized = [p for p in list(section.primes) + [section.p, section.theorem_p] if p > MAX_BRUTE_FORCE_MODULUS]
    if oversized:
        raise OracleRefusedError(f"Primes {oversized} exceed the desk-scale limit {MAX_BRUTE_FORCE_MODULUS}")
    report = VerificationReport("dlp-verify", seed)
    rng = np.random.default_rng(seed)

    report.add(check_label_balance(section.primes, section.instances, rng))
    report.add(check_oracle_equivalence(section.primes, section.k, rng))
    for check in check_matched_accuracy(section, rng):
        report.add(check)

    if include_theorem:
        table = theorem_table(section, rng)
        report.tables["theorem"] = table
        required = int(np.ceil(0.9 * table["trials"]))
        report.add(CheckResult("dlp", f"trained accuracy >= {table['target_accuracy']} in >= 90% of trials",
                               table["successes"] >= required, float(table["successes"]), float(required), table))

    bounds = bound_table(section)
    report.tables["cliffwalk_bounds"] = bounds
    for row in bounds:
        if (row["accuracy"], row["slip"], row["gamma"]) == (0.51, 0.86, 0.9):
            report.add(CheckResult("dlp", "g(0.51, 0.86, 0.9)", abs(row["gap"] - 0.0995) <= 5e-4,
                                   row["gap"], 5e-4))

    agent_rows = []
    for _, slip, gamma in section.bound_points:
        check = check_agent_value_bounds(section, float(slip), float(gamma), rng)
        agent_rows.append(check.detail)
        report.add(check)
    report.tables["agent_values"] = agent_rows

    random_rows = []
    for gamma in section.gammas:
        analytic = -1.0 / (2.0 - gamma)
        estimate = monte_carlo_random_value(section.p, gamma, section.monte_carlo_episodes, rng)
        random_rows.append({"gamma": gamma, "analytic": analytic, "monte_carlo": estimate})
        report.add(CheckResult("dlp", f"uniform policy value at gamma {gamma:g}",
                               abs(estimate - analytic) <= 0.02, estimate, 0.02, {"analytic": analytic}))
    report.tables["random_values"] = random_rows

    deterministic = deterministic_dlp_table(section, rng)
    report.tables["deterministic_dlp"] = deterministic
    report.add(CheckResult("dlp", "exact matched agent attains value 1 on every chain",
                           deterministic["matched_min_value"] == 1.0, deterministic["matched_min_value"], 1.0))
    report.add(CheckResult("dlp", "uniform agent test reward 0.5 +- 0.05",
                           abs(deterministic["uniform_test_reward"] - 0.5) <= 0.05,
                           deterministic["uniform_test_reward"], 0.05))
    return report
