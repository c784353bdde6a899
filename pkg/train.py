"""
REINFORCE with a linear value-function baseline.

Policies (PQC, MLP, DLP agents) share a small interface:
  n_actions, probabilities(states) -> (B, A),
  parameter_groups() / set_parameter_groups(groups),
  log_policy_gradients(states, actions, rng, action_probs) -> {group: (B, size)}.
Only trainable policies need the last three. Online learners may add
observe(states), which rollouts call with every batch before acting.
"""

import copy
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import lfilter
from scipy.special import softmax
from typing_extensions import Protocol

from envs import Environment
from experiment_config import TrainerConfig
from pqc import DIVISION_FLOOR, PolicyKind
from qrl_errors import ConfigurationError, NumericalBlowupError

logger = logging.getLogger(__name__)

MOVING_AVERAGE_WINDOW = 10


class Policy(Protocol):
    n_actions: int

    def probabilities(self, states: np.ndarray) -> np.ndarray:
        ...


@dataclass
class Trajectory:
    """One episode; action_probs holds pi(a_t|s_t) of the sampled actions"""
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    action_probs: np.ndarray
    returns: Optional[np.ndarray] = None
    horizon: int = 0

    @property
    def length(self) -> int:
        return int(self.actions.size)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))


def compute_returns(traj: Trajectory, gamma: float) -> Trajectory:
    """G_t = r_{t+1} + gamma G_{t+1}, computed as a reversed IIR filter"""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigurationError(f"gamma must lie in [0, 1], got {gamma}")
    rewards = np.asarray(traj.rewards, dtype=float)
    returns = lfilter([1.0], [1.0, -gamma], rewards[::-1])[::-1] if rewards.size else np.zeros(0)
    return replace(traj, returns=np.ascontiguousarray(returns))


def moving_average(values: Sequence[float], window: int = MOVING_AVERAGE_WINDOW) -> np.ndarray:
    """Trailing mean over up to `window` values"""
    values = np.asarray(values, dtype=float)
    sums = np.cumsum(np.insert(values, 0, 0.0))
    idx = np.arange(1, values.size + 1)
    start = np.maximum(0, idx - window)
    return (sums[idx] - sums[start]) / (idx - start)


# --- baseline -----------------------------------------------------------------

class LinearFeatureBaseline:
    """
    V(s_t) = w . [s, s^2, t/H, (t/H)^2, (t/H)^3, 1], observations clipped to +-10.
    Ridge fit on every weight except the bias; the ridge coefficient grows
    tenfold (up to 5 times) when a solve is not finite.
    """

    def __init__(self, reg_coeff: float = 1e-5, horizon: Optional[int] = None):
        self.reg_coeff = reg_coeff
        self.horizon = horizon
        self.coeffs: Optional[np.ndarray] = None

    def features(self, traj: Trajectory) -> np.ndarray:
        obs = np.clip(np.asarray(traj.states, dtype=float).reshape(traj.length, -1), -10, 10)
        horizon = self.horizon or traj.horizon or max(traj.length, 1)
        t = (np.arange(traj.length) / horizon)[:, None]
        return np.concatenate([obs, obs ** 2, t, t ** 2, t ** 3, np.ones((traj.length, 1))], axis=1)

    def fit(self, trajectories: Sequence[Trajectory]) -> "LinearFeatureBaseline":
        if not trajectories:
            raise ConfigurationError("Cannot fit a baseline on an empty batch")
        x = np.concatenate([self.features(t) for t in trajectories])
        y = np.concatenate([t.returns for t in trajectories])
        penalty = np.ones(x.shape[1])
        penalty[-1] = 0.0
        gram = x.T @ x
        reg = self.reg_coeff
        for _ in range(5):
            coeffs = np.linalg.solve(gram + reg * np.diag(penalty), x.T @ y)
            if np.all(np.isfinite(coeffs)):
                break
            reg *= 10
        else:
            raise NumericalBlowupError("Baseline fit stayed non-finite after raising the ridge coefficient")
        condition = np.linalg.cond(gram + reg * np.diag(penalty))
        if condition > 1e12:
            logger.warning(f"Baseline normal equations are ill-conditioned (cond = {condition:.2e})")
        self.coeffs = coeffs
        return self

    def predict(self, traj: Trajectory) -> np.ndarray:
        if self.coeffs is None:
            return np.zeros(traj.length)
        return self.features(traj) @ self.coeffs


def fit_baseline(model: LinearFeatureBaseline, trajectories: Sequence[Trajectory]) -> LinearFeatureBaseline:
    return model.fit(trajectories)


# --- optimizer ----------------------------------------------------------------

@dataclass
class OptimizerState:
    first_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moments: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


class AdamOptimizer:
    """
    Adam ascent with one learning rate per parameter group.
    Frozen groups (or groups with learning rate 0) never move.
    """

    def __init__(self, learning_rates: Dict[str, float], frozen: Iterable[str] = (),
                 default_lr: Optional[float] = None, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.learning_rates = dict(learning_rates)
        self.frozen = set(frozen)
        self.default_lr = default_lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = OptimizerState()

    def learning_rate(self, group: str) -> float:
        if group in self.learning_rates:
            return self.learning_rates[group]
        if self.default_lr is None:
            raise ConfigurationError(f"No learning rate for parameter group '{group}'")
        return self.default_lr

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Return updated copies of params; moments are tracked per group"""
        self.state.step += 1
        t = self.state.step
        updated = {}
        for name, value in params.items():
            grad = np.asarray(grads[name], dtype=float)
            lr = self.learning_rate(name)
            if name in self.frozen or lr == 0.0:
                updated[name] = np.array(value, copy=True)
                continue
            m = self.state.first_moments.get(name, np.zeros_like(grad))
            v = self.state.second_moments.get(name, np.zeros_like(grad))
            m = self.beta1 * m + (1 - self.beta1) * grad
            v = self.beta2 * v + (1 - self.beta2) * grad ** 2
            self.state.first_moments[name], self.state.second_moments[name] = m, v
            m_hat = m / (1 - self.beta1 ** t)
            v_hat = v / (1 - self.beta2 ** t)
            updated[name] = value + lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return updated


# --- annealing ----------------------------------------------------------------

@dataclass(frozen=True)
class AnnealSchedule:
    beta_final: float
    total_episodes: int
    beta_start: float = 1.0


def anneal_beta(schedule: AnnealSchedule, episode: int) -> float:
    """Linear from beta_start to beta_final over total_episodes, constant afterwards"""
    if episode < 0:
        raise ConfigurationError(f"episode must be >= 0, got {episode}")
    if schedule.total_episodes <= 0:
        return schedule.beta_final
    fraction = min(episode / schedule.total_episodes, 1.0)
    return schedule.beta_start + fraction * (schedule.beta_final - schedule.beta_start)


# --- comparator and reference policies ----------------------------------------

class MlpPolicy:
    """ReLU network with a softmax head; widths = [input_dim, hidden..., n_actions]"""

    def __init__(self, widths: Sequence[int], rng: Optional[np.random.Generator] = None,
                 input_scale: Optional[Sequence[float]] = None, zero_init: bool = False):
        if len(widths) < 2:
            raise ConfigurationError(f"MLP needs at least input and output widths, got {widths}")
        self.widths = [int(w) for w in widths]
        self.input_scale = None if input_scale is None else np.asarray(input_scale, dtype=float)
        rng = rng or np.random.default_rng(0)
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = np.zeros((fan_in, fan_out)) if zero_init else rng.uniform(-limit, limit, (fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @property
    def n_actions(self) -> int:
        return self.widths[-1]

    @property
    def group_names(self) -> List[str]:
        return [f"{kind}{i}" for i in range(len(self.weights)) for kind in ("W", "b")]

    def _inputs(self, states: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(states, dtype=float))
        return rows / self.input_scale[None, :] if self.input_scale is not None else rows

    def forward(self, states: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
        """(probabilities, layer inputs, pre-activations)"""
        h = self._inputs(states)
        inputs, pre = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w + b
            pre.append(z)
            h = np.maximum(z, 0.0) if i < len(self.weights) - 1 else z
        return softmax(h, axis=1), inputs, pre

    def probabilities(self, states: np.ndarray) -> np.ndarray:
        return self.forward(states)[0]

    def parameter_groups(self) -> Dict[str, np.ndarray]:
        groups = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            groups[f"W{i}"] = w.reshape(-1)
            groups[f"b{i}"] = b
        return groups

    def set_parameter_groups(self, groups: Dict[str, np.ndarray]) -> None:
        for name, values in groups.items():
            i = int(name[1:])
            if name[0] == "W":
                self.weights[i] = np.asarray(values, dtype=float).reshape(self.weights[i].shape).copy()
            else:
                self.biases[i] = np.asarray(values, dtype=float).reshape(self.biases[i].shape).copy()

    def log_policy_gradients(self, states: np.ndarray, actions: np.ndarray,
                             rng: Optional[np.random.Generator] = None,
                             action_probs: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
        probs, inputs, pre = self.forward(states)
        actions = np.asarray(actions, dtype=int).reshape(-1)
        delta = -probs
        delta[np.arange(actions.size), actions] += 1.0
        grads: Dict[str, np.ndarray] = {}
        for i in reversed(range(len(self.weights))):
            grads[f"W{i}"] = np.einsum("bi,bo->bio", inputs[i], delta).reshape(actions.size, -1)
            grads[f"b{i}"] = delta.copy()
            if i > 0:
                delta = (delta @ self.weights[i].T) * (pre[i - 1] > 0)
        return {name: grads[name] for name in self.group_names}


def mlp_forward_backward(mlp: MlpPolicy, s: np.ndarray, a: int) -> Tuple[np.ndarray, np.ndarray]:
    """(pi(.|s), flat grad log pi(a|s)) in group order W0, b0, W1, b1, ..."""
    probs = mlp.probabilities(s)[0]
    grads = mlp.log_policy_gradients(np.atleast_2d(s), np.array([a]))
    return probs, np.concatenate([grads[name][0] for name in mlp.group_names])


class UniformPolicy:
    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    def probabilities(self, states: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(states))
        return np.full((rows.shape[0], self.n_actions), 1.0 / self.n_actions)


# --- rollouts -----------------------------------------------------------------

def episode_generators(rng: np.random.Generator, n_episodes: int) -> List[np.random.Generator]:
    """One independent generator per episode, derived from a single draw of rng"""
    root = np.random.SeedSequence(int(rng.integers(2 ** 63)))
    return [np.random.default_rng(child) for child in root.spawn(n_episodes)]


def _choose(probs: np.ndarray, rng: np.random.Generator, greedy: bool) -> int:
    if greedy:
        return int(np.argmax(probs))
    probs = np.clip(probs, 0.0, None)
    return int(rng.choice(probs.size, p=probs / probs.sum()))


def _run_lockstep(policy: Policy, envs: List[Environment], rngs: List[np.random.Generator],
                  horizon: Optional[int], greedy: bool) -> List[Trajectory]:
    n = len(envs)
    observations = [env.reset(rng) for env, rng in zip(envs, rngs)]
    records = [([], [], [], []) for _ in range(n)]
    active = list(range(n))
    observe = getattr(policy, "observe", None)
    while active:
        batch = np.stack([observations[i] for i in active])
        if observe is not None:
            observe(batch)
        probs = policy.probabilities(batch)
        still_active = []
        for row, i in enumerate(active):
            action = _choose(probs[row], rngs[i], greedy)
            states, actions, rewards, chosen = records[i]
            states.append(observations[i])
            actions.append(action)
            chosen.append(probs[row, action])
            result = envs[i].step(action, rngs[i])
            rewards.append(result.reward)
            observations[i] = result.observation
            if not result.done and (horizon is None or len(actions) < horizon):
                still_active.append(i)
        active = still_active
    return [Trajectory(np.array(s), np.array(a, dtype=int), np.array(r, dtype=float), np.array(p, dtype=float),
                       horizon=horizon or envs[0].horizon)
            for s, a, r, p in records]


def generate_episodes(policy: Policy, env: Environment, n_episodes: int, horizon: Optional[int],
                      rng: np.random.Generator, parallelism: int = 1, greedy: bool = False,
                      sequential: bool = False) -> List[Trajectory]:
    """
    Sample n_episodes trajectories with the policy.

    Episodes run in lockstep on independent copies of env, each driven by its
    own derived generator, so the batch is fully determined by rng and does not
    depend on parallelism. sequential=True instead runs them one after another
    on env itself, keeping whatever memory the environment carries.
    """
    if n_episodes < 1:
        raise ConfigurationError(f"n_episodes must be >= 1, got {n_episodes}")
    rngs = episode_generators(rng, n_episodes)
    if sequential:
        return [_run_lockstep(policy, [env], [r], horizon, greedy)[0] for r in rngs]
    envs = [copy.deepcopy(env) for _ in range(n_episodes)]
    if parallelism <= 1:
        return _run_lockstep(policy, envs, rngs, horizon, greedy)
    chunks = np.array_split(np.arange(n_episodes), min(parallelism, n_episodes))
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        futures = [pool.submit(_run_lockstep, policy, [envs[i] for i in c], [rngs[i] for i in c], horizon, greedy)
                   for c in chunks]
        return [traj for future in futures for traj in future.result()]


# --- gradient step ------------------------------------------------------------

@dataclass
class PolicyUpdate:
    gradient: Dict[str, np.ndarray]
    params: Dict[str, np.ndarray]
    excluded: int = 0


def _is_raw_pqc(policy) -> bool:
    config = getattr(policy, "config", None)
    return config is not None and getattr(config, "kind", None) is PolicyKind.RAW


def batch_gradient(policy, trajectories: Sequence[Trajectory], baseline=None,
                   rng: Optional[np.random.Generator] = None,
                   normalize_advantages: bool = False) -> Tuple[Dict[str, np.ndarray], int]:
    """
    Delta theta = (1/N) sum_i sum_t grad log pi(a_t|s_t) (G_t - V(s_t)); returns (gradient, excluded).

    N counts every episode of the batch, including raw-PQC episodes dropped
    for a degenerate probability.
    """
    kept = list(trajectories)
    excluded = 0
    if _is_raw_pqc(policy):
        kept = [t for t in trajectories if np.all(t.action_probs > DIVISION_FLOOR)]
        excluded = len(trajectories) - len(kept)
        if excluded:
            logger.warning(f"Excluded {excluded} episode(s) with a degenerate raw-PQC probability")
    groups = policy.parameter_groups()
    if not kept:
        return {name: np.zeros_like(v) for name, v in groups.items()}, excluded
    advantages = np.concatenate([
        t.returns - (baseline.predict(t) if baseline is not None else 0.0) for t in kept])
    if normalize_advantages and advantages.size > 1:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
    states = np.concatenate([np.asarray(t.states, dtype=float).reshape(t.length, -1) for t in kept])
    actions = np.concatenate([t.actions for t in kept])
    probs = np.concatenate([t.action_probs for t in kept])
    grads = policy.log_policy_gradients(states, actions, rng=rng, action_probs=probs)
    return {name: advantages @ grads[name] / len(trajectories) for name in groups}, excluded


def policy_gradient_step(policy, trajectories: Sequence[Trajectory], baseline, optimizer: AdamOptimizer,
                         rng: Optional[np.random.Generator] = None,
                         normalize_advantages: bool = False) -> PolicyUpdate:
    """One Adam ascent step on the REINFORCE gradient of the batch"""
    gradient, excluded = batch_gradient(policy, trajectories, baseline, rng, normalize_advantages)
    for name, g in gradient.items():
        if not np.all(np.isfinite(g)):
            raise NumericalBlowupError(f"Non-finite gradient in parameter group '{name}'")
    params = optimizer.step(policy.parameter_groups(), gradient)
    policy.set_parameter_groups(params)
    return PolicyUpdate(gradient, params, excluded)


# --- evaluation ---------------------------------------------------------------

@dataclass
class EvaluationResult:
    returns: np.ndarray
    values: np.ndarray
    lengths: np.ndarray

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns))

    @property
    def mean_value(self) -> float:
        return float(np.mean(self.values))

    @property
    def value_stderr(self) -> float:
        return float(np.std(self.values) / np.sqrt(max(1, self.values.size)))


def evaluate_policy(policy: Policy, env: Environment, n_episodes: int, rng: np.random.Generator,
                    gamma: float = 1.0, greedy: bool = False, horizon: Optional[int] = None,
                    sequential: bool = False, chunk: int = 1000) -> EvaluationResult:
    """Monte Carlo returns (undiscounted) and discounted values G_0 of n_episodes episodes"""
    returns, values, lengths = [], [], []
    remaining = n_episodes
    while remaining > 0:
        n = min(chunk, remaining)
        for traj in generate_episodes(policy, env, n, horizon, rng, greedy=greedy, sequential=sequential):
            traj = compute_returns(traj, gamma)
            returns.append(traj.total_reward)
            values.append(traj.returns[0] if traj.length else 0.0)
            lengths.append(traj.length)
        remaining -= n
    return EvaluationResult(np.array(returns), np.array(values), np.array(lengths))


# --- trainer ------------------------------------------------------------------

@dataclass
class EpisodeMetrics:
    episode: int
    total_reward: float
    moving_average: float
    beta: float
    wall_ms: float


class ReinforceTrainer:
    """Batches of episodes, returns, optional baseline fit, one Adam step per batch"""

    def __init__(self, policy, env: Environment, config: TrainerConfig, seed: int,
                 optimizer: Optional[AdamOptimizer] = None):
        self.policy = policy
        self.env = env
        self.config = config
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.optimizer = optimizer or AdamOptimizer(config.learning_rates(), frozen=config.freeze,
                                                    default_lr=config.lr_mlp)
        self.baseline = LinearFeatureBaseline(horizon=config.horizon or env.horizon) if config.baseline else None
        self.schedule = (AnnealSchedule(config.beta_final, config.episodes)
                         if config.beta_final is not None else None)
        self.metrics: List[EpisodeMetrics] = []
        self.excluded_episodes = 0
        self.last_batch: Dict[str, float] = {}

    def current_beta(self, episode: int) -> float:
        if self.schedule is not None:
            return anneal_beta(self.schedule, episode)
        return float(getattr(self.policy, "beta", 1.0))

    def train(self, on_batch: Optional[Callable[[List[EpisodeMetrics]], None]] = None) -> List[EpisodeMetrics]:
        config = self.config
        rewards: List[float] = []
        for start in range(0, config.episodes, config.batch_size):
            n = min(config.batch_size, config.episodes - start)
            beta = self.current_beta(start)
            if hasattr(self.policy, "beta"):
                self.policy.beta = beta
            began = time.perf_counter()
            trajectories = generate_episodes(self.policy, self.env, n, config.horizon, self.rng, config.parallelism)
            trajectories = [compute_returns(t, config.gamma) for t in trajectories]
            if self.baseline is not None:
                self.baseline.fit(trajectories)
            update = policy_gradient_step(self.policy, trajectories, self.baseline, self.optimizer, self.rng,
                                          config.normalize_advantages)
            elapsed_ms = (time.perf_counter() - began) * 1000.0 / n
            self.excluded_episodes += update.excluded
            batch_rewards = [t.total_reward for t in trajectories]
            rewards.extend(batch_rewards)
            averages = moving_average(rewards)
            new_rows = [EpisodeMetrics(start + i, batch_rewards[i], float(averages[start + i]), beta, elapsed_ms)
                        for i in range(n)]
            self.metrics.extend(new_rows)
            self.last_batch = {"first_episode": start, "mean_return": float(np.mean(batch_rewards)), "beta": beta}
            logger.info(f"seed {self.seed} episodes {start}-{start + n - 1}: mean return "
                        f"{np.mean(batch_rewards):.2f}, moving average {averages[-1]:.2f}, beta {beta:.3f}")
            if on_batch is not None:
                on_batch(new_rows)
        if self.excluded_episodes:
            logger.warning(f"seed {self.seed}: {self.excluded_episodes} episode(s) excluded over the run")
        return self.metrics
