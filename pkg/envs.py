"""
Episodic task environments behind one reset/step protocol.

Classical control: CartPole, MountainCar (shaped reward), Acrobot.
Discrete: CognitiveRadio, SL-PQC, Cliffwalk-PQC, SL-DLP, Cliffwalk-DLP,
Deterministic-DLP.

Binary tasks map action 0 to label +1 and action 1 to label -1.
"""

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from dlp import DlpInstance, labels as dlp_labels, random_instance
from pqc import Entangler, ParamVector, PqcTopology, observable_expectation
from qrl_errors import (
    ConfigurationError,
    DegenerateGeneratorError,
    NumericalBlowupError,
    ProtocolError,
)
from qsim import ObservableSpec, PauliTerm

logger = logging.getLogger(__name__)


def action_for_label(y: int) -> int:
    return 0 if y == 1 else 1


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    truncated: bool = False


class Environment:
    """
    Base class. Subclasses implement _reset and _step; the base enforces
    the protocol (reset before step, no step after done) and the horizon.
    """
    env_id = "base"
    n_actions = 2
    observation_dim = 1
    # divisor applied by PQC policies before encoding
    observation_scale: Optional[Tuple[float, ...]] = None

    def __init__(self, horizon: int):
        if horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {horizon}")
        self.horizon = int(horizon)
        self.steps = 0
        self.done = True

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.steps = 0
        self.done = False
        return np.asarray(self._reset(rng), dtype=float)

    def step(self, action: int, rng: np.random.Generator) -> StepResult:
        if self.done:
            raise ProtocolError(f"{self.env_id}: step called on a finished episode; call reset first")
        if not 0 <= int(action) < self.n_actions:
            raise ConfigurationError(f"{self.env_id}: action {action} outside [0, {self.n_actions})")
        result = self._step(int(action), rng)
        self.steps += 1
        truncated = not result.done and self.steps >= self.horizon
        self.done = result.done or truncated
        return StepResult(np.asarray(result.observation, dtype=float), float(result.reward), self.done, truncated)

    def _reset(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def _step(self, action: int, rng: np.random.Generator) -> StepResult:
        raise NotImplementedError


# --- classical control dynamics -----------------------------------------------

@dataclass(frozen=True)
class CartPoleConstants:
    gravity: float = 9.8
    masscart: float = 1.0
    masspole: float = 0.1
    length: float = 0.5
    force_mag: float = 10.0
    tau: float = 0.02
    theta_threshold: float = 12 * 2 * np.pi / 360
    x_threshold: float = 2.4


@dataclass(frozen=True)
class MountainCarConstants:
    min_position: float = -1.2
    max_position: float = 0.6
    max_speed: float = 0.07
    goal_position: float = 0.5
    goal_velocity: float = 0.0
    force: float = 0.001
    gravity: float = 0.0025
    # reward = -1 + height_coef * (sin(3x) + 1) / 2, plus goal_bonus on reaching the goal
    height_coef: float = 0.5
    goal_bonus: float = 100.0


@dataclass(frozen=True)
class AcrobotConstants:
    dt: float = 0.2
    link_length_1: float = 1.0
    link_mass_1: float = 1.0
    link_mass_2: float = 1.0
    link_com_pos_1: float = 0.5
    link_com_pos_2: float = 0.5
    link_moi: float = 1.0
    max_vel_1: float = 4 * np.pi
    max_vel_2: float = 9 * np.pi
    gravity: float = 9.8


DYNAMICS_CONSTANTS = {
    "cartpole": CartPoleConstants,
    "mountaincar": MountainCarConstants,
    "acrobot": AcrobotConstants,
}


def _cartpole_step(state: np.ndarray, action: int, c: CartPoleConstants) -> StepResult:
    x, x_dot, theta, theta_dot = state
    force = c.force_mag if action == 1 else -c.force_mag
    total_mass = c.masspole + c.masscart
    polemass_length = c.masspole * c.length
    costheta, sintheta = np.cos(theta), np.sin(theta)
    temp = (force + polemass_length * theta_dot ** 2 * sintheta) / total_mass
    thetaacc = (c.gravity * sintheta - costheta * temp) / (
        c.length * (4.0 / 3.0 - c.masspole * costheta ** 2 / total_mass))
    xacc = temp - polemass_length * thetaacc * costheta / total_mass
    x = x + c.tau * x_dot
    x_dot = x_dot + c.tau * xacc
    theta = theta + c.tau * theta_dot
    theta_dot = theta_dot + c.tau * thetaacc
    new_state = np.array([x, x_dot, theta, theta_dot])
    done = bool(abs(x) > c.x_threshold or abs(theta) > c.theta_threshold)
    return StepResult(new_state, 1.0, done)


def mountaincar_height(position: float) -> float:
    """Normalized hill height in [0, 1]"""
    return (np.sin(3 * position) + 1.0) / 2


def _mountaincar_step(state: np.ndarray, action: int, c: MountainCarConstants) -> StepResult:
    position, velocity = state
    velocity += (action - 1) * c.force + np.cos(3 * position) * (-c.gravity)
    velocity = float(np.clip(velocity, -c.max_speed, c.max_speed))
    position += velocity
    position = float(np.clip(position, c.min_position, c.max_position))
    if position == c.min_position and velocity < 0:
        velocity = 0.0
    done = bool(position >= c.goal_position and velocity >= c.goal_velocity)
    reward = -1.0 + c.height_coef * mountaincar_height(position) + (c.goal_bonus if done else 0.0)
    return StepResult(np.array([position, velocity]), reward, done)


def _wrap(x: float, low: float, high: float) -> float:
    span = high - low
    while x > high:
        x -= span
    while x < low:
        x += span
    return x


def _acrobot_derivatives(augmented: np.ndarray, c: AcrobotConstants) -> np.ndarray:
    m1, m2 = c.link_mass_1, c.link_mass_2
    l1, lc1, lc2 = c.link_length_1, c.link_com_pos_1, c.link_com_pos_2
    i1 = i2 = c.link_moi
    g = c.gravity
    theta1, theta2, dtheta1, dtheta2, torque = augmented
    d1 = m1 * lc1 ** 2 + m2 * (l1 ** 2 + lc2 ** 2 + 2 * l1 * lc2 * np.cos(theta2)) + i1 + i2
    d2 = m2 * (lc2 ** 2 + l1 * lc2 * np.cos(theta2)) + i2
    phi2 = m2 * lc2 * g * np.cos(theta1 + theta2 - np.pi / 2.0)
    phi1 = (-m2 * l1 * lc2 * dtheta2 ** 2 * np.sin(theta2)
            - 2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * np.sin(theta2)
            + (m1 * lc1 + m2 * l1) * g * np.cos(theta1 - np.pi / 2) + phi2)
    ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 ** 2 * np.sin(theta2) - phi2) / (
        m2 * lc2 ** 2 + i2 - d2 ** 2 / d1)
    ddtheta1 = -(d2 * ddtheta2 + phi1) / d1
    return np.array([dtheta1, dtheta2, ddtheta1, ddtheta2, 0.0])


def _acrobot_step(state: np.ndarray, action: int, c: AcrobotConstants) -> StepResult:
    torque = float(action - 1)
    y0 = np.append(np.asarray(state, dtype=float), torque)
    h = c.dt
    # one classical RK4 step over [0, dt]
    k1 = _acrobot_derivatives(y0, c)
    k2 = _acrobot_derivatives(y0 + h / 2 * k1, c)
    k3 = _acrobot_derivatives(y0 + h / 2 * k2, c)
    k4 = _acrobot_derivatives(y0 + h * k3, c)
    ns = (y0 + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))[:4]
    ns[0] = _wrap(ns[0], -np.pi, np.pi)
    ns[1] = _wrap(ns[1], -np.pi, np.pi)
    ns[2] = np.clip(ns[2], -c.max_vel_1, c.max_vel_1)
    ns[3] = np.clip(ns[3], -c.max_vel_2, c.max_vel_2)
    done = bool(-np.cos(ns[0]) - np.cos(ns[1] + ns[0]) > 1.0)
    return StepResult(ns, 0.0 if done else -1.0, done)


_DYNAMICS: Dict[str, Callable[[np.ndarray, int, Any], StepResult]] = {
    "cartpole": _cartpole_step,
    "mountaincar": _mountaincar_step,
    "acrobot": _acrobot_step,
}


def classical_dynamics_step(kind: str, state: np.ndarray, action: int, constants: Any = None) -> StepResult:
    """
    One integration step of a classical benchmark. The observation of the
    result is the new internal state; horizons are handled by the environment.
    """
    if kind not in _DYNAMICS:
        raise ConfigurationError(f"Unknown dynamics '{kind}', expected one of {sorted(_DYNAMICS)}")
    state = np.asarray(state, dtype=float)
    if not np.all(np.isfinite(state)):
        raise NumericalBlowupError(f"{kind}: non-finite state {state}")
    result = _DYNAMICS[kind](state, int(action), constants or DYNAMICS_CONSTANTS[kind]())
    if not np.all(np.isfinite(result.observation)):
        raise NumericalBlowupError(f"{kind}: integration produced a non-finite state")
    return result


def _constants(kind: str, overrides: Optional[Dict[str, float]]) -> Any:
    base = DYNAMICS_CONSTANTS[kind]()
    if not overrides:
        return base
    known = {f.name for f in fields(base)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigurationError(f"Unknown {kind} constants: {sorted(unknown)}")
    return replace(base, **{k: float(v) for k, v in overrides.items()})


class CartPoleEnv(Environment):
    env_id = "cartpole"
    n_actions = 2
    observation_dim = 4
    observation_scale = (2.4, 2.5, 0.21, 2.5)

    def __init__(self, horizon: int = 500, constants: Optional[Dict[str, float]] = None):
        super().__init__(horizon)
        self.constants = _constants("cartpole", constants)
        self.state = np.zeros(4)

    def _reset(self, rng):
        self.state = rng.uniform(-0.05, 0.05, size=4)
        return self.state.copy()

    def _step(self, action, rng):
        result = classical_dynamics_step("cartpole", self.state, action, self.constants)
        self.state = result.observation
        return result


class MountainCarEnv(Environment):
    env_id = "mountaincar"
    n_actions = 3
    observation_dim = 2
    observation_scale = (1.2, 0.07)

    def __init__(self, horizon: int = 200, constants: Optional[Dict[str, float]] = None):
        super().__init__(horizon)
        self.constants = _constants("mountaincar", constants)
        self.state = np.zeros(2)

    def _reset(self, rng):
        self.state = np.array([rng.uniform(-0.6, -0.4), 0.0])
        return self.state.copy()

    def _step(self, action, rng):
        result = classical_dynamics_step("mountaincar", self.state, action, self.constants)
        self.state = result.observation
        return result


class AcrobotEnv(Environment):
    """Observation (cos t1, sin t1, cos t2, sin t2, dt1, dt2)"""
    env_id = "acrobot"
    n_actions = 3
    observation_dim = 6
    observation_scale = (1.0, 1.0, 1.0, 1.0, 4 * np.pi, 9 * np.pi)

    def __init__(self, horizon: int = 500, constants: Optional[Dict[str, float]] = None):
        super().__init__(horizon)
        self.constants = _constants("acrobot", constants)
        self.state = np.zeros(4)

    def _observe(self) -> np.ndarray:
        t1, t2, d1, d2 = self.state
        return np.array([np.cos(t1), np.sin(t1), np.cos(t2), np.sin(t2), d1, d2])

    def _reset(self, rng):
        self.state = rng.uniform(-0.1, 0.1, size=4)
        return self._observe()

    def _step(self, action, rng):
        result = classical_dynamics_step("acrobot", self.state, action, self.constants)
        self.state = result.observation
        return StepResult(self._observe(), result.reward, result.done)


# --- CognitiveRadio -----------------------------------------------------------

class CognitiveRadioEnv(Environment):
    """
    One of n channels is occupied and the occupation moves to the next
    channel every `period` steps. Picking the occupied channel costs -1,
    any other channel earns +1.
    """
    env_id = "cognitive-radio"

    def __init__(self, n_channels: int = 2, period: int = 1, horizon: int = 100):
        super().__init__(horizon)
        if n_channels < 2:
            raise ConfigurationError(f"n_channels must be >= 2, got {n_channels}")
        if period < 1:
            raise ConfigurationError(f"period must be >= 1, got {period}")
        self.n_channels = int(n_channels)
        self.period = int(period)
        self.n_actions = self.n_channels
        self.observation_dim = self.n_channels
        # binary occupations are encoded as angles 0 or pi
        self.observation_scale = tuple([1.0 / np.pi] * self.n_channels)
        self.occupied = 0

    def _observe(self) -> np.ndarray:
        occupation = np.zeros(self.n_channels)
        occupation[self.occupied] = 1.0
        return occupation

    def _reset(self, rng):
        self.occupied = int(rng.integers(self.n_channels))
        return self._observe()

    def _step(self, action, rng):
        reward = -1.0 if action == self.occupied else 1.0
        if (self.steps + 1) % self.period == 0:
            self.occupied = (self.occupied + 1) % self.n_channels
        return StepResult(self._observe(), reward, False)


# --- PQC-generated environments -----------------------------------------------

ZZ_OBSERVABLE = ObservableSpec.single(PauliTerm.z(0, 1))


@dataclass
class PqcEnvSpec:
    """Labeling circuit and its margin-filtered dataset"""
    generator_topology: PqcTopology
    generator_params: ParamVector
    points: np.ndarray
    labels: np.ndarray
    margin: float = 0.3
    episode_len: int = 20
    seed: int = 0
    path: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def label_values(self, points: np.ndarray) -> np.ndarray:
        """<ZZ> of the generator at each point"""
        return observable_expectation(np.atleast_2d(points), self.generator_params,
                                      self.generator_topology, ZZ_OBSERVABLE)


GENERATOR_TOPOLOGY = PqcTopology(n_qubits=2, d_enc=4, input_dim=2, entangler=Entangler.ONE_TO_ONE)


def _sample_dataset(topology: PqcTopology, params: ParamVector, rng: np.random.Generator,
                    per_label: int, half_margin: float, max_draws: int, chunk: int = 2000) -> Tuple[np.ndarray, np.ndarray]:
    positives: List[np.ndarray] = []
    negatives: List[np.ndarray] = []
    draws = 0
    while len(positives) < per_label or len(negatives) < per_label:
        if draws >= max_draws:
            raise DegenerateGeneratorError(
                f"Found {len(positives)}/{len(negatives)} margin points after {draws} draws")
        candidates = rng.uniform(0.0, 2 * np.pi, size=(chunk, 2))
        draws += chunk
        values = observable_expectation(candidates, params, topology, ZZ_OBSERVABLE)
        for point, value in zip(candidates, values):
            if value >= half_margin and len(positives) < per_label:
                positives.append(point)
            elif value <= -half_margin and len(negatives) < per_label:
                negatives.append(point)
    points = np.array(positives + negatives)
    labels = np.array([1] * per_label + [-1] * per_label)
    return points, labels


def generate_pqc_env(seed: int, margin: float = 0.3, per_label: int = 10, episode_len: int = 20,
                     max_draws: int = 10 ** 6, max_generators: int = 10) -> PqcEnvSpec:
    """
    Sample a random raw-PQC labeling function (phi ~ U[0, 2pi], lam = 1) and
    a dataset of per_label points per label with |<ZZ>| >= margin / 2.
    A generator that cannot produce the dataset within max_draws is resampled.
    """
    rng = np.random.default_rng(seed)
    topology = GENERATOR_TOPOLOGY
    for attempt in range(max_generators):
        params = ParamVector.initialize(topology, 0, rng)
        try:
            points, labels = _sample_dataset(topology, params, rng, per_label, margin / 2, max_draws)
        except DegenerateGeneratorError as e:
            logger.warning(f"Generator {attempt} for seed {seed} rejected: {e}")
            continue
        path = rng.permutation(len(points))
        logger.info(f"Generated PQC environment for seed {seed} after {attempt + 1} generator draw(s)")
        return PqcEnvSpec(topology, params, points, labels, margin, episode_len, seed, path)
    raise DegenerateGeneratorError(f"No usable generator for seed {seed} after {max_generators} attempts")


class SlPqcEnv(Environment):
    """Each step shows a uniformly drawn dataset point; +1 for the right label, -1 otherwise"""
    env_id = "sl-pqc"
    n_actions = 2
    observation_dim = 2

    def __init__(self, spec: PqcEnvSpec):
        super().__init__(spec.episode_len)
        self.spec = spec
        self.current = 0

    def _draw(self, rng):
        self.current = int(rng.integers(len(self.spec.points)))
        return self.spec.points[self.current].copy()

    def _reset(self, rng):
        return self._draw(rng)

    def _step(self, action, rng):
        correct = action == action_for_label(int(self.spec.labels[self.current]))
        return StepResult(self._draw(rng), 1.0 if correct else -1.0, False)


class CliffwalkPqcEnv(Environment):
    """
    Walks the dataset in the fixed order spec.path starting from its first
    point. A correct action earns +1 and moves on; a wrong one earns -1 and
    ends the episode.
    """
    env_id = "cliffwalk-pqc"
    n_actions = 2
    observation_dim = 2

    def __init__(self, spec: PqcEnvSpec):
        super().__init__(spec.episode_len)
        self.spec = spec
        self.position = 0

    def _point(self) -> np.ndarray:
        return self.spec.points[self.spec.path[self.position % len(self.spec.path)]].copy()

    def _reset(self, rng):
        self.position = 0
        return self._point()

    def _step(self, action, rng):
        index = self.spec.path[self.position % len(self.spec.path)]
        if action != action_for_label(int(self.spec.labels[index])):
            return StepResult(self._point(), -1.0, True)
        self.position += 1
        return StepResult(self._point(), 1.0, False)


# --- DLP environments ---------------------------------------------------------

class SlDlpEnv(Environment):
    """Uniform x in Z_p^*; +1 for answering f_s(x), -1 otherwise"""
    env_id = "sl-dlp"
    n_actions = 2
    observation_dim = 1

    def __init__(self, instance: DlpInstance, episode_len: int = 1):
        super().__init__(episode_len)
        self.instance = instance
        self.x = 1

    def _draw(self, rng):
        self.x = int(rng.integers(1, self.instance.p))
        return np.array([self.x])

    def _reset(self, rng):
        return self._draw(rng)

    def _step(self, action, rng):
        y = int(dlp_labels(self.instance, np.array([self.x]))[0])
        reward = 1.0 if action == action_for_label(y) else -1.0
        return StepResult(self._draw(rng), reward, False)


@dataclass(frozen=True)
class CliffwalkDlpConfig:
    instance: DlpInstance
    slip_delta: float = 0.0
    gamma: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.slip_delta <= 1.0:
            raise ConfigurationError(f"slip_delta must lie in [0, 1], got {self.slip_delta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1], got {self.gamma}")


class CliffwalkDlpEnv(Environment):
    """
    Circular chain over 1..p-1. Correct action: reward 0 and move to i+1
    (p-1 wraps to 1), or with probability slip_delta to a uniform state.
    Wrong action: reward -1 and the episode ends.
    """
    env_id = "cliffwalk-dlp"
    n_actions = 2
    observation_dim = 1

    def __init__(self, config: CliffwalkDlpConfig, horizon: int = 1000):
        super().__init__(horizon)
        self.config = config
        self.instance = config.instance
        self.labels = dlp_labels(self.instance, self.instance.elements())
        self.state = 1

    def _reset(self, rng):
        self.state = int(rng.integers(1, self.instance.p))
        return np.array([self.state])

    def _step(self, action, rng):
        if action != action_for_label(int(self.labels[self.state - 1])):
            return StepResult(np.array([self.state]), -1.0, True)
        if self.config.slip_delta > 0 and rng.random() < self.config.slip_delta:
            self.state = int(rng.integers(1, self.instance.p))
        else:
            self.state = self.state % (self.instance.p - 1) + 1
        return StepResult(np.array([self.state]), 0.0, False)


class DeterministicDlpEnv(Environment):
    """
    Chain of chain_length labeled training states followed by a test state.
    Observations: (x, f(x)) on training states, (x, 0) on the test state and
    (0, 0) in limbo. Answering the test state correctly earns +1 and returns
    to the chain start; a wrong answer leads to limbo, which absorbs with
    zero reward. With persistent_memory the chain position survives reset.
    """
    env_id = "deterministic-dlp"
    n_actions = 2
    observation_dim = 2

    def __init__(self, instance: DlpInstance, training_states: np.ndarray, test_state: int,
                 persistent_memory: bool = True):
        training_states = np.asarray(training_states, dtype=np.int64)
        super().__init__(len(training_states) + 1)
        self.instance = instance
        self.training_states = training_states
        self.training_labels = dlp_labels(instance, training_states) if training_states.size else np.zeros(0, int)
        self.test_state = int(test_state)
        self.test_label = int(dlp_labels(instance, np.array([self.test_state]))[0])
        self.persistent_memory = persistent_memory
        self.position = 0
        self.limbo = False

    @classmethod
    def sample(cls, instance: DlpInstance, rng: np.random.Generator, chain_length: Optional[int] = None,
               persistent_memory: bool = True) -> "DeterministicDlpEnv":
        k = min(instance.p - 1, 64) if chain_length is None else int(chain_length)
        xs = rng.integers(1, instance.p, size=k + 1)
        return cls(instance, xs[:k], int(xs[k]), persistent_memory)

    @property
    def chain_length(self) -> int:
        return len(self.training_states)

    def _observe(self) -> np.ndarray:
        if self.limbo:
            return np.array([0, 0])
        if self.position < self.chain_length:
            return np.array([self.training_states[self.position], self.training_labels[self.position]])
        return np.array([self.test_state, 0])

    def _reset(self, rng):
        if not self.persistent_memory:
            self.limbo = False
            self.position = 0
        return self._observe()

    def _step(self, action, rng):
        if self.limbo:
            return StepResult(self._observe(), 0.0, False)
        if self.position < self.chain_length:
            self.position += 1
            return StepResult(self._observe(), 0.0, False)
        if action == action_for_label(self.test_label):
            self.position = 0
            return StepResult(self._observe(), 1.0, False)
        self.limbo = True
        return StepResult(self._observe(), 0.0, False)


# --- factory ------------------------------------------------------------------

def _dlp_instance(params: Dict[str, Any], rng: np.random.Generator) -> DlpInstance:
    p = int(params.pop("p", 101))
    g = params.pop("g", None)
    s = params.pop("s", None)
    if s is None:
        return random_instance(p, rng, None if g is None else int(g))
    if g is None:
        return DlpInstance.with_smallest_generator(p, int(s))
    return DlpInstance(p, int(g), int(s))


def _build(env_id: str, params: Dict[str, Any], seed: int) -> Environment:
    rng = np.random.default_rng(seed)
    if env_id == "cartpole":
        return CartPoleEnv(**params)
    if env_id == "mountaincar":
        return MountainCarEnv(**params)
    if env_id == "acrobot":
        return AcrobotEnv(**params)
    if env_id == "cognitive-radio":
        return CognitiveRadioEnv(**params)
    if env_id in ("sl-pqc", "cliffwalk-pqc"):
        generator_seed = int(params.pop("generator_seed", seed))
        spec = generate_pqc_env(generator_seed, **params)
        return SlPqcEnv(spec) if env_id == "sl-pqc" else CliffwalkPqcEnv(spec)
    if env_id == "sl-dlp":
        instance = _dlp_instance(params, rng)
        return SlDlpEnv(instance, **params)
    if env_id == "cliffwalk-dlp":
        instance = _dlp_instance(params, rng)
        horizon = int(params.pop("horizon", 1000))
        return CliffwalkDlpEnv(CliffwalkDlpConfig(instance, **params), horizon)
    if env_id == "deterministic-dlp":
        instance = _dlp_instance(params, rng)
        return DeterministicDlpEnv.sample(instance, rng, **params)
    raise ConfigurationError(f"Unknown environment '{env_id}'")


ENVIRONMENT_IDS = ("cartpole", "mountaincar", "acrobot", "cognitive-radio", "sl-pqc", "cliffwalk-pqc",
                   "sl-dlp", "cliffwalk-dlp", "deterministic-dlp")


def make_environment(env_id: str, params: Optional[Dict[str, Any]] = None, seed: int = 0) -> Environment:
    """
    Build an environment from its id and parameters. seed drives the
    construction-time randomness (generator circuits, DLP instances and chains).
    """
    try:
        return _build(env_id, dict(params or {}), seed)
    except TypeError as e:
        raise ConfigurationError(f"Invalid parameters for environment '{env_id}': {e}") from e
