"""
Discrete-logarithm concept class and its quantum feature classifier.

Instances are desk scale: logs are brute forced once per instance. The
feature states |phi(x)> (2^k consecutive powers starting at x) and |phi_s'>
(the (p-1)/2 powers starting at g^s') have inner products fixed by how much
their log-space intervals overlap, so every inner product is computed with
integer interval arithmetic on the circle Z_{p-1}.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import binom
from sympy.ntheory import is_primitive_root, isprime, primitive_root

from qrl_errors import ConfigurationError, DomainError, OracleRefusedError

logger = logging.getLogger(__name__)

MAX_BRUTE_FORCE_MODULUS = 2 ** 24


def mod_exp(base: int, exponent: int, modulus: int) -> int:
    """base**exponent mod modulus by square-and-multiply"""
    if modulus < 2:
        raise DomainError(f"modulus must be >= 2, got {modulus}")
    if exponent < 0:
        raise DomainError(f"exponent must be >= 0, got {exponent}")
    result = 1
    base %= modulus
    while exponent:
        if exponent & 1:
            result = (result * base) % modulus
        base = (base * base) % modulus
        exponent >>= 1
    return result


@dataclass(frozen=True)
class DlpInstance:
    """Concept f_s over Z_p^* for prime p, generator g and secret offset s"""
    p: int
    g: int
    s: int

    def __post_init__(self):
        if self.p < 3 or not isprime(self.p):
            raise DomainError(f"p must be an odd prime, got {self.p}")
        if not 1 <= self.g < self.p or not is_primitive_root(self.g, self.p):
            raise DomainError(f"{self.g} does not generate Z_{self.p}^*")
        if not 0 <= self.s < self.p - 1:
            raise DomainError(f"s must lie in [0, {self.p - 2}], got {self.s}")

    @classmethod
    def with_smallest_generator(cls, p: int, s: int) -> "DlpInstance":
        if p < 3 or not isprime(p):
            raise DomainError(f"p must be an odd prime, got {p}")
        return cls(p, int(primitive_root(p)), s)

    @property
    def order(self) -> int:
        return self.p - 1

    @property
    def half(self) -> int:
        """Length of the positive segment, (p-1)/2"""
        return (self.p - 1) // 2

    @property
    def n_bits(self) -> int:
        """ceil(log2(p - 1))"""
        return (self.p - 2).bit_length()

    @cached_property
    def powers(self) -> np.ndarray:
        """powers[y] = g^y mod p for y in [0, p-1)"""
        if self.p > MAX_BRUTE_FORCE_MODULUS:
            raise OracleRefusedError(f"p = {self.p} exceeds the brute-force limit {MAX_BRUTE_FORCE_MODULUS}")
        table = np.empty(self.order, dtype=np.int64)
        value = 1
        for y in range(self.order):
            table[y] = value
            value = (value * self.g) % self.p
        table.setflags(write=False)
        return table

    @cached_property
    def logs(self) -> np.ndarray:
        """logs[x] = log_g x for x in Z_p^*; logs[0] = -1"""
        table = np.full(self.p, -1, dtype=np.int64)
        table[self.powers] = np.arange(self.order)
        if np.any(table[1:] < 0):
            raise DomainError(f"{self.g} does not enumerate Z_{self.p}^*")
        table.setflags(write=False)
        return table

    def elements(self) -> np.ndarray:
        return np.arange(1, self.p, dtype=np.int64)

    def check_element(self, x: Union[int, np.ndarray]) -> np.ndarray:
        values = np.asarray(x, dtype=np.int64)
        if np.any((values < 1) | (values >= self.p)):
            raise DomainError(f"Element outside Z_{self.p}^*")
        return values

    def to_record(self, seed: Optional[int] = None) -> str:
        return f"{self.p} {self.g} {self.s}" + ("" if seed is None else f" {seed}")


def random_instance(p: int, rng: np.random.Generator, g: Optional[int] = None) -> DlpInstance:
    """Uniform secret s; smallest generator unless g is given"""
    s = int(rng.integers(0, p - 1))
    return DlpInstance(p, g, s) if g is not None else DlpInstance.with_smallest_generator(p, s)


def write_instances(path: str, instances: Sequence[Tuple[DlpInstance, Optional[int]]]) -> None:
    """One 'p g s [seed]' record per line"""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("# p g s seed\n")
        for instance, seed in instances:
            handle.write(instance.to_record(seed) + "\n")


def read_instances(path: str) -> List[Tuple[DlpInstance, Optional[int]]]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) not in (3, 4):
                raise ConfigurationError(f"{path}:{line_no}: expected 'p g s [seed]', got '{line}'")
            p, g, s = (int(v) for v in fields[:3])
            seed = int(fields[3]) if len(fields) == 4 else None
            records.append((DlpInstance(p, g, s), seed))
    return records


def discrete_log_bruteforce(x: int, instance: DlpInstance) -> int:
    """The unique y in Z_{p-1} with g^y = x mod p"""
    if instance.p > MAX_BRUTE_FORCE_MODULUS:
        raise OracleRefusedError(f"Refusing brute-force discrete log for p = {instance.p}")
    return int(instance.logs[int(instance.check_element(x))])


def labels(instance: DlpInstance, xs: np.ndarray) -> np.ndarray:
    """Vectorized f_s: +1 where (log x - s) mod (p-1) <= (p-3)/2"""
    xs = instance.check_element(xs)
    offset = (instance.logs[xs] - instance.s) % instance.order
    return np.where(offset <= (instance.p - 3) // 2, 1, -1)


def label(instance: DlpInstance, x: int) -> int:
    """f_s(x) in {+1, -1}"""
    return int(labels(instance, np.array([x]))[0])


# --- feature-state inner products ---------------------------------------------

def _check_k(instance: DlpInstance, k: int) -> int:
    if k < 0 or 2 ** k > instance.half:
        raise DomainError(f"2^k = 2^{k} must lie in [1, {instance.half}] for p = {instance.p}")
    return 2 ** k


def gap(instance: DlpInstance, k: int) -> float:
    """Delta = 2^(k+1) / (p-1)"""
    return 2 ** (k + 1) / instance.order


def overlap_counts(log_x: np.ndarray, s_prime: Union[int, np.ndarray], instance: DlpInstance, k: int) -> np.ndarray:
    """
    |[log x, log x + 2^k - 1] intersect [s', s' + (p-3)/2]| on the circle Z_{p-1}.
    Broadcasts over log_x and s_prime.
    """
    m = _check_k(instance, k)
    order, half = instance.order, instance.half
    d = (np.asarray(log_x, dtype=np.int64) - np.asarray(s_prime, dtype=np.int64)) % order
    end = d + m - 1
    direct = np.maximum(0, np.minimum(end, half - 1) - d + 1)
    wrapped = np.maximum(0, np.minimum(end, order + half - 1) - order + 1)
    return direct + wrapped


def feature_inner_product(x: int, s_prime: int, instance: DlpInstance, k: int) -> float:
    """|<phi(x)|phi_s'>|^2 = overlap^2 / (2^k (p-1)/2); either Delta or 0 away from segment boundaries"""
    m = _check_k(instance, k)
    overlap = int(overlap_counts(instance.logs[int(instance.check_element(x))], s_prime, instance, k))
    return overlap ** 2 / (m * instance.half)


def feature_inner_product_oracle(x: int, s_prime: int, instance: DlpInstance, k: int) -> float:
    """Same value from the explicit supports {x g^i} and {g^(s'+j)} built with mod_exp"""
    m = _check_k(instance, k)
    p, g = instance.p, instance.g
    feature = {(x * mod_exp(g, i, p)) % p for i in range(m)}
    segment = {mod_exp(g, s_prime + j, p) for j in range(instance.half)}
    return len(feature & segment) ** 2 / (m * instance.half)


# --- noise models -------------------------------------------------------------

@dataclass(frozen=True)
class BinomialShotNoise:
    """R single-shot measurements of the projector; estimate K/R with K ~ Binomial(R, value)"""
    shots: int

    def __post_init__(self):
        if self.shots < 1:
            raise ConfigurationError(f"shots must be >= 1, got {self.shots}")

    def estimate(self, values: np.ndarray, delta: float, rng: np.random.Generator) -> np.ndarray:
        return rng.binomial(self.shots, np.clip(values, 0.0, 1.0)) / self.shots

    def positive(self, values: np.ndarray, m: int, half: int, rng: np.random.Generator) -> np.ndarray:
        # K/R >= Delta/2  <=>  2 K half >= R m
        counts = rng.binomial(self.shots, np.clip(values, 0.0, 1.0))
        return 2 * counts * half >= self.shots * m

    def prob_positive(self, values: np.ndarray, m: int, half: int) -> np.ndarray:
        threshold = -(-self.shots * m // (2 * half))
        return binom.sf(threshold - 1, self.shots, np.clip(values, 0.0, 1.0))


@dataclass(frozen=True)
class BoundedUniformNoise:
    """Additive e ~ U[-a, a] with a = min(Delta, sqrt(3/R)): zero mean, variance <= 1/R, |e| <= Delta"""
    shots: int

    def __post_init__(self):
        if self.shots < 1:
            raise ConfigurationError(f"shots must be >= 1, got {self.shots}")

    def amplitude(self, delta: float) -> float:
        return min(delta, math.sqrt(3.0 / self.shots))

    def estimate(self, values: np.ndarray, delta: float, rng: np.random.Generator) -> np.ndarray:
        a = self.amplitude(delta)
        return np.asarray(values, dtype=float) + rng.uniform(-a, a, size=np.shape(values))

    def positive(self, values: np.ndarray, m: int, half: int, rng: np.random.Generator) -> np.ndarray:
        delta = m / half
        return self.estimate(values, delta, rng) >= delta / 2

    def prob_positive(self, values: np.ndarray, m: int, half: int) -> np.ndarray:
        delta = m / half
        a = self.amplitude(delta)
        return np.clip((np.asarray(values, dtype=float) + a - delta / 2) / (2 * a), 0.0, 1.0)


NoiseModel = Union[BinomialShotNoise, BoundedUniformNoise]


def make_noise(kind: str, shots: Optional[int]) -> Optional[NoiseModel]:
    """None shots means noiseless"""
    if shots is None:
        return None
    if kind == "binomial":
        return BinomialShotNoise(int(shots))
    if kind == "bounded-uniform":
        return BoundedUniformNoise(int(shots))
    raise ConfigurationError(f"Unknown noise model '{kind}'")


def noisy_inner_product(true_value: float, shots: int, rng: np.random.Generator) -> float:
    """Binomial(R, value) / R"""
    if not 0.0 <= true_value <= 1.0:
        raise DomainError(f"Inner product must lie in [0, 1], got {true_value}")
    if shots < 1:
        raise DomainError(f"shots must be >= 1, got {shots}")
    return float(rng.binomial(shots, true_value) / shots)


def _classify_overlaps(overlaps: np.ndarray, m: int, half: int, noise: Optional[NoiseModel],
                       rng: Optional[np.random.Generator]) -> np.ndarray:
    if noise is None:
        # value / Delta >= 1/2  <=>  2 overlap^2 >= m^2
        return np.where(2 * overlaps.astype(np.int64) ** 2 >= m * m, 1, -1)
    if rng is None:
        raise ConfigurationError("Noisy classification needs a random generator")
    values = overlaps.astype(float) ** 2 / (m * half)
    return np.where(noise.positive(values, m, half, rng), 1, -1)


def classify(x: int, s_prime: int, instance: DlpInstance, k: int,
             noise: Optional[NoiseModel] = None, rng: Optional[np.random.Generator] = None) -> int:
    """h_s'(x): +1 if |<phi(x)|phi_s'>|^2 / Delta >= 1/2, else -1"""
    m = _check_k(instance, k)
    overlap = overlap_counts(np.array([instance.logs[int(instance.check_element(x))]]), s_prime, instance, k)
    return int(_classify_overlaps(overlap, m, instance.half, noise, rng)[0])


def classify_many(xs: np.ndarray, s_prime: int, instance: DlpInstance, k: int,
                  noise: Optional[NoiseModel] = None, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    m = _check_k(instance, k)
    overlaps = overlap_counts(instance.logs[instance.check_element(xs)], s_prime, instance, k)
    return _classify_overlaps(overlaps, m, instance.half, noise, rng)


def classifier_accuracy(instance: DlpInstance, s_prime: int, k: int,
                        noise: Optional[NoiseModel] = None) -> float:
    """
    Accuracy of h_s' against f_s over all of Z_p^*.
    With a noise model this is the exact expected accuracy of one noisy evaluation per point.
    """
    m = _check_k(instance, k)
    xs = instance.elements()
    truth = labels(instance, xs)
    overlaps = overlap_counts(instance.logs[xs], s_prime, instance, k)
    if noise is None:
        return float(np.mean(_classify_overlaps(overlaps, m, instance.half, None, None) == truth))
    values = overlaps.astype(float) ** 2 / (m * instance.half)
    p_positive = noise.prob_positive(values, m, instance.half)
    return float(np.mean(np.where(truth == 1, p_positive, 1.0 - p_positive)))


def noiseless_matched_accuracy(instance: DlpInstance, k: int) -> float:
    """Exact accuracy of h_s with s' = s: 1 - Delta/2 + 1/(p-1) (2^k - 1 boundary errors)"""
    m = _check_k(instance, k)
    return 1.0 - (m - 1) / instance.order


# --- training -----------------------------------------------------------------

def training_losses(instance: DlpInstance, xs: np.ndarray, ys: np.ndarray, k: int,
                    noise: Optional[NoiseModel] = None,
                    rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
    """(candidates, losses): 0-1 loss (1/2|X|) sum |h_c(x) - y| for every candidate c = log x, x in X"""
    m = _check_k(instance, k)
    logs = instance.logs[instance.check_element(xs)]
    candidates = logs.copy()
    overlaps = overlap_counts(logs[None, :], candidates[:, None], instance, k)
    predictions = _classify_overlaps(overlaps, m, instance.half, noise, rng)
    losses = np.abs(predictions - np.asarray(ys)[None, :]).sum(axis=1) / (2 * len(xs))
    return candidates, losses


def train_classifier(instance: DlpInstance, training_set: Sequence[int], k: int,
                     shots: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                     noise_kind: str = "binomial", training_labels: Optional[Sequence[int]] = None) -> int:
    """
    argmin over candidates s' = log x (x in X) of the noisy training loss.
    Ties go to the smallest candidate. shots=None evaluates noiselessly.
    """
    xs = np.asarray(list(training_set), dtype=np.int64)
    if xs.size == 0:
        raise ConfigurationError("Training set is empty")
    ys = labels(instance, xs) if training_labels is None else np.asarray(training_labels, dtype=int)
    if ys.shape != xs.shape:
        raise ConfigurationError(f"{ys.size} labels for {xs.size} training points")
    noise = make_noise(noise_kind, shots)
    candidates, losses = training_losses(instance, xs, ys, k, noise, rng)
    best = np.lexsort((candidates, losses))[0]
    logger.debug(f"Trained s' = {candidates[best]} with training loss {losses[best]:.4f} over {xs.size} points")
    return int(candidates[best])


def sample_training_set(instance: DlpInstance, size: int, rng: np.random.Generator) -> np.ndarray:
    """size i.i.d. uniform draws from Z_p^*"""
    return rng.integers(1, instance.p, size=size)


def theorem_parameters(n: int, epsilon: float, delta: float,
                       lemma_epsilon: Optional[float] = None) -> Dict[str, float]:
    """
    Asymptotic lower bounds on t, c, |X| = n^c and R for an (epsilon, delta) guarantee.
    lemma_epsilon switches the log(1 - 2 n^-t) term of c to log(1 - 2 lemma_epsilon).
    """
    if n < 2 or not 0 < epsilon < 1 or not 0 < delta < 1:
        raise DomainError(f"Need n >= 2 and epsilon, delta in (0, 1); got {n}, {epsilon}, {delta}")
    log_n = math.log(n)
    t = max(3 * math.log(8 / delta) / log_n, math.log(16 / epsilon) / log_n)
    inner = 2 * n ** (-t) if lemma_epsilon is None else 2 * lemma_epsilon
    c = max(math.log(8 / delta) / log_n,
            math.log(math.log(delta / 2) / math.log(1 - inner)) / log_n)
    return {
        "t": t,
        "c": c,
        "training_size": n ** c,
        "shots": max(4 * n ** (2 * (t + c)) / delta, 128 / epsilon ** 3),
    }


def desk_interval_exponent(instance: DlpInstance, t: Optional[float] = None) -> int:
    """k = floor(n - t log2 n) when t is given and that is admissible, else the largest k with 2^k <= (p-1)/4"""
    largest = max(0, int(math.floor(math.log2(max(1, instance.order // 4)))))
    if t is None:
        return largest
    n = instance.n_bits
    k = int(math.floor(n - t * math.log2(n)))
    return k if 0 <= k <= largest else largest


# --- value bounds -------------------------------------------------------------

@dataclass(frozen=True)
class BoundReport:
    accuracy: float
    slip: float
    gamma: float
    upper: float
    lower: float
    gap: float
    random_value: float


def cliffwalk_bounds(accuracy: float, slip: float, gamma: float) -> BoundReport:
    """Upper (x-1)/(1-x gamma delta), lower (x-1)/(1-gamma) and g = upper + 1/(2-gamma)"""
    if not 0.0 <= accuracy <= 1.0:
        raise DomainError(f"accuracy must lie in [0, 1], got {accuracy}")
    if not 0.0 <= slip <= 1.0:
        raise DomainError(f"slip must lie in [0, 1], got {slip}")
    if not 0.0 <= gamma < 1.0:
        raise DomainError(f"gamma must lie in [0, 1), got {gamma}")
    if accuracy * gamma * slip >= 1.0:
        raise DomainError("accuracy * gamma * slip must be < 1")
    upper = (accuracy - 1.0) / (1.0 - accuracy * gamma * slip)
    lower = (accuracy - 1.0) / (1.0 - gamma)
    random_value = -1.0 / (2.0 - gamma)
    return BoundReport(accuracy, slip, gamma, upper, lower, upper - random_value, random_value)


# --- agents -------------------------------------------------------------------

class DlpAgentPolicy:
    """
    Action map built on h_s'. Action 0 answers +1, action 1 answers -1.

    With noise, the returned probabilities are the exact distribution of a
    majority vote over `votes` independent noisy classifications, so sampling
    from them is the same as running the boosted classifier.
    """

    def __init__(self, instance: DlpInstance, s_prime: int, k: int, shots: Optional[int] = None,
                 votes: int = 1, noise_kind: str = "binomial"):
        if votes < 1 or votes % 2 == 0:
            raise ConfigurationError(f"votes must be a positive odd number, got {votes}")
        _check_k(instance, k)
        self.instance = instance
        self.s_prime = int(s_prime)
        self.k = k
        self.votes = votes
        self.noise = make_noise(noise_kind, shots)

    n_actions = 2

    def positive_probability(self, xs: np.ndarray) -> np.ndarray:
        m = 2 ** self.k
        overlaps = overlap_counts(self.instance.logs[xs], self.s_prime, self.instance, self.k)
        if self.noise is None:
            return np.where(2 * overlaps ** 2 >= m * m, 1.0, 0.0)
        single = self.noise.prob_positive(overlaps.astype(float) ** 2 / (m * self.instance.half), m, self.instance.half)
        return binom.sf(self.votes // 2, self.votes, single)

    def probabilities(self, states: np.ndarray) -> np.ndarray:
        """(B, 2); rows whose first component is not in Z_p^* (limbo) answer +1"""
        xs = np.atleast_2d(np.asarray(states))[:, 0].astype(np.int64)
        valid = (xs >= 1) & (xs < self.instance.p)
        positive = np.ones(xs.shape[0])
        if np.any(valid):
            positive[valid] = self.positive_probability(xs[valid])
        return np.stack([positive, 1.0 - positive], axis=1)

    def act(self, x: int, rng: np.random.Generator) -> int:
        """Sample the boosted answer by actually running the noisy votes"""
        if self.noise is None:
            return 0 if classify(x, self.s_prime, self.instance, self.k) == 1 else 1
        ballots = classify_many(np.full(self.votes, x), self.s_prime, self.instance, self.k, self.noise, rng)
        return 0 if ballots.sum() > 0 else 1


class DeterministicDlpLearner:
    """
    Online agent for the Deterministic-DLP chain. Rollouts feed every
    observation to observe(): labeled training states go to memory, and the
    test state (label 0) triggers a fit of h_s' on what was recorded.
    probabilities() only reads the fitted s' and never changes state.
    """

    def __init__(self, p: int, g: int, k: int, shots: Optional[int] = None,
                 noise_kind: str = "binomial", seed: int = 0):
        # s is unknown to the learner; 0 only fixes a valid instance for log lookups
        self.instance = DlpInstance(p, g, 0)
        self.k = k
        self.shots = shots
        self.noise_kind = noise_kind
        self.rng = np.random.default_rng(seed)
        self.memory: Dict[int, int] = {}
        self.s_prime: Optional[int] = None

    n_actions = 2

    def observe(self, states: np.ndarray) -> None:
        rows = np.atleast_2d(np.asarray(states)).astype(np.int64)
        test_seen = False
        for x, y in rows[:, :2]:
            if x <= 0:
                continue
            if y != 0:
                self.memory[int(x)] = int(y)
            else:
                test_seen = True
        if test_seen and self.memory:
            xs = list(self.memory)
            self.s_prime = train_classifier(self.instance, xs, self.k, self.shots, self.rng,
                                            self.noise_kind, [self.memory[x_] for x_ in xs])

    def probabilities(self, states: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(states)).astype(np.int64)
        out = np.tile(np.array([1.0, 0.0]), (rows.shape[0], 1))
        if self.s_prime is None:
            return out
        agent = DlpAgentPolicy(self.instance, self.s_prime, self.k)
        for i, (x, y) in enumerate(rows[:, :2]):
            if x > 0 and y == 0:
                out[i] = agent.probabilities(np.array([[x]]))[0]
        return out
