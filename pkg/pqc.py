"""
Parametrized quantum circuit policies.

Circuit layout: an H on every qubit, then alternating variational and
encoding layers U_var(phi_0) U_enc(s, lam_0) ... U_enc(s, lam_{D-1}) U_var(phi_D).
U_var applies Rz on every qubit, then Ry on every qubit, then the entangling
layer. U_enc applies Ry(lam * s_j) on every qubit, then Rz(lam * s_j), with
state components assigned round-robin over the 2n encoding slots.

Raw policies read Born probabilities of an action partition; softmax
policies take a softmax of beta * <O_a> with trainable observable weights.
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

from qrl_errors import ConfigurationError, DegenerateProbabilityError, QubitIndexError
from qsim import (
    ActionPartition,
    GateKind,
    GateOp,
    HermitianTerm,
    ObservableSpec,
    PauliTerm,
    ProjectorTerm,
    StateBatch,
    apply_term,
    evolve_amplitudes,
    init_zero_batch,
)

logger = logging.getLogger(__name__)

DIVISION_FLOOR = 1e-12
SHIFT = np.pi / 2


class Entangler(Enum):
    ONE_TO_ONE = "one-to-one"
    CIRCULAR = "circular"
    ALL_TO_ALL = "all-to-all"


class PolicyKind(Enum):
    RAW = "raw"
    SOFTMAX = "softmax"


class GradientMode(Enum):
    """How log-policy gradients are estimated"""
    EXACT = "exact"                      # adjoint pass over the statevector
    PARAMETER_SHIFT = "parameter-shift"  # two shifted circuits per parameter
    SHOTS = "shots"                      # parameter shift on R-shot estimates


@dataclass(frozen=True)
class PqcTopology:
    """Shape of the alternating-layer circuit"""
    n_qubits: int
    d_enc: int
    input_dim: int
    entangler: Entangler = Entangler.ONE_TO_ONE
    entangler_trainable: bool = False
    initial_hadamard: bool = True

    def __post_init__(self):
        if not 1 <= self.n_qubits <= 16:
            raise ConfigurationError(f"n_qubits must lie in [1, 16], got {self.n_qubits}")
        if self.d_enc < 0:
            raise ConfigurationError(f"d_enc must be >= 0, got {self.d_enc}")
        if self.input_dim < 0:
            raise ConfigurationError(f"input_dim must be >= 0, got {self.input_dim}")
        if self.d_enc > 0 and not 1 <= self.input_dim <= self.encoding_slots:
            raise ConfigurationError(
                f"input_dim {self.input_dim} needs 1..{self.encoding_slots} encoding slots on {self.n_qubits} qubits")
        if isinstance(self.entangler, str):
            object.__setattr__(self, "entangler", Entangler(self.entangler))

    @property
    def encoding_slots(self) -> int:
        return 2 * self.n_qubits

    @property
    def variational_layers(self) -> int:
        return self.d_enc + 1

    def entangling_pairs(self) -> List[Tuple[int, int]]:
        n = self.n_qubits
        if self.entangler is Entangler.ALL_TO_ALL:
            return list(itertools.combinations(range(n), 2))
        pairs = [(q, q + 1) for q in range(0, n - 1, 2)] + [(q, q + 1) for q in range(1, n - 1, 2)]
        if self.entangler is Entangler.CIRCULAR and n > 2:
            pairs.append((n - 1, 0))
        return pairs

    @property
    def phi_per_layer(self) -> int:
        trainable_pairs = len(self.entangling_pairs()) if self.entangler_trainable else 0
        return 2 * self.n_qubits + trainable_pairs

    @property
    def n_phi(self) -> int:
        return self.variational_layers * self.phi_per_layer

    @property
    def n_lam(self) -> int:
        return self.d_enc * self.encoding_slots


@dataclass
class ParamVector:
    """theta = (phi, lam, w)"""
    phi: np.ndarray
    lam: np.ndarray
    w: np.ndarray = field(default_factory=lambda: np.zeros(0))

    GROUPS = ("phi", "lam", "w")

    def __post_init__(self):
        self.phi = np.array(self.phi, dtype=float).reshape(-1)
        self.lam = np.array(self.lam, dtype=float).reshape(-1)
        self.w = np.array(self.w, dtype=float).reshape(-1)

    @classmethod
    def initialize(cls, topology: PqcTopology, n_weights: int, rng: np.random.Generator,
                   lam_init: float = 1.0, w_init: float = 1.0) -> "ParamVector":
        """phi ~ U[0, 2pi], lam and w constant"""
        return cls(
            phi=rng.uniform(0.0, 2 * np.pi, topology.n_phi),
            lam=np.full(topology.n_lam, float(lam_init)),
            w=np.full(n_weights, float(w_init)),
        )

    def check_sizes(self, topology: PqcTopology, n_weights: int) -> None:
        expected = (topology.n_phi, topology.n_lam, n_weights)
        actual = (self.phi.size, self.lam.size, self.w.size)
        if expected != actual:
            raise ConfigurationError(f"Parameter sizes (phi, lam, w) = {actual}, topology needs {expected}")

    @property
    def n_circuit(self) -> int:
        return self.phi.size + self.lam.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.phi, self.lam, self.w])

    def with_flat(self, values: np.ndarray) -> "ParamVector":
        values = np.asarray(values, dtype=float)
        if values.size != self.phi.size + self.lam.size + self.w.size:
            raise ConfigurationError(f"Flat vector of size {values.size} does not match parameter sizes")
        a, b = self.phi.size, self.phi.size + self.lam.size
        return ParamVector(values[:a].copy(), values[a:b].copy(), values[b:].copy())

    def groups(self) -> Dict[str, np.ndarray]:
        return {"phi": self.phi, "lam": self.lam, "w": self.w}

    def copy(self) -> "ParamVector":
        return ParamVector(self.phi.copy(), self.lam.copy(), self.w.copy())


@dataclass(frozen=True)
class PolicyConfig:
    """Raw policies need a partition; softmax policies need one observable per action"""
    kind: PolicyKind
    beta: float = 1.0
    partition: Optional[ActionPartition] = None
    observables: Optional[Tuple[ObservableSpec, ...]] = None

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.observables is not None:
            object.__setattr__(self, "observables", tuple(self.observables))
        if self.kind is PolicyKind.RAW and self.partition is None:
            raise ConfigurationError("Raw policy requires an action partition")
        if self.kind is PolicyKind.SOFTMAX:
            if not self.observables:
                raise ConfigurationError("Softmax policy requires one observable per action")
            if not self.beta > 0:
                raise ConfigurationError(f"beta must be > 0, got {self.beta}")

    @property
    def n_actions(self) -> int:
        if self.kind is PolicyKind.RAW:
            return self.partition.n_actions
        return len(self.observables)

    @property
    def n_weights(self) -> int:
        if self.kind is PolicyKind.RAW:
            return 0
        return sum(o.n_terms for o in self.observables)

    def validate(self, topology: PqcTopology) -> None:
        if self.kind is PolicyKind.RAW:
            self.partition.validate(topology.n_qubits)
        else:
            for obs in self.observables:
                obs.check_qubits(topology.n_qubits)


# --- circuit template ---------------------------------------------------------

FIXED, PHI, LAM = "fixed", "phi", "lam"


@dataclass(frozen=True)
class TemplateGate:
    """A gate slot: fixed, driven by phi[index], or by lam[index] * s[component]"""
    kind: GateKind
    targets: Tuple[int, ...]
    source: str = FIXED
    index: int = -1
    component: int = -1


@dataclass(frozen=True)
class CircuitTemplate:
    topology: PqcTopology
    gates: Tuple[TemplateGate, ...]

    @classmethod
    def for_topology(cls, topology: PqcTopology) -> "CircuitTemplate":
        return _template(topology)

    def gate_position(self, flat_index: int) -> int:
        """Position of the single gate driven by circuit parameter flat_index (phi then lam)"""
        n_phi = self.topology.n_phi
        if not 0 <= flat_index < n_phi + self.topology.n_lam:
            raise QubitIndexError(f"Circuit parameter index {flat_index} out of range")
        source, index = (PHI, flat_index) if flat_index < n_phi else (LAM, flat_index - n_phi)
        return self._positions()[(source, index)]

    def _positions(self) -> Dict[Tuple[str, int], int]:
        return {(g.source, g.index): pos for pos, g in enumerate(self.gates) if g.source != FIXED}

    def bind(self, rows: np.ndarray, phi: np.ndarray, lam: np.ndarray,
             shift_position: Optional[int] = None, shift: float = 0.0) -> List[GateOp]:
        """Concrete gates for a batch of inputs rows (B, d); encoding angles carry one value per row"""
        gates = []
        for pos, slot in enumerate(self.gates):
            if slot.source == FIXED:
                gates.append(GateOp(slot.kind, slot.targets))
                continue
            if slot.source == PHI:
                angle: Union[float, np.ndarray] = float(phi[slot.index])
            else:
                angle = lam[slot.index] * rows[:, slot.component]
            if pos == shift_position:
                angle = angle + shift
            gates.append(GateOp(slot.kind, slot.targets, angle))
        return gates


@lru_cache(maxsize=32)
def _template(topology: PqcTopology) -> CircuitTemplate:
    n = topology.n_qubits
    gates: List[TemplateGate] = []
    if topology.initial_hadamard:
        gates.extend(TemplateGate(GateKind.H, (q,)) for q in range(n))
    pairs = topology.entangling_pairs()

    def variational(layer: int) -> None:
        base = layer * topology.phi_per_layer
        gates.extend(TemplateGate(GateKind.RZ, (q,), PHI, base + q) for q in range(n))
        gates.extend(TemplateGate(GateKind.RY, (q,), PHI, base + n + q) for q in range(n))
        for k, pair in enumerate(pairs):
            if topology.entangler_trainable:
                gates.append(TemplateGate(GateKind.RZZ, pair, PHI, base + 2 * n + k))
            else:
                gates.append(TemplateGate(GateKind.CZ, pair))

    def encoding(layer: int) -> None:
        base = layer * topology.encoding_slots
        for slot in range(topology.encoding_slots):
            kind = GateKind.RY if slot < n else GateKind.RZ
            gates.append(TemplateGate(kind, (slot % n,), LAM, base + slot, slot % topology.input_dim))

    for layer in range(topology.d_enc):
        variational(layer)
        encoding(layer)
    variational(topology.d_enc)
    return CircuitTemplate(topology, tuple(gates))


def _as_rows(s: np.ndarray, input_dim: int) -> Tuple[np.ndarray, bool]:
    rows = np.asarray(s, dtype=float)
    single = rows.ndim <= 1
    rows = rows.reshape(1, -1) if single else rows
    if rows.shape[1] != input_dim:
        raise ConfigurationError(f"State has {rows.shape[1]} components, topology expects {input_dim}")
    return rows, single


def _check_circuit_sizes(topology: PqcTopology, phi: np.ndarray, lam: np.ndarray) -> None:
    if np.size(phi) != topology.n_phi or np.size(lam) != topology.n_lam:
        raise ConfigurationError(
            f"phi/lam sizes ({np.size(phi)}, {np.size(lam)}) do not match topology ({topology.n_phi}, {topology.n_lam})")


def build_circuit(topology: PqcTopology, s: np.ndarray, phi: np.ndarray, lam: np.ndarray) -> List[GateOp]:
    """Gate list for a single input state s"""
    _check_circuit_sizes(topology, phi, lam)
    rows, _ = _as_rows(s, topology.input_dim)
    gates = CircuitTemplate.for_topology(topology).bind(rows[:1], np.asarray(phi, float), np.asarray(lam, float))
    return [GateOp(g.kind, g.targets, float(np.asarray(g.angle).reshape(-1)[0])) if g.kind.parametrized else g
            for g in gates]


def prepare_states(topology: PqcTopology, rows: np.ndarray, params: ParamVector,
                   shift_position: Optional[int] = None, shift: float = 0.0) -> np.ndarray:
    """Amplitudes (B, 2**n) of the circuit applied to |0...0> for every input row"""
    _check_circuit_sizes(topology, params.phi, params.lam)
    template = CircuitTemplate.for_topology(topology)
    gates = template.bind(rows, params.phi, params.lam, shift_position, shift)
    zero = init_zero_batch(topology.n_qubits, rows.shape[0])
    return evolve_amplitudes(np.array(zero.amplitudes), gates, topology.n_qubits)


# --- expectation values -------------------------------------------------------

def _term_bank(observables: Sequence[ObservableSpec]) -> List[Tuple[int, float, HermitianTerm]]:
    """Flattened (action, coefficient, term) list; w is aligned with this order"""
    return [(a, coef, term) for a, obs in enumerate(observables) for coef, term in obs.terms]


def _real_rows(bra: np.ndarray, ket: np.ndarray) -> np.ndarray:
    return np.einsum("bi,bi->b", np.conj(bra), ket).real


def _term_values(amps: np.ndarray, bank, n_qubits: int) -> Tuple[np.ndarray, List[np.ndarray]]:
    applied = [apply_term(amps, term, n_qubits) for _, _, term in bank]
    values = np.stack([_real_rows(amps, h) for h in applied], axis=1) if applied else np.zeros((amps.shape[0], 0))
    return values, applied


def _action_values(term_values: np.ndarray, bank, w: np.ndarray, n_actions: int) -> np.ndarray:
    weighted = term_values * (w * np.array([coef for _, coef, _ in bank]))[None, :]
    out = np.zeros((term_values.shape[0], n_actions))
    for i, (a, _, _) in enumerate(bank):
        out[:, a] += weighted[:, i]
    return out


def _partition_values(amps: np.ndarray, partition: ActionPartition, n_qubits: int) -> np.ndarray:
    return np.abs(amps) ** 2 @ partition.indicator_matrix(n_qubits).T


def action_expectations(s: np.ndarray, params: ParamVector, topology: PqcTopology,
                        observables: Sequence[ObservableSpec]) -> np.ndarray:
    """<O_a> = sum_i w_{a,i} c_{a,i} <H_{a,i}>; shape (A,) or (B, A)"""
    rows, single = _as_rows(s, topology.input_dim)
    bank = _term_bank(observables)
    if params.w.size != len(bank):
        raise ConfigurationError(f"{len(bank)} observable terms but {params.w.size} weights")
    amps = prepare_states(topology, rows, params)
    values, _ = _term_values(amps, bank, topology.n_qubits)
    out = _action_values(values, bank, params.w, len(observables))
    return out[0] if single else out


def raw_policy(s: np.ndarray, params: ParamVector, topology: PqcTopology,
               partition: ActionPartition) -> np.ndarray:
    """pi(a|s) = <P_a>"""
    rows, single = _as_rows(s, topology.input_dim)
    probs = _partition_values(prepare_states(topology, rows, params), partition, topology.n_qubits)
    return probs[0] if single else probs


def softmax_policy(s: np.ndarray, params: ParamVector, topology: PqcTopology,
                   observables: Sequence[ObservableSpec], beta: float) -> np.ndarray:
    """pi(a|s) = softmax_a(beta * <O_a>)"""
    if not beta > 0:
        raise ConfigurationError(f"beta must be > 0, got {beta}")
    return softmax(beta * action_expectations(s, params, topology, observables), axis=-1)


def observable_expectation(s: np.ndarray, params: ParamVector, topology: PqcTopology,
                           obs: ObservableSpec, shift_position: Optional[int] = None,
                           shift: float = 0.0) -> np.ndarray:
    """<obs> per row using obs's own coefficients (no trainable weights)"""
    rows, single = _as_rows(s, topology.input_dim)
    amps = prepare_states(topology, rows, params, shift_position, shift)
    values, _ = _term_values(amps, _term_bank([obs]), topology.n_qubits)
    total = values @ obs.weights if obs.n_terms else np.zeros(rows.shape[0])
    return total[0] if single else total


def parameter_shift_derivative(s: np.ndarray, params: ParamVector, topology: PqcTopology,
                               obs: ObservableSpec, index: int, shift: float = SHIFT) -> float:
    """
    d<obs>/d theta_index for a phi or lam coordinate (flat index, phi first).

    For phi: (<obs>_{+shift} - <obs>_{-shift}) / 2.
    For lam_{i,j}: s_j times the same difference taken on the angle lam_{i,j} * s_j.
    The default shift of pi/2 makes this exact for the gate set.
    """
    if not 0 <= index < params.n_circuit:
        raise QubitIndexError(f"Parameter index {index} outside the {params.n_circuit} circuit parameters")
    template = CircuitTemplate.for_topology(topology)
    position = template.gate_position(index)
    plus = observable_expectation(s, params, topology, obs, position, shift)
    minus = observable_expectation(s, params, topology, obs, position, -shift)
    derivative = (plus - minus) / 2
    slot = template.gates[position]
    if slot.source == LAM:
        rows, _ = _as_rows(s, topology.input_dim)
        derivative = derivative * rows[0, slot.component]
    return float(np.asarray(derivative).reshape(-1)[0])


def observable_weight_derivative(s: np.ndarray, params: ParamVector, topology: PqcTopology,
                                 term: HermitianTerm) -> float:
    """d<O_a>/dw_{a,i} = <psi|H_{a,i}|psi>"""
    rows, _ = _as_rows(s, topology.input_dim)
    amps = prepare_states(topology, rows[:1], params)
    return float(_real_rows(amps, apply_term(amps, term, topology.n_qubits))[0])


# --- shot noise ---------------------------------------------------------------

def _sample_term_values(values: np.ndarray, terms: Sequence[HermitianTerm], shots: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Replace exact term expectations by R-shot estimates, column by column"""
    if shots < 1:
        raise ConfigurationError(f"shots must be >= 1, got {shots}")
    noisy = np.empty_like(values)
    for i, term in enumerate(terms):
        if isinstance(term, ProjectorTerm):
            p = np.clip(values[:, i], 0.0, 1.0)
            noisy[:, i] = rng.binomial(shots, p) / shots
        else:
            p = np.clip((1.0 + values[:, i]) / 2, 0.0, 1.0)
            noisy[:, i] = (2 * rng.binomial(shots, p) - shots) / shots
    return noisy


def noisy_expectation(s: np.ndarray, params: ParamVector, topology: PqcTopology, obs: ObservableSpec,
                      shots: int, rng: np.random.Generator) -> float:
    """Weighted sum of independent R-shot estimates of every term of obs"""
    rows, _ = _as_rows(s, topology.input_dim)
    amps = prepare_states(topology, rows[:1], params)
    values, _ = _term_values(amps, _term_bank([obs]), topology.n_qubits)
    noisy = _sample_term_values(values, obs.hermitian_terms, shots, rng)
    return float(noisy[0] @ obs.weights)


# --- log-policy gradients -----------------------------------------------------

def _adjoint_pass(topology: PqcTopology, rows: np.ndarray, params: ParamVector,
                  amps: np.ndarray, bra: np.ndarray) -> np.ndarray:
    """
    d<psi|O|psi>/d(phi, lam) per row, given bra = O|psi>.
    Walks the gates backwards once: g_k = Im <bra_k| G_k |ket_k>.
    """
    n = topology.n_qubits
    template = CircuitTemplate.for_topology(topology)
    gates = template.bind(rows, params.phi, params.lam)
    grads = np.zeros((rows.shape[0], params.n_circuit))
    ket = amps
    for slot, gate in zip(reversed(template.gates), reversed(gates)):
        if slot.source != FIXED:
            g = np.einsum("bi,bi->b", np.conj(bra), apply_term(ket, gate.generator(), n)).imag
            if slot.source == PHI:
                grads[:, slot.index] = g
            else:
                grads[:, topology.n_phi + slot.index] = g * rows[:, slot.component]
        inverse = gate.inverse()
        ket = evolve_amplitudes(ket, [inverse], n, check_norm=False)
        bra = evolve_amplitudes(bra, [inverse], n, check_norm=False)
    return grads


def _shift_jacobian(topology: PqcTopology, rows: np.ndarray, params: ParamVector,
                    evaluate: Callable[[np.ndarray], np.ndarray], shift: float = SHIFT) -> np.ndarray:
    """(B, A, P) derivatives of evaluate(amps) -> (B, A) by the parameter-shift rule"""
    template = CircuitTemplate.for_topology(topology)
    columns = []
    for index in range(params.n_circuit):
        position = template.gate_position(index)
        plus = evaluate(prepare_states(topology, rows, params, position, shift))
        minus = evaluate(prepare_states(topology, rows, params, position, -shift))
        column = (plus - minus) / 2
        slot = template.gates[position]
        if slot.source == LAM:
            column = column * rows[:, slot.component][:, None]
        columns.append(column)
    if not columns:
        return np.zeros((rows.shape[0], 0, 0))
    return np.stack(columns, axis=2)


def log_policy_gradients(states: np.ndarray, actions: np.ndarray, params: ParamVector,
                         topology: PqcTopology, config: PolicyConfig,
                         mode: GradientMode = GradientMode.EXACT, shots: int = 1000,
                         rng: Optional[np.random.Generator] = None,
                         beta: Optional[float] = None,
                         action_probs: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Rows of grad_theta log pi(a_b|s_b), shape (B, P).
    P covers (phi, lam, w) for softmax policies and (phi, lam) for raw ones.
    """
    rows, _ = _as_rows(states, topology.input_dim)
    actions = np.asarray(actions, dtype=int).reshape(-1)
    if actions.size != rows.shape[0]:
        raise ConfigurationError(f"{actions.size} actions for {rows.shape[0]} states")
    if np.any((actions < 0) | (actions >= config.n_actions)):
        raise QubitIndexError(f"Action outside [0, {config.n_actions})")
    n = topology.n_qubits
    batch = np.arange(rows.shape[0])
    if mode is GradientMode.SHOTS and rng is None:
        raise ConfigurationError("Shot-noise gradients need a random generator")
    amps = prepare_states(topology, rows, params)

    if config.kind is PolicyKind.RAW:
        probs = _partition_values(amps, config.partition, n)
        chosen = probs[batch, actions] if action_probs is None else np.asarray(action_probs, float)
        degenerate = np.flatnonzero(chosen <= DIVISION_FLOOR)
        if degenerate.size:
            raise DegenerateProbabilityError(
                f"<P_a> <= {DIVISION_FLOOR:g} on {degenerate.size} row(s), first at row {degenerate[0]}")
        if mode is GradientMode.EXACT:
            mask = config.partition.indicator_matrix(n)[actions]
            return _adjoint_pass(topology, rows, params, amps, amps * mask) / chosen[:, None]

        def evaluate(shifted: np.ndarray) -> np.ndarray:
            values = _partition_values(shifted, config.partition, n)
            if mode is GradientMode.SHOTS:
                values = _sample_term_values(values, config.partition.as_terms(), shots, rng)
            return values

        jacobian = _shift_jacobian(topology, rows, params, evaluate)
        return jacobian[batch, actions, :] / chosen[:, None]

    beta = config.beta if beta is None else beta
    bank = _term_bank(config.observables)
    terms = [t for _, _, t in bank]
    coefs = np.array([c for _, c, _ in bank])
    owner = np.array([a for a, _, _ in bank], dtype=int)
    n_actions = config.n_actions
    values, applied = _term_values(amps, bank, n)
    if mode is GradientMode.SHOTS:
        values = _sample_term_values(values, terms, shots, rng)
    expectations = _action_values(values, bank, params.w, n_actions)
    pi = softmax(beta * expectations, axis=1)
    # coefficient of O_a in the score: e_{a_b} - pi_b
    score = -pi
    score[batch, actions] += 1.0

    if mode is GradientMode.EXACT:
        bra = np.zeros_like(amps)
        for i, h_psi in enumerate(applied):
            bra += (score[:, owner[i]] * params.w[i] * coefs[i])[:, None] * h_psi
        circuit = _adjoint_pass(topology, rows, params, amps, bra)
    else:
        def evaluate(shifted: np.ndarray) -> np.ndarray:
            shifted_values, _ = _term_values(shifted, bank, n)
            if mode is GradientMode.SHOTS:
                shifted_values = _sample_term_values(shifted_values, terms, shots, rng)
            return _action_values(shifted_values, bank, params.w, n_actions)

        jacobian = _shift_jacobian(topology, rows, params, evaluate)
        circuit = np.einsum("ba,bap->bp", score, jacobian)
    weights = score[:, owner] * coefs[None, :] * values
    return beta * np.concatenate([circuit, weights], axis=1)


def log_policy_gradient(s: np.ndarray, a: int, params: ParamVector, topology: PqcTopology,
                        config: PolicyConfig, mode: GradientMode = GradientMode.EXACT,
                        shots: int = 1000, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """grad_theta log pi(a|s) for a single state"""
    rows, _ = _as_rows(s, topology.input_dim)
    return log_policy_gradients(rows[:1], np.array([a]), params, topology, config, mode, shots, rng)[0]


# --- approximation error helpers ----------------------------------------------

def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """sum_a |p_a - q_a| (l1 distance, no 1/2 factor)"""
    return float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def perturbed_softmax_tv(expectations: np.ndarray, perturbation: np.ndarray, beta: float) -> float:
    """Distance between softmax(beta*E) and softmax(beta*(E + perturbation))"""
    expectations = np.asarray(expectations, dtype=float)
    return total_variation(softmax(beta * expectations),
                           softmax(beta * (expectations + np.asarray(perturbation, dtype=float))))


def softmax_tv_bound(beta: float, epsilon: float) -> float:
    return float(2 * np.sinh(2 * beta * epsilon))


def worst_case_perturbations(n_actions: int, epsilon: float) -> np.ndarray:
    """All sign patterns of +-epsilon over n_actions, shape (2**A, A)"""
    return epsilon * np.array(list(itertools.product((-1.0, 1.0), repeat=n_actions)))


def approximate_log_policy_gradient(expectations: np.ndarray, jacobian: np.ndarray, action: int,
                                    beta: float) -> np.ndarray:
    """beta * (d<O_a> - sum_a' pi(a') d<O_a'>) from given expectations (A,) and derivatives (A, P)"""
    pi = softmax(beta * np.asarray(expectations, dtype=float))
    jacobian = np.asarray(jacobian, dtype=float)
    return beta * (jacobian[action] - pi @ jacobian)


# --- presets ------------------------------------------------------------------

def observable_preset(name: str, n_qubits: int, n_actions: int) -> Tuple[ObservableSpec, ...]:
    """
    Named per-action observables:
      z-product-sign  +-Z_0...Z_{n-1} for two actions
      z0-z0z1-z1      Z_0, Z_0 Z_1, Z_1 for three actions
      z-per-action    Z_a on qubit a
      zz-sign         +-Z_0 Z_1 for two actions
    """
    if name == "z-product-sign":
        _require_actions(name, n_actions, 2)
        term = PauliTerm.z(*range(n_qubits))
        return ObservableSpec.single(term, 1.0), ObservableSpec.single(term, -1.0)
    if name == "zz-sign":
        _require_actions(name, n_actions, 2)
        term = PauliTerm.z(0, 1)
        return ObservableSpec.single(term, 1.0), ObservableSpec.single(term, -1.0)
    if name == "z0-z0z1-z1":
        _require_actions(name, n_actions, 3)
        return tuple(ObservableSpec.single(PauliTerm.z(*q)) for q in ((0,), (0, 1), (1,)))
    if name == "z-per-action":
        if n_actions > n_qubits:
            raise ConfigurationError(f"'{name}' needs at least {n_actions} qubits")
        return tuple(ObservableSpec.single(PauliTerm.z(a)) for a in range(n_actions))
    raise ConfigurationError(f"Unknown observable preset '{name}'")


def partition_preset(name: str, n_qubits: int, n_actions: int) -> ActionPartition:
    """contiguous | parity | first-qubit"""
    if name == "contiguous":
        return ActionPartition.contiguous(n_qubits, n_actions)
    if name == "parity":
        _require_actions(name, n_actions, 2)
        return ActionPartition.by_parity(n_qubits)
    if name == "first-qubit":
        _require_actions(name, n_actions, 2)
        return ActionPartition.by_qubit_value(n_qubits, 0)
    raise ConfigurationError(f"Unknown partition preset '{name}'")


def parse_term(text: str) -> Tuple[float, HermitianTerm]:
    """'Z0Z1', '-Z0Z1', '0.5*X0' or a projector range 'P0..7'"""
    text = text.replace(" ", "")
    coef = 1.0
    if "*" in text:
        head, text = text.split("*", 1)
        try:
            coef = float(head)
        except ValueError as e:
            raise ConfigurationError(f"Bad coefficient '{head}' in observable term") from e
    elif text.startswith("-"):
        coef, text = -1.0, text[1:]
    elif text.startswith("+"):
        text = text[1:]
    if text.upper().startswith("P"):
        bounds = text[1:].split("..")
        try:
            first, last = int(bounds[0]), int(bounds[-1])
        except ValueError as e:
            raise ConfigurationError(f"Bad projector range '{text}'") from e
        return coef, ProjectorTerm.range(first, last)
    return coef, PauliTerm.from_label(text)


def observables_from_labels(per_action: Sequence[Sequence[str]], n_qubits: int,
                            n_actions: int) -> Tuple[ObservableSpec, ...]:
    if len(per_action) != n_actions:
        raise ConfigurationError(f"{len(per_action)} observables listed for {n_actions} actions")
    observables = tuple(ObservableSpec(tuple(parse_term(t) for t in terms)) for terms in per_action)
    for obs in observables:
        obs.check_qubits(n_qubits)
    return observables


def _require_actions(name: str, n_actions: int, expected: int) -> None:
    if n_actions != expected:
        raise ConfigurationError(f"Preset '{name}' serves {expected} actions, environment has {n_actions}")


# --- policy object --------------------------------------------------------------

class PqcPolicy:
    """
    Raw or softmax PQC policy bound to its parameters.
    Inputs are divided by input_scale before encoding.
    """

    def __init__(self, topology: PqcTopology, config: PolicyConfig, params: ParamVector,
                 gradient_mode: GradientMode = GradientMode.EXACT, shots: int = 1000,
                 input_scale: Optional[Sequence[float]] = None):
        config.validate(topology)
        params.check_sizes(topology, config.n_weights)
        self.topology = topology
        self.config = config
        self.params = params
        self.gradient_mode = GradientMode(gradient_mode)
        self.shots = int(shots)
        self.input_scale = None if input_scale is None else np.asarray(input_scale, dtype=float)
        self.beta = float(config.beta)

    @classmethod
    def initialize(cls, topology: PqcTopology, config: PolicyConfig, rng: np.random.Generator,
                   lam_init: float = 1.0, w_init: float = 1.0, **kwargs) -> "PqcPolicy":
        params = ParamVector.initialize(topology, config.n_weights, rng, lam_init, w_init)
        return cls(topology, config, params, **kwargs)

    @property
    def n_actions(self) -> int:
        return self.config.n_actions

    @property
    def group_names(self) -> Tuple[str, ...]:
        return ("phi", "lam") if self.config.kind is PolicyKind.RAW else ParamVector.GROUPS

    def _inputs(self, states: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(states, dtype=float))
        return rows / self.input_scale[None, :] if self.input_scale is not None else rows

    def probabilities(self, states: np.ndarray) -> np.ndarray:
        rows = self._inputs(states)
        if self.config.kind is PolicyKind.RAW:
            return raw_policy(rows, self.params, self.topology, self.config.partition)
        return softmax_policy(rows, self.params, self.topology, self.config.observables, self.beta)

    def parameter_groups(self) -> Dict[str, np.ndarray]:
        groups = self.params.groups()
        return {name: groups[name] for name in self.group_names}

    def set_parameter_groups(self, groups: Dict[str, np.ndarray]) -> None:
        for name, values in groups.items():
            current = getattr(self.params, name)
            values = np.asarray(values, dtype=float)
            if values.shape != current.shape:
                raise ConfigurationError(f"Group '{name}' has shape {current.shape}, got {values.shape}")
            setattr(self.params, name, values.copy())

    def log_policy_gradients(self, states: np.ndarray, actions: np.ndarray,
                             rng: Optional[np.random.Generator] = None,
                             action_probs: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
        flat = log_policy_gradients(self._inputs(states), actions, self.params, self.topology, self.config,
                                    self.gradient_mode, self.shots, rng, beta=self.beta,
                                    action_probs=action_probs)
        out = {}
        offset = 0
        for name in self.group_names:
            size = getattr(self.params, name).size
            out[name] = flat[:, offset:offset + size]
            offset += size
        return out
