"""
Dense statevector simulator for the gate set used by the PQC policies.

Qubit 0 is the most significant bit of a basis index, so on 3 qubits the
basis state |q0 q1 q2> = |110> has index 6. Global phases are ignored.

All kernels work on amplitude arrays with a leading batch axis, shape
(B, 2**n). A StateVector is the B = 1 case; a StateBatch carries one state
per row and rotation gates may carry one angle per row.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from qrl_errors import ConfigurationError, NumericalBlowupError, QubitIndexError

logger = logging.getLogger(__name__)

MAX_QUBITS = 16
NORM_TOLERANCE = 1e-10
IMAG_TOLERANCE = 1e-10

Angle = Union[float, np.ndarray]


class GateKind(Enum):
    """Gates supported by the simulator"""
    H = "h"
    RY = "ry"
    RZ = "rz"
    CZ = "cz"
    RZZ = "rzz"

    @property
    def arity(self) -> int:
        return 2 if self in (GateKind.CZ, GateKind.RZZ) else 1

    @property
    def parametrized(self) -> bool:
        return self in (GateKind.RY, GateKind.RZ, GateKind.RZZ)


@dataclass(frozen=True)
class PauliTerm:
    """Tensor product of Pauli letters on a subset of qubits, e.g. Z0 Z1"""
    paulis: Tuple[Tuple[int, str], ...]

    def __post_init__(self):
        ordered = tuple(sorted((int(q), str(letter).upper()) for q, letter in self.paulis))
        qubits = [q for q, _ in ordered]
        if len(set(qubits)) != len(qubits):
            raise ConfigurationError(f"Pauli term repeats a qubit: {self.paulis}")
        for q, letter in ordered:
            if letter not in ("X", "Y", "Z"):
                raise ConfigurationError(f"Unknown Pauli letter '{letter}' on qubit {q}")
            if q < 0:
                raise QubitIndexError(f"Negative qubit index {q} in Pauli term")
        object.__setattr__(self, "paulis", ordered)

    @classmethod
    def z(cls, *qubits: int) -> "PauliTerm":
        return cls(tuple((q, "Z") for q in qubits))

    @classmethod
    def from_label(cls, label: str) -> "PauliTerm":
        """Parse labels such as 'Z0Z1', 'Z0 Z1' or 'X2'"""
        letters = label.replace(" ", "").upper()
        paulis = []
        i = 0
        while i < len(letters):
            letter = letters[i]
            j = i + 1
            while j < len(letters) and letters[j].isdigit():
                j += 1
            if j == i + 1:
                raise ConfigurationError(f"Pauli label '{label}' is missing a qubit index")
            paulis.append((int(letters[i + 1:j]), letter))
            i = j
        return cls(tuple(paulis))

    @property
    def label(self) -> str:
        return "".join(f"{letter}{q}" for q, letter in self.paulis)

    @property
    def max_qubit(self) -> int:
        return max((q for q, _ in self.paulis), default=-1)

    @property
    def is_diagonal(self) -> bool:
        return all(letter == "Z" for _, letter in self.paulis)

    @property
    def operator_norm(self) -> float:
        return 1.0


@dataclass(frozen=True)
class ProjectorTerm:
    """Projector onto a set of computational basis states"""
    basis_states: FrozenSet[int]

    def __post_init__(self):
        states = frozenset(int(i) for i in self.basis_states)
        if any(i < 0 for i in states):
            raise QubitIndexError("Projector contains a negative basis index")
        object.__setattr__(self, "basis_states", states)

    @classmethod
    def range(cls, first: int, last: int) -> "ProjectorTerm":
        """P_{first..last}, both ends inclusive"""
        return cls(frozenset(range(first, last + 1)))

    @property
    def label(self) -> str:
        if not self.basis_states:
            return "P{}"
        ordered = sorted(self.basis_states)
        if ordered == list(range(ordered[0], ordered[-1] + 1)):
            return f"P{ordered[0]}..{ordered[-1]}"
        return "P{" + ",".join(str(i) for i in ordered) + "}"

    @property
    def max_index(self) -> int:
        return max(self.basis_states, default=-1)

    @property
    def operator_norm(self) -> float:
        return 1.0 if self.basis_states else 0.0


HermitianTerm = Union[PauliTerm, ProjectorTerm]


@dataclass(frozen=True)
class ObservableSpec:
    """Weighted sum of Hermitian terms, sum_i weight_i * H_i"""
    terms: Tuple[Tuple[float, HermitianTerm], ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((float(w), t) for w, t in self.terms))

    @classmethod
    def single(cls, term: HermitianTerm, weight: float = 1.0) -> "ObservableSpec":
        return cls(((weight, term),))

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.terms], dtype=float)

    @property
    def hermitian_terms(self) -> List[HermitianTerm]:
        return [t for _, t in self.terms]

    def reweighted(self, scale: Sequence[float]) -> "ObservableSpec":
        """Multiply each term weight by the matching entry of scale"""
        if len(scale) != self.n_terms:
            raise ConfigurationError(f"Expected {self.n_terms} weights, got {len(scale)}")
        return ObservableSpec(tuple((w * float(c), t) for (w, t), c in zip(self.terms, scale)))

    def operator_norm_bound(self) -> float:
        return float(sum(abs(w) * t.operator_norm for w, t in self.terms))

    def check_qubits(self, n_qubits: int) -> None:
        for _, term in self.terms:
            _check_term(term, n_qubits)

    @property
    def label(self) -> str:
        return " + ".join(f"{w:g}*{t.label}" for w, t in self.terms)


@dataclass(frozen=True)
class ActionPartition:
    """One projector (set of basis indices) per action"""
    projectors: Tuple[FrozenSet[int], ...]

    def __post_init__(self):
        object.__setattr__(self, "projectors", tuple(frozenset(int(i) for i in p) for p in self.projectors))

    @classmethod
    def contiguous(cls, n_qubits: int, n_actions: int) -> "ActionPartition":
        """Split the 2**n basis states into n_actions contiguous ranges P_{i..j}"""
        dim = 2 ** n_qubits
        if not 1 <= n_actions <= dim:
            raise ConfigurationError(f"Cannot split {dim} basis states into {n_actions} actions")
        edges = np.linspace(0, dim, n_actions + 1).round().astype(int)
        return cls(tuple(frozenset(range(edges[a], edges[a + 1])) for a in range(n_actions)))

    @classmethod
    def by_qubit_value(cls, n_qubits: int, qubit: int = 0) -> "ActionPartition":
        """Action 0 when the given qubit reads 0, action 1 when it reads 1"""
        bits = _basis_bits(n_qubits)[qubit]
        return cls((frozenset(np.flatnonzero(bits == 0).tolist()), frozenset(np.flatnonzero(bits == 1).tolist())))

    @classmethod
    def by_parity(cls, n_qubits: int) -> "ActionPartition":
        """Action 0 for even-parity basis states, action 1 for odd parity"""
        parity = _basis_bits(n_qubits).sum(axis=0) % 2
        return cls((frozenset(np.flatnonzero(parity == 0).tolist()), frozenset(np.flatnonzero(parity == 1).tolist())))

    @property
    def n_actions(self) -> int:
        return len(self.projectors)

    def validate(self, n_qubits: int) -> None:
        dim = 2 ** n_qubits
        seen: set = set()
        for a, projector in enumerate(self.projectors):
            if any(i >= dim for i in projector):
                raise QubitIndexError(f"Projector of action {a} addresses basis states beyond {dim}")
            if seen & projector:
                raise ConfigurationError(f"Projector of action {a} overlaps an earlier action")
            seen |= projector
        if len(seen) != dim:
            raise ConfigurationError(f"Partition covers {len(seen)} of {dim} basis states")

    def indicator_matrix(self, n_qubits: int) -> np.ndarray:
        """(n_actions, 2**n) 0/1 matrix, row a selects the basis states of P_a"""
        self.validate(n_qubits)
        return _indicator_matrix(self, n_qubits)

    def as_terms(self) -> List[ProjectorTerm]:
        return [ProjectorTerm(p) for p in self.projectors]


@lru_cache(maxsize=64)
def _indicator_matrix(partition: ActionPartition, n_qubits: int) -> np.ndarray:
    matrix = np.zeros((partition.n_actions, 2 ** n_qubits))
    for a, projector in enumerate(partition.projectors):
        matrix[a, sorted(projector)] = 1.0
    matrix.setflags(write=False)
    return matrix


@dataclass(frozen=True, eq=False)
class StateVector:
    """Single n-qubit pure state; amplitudes are read-only after construction"""
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != 2 ** self.n_qubits:
            raise ConfigurationError(f"State of {self.n_qubits} qubits needs {2 ** self.n_qubits} amplitudes, got {amps.size}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.sqrt(self.probabilities().sum()))

    def as_batch(self) -> "StateBatch":
        return StateBatch(self.n_qubits, self.amplitudes[None, :])


@dataclass(frozen=True, eq=False)
class StateBatch:
    """B independent n-qubit states, amplitudes of shape (B, 2**n)"""
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.ndim != 2 or amps.shape[1] != 2 ** self.n_qubits:
            raise ConfigurationError(f"Batch of {self.n_qubits}-qubit states needs shape (B, {2 ** self.n_qubits}), got {amps.shape}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def batch_size(self) -> int:
        return self.amplitudes.shape[0]

    def row(self, index: int) -> StateVector:
        return StateVector(self.n_qubits, self.amplitudes[index])

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


State = Union[StateVector, StateBatch]


@dataclass(frozen=True)
class GateOp:
    """One gate: kind, target qubits and rotation angle (radians) where applicable"""
    kind: GateKind
    targets: Tuple[int, ...]
    angle: Angle = 0.0

    def __post_init__(self):
        targets = tuple(int(t) for t in self.targets)
        if len(targets) != self.kind.arity:
            raise ConfigurationError(f"{self.kind.name} acts on {self.kind.arity} qubit(s), got targets {targets}")
        if len(set(targets)) != len(targets):
            raise ConfigurationError(f"{self.kind.name} targets must be distinct, got {targets}")
        if any(t < 0 for t in targets):
            raise QubitIndexError(f"Negative target in {targets}")
        object.__setattr__(self, "targets", targets)

    def check_targets(self, n_qubits: int) -> None:
        if max(self.targets) >= n_qubits:
            raise QubitIndexError(f"{self.kind.name} targets {self.targets} on a {n_qubits}-qubit state")

    def inverse(self) -> "GateOp":
        if self.kind.parametrized:
            return GateOp(self.kind, self.targets, -np.asarray(self.angle, dtype=float))
        return self

    def generator(self) -> Optional[PauliTerm]:
        """Pauli G with U(angle) = exp(-i angle G / 2); None for fixed gates"""
        if self.kind is GateKind.RY:
            return PauliTerm(((self.targets[0], "Y"),))
        if self.kind is GateKind.RZ:
            return PauliTerm.z(self.targets[0])
        if self.kind is GateKind.RZZ:
            return PauliTerm.z(*self.targets)
        return None


_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_PAULI = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def gate_matrix(gate: GateOp) -> np.ndarray:
    """Unitary of a gate with a scalar angle (2x2 or 4x4, qubit order as targets)"""
    theta = float(np.asarray(gate.angle))
    if gate.kind is GateKind.H:
        return _H.copy()
    if gate.kind is GateKind.RY:
        c, s = np.cos(theta / 2), np.sin(theta / 2)
        return np.array([[c, -s], [s, c]], dtype=complex)
    if gate.kind is GateKind.RZ:
        return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])
    if gate.kind is GateKind.CZ:
        return np.diag([1, 1, 1, -1]).astype(complex)
    zz = np.array([1, -1, -1, 1])
    return np.diag(np.exp(-0.5j * theta * zz))


@lru_cache(maxsize=32)
def _basis_bits(n_qubits: int) -> np.ndarray:
    """(n, 2**n) array, row q holds the value of qubit q in every basis index"""
    index = np.arange(2 ** n_qubits)
    bits = np.array([(index >> (n_qubits - 1 - q)) & 1 for q in range(n_qubits)], dtype=np.int8)
    bits.setflags(write=False)
    return bits


@lru_cache(maxsize=32)
def _z_signs(n_qubits: int) -> np.ndarray:
    signs = 1.0 - 2.0 * _basis_bits(n_qubits)
    signs.setflags(write=False)
    return signs


def init_zero(n_qubits: int) -> StateVector:
    """|0...0> on n qubits"""
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"n_qubits must be an integer in [1, {MAX_QUBITS}], got {n_qubits}")
    amps = np.zeros(2 ** int(n_qubits), dtype=complex)
    amps[0] = 1.0
    return StateVector(int(n_qubits), amps)


def init_zero_batch(n_qubits: int, batch_size: int) -> StateBatch:
    zero = init_zero(n_qubits)
    return StateBatch(zero.n_qubits, np.repeat(zero.amplitudes[None, :], batch_size, axis=0))


def _angles(angle: Angle, batch_size: int) -> np.ndarray:
    theta = np.asarray(angle, dtype=float)
    if theta.ndim == 0:
        return np.full(batch_size, float(theta))
    theta = theta.reshape(-1)
    if theta.size != batch_size:
        raise ConfigurationError(f"Gate carries {theta.size} angles for a batch of {batch_size}")
    return theta


def _apply_single_qubit(amps: np.ndarray, matrix: np.ndarray, qubit: int, n_qubits: int) -> np.ndarray:
    """matrix is (2, 2) or per-row (B, 2, 2)"""
    batch = amps.shape[0]
    view = amps.reshape(batch, 2 ** qubit, 2, 2 ** (n_qubits - qubit - 1))
    if matrix.ndim == 2:
        out = np.einsum("ij,bajc->baic", matrix, view)
    else:
        out = np.einsum("bij,bajc->baic", matrix, view)
    return out.reshape(batch, -1)


def _apply_to_amplitudes(amps: np.ndarray, gate: GateOp, n_qubits: int) -> np.ndarray:
    batch = amps.shape[0]
    kind = gate.kind
    if kind is GateKind.H:
        return _apply_single_qubit(amps, _H, gate.targets[0], n_qubits)
    if kind is GateKind.RY:
        half = _angles(gate.angle, batch) / 2
        c, s = np.cos(half), np.sin(half)
        matrix = np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2).astype(complex)
        return _apply_single_qubit(amps, matrix, gate.targets[0], n_qubits)
    signs = _z_signs(n_qubits)
    if kind is GateKind.RZ:
        theta = _angles(gate.angle, batch)
        return amps * np.exp(-0.5j * theta[:, None] * signs[gate.targets[0]][None, :])
    a, b = gate.targets
    if kind is GateKind.CZ:
        both = (signs[a] < 0) & (signs[b] < 0)
        return amps * np.where(both, -1.0, 1.0)[None, :]
    theta = _angles(gate.angle, batch)
    return amps * np.exp(-0.5j * theta[:, None] * (signs[a] * signs[b])[None, :])


def _check_norm(amps: np.ndarray) -> None:
    norms = np.sum(np.abs(amps) ** 2, axis=1)
    if not np.all(np.isfinite(norms)):
        raise NumericalBlowupError("Non-finite amplitudes after gate application")
    worst = float(np.max(np.abs(norms - 1.0)))
    if worst > NORM_TOLERANCE:
        raise NumericalBlowupError(f"State norm drifted by {worst:.3e}")


def _as_amplitudes(state: State) -> np.ndarray:
    if isinstance(state, StateVector):
        return state.amplitudes[None, :]
    return state.amplitudes


def _wrap_like(state: State, amps: np.ndarray) -> State:
    if isinstance(state, StateVector):
        return StateVector(state.n_qubits, amps[0])
    return StateBatch(state.n_qubits, amps)


def apply_gate(state: State, gate: GateOp) -> State:
    """Return U|psi> as a new state of the same type"""
    gate.check_targets(state.n_qubits)
    amps = _apply_to_amplitudes(_as_amplitudes(state), gate, state.n_qubits)
    _check_norm(amps)
    return _wrap_like(state, amps)


def evolve_amplitudes(amps: np.ndarray, gates: Iterable[GateOp], n_qubits: int,
                      check_norm: bool = True) -> np.ndarray:
    """
    Apply gates to raw (B, 2**n) amplitudes.
    check_norm=False allows unnormalized vectors such as O|psi> in adjoint passes.
    """
    for gate in gates:
        gate.check_targets(n_qubits)
        amps = _apply_to_amplitudes(amps, gate, n_qubits)
        if check_norm:
            _check_norm(amps)
    return amps


def apply_circuit(state: State, gates: Iterable[GateOp]) -> State:
    """Apply gates in order; norm is checked after every gate"""
    amps = evolve_amplitudes(_as_amplitudes(state), gates, state.n_qubits)
    return _wrap_like(state, amps)


def _check_term(term: HermitianTerm, n_qubits: int) -> None:
    if isinstance(term, PauliTerm):
        if term.max_qubit >= n_qubits:
            raise QubitIndexError(f"Pauli term {term.label} addresses qubit {term.max_qubit} of a {n_qubits}-qubit state")
    elif term.max_index >= 2 ** n_qubits:
        raise QubitIndexError(f"Projector {term.label} addresses basis states beyond {2 ** n_qubits}")


def apply_term(amps: np.ndarray, term: HermitianTerm, n_qubits: int) -> np.ndarray:
    """H|psi> on a scratch copy of batched amplitudes (B, 2**n)"""
    _check_term(term, n_qubits)
    if isinstance(term, ProjectorTerm):
        mask = np.zeros(2 ** n_qubits)
        mask[sorted(term.basis_states)] = 1.0
        return amps * mask[None, :]
    out = np.array(amps, dtype=complex, copy=True)
    if term.is_diagonal:
        signs = _z_signs(n_qubits)
        return out * np.prod([signs[q] for q, _ in term.paulis], axis=0)[None, :] if term.paulis else out
    for q, letter in term.paulis:
        out = _apply_single_qubit(out, _PAULI[letter], q, n_qubits)
    return out


def _real_inner(bra: np.ndarray, ket: np.ndarray) -> np.ndarray:
    values = np.einsum("bi,bi->b", np.conj(bra), ket)
    if np.max(np.abs(values.imag), initial=0.0) > IMAG_TOLERANCE:
        raise NumericalBlowupError(f"Expectation has imaginary residue {np.max(np.abs(values.imag)):.3e}")
    return values.real


def term_expectation(state: State, term: HermitianTerm) -> Union[float, np.ndarray]:
    """<psi|H|psi> of one unweighted term"""
    amps = _as_amplitudes(state)
    values = _real_inner(amps, apply_term(amps, term, state.n_qubits))
    return float(values[0]) if isinstance(state, StateVector) else values


def expectation(state: State, obs: ObservableSpec) -> Union[float, np.ndarray]:
    """sum_i w_i <psi|H_i|psi>; a float for a StateVector, one value per row for a StateBatch"""
    amps = _as_amplitudes(state)
    total = np.zeros(amps.shape[0])
    for weight, term in obs.terms:
        total += weight * _real_inner(amps, apply_term(amps, term, state.n_qubits))
    return float(total[0]) if isinstance(state, StateVector) else total


def partition_probabilities(state: State, partition: ActionPartition) -> np.ndarray:
    """(<P_a>)_a, shape (A,) for a StateVector or (B, A) for a StateBatch"""
    indicator = partition.indicator_matrix(state.n_qubits)
    probs = np.abs(_as_amplitudes(state)) ** 2 @ indicator.T
    return probs[0] if isinstance(state, StateVector) else probs


def born_sample(state: StateVector, partition: ActionPartition, rng: np.random.Generator,
                size: Optional[int] = None) -> Union[int, np.ndarray]:
    """Measure the partition observable; returns the action index (or size draws)"""
    probs = np.clip(partition_probabilities(state, partition), 0.0, None)
    probs = probs / probs.sum()
    draws = rng.choice(partition.n_actions, size=size, p=probs)
    return int(draws) if size is None else draws
