"""Dense statevector simulation of parametric Pauli circuits on spin chains.

Provides the hardware-free half of the optimization benchmark: Heisenberg-type
Hamiltonians as weighted Pauli strings, the layered R_Y/R_Z + CNOT ansatz,
exact energies, shot-noise observation models, and exact-diagonalization
ground-truth diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi

_PAULI_MATS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "Y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}

OBSERVE_MODES = ("binomial-per-term", "gaussian-approx", "exact")


def wrap_angles(x) -> np.ndarray:
    """Map angles onto the canonical domain [0, 2*pi)."""
    return np.mod(np.asarray(x, dtype=float), TWO_PI)


@dataclass(frozen=True)
class PauliString:
    """A weighted tensor product of single-qubit Paulis, e.g. 1.5 * "XXI".

    Position q of `ops` is the operator on qubit q; "I" everywhere encodes a
    constant energy offset.
    """

    ops: str
    weight: float

    def __post_init__(self):
        if not self.ops:
            raise ValueError("empty Pauli string")
        bad = set(self.ops) - set("IXYZ")
        if bad:
            raise ValueError(f"invalid Pauli tags {sorted(bad)} in {self.ops!r}")

    @property
    def qubits(self) -> int:
        return len(self.ops)


@dataclass(frozen=True)
class Hamiltonian:
    """Hermitian operator given as a non-empty list of weighted Pauli strings."""

    terms: tuple[PauliString, ...]
    qubits: int

    def __post_init__(self):
        if not self.terms:
            raise ValueError("Hamiltonian needs at least one term")
        for term in self.terms:
            if term.qubits != self.qubits:
                raise ValueError(
                    f"term {term.ops!r} acts on {term.qubits} qubits, expected {self.qubits}"
                )

    def to_matrix(self) -> np.ndarray:
        """Dense 2^Q x 2^Q matrix (qubit 0 is the leftmost tensor factor)."""
        dim = 2**self.qubits
        mat = np.zeros((dim, dim), dtype=complex)
        for term in self.terms:
            op = np.array([[term.weight]], dtype=complex)
            for tag in term.ops:
                op = np.kron(op, _PAULI_MATS[tag])
            mat += op
        return mat


def build_hamiltonian(qubits: int, j, h, boundary: str = "open") -> Hamiltonian:
    """Spin-chain Hamiltonian -[sum_j (J_a s_j^a s_{j+1}^a) + sum_j (h_a s_j^a)].

    Parameters
    ----------
    qubits : number of sites Q (>= 1).
    j : three reals, nearest-neighbour couplings (J_X, J_Y, J_Z).
    h : three reals, external fields (h_X, h_Y, h_Z).
    boundary : "open" for a chain, "periodic" to add the wrap-around bond.

    Zero-coefficient terms are dropped.  Term order is bonds (site-major, axes
    X,Y,Z inside), then fields.
    """
    if qubits < 1:
        raise ValueError("qubits must be >= 1")
    jx, jy, jz = (float(v) for v in j)
    hx, hy, hz = (float(v) for v in h)
    if boundary not in ("open", "periodic"):
        raise ValueError(f"unknown boundary {boundary!r}")

    bonds = [(q, q + 1) for q in range(qubits - 1)]
    if boundary == "periodic" and qubits >= 2:
        bonds.append((qubits - 1, 0))

    terms: list[PauliString] = []
    for a, b in bonds:
        for axis, coupling in zip("XYZ", (jx, jy, jz)):
            if coupling == 0.0:
                continue
            ops = ["I"] * qubits
            ops[a] = axis
            ops[b] = axis
            terms.append(PauliString("".join(ops), -coupling))
    for q in range(qubits):
        for axis, fld in zip("XYZ", (hx, hy, hz)):
            if fld == 0.0:
                continue
            ops = ["I"] * qubits
            ops[q] = axis
            terms.append(PauliString("".join(ops), -fld))
    if not terms:
        raise ValueError("all couplings and fields are zero")
    return Hamiltonian(tuple(terms), qubits)


@dataclass(frozen=True)
class Statevector:
    """Unit-norm complex amplitude vector over the computational basis."""

    amplitudes: np.ndarray
    qubits: int

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (2**self.qubits,):
            raise ValueError(f"expected {2**self.qubits} amplitudes, got {amps.shape}")
        norm = float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"state norm**2 = {norm!r} deviates from 1 beyond 1e-12")
        object.__setattr__(self, "amplitudes", amps)


def zero_state(qubits: int) -> Statevector:
    amps = np.zeros(2**qubits, dtype=complex)
    amps[0] = 1.0
    return Statevector(amps, qubits)


@dataclass(frozen=True)
class Rotation:
    """Parametric gate exp(-i*theta/2 * P): P acts one tag per entry of `targets`.

    `param` is the index into the circuit's angle vector; a gate with
    param=None uses the fixed `angle` instead.
    """

    pauli: str
    targets: tuple[int, ...]
    param: int | None = None
    angle: float = 0.0

    def __post_init__(self):
        if len(self.pauli) != len(self.targets):
            raise ValueError("one Pauli tag per target qubit required")
        bad = set(self.pauli) - set("XYZ")
        if bad:
            raise ValueError(f"rotation axis must be Pauli tags, got {sorted(bad)}")
        if len(set(self.targets)) != len(self.targets):
            raise ValueError("rotation targets must be distinct qubits")


@dataclass(frozen=True)
class Cnot:
    control: int
    target: int

    def __post_init__(self):
        if self.control == self.target:
            raise ValueError("CNOT control and target must differ")


@dataclass(frozen=True)
class CircuitSpec:
    """Ordered gate list with a mapping from parameter indices to gates."""

    qubits: int
    layers: int
    gates: tuple
    param_count: int

    def __post_init__(self):
        if self.qubits < 1:
            raise ValueError("qubits must be >= 1")
        counts = self.param_multiplicity()
        missing = [d for d, c in enumerate(counts) if c == 0]
        if missing:
            raise ValueError(f"parameter indices {missing} appear on no gate")

    def param_multiplicity(self) -> np.ndarray:
        """Number of gates carrying each parameter index."""
        counts = np.zeros(self.param_count, dtype=int)
        for gate in self.gates:
            if isinstance(gate, Rotation) and gate.param is not None:
                if not 0 <= gate.param < self.param_count:
                    raise ValueError(f"parameter index {gate.param} out of range")
                counts[gate.param] += 1
        return counts

    @property
    def is_exclusive(self) -> bool:
        return bool(np.all(self.param_multiplicity() == 1))


def build_ansatz(qubits: int, layers: int, boundary: str = "open") -> CircuitSpec:
    """Layered hardware-efficient ansatz: R_Y,R_Z pairs with CNOT blocks.

    Layer 0 applies R_Y then R_Z to every qubit; each of the `layers`
    following blocks applies CNOTs over adjacent pairs (plus the wrap pair
    for periodic boundary) followed by fresh R_Y,R_Z pairs.  The total
    parameter count is D = 2*Q + 2*L*Q.
    """
    if qubits < 1:
        raise ValueError("qubits must be >= 1")
    if layers < 0:
        raise ValueError("layers must be >= 0")
    if boundary not in ("open", "periodic"):
        raise ValueError(f"unknown boundary {boundary!r}")

    gates: list = []
    param = 0

    def rotation_block():
        nonlocal param
        for axis in ("Y", "Z"):
            for q in range(qubits):
                gates.append(Rotation(axis, (q,), param=param))
                param += 1

    rotation_block()
    for _ in range(layers):
        for q in range(qubits - 1):
            gates.append(Cnot(q, q + 1))
        if boundary == "periodic" and qubits >= 2:
            gates.append(Cnot(qubits - 1, 0))
        rotation_block()

    return CircuitSpec(qubits, layers, tuple(gates), param)


def _slices(qubits: int, fixed: dict[int, int]):
    idx = [slice(None)] * qubits
    for axis, value in fixed.items():
        idx[axis] = value
    return tuple(idx)


def _apply_single_pauli(tensor: np.ndarray, tag: str, q: int) -> np.ndarray:
    if tag == "I":
        return tensor
    s0 = _slices(tensor.ndim, {q: 0})
    s1 = _slices(tensor.ndim, {q: 1})
    out = np.empty_like(tensor)
    if tag == "X":
        out[s0] = tensor[s1]
        out[s1] = tensor[s0]
    elif tag == "Y":
        out[s0] = -1j * tensor[s1]
        out[s1] = 1j * tensor[s0]
    else:  # Z
        out[s0] = tensor[s0]
        out[s1] = -tensor[s1]
    return out


def _apply_pauli_string(tensor: np.ndarray, ops: str) -> np.ndarray:
    for q, tag in enumerate(ops):
        tensor = _apply_single_pauli(tensor, tag, q)
    return tensor


def _apply_rotation(tensor: np.ndarray, gate: Rotation, theta: float) -> np.ndarray:
    # exp(-i*theta/2 P) = cos(theta/2) I - i sin(theta/2) P, valid since P**2 = I.
    rotated = tensor
    for tag, q in zip(gate.pauli, gate.targets):
        rotated = _apply_single_pauli(rotated, tag, q)
    return math.cos(theta / 2.0) * tensor - 1j * math.sin(theta / 2.0) * rotated


def _apply_cnot(tensor: np.ndarray, gate: Cnot) -> np.ndarray:
    hi_lo = _slices(tensor.ndim, {gate.control: 1, gate.target: 0})
    hi_hi = _slices(tensor.ndim, {gate.control: 1, gate.target: 1})
    out = tensor.copy()
    out[hi_lo] = tensor[hi_hi]
    out[hi_hi] = tensor[hi_lo]
    return out


def apply_circuit(spec: CircuitSpec, x) -> Statevector:
    """Run the circuit on |0...0> with angle vector x (wrapped mod 2*pi)."""
    x = wrap_angles(x)
    if x.shape != (spec.param_count,):
        raise ValueError(f"expected {spec.param_count} parameters, got shape {x.shape}")
    tensor = zero_state(spec.qubits).amplitudes.reshape((2,) * spec.qubits)
    for gate in spec.gates:
        if isinstance(gate, Rotation):
            theta = float(x[gate.param]) if gate.param is not None else gate.angle
            tensor = _apply_rotation(tensor, gate, theta)
        else:
            tensor = _apply_cnot(tensor, gate)
    return Statevector(tensor.reshape(-1), spec.qubits)


def _term_expectations(h: Hamiltonian, state: Statevector) -> np.ndarray:
    """Per-term <psi|P_k|psi>; raises if an imaginary residue exceeds 1e-8."""
    if h.qubits != state.qubits:
        raise ValueError(f"Hamiltonian on {h.qubits} qubits, state on {state.qubits}")
    tensor = state.amplitudes.reshape((2,) * state.qubits)
    conj = tensor.conj()
    values = np.empty(len(h.terms))
    for k, term in enumerate(h.terms):
        val = np.sum(conj * _apply_pauli_string(tensor, term.ops))
        if abs(val.imag) > 1e-8:
            raise ValueError(f"non-real Pauli expectation {val!r} for {term.ops!r}")
        values[k] = val.real
    return values


def expectation(h: Hamiltonian, state: Statevector) -> float:
    """Exact energy <psi|H|psi>."""
    weights = np.array([t.weight for t in h.terms])
    return float(weights @ _term_expectations(h, state))


def exact_energy(spec: CircuitSpec, h: Hamiltonian, x) -> float:
    """Noiseless objective value for angle vector x."""
    return expectation(h, apply_circuit(spec, x))


@dataclass(frozen=True)
class ObservationConfig:
    """How a single energy observation is simulated.

    binomial-per-term measures every Pauli term independently with `n_shots`
    shots; gaussian-approx adds a normal perturbation with the matching
    variance; exact returns the noiseless energy.
    """

    n_shots: int = 1024
    mode: str = "binomial-per-term"

    def __post_init__(self):
        if self.n_shots < 1:
            raise ValueError("n_shots must be >= 1")
        if self.mode not in OBSERVE_MODES:
            raise ValueError(f"mode must be one of {OBSERVE_MODES}, got {self.mode!r}")


def noise_variance(h: Hamiltonian, state: Statevector, cfg: ObservationConfig) -> float:
    """Shot-noise variance sum_k w_k^2 (1 - m_k^2) / n_shots of one observation."""
    if cfg.mode == "exact":
        return 0.0
    m = _term_expectations(h, state)
    weights = np.array([t.weight for t in h.terms])
    spread = np.clip(1.0 - m**2, 0.0, None)
    return float(np.sum(weights**2 * spread) / cfg.n_shots)


def observe(
    h: Hamiltonian, state: Statevector, cfg: ObservationConfig, rng: np.random.Generator
) -> float:
    """One noisy energy observation under the configured shot-noise model."""
    m = _term_expectations(h, state)
    weights = np.array([t.weight for t in h.terms])
    if cfg.mode == "exact":
        return float(weights @ m)
    if cfg.mode == "gaussian-approx":
        sd = math.sqrt(noise_variance(h, state, cfg))
        return float(weights @ m + sd * rng.standard_normal())
    # binomial-per-term: each +-1-valued Pauli gives heads with p = (1+m)/2
    p = np.clip((1.0 + m) / 2.0, 0.0, 1.0)
    hits = rng.binomial(cfg.n_shots, p)
    estimates = 2.0 * hits / cfg.n_shots - 1.0
    return float(weights @ estimates)


@dataclass(frozen=True)
class GroundState:
    """Exact ground level: energy, one eigenvector, and an orthobasis of the
    full ground space (columns of `basis`) when the level is degenerate."""

    energy: float
    state: Statevector
    degenerate: bool
    basis: np.ndarray


def ground_state(h: Hamiltonian, max_qubits: int = 12) -> GroundState:
    """Dense exact diagonalization; limited to small Q by the 2^Q x 2^Q matrix."""
    if h.qubits > max_qubits:
        raise ValueError(f"dense diagonalization limited to {max_qubits} qubits")
    mat = h.to_matrix()
    herm_err = float(np.max(np.abs(mat - mat.conj().T)))
    if herm_err > 1e-10:
        raise ValueError(f"Hamiltonian matrix not Hermitian (residue {herm_err:g})")
    evals, evecs = np.linalg.eigh(mat)
    e0 = float(evals[0])
    tol = 1e-9 * max(1.0, abs(e0))
    members = np.flatnonzero(evals <= e0 + tol)
    basis = evecs[:, members]
    return GroundState(
        energy=e0,
        state=Statevector(evecs[:, 0], h.qubits),
        degenerate=len(members) > 1,
        basis=basis,
    )


def fidelity(a: Statevector, b: Statevector) -> float:
    """Squared overlap |<a|b>|^2, invariant to global phases."""
    if a.qubits != b.qubits:
        raise ValueError("states live on different qubit counts")
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)


def ground_space_fidelity(gs: GroundState, state: Statevector) -> float:
    """Overlap with the full ground space: sum_i |<v_i|psi>|^2."""
    if gs.state.qubits != state.qubits:
        raise ValueError("states live on different qubit counts")
    return float(np.sum(np.abs(gs.basis.conj().T @ state.amplitudes) ** 2))


def parameter_shift_gradient(spec: CircuitSpec, h: Hamiltonian, x) -> np.ndarray:
    """Exact gradient via [f(x + pi/2 e_d) - f(x - pi/2 e_d)] / 2 per axis.

    Requires the exclusive parametrization (each angle on exactly one gate).
    """
    if not spec.is_exclusive:
        raise ValueError("shift-rule gradient requires one gate per parameter")
    x = wrap_angles(x)
    grad = np.empty(spec.param_count)
    for d in range(spec.param_count):
        shifted = x.copy()
        shifted[d] = x[d] + math.pi / 2.0
        plus = exact_energy(spec, h, shifted)
        shifted[d] = x[d] - math.pi / 2.0
        minus = exact_energy(spec, h, shifted)
        grad[d] = (plus - minus) / 2.0
    return grad
