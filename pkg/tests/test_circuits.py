"""Simulator-level tests: ansatz structure, statevector evolution against a
dense-matrix oracle, Hamiltonian construction, observation noise, and
exact-diagonalization diagnostics."""

import math

import numpy as np
import pytest

from vqebo.circuits import (
    CircuitSpec,
    Cnot,
    Hamiltonian,
    ObservationConfig,
    PauliString,
    Rotation,
    Statevector,
    apply_circuit,
    build_ansatz,
    build_hamiltonian,
    exact_energy,
    expectation,
    fidelity,
    ground_space_fidelity,
    ground_state,
    noise_variance,
    observe,
    parameter_shift_gradient,
    wrap_angles,
    zero_state,
)

TWO_PI = 2.0 * math.pi


def _ry(theta):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _rz(theta):
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


# CNOT with control on the left kron factor, matching qubit-0-leftmost layout
_CNOT01 = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


def _dense_q2l1_state(x):
    """Independent oracle: explicit 4x4 gate matrices multiplied in order."""
    unitary = np.eye(4, dtype=complex)
    eye = np.eye(2)
    for mat in (
        np.kron(_ry(x[0]), eye),
        np.kron(eye, _ry(x[1])),
        np.kron(_rz(x[2]), eye),
        np.kron(eye, _rz(x[3])),
        _CNOT01,
        np.kron(_ry(x[4]), eye),
        np.kron(eye, _ry(x[5])),
        np.kron(_rz(x[6]), eye),
        np.kron(eye, _rz(x[7])),
    ):
        unitary = mat @ unitary
    return unitary @ np.array([1, 0, 0, 0], dtype=complex)


class TestBuildAnsatz:
    @pytest.mark.parametrize("qubits,layers,expected", [(3, 2, 18), (3, 3, 24), (5, 3, 40)])
    def test_parameter_count(self, qubits, layers, expected):
        assert build_ansatz(qubits, layers).param_count == expected

    def test_structure_open(self):
        spec = build_ansatz(3, 2)
        rotations = [g for g in spec.gates if isinstance(g, Rotation)]
        cnots = [g for g in spec.gates if isinstance(g, Cnot)]
        assert len(rotations) == 2 * 3 * (2 + 1)
        assert len(cnots) == 2 * 2  # (Q-1) adjacent pairs per layer
        assert [(g.control, g.target) for g in cnots] == [(0, 1), (1, 2)] * 2
        assert spec.is_exclusive

    def test_structure_periodic(self):
        spec = build_ansatz(4, 1, boundary="periodic")
        cnots = [(g.control, g.target) for g in spec.gates if isinstance(g, Cnot)]
        assert cnots == [(0, 1), (1, 2), (2, 3), (3, 0)]

    def test_zero_qubits_rejected(self):
        with pytest.raises(ValueError):
            build_ansatz(0, 1)


class TestApplyCircuit:
    def test_zero_angles_fix_origin(self):
        spec = build_ansatz(3, 2)
        state = apply_circuit(spec, np.zeros(spec.param_count))
        assert abs(state.amplitudes[0] - 1.0) < 1e-12

    def test_ry_pi_flips_single_qubit(self):
        spec = CircuitSpec(1, 0, (Rotation("Y", (0,), param=0),), 1)
        state = apply_circuit(spec, [math.pi])
        assert abs(abs(state.amplitudes[1]) - 1.0) < 1e-12

    def test_matches_dense_matrix_oracle(self):
        spec = build_ansatz(2, 1)
        rng = np.random.default_rng(7)
        for _ in range(5):
            x = rng.uniform(0.0, TWO_PI, 8)
            got = apply_circuit(spec, x).amplitudes
            assert np.max(np.abs(got - _dense_q2l1_state(x))) < 1e-12

    def test_wrapping_is_transparent(self):
        spec = build_ansatz(2, 1)
        x = np.linspace(0.5, 5.5, 8)
        a = apply_circuit(spec, x).amplitudes
        b = apply_circuit(spec, x + TWO_PI).amplitudes
        assert np.max(np.abs(a - b)) < 1e-12

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            apply_circuit(build_ansatz(2, 1), np.zeros(7))

    def test_norm_preserved(self):
        rng = np.random.default_rng(11)
        for qubits, layers in [(1, 0), (2, 1), (3, 2), (4, 1)]:
            spec = build_ansatz(qubits, layers)
            for _ in range(5):
                state = apply_circuit(spec, rng.uniform(0, TWO_PI, spec.param_count))
                assert abs(np.sum(np.abs(state.amplitudes) ** 2) - 1.0) < 1e-12

    def test_multi_qubit_rotation_gate(self):
        # exp(-i*theta/2 XX) on |00> = cos(theta/2)|00> - i sin(theta/2)|11>
        spec = CircuitSpec(2, 0, (Rotation("XX", (0, 1), param=0),), 1)
        theta = 1.234
        amps = apply_circuit(spec, [theta]).amplitudes
        assert abs(amps[0] - math.cos(theta / 2)) < 1e-12
        assert abs(amps[3] - (-1j * math.sin(theta / 2))) < 1e-12


class TestBuildHamiltonian:
    def test_q2_critical_terms(self):
        h = build_hamiltonian(2, (-1, 0, 0), (0, 0, -1))
        assert [(t.ops, t.weight) for t in h.terms] == [("XX", 1.0), ("ZI", 1.0), ("IZ", 1.0)]

    def test_q5_full_term_count(self):
        h = build_hamiltonian(5, (1, 1, 1), (1, 1, 1))
        assert len(h.terms) == 3 * 4 + 3 * 5

    def test_q3_off_critical_terms(self):
        h = build_hamiltonian(3, (0, 0, -1), (1.5, 0, 0))
        assert [(t.ops, t.weight) for t in h.terms] == [
            ("ZZI", 1.0),
            ("IZZ", 1.0),
            ("XII", -1.5),
            ("IXI", -1.5),
            ("IIX", -1.5),
        ]

    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            build_hamiltonian(2, (0, 0, 0), (0, 0, 0))

    def test_invalid_pauli_tag_rejected(self):
        with pytest.raises(ValueError):
            PauliString("XA", 1.0)

    def test_term_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            Hamiltonian((PauliString("XX", 1.0),), qubits=3)


class TestExpectation:
    def test_q2_ising_on_origin(self):
        h = build_hamiltonian(2, (-1, 0, 0), (0, 0, -1))
        assert expectation(h, zero_state(2)) == pytest.approx(2.0, abs=1e-12)

    def test_eigenstate_gives_eigenvalue(self):
        h = build_hamiltonian(3, (1, 0.5, -1), (0.2, 0, 1))
        mat = h.to_matrix()
        evals, evecs = np.linalg.eigh(mat)
        for k in (0, 3, 7):
            state = Statevector(evecs[:, k], 3)
            assert expectation(h, state) == pytest.approx(evals[k], abs=1e-10)

    def test_matches_dense_quadratic_form(self):
        rng = np.random.default_rng(3)
        for qubits in (1, 2, 3):
            h = build_hamiltonian(qubits, (1, -0.3, 0.7), (0.1, 0.4, -1)) if qubits > 1 \
                else build_hamiltonian(1, (0, 0, 0), (0.1, 0.4, -1))
            raw = rng.standard_normal(2**qubits) + 1j * rng.standard_normal(2**qubits)
            state = Statevector(raw / np.linalg.norm(raw), qubits)
            dense = np.real(state.amplitudes.conj() @ h.to_matrix() @ state.amplitudes)
            assert expectation(h, state) == pytest.approx(dense, abs=1e-10)

    def test_dimension_mismatch_rejected(self):
        h = build_hamiltonian(2, (-1, 0, 0), (0, 0, -1))
        with pytest.raises(ValueError):
            expectation(h, zero_state(3))

    def test_variational_bound(self):
        h = build_hamiltonian(3, (-1, 0, 0), (0, 0, -1))
        spec = build_ansatz(3, 1)
        floor = ground_state(h).energy
        rng = np.random.default_rng(5)
        for _ in range(20):
            x = rng.uniform(0, TWO_PI, spec.param_count)
            assert exact_energy(spec, h, x) >= floor - 1e-10


class TestObserve:
    def test_eigenstate_has_zero_shot_noise(self):
        h = build_hamiltonian(2, (0, 0, 0), (0, 0, -1))  # diagonal terms only
        state = zero_state(2)
        cfg = ObservationConfig(n_shots=8)
        rng = np.random.default_rng(0)
        exact = expectation(h, state)
        draws = [observe(h, state, cfg, rng) for _ in range(50)]
        assert draws == [exact] * 50
        assert noise_variance(h, state, cfg) == 0.0

    def test_exact_mode(self):
        h = build_hamiltonian(2, (-1, 0, 0), (0, 0, -1))
        spec = build_ansatz(2, 1)
        x = np.random.default_rng(1).uniform(0, TWO_PI, 8)
        state = apply_circuit(spec, x)
        cfg = ObservationConfig(n_shots=1, mode="exact")
        assert observe(h, state, cfg, np.random.default_rng(0)) == expectation(h, state)

    def test_binomial_unbiased_and_variance(self):
        # statistical oracle: 1e4 draws, mean within 4 standard errors
        h = build_hamiltonian(2, (-1, 0, 0), (0, 0, -1))
        spec = build_ansatz(2, 1)
        x = np.random.default_rng(2).uniform(0, TWO_PI, 8)
        state = apply_circuit(spec, x)
        cfg = ObservationConfig(n_shots=1024)
        exact = expectation(h, state)
        predicted_var = noise_variance(h, state, cfg)
        rng = np.random.default_rng(42)
        draws = np.array([observe(h, state, cfg, rng) for _ in range(10_000)])
        stderr = math.sqrt(predicted_var / draws.size)
        assert abs(draws.mean() - exact) < 4 * stderr

    def test_gaussian_mode_matches_variance(self):
        h = build_hamiltonian(2, (-1, 0, 0), (0, 0, -1))
        spec = build_ansatz(2, 1)
        x = np.random.default_rng(4).uniform(0, TWO_PI, 8)
        state = apply_circuit(spec, x)
        cfg = ObservationConfig(n_shots=256, mode="gaussian-approx")
        rng = np.random.default_rng(9)
        draws = np.array([observe(h, state, cfg, rng) for _ in range(20_000)])
        assert draws.var() == pytest.approx(noise_variance(h, state, cfg), rel=0.1)

    def test_invalid_mode_rejected(self):
        with pytest.raises(ValueError):
            ObservationConfig(mode="bogus")
        with pytest.raises(ValueError):
            ObservationConfig(n_shots=0)


class TestNoiseVariance:
    def test_single_term_half_probability(self):
        h = Hamiltonian((PauliString("X", 1.0),), 1)
        state = zero_state(1)  # <X> = 0
        assert noise_variance(h, state, ObservationConfig(n_shots=1)) == pytest.approx(1.0)

    def test_matches_monte_carlo(self):
        # Monte Carlo oracle: empirical variance of 1e5 draws within 5%
        h = build_hamiltonian(2, (-1, 0, 0), (0, 0, -1))
        spec = build_ansatz(2, 1)
        x = np.random.default_rng(6).uniform(0, TWO_PI, 8)
        state = apply_circuit(spec, x)
        cfg = ObservationConfig(n_shots=64)
        rng = np.random.default_rng(13)
        draws = np.array([observe(h, state, cfg, rng) for _ in range(100_000)])
        assert draws.var() == pytest.approx(noise_variance(h, state, cfg), rel=0.05)


class TestGroundState:
    def test_q1_field_only(self):
        h = build_hamiltonian(1, (0, 0, 0), (0, 0, -1))  # -> +Z
        gs = ground_state(h)
        assert gs.energy == pytest.approx(-1.0, abs=1e-12)
        assert abs(gs.state.amplitudes[1]) == pytest.approx(1.0, abs=1e-12)
        assert not gs.degenerate

    def test_q2_ising_against_characteristic_polynomial(self):
        # H = XX + ZI + IZ in blocks {|00>,|11>} and {|01>,|10>}:
        #   [[2,1],[1,-2]] -> lambda^2 - 5 = 0 -> +-sqrt(5)
        #   [[0,1],[1,0]]  -> +-1
        # so the minimum eigenvalue is exactly -sqrt(5).
        h = build_hamiltonian(2, (-1, 0, 0), (0, 0, -1))
        assert ground_state(h).energy == pytest.approx(-math.sqrt(5.0), abs=1e-12)

    def test_q5_ising_lower_bounds_reported_convergence(self):
        h = build_hamiltonian(5, (-1, 0, 0), (0, 0, -1))
        assert ground_state(h).energy <= -5.97

    def test_degenerate_space_flagged(self):
        h = build_hamiltonian(2, (0, 0, -1), (0, 0, 0))  # +ZZ, ground space {01, 10}
        gs = ground_state(h)
        assert gs.degenerate
        assert gs.basis.shape == (4, 2)
        bell = np.zeros(4, dtype=complex)
        bell[1] = bell[2] = 1 / math.sqrt(2)
        assert ground_space_fidelity(gs, Statevector(bell, 2)) == pytest.approx(1.0)

    def test_too_many_qubits_rejected(self):
        h = build_hamiltonian(4, (-1, 0, 0), (0, 0, -1))
        with pytest.raises(ValueError):
            ground_state(h, max_qubits=3)


class TestFidelity:
    def test_identical_and_orthogonal(self):
        a = zero_state(2)
        b = Statevector(np.array([0, 1, 0, 0], dtype=complex), 2)
        assert fidelity(a, a) == 1.0
        assert fidelity(a, b) == 0.0

    def test_global_phase_invariance(self):
        rng = np.random.default_rng(8)
        raw = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        a = Statevector(raw / np.linalg.norm(raw), 2)
        for theta in (0.3, 1.7, 4.4):
            b = Statevector(np.exp(1j * theta) * a.amplitudes, 2)
            assert fidelity(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            raw = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
            a = Statevector(raw[0] / np.linalg.norm(raw[0]), 2)
            b = Statevector(raw[1] / np.linalg.norm(raw[1]), 2)
            assert fidelity(a, b) == fidelity(b, a)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fidelity(zero_state(1), zero_state(2))


class TestParameterShift:
    def test_matches_finite_differences(self):
        # finite-difference oracle, central h=1e-5
        h = build_hamiltonian(2, (-1, 0, 0), (0, 0, -1))
        spec = build_ansatz(2, 1)
        rng = np.random.default_rng(12)
        step = 1e-5
        for _ in range(5):
            x = rng.uniform(0, TWO_PI, 8)
            grad = parameter_shift_gradient(spec, h, x)
            for d in range(8):
                hi = x.copy()
                hi[d] += step
                lo = x.copy()
                lo[d] -= step
                fd = (exact_energy(spec, h, hi) - exact_energy(spec, h, lo)) / (2 * step)
                assert abs(grad[d] - fd) < 1e-6

    def test_stationary_point(self):
        # single R_Y qubit with H = -Z gives f(x) = -cos(x); flat at x = 0
        h = Hamiltonian((PauliString("Z", -1.0),), 1)
        spec = CircuitSpec(1, 0, (Rotation("Y", (0,), param=0),), 1)
        grad = parameter_shift_gradient(spec, h, np.zeros(1))
        assert abs(grad[0]) < 1e-12

    def test_flat_direction_is_zero(self):
        # leading R_Z on |0> is a pure phase: the objective ignores param 0
        h = Hamiltonian((PauliString("Z", 1.0),), 1)
        spec = CircuitSpec(
            1, 0, (Rotation("Z", (0,), param=0), Rotation("Y", (0,), param=1)), 2
        )
        grad = parameter_shift_gradient(spec, h, np.array([1.2, 0.7]))
        assert abs(grad[0]) < 1e-12

    def test_shared_parameter_rejected(self):
        spec = CircuitSpec(
            1, 0, (Rotation("Y", (0,), param=0), Rotation("Z", (0,), param=0)), 1
        )
        with pytest.raises(ValueError):
            parameter_shift_gradient(spec, Hamiltonian((PauliString("Z", 1.0),), 1), [0.1])


class TestFunctionForm:
    def test_axis_restriction_is_first_order_sinusoid(self):
        h = build_hamiltonian(2, (-1, 0, 0), (0, 0, -1))
        spec = build_ansatz(2, 1)
        rng = np.random.default_rng(21)
        alphas = np.linspace(0, TWO_PI, 64, endpoint=False)
        design = np.column_stack([np.ones(64), np.cos(alphas), np.sin(alphas)])
        for _ in range(3):
            x = rng.uniform(0, TWO_PI, 8)
            axis = rng.integers(8)
            values = []
            for alpha in alphas:
                shifted = x.copy()
                shifted[axis] += alpha
                values.append(exact_energy(spec, h, shifted))
            coef, *_ = np.linalg.lstsq(design, np.array(values), rcond=None)
            assert np.max(np.abs(design @ coef - values)) < 1e-9


class TestStatevectorInvariants:
    def test_norm_enforced(self):
        with pytest.raises(ValueError):
            Statevector(np.array([1.0, 1.0], dtype=complex), 1)

    def test_shape_enforced(self):
        with pytest.raises(ValueError):
            Statevector(np.zeros(3, dtype=complex), 2)

    def test_wrap_angles_domain(self):
        x = np.array([-0.1, 0.0, TWO_PI, 7.0])
        w = wrap_angles(x)
        assert np.all((w >= 0) & (w < TWO_PI))
