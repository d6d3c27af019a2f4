import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from critsense import free_fermion as ff
from critsense.fisher import (
    FisherMatrix,
    SingularFisherError,
    cfi_matrix,
    cfi_matrix_analytic,
    magnetization_distribution,
    qfi_matrix_pure,
    qfi_point,
    state_derivative_fd,
    state_derivative_pt,
)
from critsense.spin_lattice import (
    DegenerateGroundStateError,
    FieldPoint,
    ProbeConfig,
    build_hamiltonian,
    ground_state,
)

coords = st.floats(-1.5, 1.5, allow_nan=False)


def test_derivative_vanishes_for_field_aligned_product_state():
    cfg = ProbeConfig(2, J=1e-300, B_z=1.0)
    d = state_derivative_pt(cfg, FieldPoint(), "z")
    np.testing.assert_allclose(d, 0.0, atol=1e-12)
    d = state_derivative_fd(cfg, FieldPoint(), "z")
    np.testing.assert_allclose(d, 0.0, atol=1e-12)


@pytest.mark.parametrize("direction", ["x", "z"])
def test_pt_matches_finite_difference(direction):
    cfg, h = ProbeConfig(8), FieldPoint(0.3, 0.4)
    pt = state_derivative_pt(cfg, h, direction)
    fd = state_derivative_fd(cfg, h, direction, step=1e-5)
    assert np.linalg.norm(pt - fd) <= 1e-5 * np.linalg.norm(pt)
    phi = ground_state(build_hamiltonian(cfg, h), "dense").ground
    assert abs(phi @ pt) <= 1e-12


@pytest.mark.parametrize("direction", ["x", "z"])
def test_linear_response_matches_sum_over_states(direction):
    cfg, h = ProbeConfig(10, B_x=1.39, B_z=-0.39), FieldPoint(0.5, 0.7)
    dense = state_derivative_pt(cfg, h, direction, method="dense")
    it = state_derivative_pt(cfg, h, direction, method="iterative")
    assert np.linalg.norm(dense - it) <= 1e-8 * np.linalg.norm(dense)


def test_fd_step_halving_self_consistent_at_L12():
    cfg, h = ProbeConfig(12), FieldPoint(0.4, 0.9)
    a = state_derivative_fd(cfg, h, "x", step=1e-4, method="iterative")
    b = state_derivative_fd(cfg, h, "x", step=5e-5, method="iterative")
    assert np.linalg.norm(a - b) <= 1e-3 * np.linalg.norm(b)


def test_degenerate_ground_state_refused():
    with pytest.raises(DegenerateGroundStateError):
        state_derivative_pt(ProbeConfig(2), FieldPoint(), "x")


def test_qfi_of_zero_derivative_is_zero():
    phi = np.zeros(8)
    phi[0] = 1.0
    np.testing.assert_array_equal(qfi_matrix_pure(phi, np.zeros(8), np.zeros(8)).matrix, np.zeros((2, 2)))


def test_qfi_rejects_unnormalized_state():
    with pytest.raises(ValueError):
        qfi_matrix_pure(np.ones(4), np.zeros(4))


def test_qfi_gauge_invariant():
    phi, ds, _ = __import__("critsense.fisher", fromlist=["x"]).ground_and_derivatives(
        ProbeConfig(6), FieldPoint(0.2, 0.8)
    )
    a = qfi_matrix_pure(phi, *ds).matrix
    b = qfi_matrix_pure(-phi, *(-d for d in ds)).matrix
    np.testing.assert_allclose(a, b, rtol=1e-10)


@pytest.mark.parametrize("h", [0.5, 1.0, 1.5])
def test_single_parameter_qfi_matches_free_fermions(h):
    F, _ = qfi_point(ProbeConfig(10, B_z=h), FieldPoint(), ("z",))
    assert F.matrix[0, 0] == pytest.approx(ff.qfi_transverse(h, 1.0, 10).qfi_richardson, rel=1e-3)


def test_operating_point_qfi_is_psd_and_invertible():
    F, _ = qfi_point(ProbeConfig(10, B_x=1.39, B_z=-0.39), FieldPoint(0.5, 0.7))
    assert F.is_psd()
    assert np.isfinite(np.trace(F.inverse()))


def test_inverse_refuses_singular():
    with pytest.raises(SingularFisherError) as info:
        FisherMatrix(np.array([[1.0, 1.0], [1.0, 1.0]]), "quantum").inverse()
    assert info.value.condition > 1e12


def test_inverse_closed_form():
    F = FisherMatrix(np.array([[4.0, 1.0], [1.0, 2.0]]), "quantum")
    np.testing.assert_allclose(F.inverse(), np.linalg.inv(F.matrix), rtol=1e-14)


def test_distribution_of_all_up_state():
    phi = np.zeros(2**5)
    phi[0] = 1.0
    dist = magnetization_distribution(phi)
    assert dist.outcomes[0] == 5 and dist.probabilities[0] == 1.0
    assert dist.probabilities[1:].sum() == 0.0


def test_distribution_binomial_counts():
    dist = magnetization_distribution(np.full(4, 0.5))
    np.testing.assert_allclose(dist.outcomes, [2, 0, -2])
    np.testing.assert_allclose(dist.probabilities, [0.25, 0.5, 0.25])


def test_deep_paramagnet_concentrates_at_full_magnetization():
    phi = ground_state(build_hamiltonian(ProbeConfig(8, B_z=50.0), FieldPoint()), "dense").ground
    dist = magnetization_distribution(phi)
    assert dist.probabilities[0] > 0.99
    assert dist.probabilities.sum() == pytest.approx(1.0, abs=1e-12)


def test_cfi_zero_for_field_independent_distribution():
    F = cfi_matrix(ProbeConfig(2, J=1e-300, B_z=1.0), FieldPoint(), directions=("z",))
    np.testing.assert_allclose(F.matrix, 0.0, atol=1e-12)


@pytest.mark.parametrize("h", [0.3, 0.9, 1.0, 1.4, 2.5])
def test_single_parameter_cfi_below_qfi(h):
    cfg = ProbeConfig(8, B_z=h)
    Q, _ = qfi_point(cfg, FieldPoint(), ("z",))
    C = cfi_matrix(cfg, FieldPoint(), directions=("z",))
    assert C.matrix[0, 0] <= Q.matrix[0, 0] * (1 + 1e-6)


def test_cfi_finite_difference_matches_analytic():
    cfg, h = ProbeConfig(8, B_x=1.39, B_z=-0.39), FieldPoint(0.5, 0.7)
    fd = cfi_matrix(cfg, h, check_step=True)
    _, exact, _ = cfi_matrix_analytic(cfg, h)
    np.testing.assert_allclose(fd.matrix, exact.matrix, rtol=1e-5)
    assert fd.meta["step_change"] < 1e-3


def test_coarse_step_triggers_diagnostic():
    with pytest.warns(RuntimeWarning, match="step-halving"):
        cfi_matrix(ProbeConfig(8), FieldPoint(0.3, 1.0), step=0.3, check_step=True)


@given(coords, st.floats(-0.2, 1.5))
def test_quantum_and_classical_matrices_symmetric_psd(hx, hz):
    # total h_z stays >= 0.4, away from the degenerate classical line
    cfg = ProbeConfig(6, B_x=0.7, B_z=0.6)
    Q, C, _ = cfi_matrix_analytic(cfg, FieldPoint(hx, hz))
    for F in (Q, C):
        np.testing.assert_allclose(F.matrix, F.matrix.T, rtol=1e-10)
        assert F.is_psd()


def test_measurement_bound_at_random_points():
    # points where the ground state is (near) degenerate have no pure-state
    # QFI; they are redrawn until 50 usable points are collected
    rng = np.random.default_rng(7)
    cfg = ProbeConfig(8)
    checked = 0
    while checked < 50:
        hx, hz = rng.uniform(-2, 2, size=2)
        try:
            Q, C, _ = cfi_matrix_analytic(cfg, FieldPoint(hx, hz))
        except DegenerateGroundStateError:
            continue
        assert np.linalg.eigvalsh(Q.matrix - C.matrix)[0] >= -1e-6 * np.linalg.norm(Q.matrix)
        checked += 1


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_shift_covariance(cx, cz):
    cfg, h = ProbeConfig(6, B_x=0.4, B_z=0.9), FieldPoint(0.3, 0.2)
    a, _ = qfi_point(cfg, h)
    b, _ = qfi_point(cfg.with_control(0.4 - cx, 0.9 - cz), FieldPoint(0.3 + cx, 0.2 + cz))
    np.testing.assert_allclose(a.matrix, b.matrix, rtol=1e-8, atol=1e-8 * np.abs(a.matrix).max())
