import math

import numpy as np
import pytest

from liyau_lab.geometry import build_manifold, flat_torus, icosphere, integrate
from liyau_lab.steady import (
    ConstraintState,
    MinimizeOptions,
    OracleError,
    ProjectionError,
    aligned_l2_distance,
    constraint_values,
    energy,
    fourier_shift,
    minimize_energy,
    multipliers,
    oracle_1d,
    project_to_A,
    rescale_and_residual,
)

K_HALF = 1.8540746773013719  # complete elliptic integral K(m = 1/2)


@pytest.fixture(scope="module")
def circle_result(circle256):
    x = circle256.coords[:, 0]
    return minimize_energy(circle256, 3.0, np.sin(x) + 0.1 * np.cos(2 * x))


def assert_in_A(M, u, p):
    c1, c2 = constraint_values(M, u, p)
    assert abs(c1 - 1) <= 1e-10
    assert abs(c2) <= 1e-10 * integrate(M, np.abs(u) ** p)


def test_projection_of_sine(circle128):
    x = circle128.coords[:, 0]
    v = project_to_A(np.sin(x), circle128, 3.0)
    s = v[32] / np.sin(x)[32]
    assert s == pytest.approx((3 * math.pi / 4) ** -0.25, rel=1e-12)
    assert np.allclose(v, s * np.sin(x), atol=1e-14)
    assert_in_A(circle128, v, 3.0)


def test_projection_idempotent(circle128):
    x = circle128.coords[:, 0]
    v = project_to_A(np.sin(x) + 0.2 * np.cos(3 * x), circle128, 3.0)
    w = project_to_A(v, circle128, 3.0)
    assert np.max(np.abs(w - v)) <= 1e-10


def test_projection_shift_in_range(circle128):
    x = circle128.coords[:, 0]
    u = 1 + np.sin(x)
    v = project_to_A(u, circle128, 3.0)
    assert_in_A(circle128, v, 3.0)
    # v = s (u - c): recover c from two nodes
    s = (v[10] - v[40]) / (u[10] - u[40])
    c = u[10] - v[10] / s
    assert 0 < c < 2


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.5])
def test_projection_random_fields(p):
    rng = np.random.default_rng(int(10 * p))
    for M in (build_manifold(flat_torus(2, 16)), build_manifold(icosphere(2))):
        v = project_to_A(rng.standard_normal(M.node_count) + 0.5, M, p)
        assert_in_A(M, v, p)


def test_projection_rejects_constant(circle128):
    with pytest.raises(ProjectionError):
        project_to_A(np.full(circle128.node_count, 2.0), circle128, 3.0)


def test_constraint_state(circle128):
    x = circle128.coords[:, 0]
    st = ConstraintState.of(circle128, project_to_A(np.sin(x), circle128, 3.0), 3.0)
    assert st.c1 == pytest.approx(1.0)
    assert st.E > 0


def test_circle_minimiser_matches_oracle(circle_result, circle256):
    r = circle_result
    assert r.converged
    orc = oracle_1d(3.0, 2 * math.pi, circle256.node_count)
    assert abs(r.energy - orc.energy) <= 1e-4
    assert abs(r.lam - orc.lam) <= 1e-4 * orc.lam
    d, _, _ = aligned_l2_distance(r.U, orc.U, 2 * math.pi)
    assert d <= 1e-2


def test_minimiser_invariants(circle_result, circle256):
    r = circle_result
    assert_in_A(circle256, r.u, 3.0)
    assert abs(r.lam - 2 * r.energy) <= 1e-8 * r.lam
    assert abs(r.mu) <= 1e-6 * r.lam
    assert r.pde_residual <= 5e-3
    assert r.u.min() < 0 < r.u.max()


def test_energy_monotone(circle_result):
    assert np.all(np.diff(circle_result.energy_history) <= 0)


def test_iteration_cap_flags_non_converged(circle128):
    x = circle128.coords[:, 0]
    r = minimize_energy(circle128, 3.0, np.sin(x) + 0.5 * np.cos(2 * x),
                        MinimizeOptions(max_iter=3))
    assert not r.converged and r.iterations == 3


def test_minimise_rejects_supercritical_exponent():
    M = build_manifold(flat_torus(3, 8))
    with pytest.raises(ValueError):
        minimize_energy(M, 5.0, M.coords[:, 0])


def test_torus_minimiser_beats_extended_profile():
    M2 = build_manifold(flat_torus(2, 32))
    x, y = M2.coords[:, 0], M2.coords[:, 1]
    rng = np.random.default_rng(11)
    a = rng.uniform(0.5, 1.0, 2)
    r2 = minimize_energy(M2, 3.0, a[0] * np.sin(x) + 0.3 * a[1] * np.sin(2 * x) * (1 + 0.1 * np.cos(y)))
    assert r2.converged and r2.pde_residual <= 5e-3
    assert r2.u.min() < 0 < r2.u.max()
    M1 = build_manifold(flat_torus(1, 32))
    r1 = minimize_energy(M1, 3.0, np.sin(M1.coords[:, 0]))
    extended = project_to_A(np.repeat(r1.u, 32), M2, 3.0)
    assert r2.energy <= energy(M2, extended) + 1e-12


def test_sphere_minimiser():
    M = build_manifold(icosphere(3))
    # an axis-aligned odd seed; generic seeds drift slowly along the
    # near-rotational modes of the mesh and need far more iterations
    r = minimize_energy(M, 3.0, M.coords[:, 2])
    assert r.converged
    assert r.pde_residual <= 5e-3
    assert abs(r.mu) <= 1e-6 * r.lam


def test_mesh_independence():
    E = []
    for n in (64, 128, 256):
        M = build_manifold(flat_torus(1, n))
        x = M.coords[:, 0]
        E.append(minimize_energy(M, 3.0, np.sin(x) + 0.1 * np.cos(2 * x)).energy)
    ratio = (E[1] - E[0]) / (E[2] - E[1])
    assert 3.5 <= ratio <= 4.5


def test_multipliers_checks(circle_result, circle256):
    lam, mu = multipliers(circle_result.u, circle256, 3.0)
    assert lam == pytest.approx(circle_result.lam)
    with pytest.raises(ValueError):
        multipliers(np.zeros(circle256.node_count), circle256, 3.0)


def test_rescale_injected_oracle():
    orc = oracle_1d(3.0, 2 * math.pi, 4096)
    M = build_manifold(flat_torus(1, 4096))
    u = orc.U / math.sqrt(orc.lam)
    assert_in_A(M, u, 3.0)
    U, res = rescale_and_residual(u, orc.lam, M, 3.0)
    assert np.allclose(U, orc.U, atol=1e-12)
    assert res <= 1e-6


def test_rescale_scaling_consistency(circle_result, circle256):
    u, lam = circle_result.u, circle_result.lam
    for alpha in (0.5, 3.0):
        U1, _ = rescale_and_residual(u, lam, circle256, 3.0)
        U2, _ = rescale_and_residual(alpha * u, lam * alpha ** (1 - 3.0), circle256, 3.0)
        assert np.allclose(U1, U2, atol=1e-12)


def test_rescale_guard(circle128):
    with pytest.raises(ValueError):
        rescale_and_residual(np.zeros(circle128.node_count), 0.0, circle128, 3.0)


def test_oracle_elliptic_profile():
    orc = oracle_1d(3.0, 2 * math.pi, 4096)
    assert orc.method == "jacobi_cn"
    assert orc.amplitude == pytest.approx(4 * K_HALF / (2 * math.pi), rel=1e-14)
    assert abs(orc.amplitude - 1.18034) <= 1e-5
    assert np.max(np.abs(orc.U)) == pytest.approx(orc.amplitude, rel=1e-12)
    n = orc.U.size
    k = np.fft.fftfreq(n, d=2 * math.pi / n) * 2 * math.pi
    Uxx = np.real(np.fft.ifft(-(k ** 2) * np.fft.fft(orc.U)))
    assert np.max(np.abs(-Uxx - orc.U ** 3)) <= 1e-8
    # the odd nonlinearity maps U to -U
    assert np.max(np.abs(-(-Uxx) - (-orc.U) ** 3)) <= 1e-8


def test_oracle_two_modes():
    one = oracle_1d(3.0, 2 * math.pi, 1024)
    two = oracle_1d(3.0, 2 * math.pi, 1024, modes=2)
    assert two.amplitude == pytest.approx(2 * one.amplitude, rel=1e-14)
    assert np.allclose(two.U[:512], two.U[512:], atol=1e-12)
    with pytest.raises(OracleError):
        oracle_1d(3.0, modes=0)


def test_shooting_agrees_with_elliptic_branch():
    from liyau_lab.steady import _shooting_profile
    A, fn = _shooting_profile(3.0, 2 * math.pi)
    orc = oracle_1d(3.0, 2 * math.pi, 256)
    assert A == pytest.approx(orc.amplitude, rel=1e-9)
    assert np.max(np.abs(fn(orc.x) - orc.U)) <= 1e-7


def test_shooting_general_exponent_and_minimiser():
    orc = oracle_1d(2.5, 2 * math.pi, 256)
    assert orc.method == "shooting"
    M = build_manifold(flat_torus(1, 256))
    x = M.coords[:, 0]
    r = minimize_energy(M, 2.5, np.sin(x) + 0.1 * np.cos(2 * x))
    d, _, _ = aligned_l2_distance(r.U, orc.U, 2 * math.pi)
    assert d <= 1e-2


def test_aligned_distance_quotients_shift_and_sign():
    n, L = 256, 2 * math.pi
    x = np.arange(n) * L / n
    f = np.sin(x) + 0.3 * np.cos(2 * x)
    g = -fourier_shift(f, 0.123, L)
    d, shift, sign = aligned_l2_distance(g, f, L)
    assert d <= 1e-9 and sign == -1
