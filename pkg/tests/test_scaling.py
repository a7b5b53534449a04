import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import barrier_resonance
from poincarezeta.errors import NoStableEigenvalues, ResolutionError, ValidationError
from poincarezeta.grushin import Window
from poincarezeta.scaling import (ScalingContour, discretize_scaled, cutoff_resolvent_difference,
                                  min_points, resonances_direct, scaled_symbol, smoothed_barrier,
                                  smoothstep_derivative, zero_potential)
from poincarezeta.qmaps import smoothstep

# resonances of the barrier 0.4 (tanh((x+1)/0.05) - tanh((x-1)/0.05)) at h = 0.05,
# roots of the matching Wronskian of outgoing solutions (DOP853, rtol 1e-13)
BARRIER_RESONANCES = [
    -0.19385261495385286 - 0.0011094971775981643j,
    -0.1754169835279821 - 0.004435973561935532j,
    -0.14471171708486044 - 0.009973797480252827j,
    -0.10176488521443855 - 0.017714798980115697j,
    -0.04661036876483169 - 0.02764961498691635j,
]
WINDOW = Window(-0.45, 0.0, -0.1, 0.01)
V = smoothed_barrier(0.8, 1.0, 0.05)


def test_smoothstep_derivative_matches_difference():
    t = np.linspace(0.01, 0.99, 50)
    e = 1e-6
    fd = (smoothstep(t + e) - smoothstep(t - e)) / (2 * e)
    assert np.abs(fd - smoothstep_derivative(t)).max() < 1e-7
    assert smoothstep_derivative(np.array([-1.0, 0.0, 1.0, 2.0])).tolist() == [0, 0, 0, 0]


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.2), st.floats(0.2, 3.0), st.floats(-10, 10))
def test_contour_profile(theta, R, x):
    c = ScalingContour(theta, R)
    if abs(x) <= R:
        assert c.f(x) == 0
    if abs(x) >= 2 * R:
        assert c.f(x) == pytest.approx(x * math.tan(theta))
    # f' = O(theta): bounded by tan(theta) (1 + 2 max sigma')
    assert abs(c.df(x)) <= math.tan(theta) * (1 + 2 * 2.0) + 1e-12


def test_contour_validation():
    with pytest.raises(ValidationError):
        ScalingContour(-0.1, 1.0)
    with pytest.raises(ValidationError):
        ScalingContour(0.3, 0.0)
    c = ScalingContour.log_scaled(1.0, 0.05, 1.0)
    assert c.theta == pytest.approx(0.05 * math.log(20))


def test_scaled_symbol_theta_zero():
    x = np.linspace(-5, 5, 11)
    xi = np.linspace(-2, 2, 11)
    p = scaled_symbol(V, ScalingContour(0.0, 1.5), x, xi)
    assert np.abs(p - (xi ** 2 + V(x) - 1)).max() < 1e-15


def test_scaled_symbol_free_rotation():
    th = 0.2
    c = ScalingContour(th, 1.0)
    x = np.array([3.0, 5.0, -4.0])
    xi = np.array([0.5, 1.0, 1.5])
    p = scaled_symbol(zero_potential, c, x, xi)
    # linear f = tan(theta) x: (1 + i tan)^{-2} = cos^2 e^{-2 i theta}
    assert np.abs(p - (math.cos(th) ** 2 * np.exp(-2j * th) * xi ** 2 - 1)).max() < 1e-14
    assert np.abs(p - (np.exp(-2j * th) * xi ** 2 - 1)).max() < 2 * th ** 2 * xi.max() ** 2


@pytest.mark.parametrize("theta", [0.1, 0.3, 0.5])
def test_scaled_symbol_sign_outside(theta):
    c = ScalingContour(theta, 1.5)
    x = np.concatenate([np.linspace(-8, -3, 60), np.linspace(3, 8, 60)])
    xi = np.linspace(-2, 2, 401)
    X, XI = np.meshgrid(x, xi)
    p_real = XI ** 2 + V(X).real - 1
    near = np.abs(p_real) <= 0.1
    im = scaled_symbol(V, c, X, XI).imag[near]
    assert im.max() <= -0.5 * theta


def test_discretization_hermitian_and_symmetric():
    A0 = discretize_scaled(V, ScalingContour(0.0, 1.5), 0.05, 4.0, 400).dense()
    assert np.abs(A0 - A0.conj().T).max() < 1e-12
    A = discretize_scaled(V, ScalingContour(0.4, 1.5), 0.05, 4.0, 400).dense()
    assert np.abs(A - A.T).max() < 1e-12


def test_discretization_validation():
    c = ScalingContour(0.3, 1.5)
    with pytest.raises(ResolutionError):
        discretize_scaled(V, c, 0.05, 4.0, min_points(4.0, 0.05) - 1)
    with pytest.raises(ValidationError):
        discretize_scaled(V, c, 0.05, 2.9, 2000)


def test_free_dirichlet_spectrum():
    L, h, n = 2.0, 0.05, 2000
    w = np.sort(np.linalg.eigvalsh(discretize_scaled(zero_potential, ScalingContour(0.0, 0.5), h, L, n).dense()))
    k = np.arange(1, 11)
    exact = (h * k * np.pi / (2 * L)) ** 2 - 1
    assert np.abs(w[:10] - exact).max() < 1e-10


def test_free_continuum_rotates():
    th = 0.3
    op = discretize_scaled(zero_potential, ScalingContour(th, 0.5), 0.05, 8.0, 1200)
    w = np.linalg.eigvals(op.dense())
    # resolved part of the continuum; grid-scale modes sit far out
    band = (np.abs(w + 1) > 0.3) & (np.abs(w + 1) < 3.0)
    ang = np.angle(w[band] + 1)
    assert band.sum() > 50
    assert np.abs(ang + 2 * th).max() < 1e-3


def test_oracle_is_a_root():
    z = barrier_resonance(BARRIER_RESONANCES[0] + 1e-5)
    assert abs(z - BARRIER_RESONANCES[0]) < 1e-12


def test_grid_refinement_cauchy():
    from poincarezeta.scaling import _window_eigenvalues
    vals = [_window_eigenvalues(discretize_scaled(V, ScalingContour(0.3, 1.5), 0.05, 7.0, n), WINDOW)
            for n in (3000, 6000)]
    assert len(vals[0]) == len(vals[1]) == 5
    assert np.abs(vals[0] - vals[1]).max() <= 1e-6
    assert np.abs(vals[1] - np.array(BARRIER_RESONANCES)).max() < 1e-8


def test_resonances_direct_barrier():
    res = resonances_direct(V, 0.05, WINDOW, [0.3, 0.4, 0.5], R=1.5, L=7.0, npts=6000)
    assert res.boundary_count == 5
    assert np.abs(res.values() - np.array(BARRIER_RESONANCES)).max() < 1e-6
    assert max(z.residual for z in res.zeros) <= 1e-6


def test_resonances_direct_free_empty():
    res = resonances_direct(zero_potential, 0.05, Window(-0.3, 0.3, -0.1, -0.01), [0.3, 0.4], R=1.0, L=6.0,
                            npts=3000)
    assert res.zeros == ()


def test_resonances_direct_rejects_uncovered_window():
    with pytest.raises(ValidationError):
        resonances_direct(V, 0.05, Window(-0.5, 0.5, -2.0, 0.0), [0.1, 0.2], R=1.5, L=7.0, npts=6000)


def test_resonances_direct_unstable():
    # a thin absorbing layer at small angles leaves theta-dependent eigenvalues
    w = Window(-0.3, 0.0, -0.05, 0.01)
    with pytest.raises(NoStableEigenvalues):
        resonances_direct(V, 0.05, w, [0.1, 0.12], R=1.5, L=3.05, npts=2000, tol=1e-10)
    partial = resonances_direct(V, 0.05, w, [0.1, 0.12], R=1.5, L=3.05, npts=2000)
    assert 0 < len(partial.zeros) < 5


def test_cutoff_resolvent_agrees():
    d = cutoff_resolvent_difference(V, ScalingContour(0.1, 1.5), 0.05, 7.0, 6000, 0.05 + 0.2j, 1.2)
    assert d <= 1e-6
