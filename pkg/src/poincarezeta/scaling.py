"""Complex scaling for one-dimensional Schrodinger operators.

The operator ``P = -h^2 d^2/dx^2 + V(x) - 1`` is deformed along the totally
real contour ``gamma(x) = x + i f(x)`` with ``f = 0`` on ``[-R, R]``.  With
``W = gamma'`` the scaled operator is ``-h^2 W^{-1} d/dx W^{-1} d/dx + V(gamma) - 1``;
its discrete eigenvalues off the rotated continuum are the resonances and do
not depend on the angle.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoStableEigenvalues, ResolutionError, SectorBoundaryWarning, ValidationError
from .grushin import ResonanceList, Window, Zero
from .qmaps import smoothstep


def smoothstep_derivative(t):
    """Derivative of :func:`poincarezeta.qmaps.smoothstep`."""
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    s = np.where(inside, t, 0.5)
    # sigma = 1 / (1 + exp(g)), g = 1/s - 1/(1-s)
    g = 1.0 / s - 1.0 / (1.0 - s)
    dg = -1.0 / s ** 2 - 1.0 / (1.0 - s) ** 2
    with np.errstate(over="ignore"):
        e = np.exp(-np.abs(g))
    # sigma' = -g' e^g / (1 + e^g)^2, written with e^{-|g|} for stability
    val = -dg * e / (1.0 + e) ** 2
    return np.where(inside, val, 0.0)


@dataclass(frozen=True)
class ScalingContour:
    """``f(x) = x tan(theta) sigma((|x| - R) / R)``: zero on ``[-R, R]``, full angle beyond ``2R``."""
    theta: float
    R: float

    def __post_init__(self):
        if not (0.0 <= self.theta < 0.5 * math.pi):
            raise ValidationError("theta must lie in [0, pi/2)")
        if self.R <= 0:
            raise ValidationError("R must be positive")

    @classmethod
    def log_scaled(cls, M1: float, h: float, R: float):
        """Angle ``theta = M1 h log(1/h)``."""
        return cls(M1 * h * math.log(1.0 / h), R)

    def f(self, x):
        x = np.asarray(x, dtype=float)
        return x * math.tan(self.theta) * smoothstep((np.abs(x) - self.R) / self.R)

    def df(self, x):
        x = np.asarray(x, dtype=float)
        s = (np.abs(x) - self.R) / self.R
        return math.tan(self.theta) * (smoothstep(s) + np.abs(x) / self.R * smoothstep_derivative(s))

    def gamma(self, x):
        return np.asarray(x, dtype=float) + 1j * self.f(x)

    def weight(self, x):
        return 1.0 + 1j * self.df(x)

    def describe(self):
        return {"theta": self.theta, "R": self.R, "ramp": "x tan(theta) smoothstep((|x|-R)/R)"}


def smoothed_barrier(V0: float, a: float, w: float):
    """``V0 (tanh((x + a)/w) - tanh((x - a)/w)) / 2``, analytic off ``Re x = +-a``."""
    return lambda x: 0.5 * V0 * (np.tanh((np.asarray(x) + a) / w) - np.tanh((np.asarray(x) - a) / w))


def zero_potential(x):
    return np.zeros(np.shape(x), dtype=complex)


def scaled_symbol(V: Callable, contour: ScalingContour, x, xi):
    """``p(x + i f(x), xi / (1 + i f'(x)))`` for ``p = xi^2 + V - 1``."""
    W = contour.weight(x)
    return (np.asarray(xi) / W) ** 2 + V(contour.gamma(x)) - 1.0


@dataclass(frozen=True)
class ScaledOperator:
    grid: np.ndarray
    matrix: sp.csr_matrix
    h: float
    theta: float
    L: float
    contour: ScalingContour

    @property
    def npts(self):
        return self.grid.size

    def dense(self):
        return self.matrix.toarray()


def _staggered_difference(n, dx):
    """Fourth-order derivative from interior nodes to the n + 1 cell midpoints.

    Dirichlet nodes sit at both ends; the ghost values beyond them are odd
    reflections, which keeps the stencil fourth order up to the boundary.
    """
    rows, cols, vals = [], [], []
    c = np.array([1.0, -27.0, 27.0, -1.0]) / (24.0 * dx)
    # midpoint m lies between full-grid nodes m and m + 1 (node 0 and n + 1 are Dirichlet)
    for m in range(n + 1):
        for off, cv in zip((-1, 0, 1, 2), c):
            j = m + off
            sign = 1.0
            if j < 0:
                j, sign = -j, -1.0
            elif j > n + 1:
                j, sign = 2 * (n + 1) - j, -1.0
            if 1 <= j <= n:
                rows.append(m)
                cols.append(j - 1)
                vals.append(sign * cv)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))


def min_points(L: float, h: float) -> int:
    return int(math.ceil(8.0 * L / (math.pi * h)))


def discretize_scaled(V: Callable, contour: ScalingContour, h: float, L: float, npts: int):
    """Complex-symmetric matrix of the scaled operator on ``npts`` interior nodes of ``[-L, L]``.

    The matrix is ``W^{1/2} P_theta W^{-1/2}``, similar to the scaled
    operator, which makes it equal to its plain transpose.
    """
    if L <= 2 * contour.R:
        raise ValidationError(f"L = {L} must exceed 2R = {2 * contour.R}")
    if npts < min_points(L, h):
        raise ResolutionError(f"npts = {npts} below the oscillation bound {min_points(L, h)}")
    x_full = np.linspace(-L, L, npts + 2)
    dx = x_full[1] - x_full[0]
    x = x_full[1:-1]
    mid = 0.5 * (x_full[:-1] + x_full[1:])
    D = _staggered_difference(npts, dx)
    Wn = contour.weight(x)
    Wm = contour.weight(mid)
    S = sp.diags(Wn ** -0.5)
    K = (h * h) * (S @ D.T @ sp.diags(1.0 / Wm) @ D @ S)
    A = K + sp.diags(V(contour.gamma(x)) - 1.0)
    return ScaledOperator(x, sp.csr_matrix(A, dtype=complex), h, contour.theta, L, contour)


def _window_eigenvalues(op: ScaledOperator, window: Window, k0: int = 16):
    """All eigenvalues inside ``window`` by shift-invert about its centre."""
    c = complex(0.5 * (window.re_min + window.re_max), 0.5 * (window.im_min + window.im_max))
    radius = 0.5 * window.diameter
    n = op.matrix.shape[0]
    k = k0
    while True:
        k = min(k, n - 2)
        w = spla.eigs(op.matrix.tocsc(), k=k, sigma=c, which="LM", return_eigenvectors=False, tol=1e-14)
        if np.abs(w - c).max() > radius or k >= n - 2:
            break
        k *= 2
    return np.sort_complex(w[window.contains(w)])


def sector_angle(z):
    return np.angle(np.asarray(z) + 1.0)


def resonances_direct(V: Callable, h: float, window: Window, thetas: Sequence[float], R: float, L: float,
                      npts: int, tol: float = 1e-6, sector_margin: float = 0.05):
    """Theta-stable eigenvalues of the scaled operator inside ``window``.

    An eigenvalue at the first angle is reported when every later angle has
    an eigenvalue within ``tol`` of it (chained through consecutive angles).
    The window must lie in ``arg(z + 1) > -2 theta`` for the smallest angle.
    Returns an empty list when no eigenvalue falls in the window and raises
    NoStableEigenvalues when candidates exist but none is stable.
    """
    thetas = sorted(float(t) for t in thetas)
    if len(thetas) < 2:
        raise ValidationError("at least two angles are needed for the stability filter")
    lowest = min(sector_angle(c) for c in window.corners())
    if lowest <= -2 * thetas[0]:
        raise ValidationError(f"window leaves the sector arg(z+1) > -2 theta at theta = {thetas[0]}")
    per_theta = []
    for th in thetas:
        op = discretize_scaled(V, ScalingContour(th, R), h, L, npts)
        per_theta.append(_window_eigenvalues(op, window))
    cands = per_theta[0]
    zeros = []
    for z in cands:
        cur, shift, ok = z, 0.0, True
        for nxt in per_theta[1:]:
            if nxt.size == 0:
                ok = False
                break
            j = np.argmin(np.abs(nxt - cur))
            d = abs(nxt[j] - cur)
            if d >= tol:
                ok = False
                break
            shift = max(shift, d)
            cur = nxt[j]
        if ok:
            if sector_angle(z) < -2 * thetas[0] + sector_margin:
                warnings.warn(f"resonance {z:.6g} lies near the sector boundary", SectorBoundaryWarning,
                              stacklevel=2)
            zeros.append(Zero(complex(z), 1, float(shift)))
    if cands.size and not zeros:
        raise NoStableEigenvalues(f"{cands.size} eigenvalues in the window, none stable within {tol}")
    zeros.sort(key=lambda r: (r.z.real, r.z.imag))
    meta = {"thetas": thetas, "R": R, "L": L, "npts": npts, "h": h}
    return ResonanceList(window, tuple(zeros), len(zeros), meta)


def cutoff_resolvent_difference(V: Callable, contour: ScalingContour, h: float, L: float, npts: int,
                                z: complex, chi_radius: Optional[float] = None):
    """``|| chi (P_theta - z)^{-1} chi - chi (P - z)^{-1} chi ||_2`` with chi the indicator of ``|x| <= chi_radius``.

    Both resolvents use the same grid; the norm is the largest singular
    value of the difference, computed matrix-free.
    """
    chi_radius = contour.R if chi_radius is None else chi_radius
    if chi_radius > contour.R:
        raise ValidationError("the cutoff must be supported where the contour is undeformed")
    scaled = discretize_scaled(V, contour, h, L, npts)
    plain = discretize_scaled(V, ScalingContour(0.0, contour.R), h, L, npts)
    n = scaled.npts
    eye = sp.identity(n, dtype=complex, format="csc")
    lu_s = spla.splu((scaled.matrix - z * eye).tocsc())
    lu_p = spla.splu((plain.matrix - z * eye).tocsc())
    chi = (np.abs(scaled.grid) <= chi_radius).astype(float)

    def mv(v):
        v = chi * np.ravel(v)
        return chi * (lu_s.solve(v) - lu_p.solve(v))

    def rmv(v):
        v = chi * np.ravel(v)
        return chi * (lu_s.solve(v, trans="H") - lu_p.solve(v, trans="H"))

    op = spla.LinearOperator((n, n), matvec=mv, rmatvec=rmv, dtype=complex)
    s = spla.svds(op, k=1, return_singular_vectors=False, random_state=0)
    return float(s[0])
