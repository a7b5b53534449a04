"""Grushin problems, Schur complements and zeta determinants.

A Grushin problem borders a square matrix ``P`` by ``R_-`` (extra columns)
and ``R_+`` (extra rows).  When the bordered matrix is invertible its
inverse is written ``[[E, E_+], [E_-, E_-+]]``; ``P`` is invertible exactly
when the effective Hamiltonian ``E_-+`` is, and for a holomorphic family
``E_-+'(z) = -E_-(z) P'(z) E_+(z)``.

Zeros of ``zeta(z) = det(I - M(z))`` are located by the argument principle
on a rectangular cell grid and polished by Newton's method.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
from numpy.polynomial.legendre import leggauss

from .errors import (BoundaryZero, ContourTooClose, DivergentExpansion, SingularBorder,
                     ValidationError)
from .qmaps import OpenMapMatrix

COND_LIMIT = 1e12


# ---------------------------------------------------------------------------
# Bordered systems

@dataclass(frozen=True)
class GrushinSystem:
    P: np.ndarray
    Rminus: np.ndarray
    Rplus: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P))
        Rm = np.asarray(self.Rminus)
        Rp = np.asarray(self.Rplus)
        Rm = Rm.reshape(P.shape[0], -1) if Rm.size else np.zeros((P.shape[0], 0))
        Rp = Rp.reshape(-1, P.shape[1]) if Rp.size else np.zeros((0, P.shape[1]))
        if P.shape[0] != P.shape[1]:
            raise ValidationError("P must be square")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Rminus", Rm)
        object.__setattr__(self, "Rplus", Rp)

    @property
    def square(self):
        return self.Rplus.shape[0] == self.Rminus.shape[1]

    def bordered(self):
        k_plus, k_minus = self.Rplus.shape[0], self.Rminus.shape[1]
        dtype = np.result_type(self.P, self.Rminus, self.Rplus)
        return np.block([[self.P, self.Rminus],
                         [self.Rplus, np.zeros((k_plus, k_minus), dtype=dtype)]])


@dataclass(frozen=True)
class EffectiveHamiltonian:
    E: np.ndarray
    Eplus: np.ndarray
    Eminus: np.ndarray
    Eminusplus: np.ndarray
    schur_residual: Optional[float] = None


def schur_effective_hamiltonian(sys: GrushinSystem, cond_limit: float = COND_LIMIT):
    """Invert the bordered matrix and split the inverse into ``E, E_+, E_-, E_-+``.

    When ``P`` is invertible, ``schur_residual`` records
    ``|E_-+^{-1} + R_+ P^{-1} R_-|`` (relative), the specialization of
    ``q22^{-1} = p22 - p21 p11^{-1} p12`` to ``p22 = 0``.
    """
    if not sys.square:
        raise ValidationError("the bordered matrix is square only when rows(R+) = cols(R-)")
    A = sys.bordered()
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularBorder(f"bordered matrix is numerically singular (condition {cond:.2e})")
    inv = np.linalg.inv(A)
    n = sys.P.shape[0]
    E, Ep, Em, Emp = inv[:n, :n], inv[:n, n:], inv[n:, :n], inv[n:, n:]
    resid = None
    if np.linalg.cond(sys.P) < cond_limit and Emp.size:
        S = sys.Rplus @ np.linalg.solve(sys.P, sys.Rminus)
        lhs = np.linalg.inv(Emp)
        resid = float(np.abs(lhs + S).max() / max(np.abs(S).max(), 1e-300))
    return EffectiveHamiltonian(E, Ep, Em, Emp, resid)


def verify_schur_identities(P: np.ndarray, k: int):
    """Relative residuals of the two Schur complement identities.

    ``P`` is split with a trailing ``k x k`` block; with ``Q = P^{-1}``:
    ``p11^{-1} = q11 - q12 q22^{-1} q21`` and ``q22^{-1} = p22 - p21 p11^{-1} p12``.
    """
    P = np.asarray(P)
    n = P.shape[0] - k
    Q = np.linalg.inv(P)
    p11, p12, p21, p22 = P[:n, :n], P[:n, n:], P[n:, :n], P[n:, n:]
    q11, q12, q21, q22 = Q[:n, :n], Q[:n, n:], Q[n:, :n], Q[n:, n:]
    lhs1 = np.linalg.inv(p11)
    rhs1 = q11 - q12 @ np.linalg.solve(q22, q21)
    lhs2 = np.linalg.inv(q22)
    rhs2 = p22 - p21 @ np.linalg.solve(p11, p12)
    r1 = np.abs(lhs1 - rhs1).max() / max(np.abs(lhs1).max(), 1e-300)
    r2 = np.abs(lhs2 - rhs2).max() / max(np.abs(lhs2).max(), 1e-300)
    return float(r1), float(r2)


def random_grushin_system(rng: np.random.Generator, n: int, k: int, complex_: bool = True,
                          max_cond: float = 1e4):
    """Random bordered system whose bordered matrix and P have condition below ``max_cond``."""
    for _ in range(100):
        def draw(*shape):
            a = rng.standard_normal(shape)
            return a + 1j * rng.standard_normal(shape) if complex_ else a
        P = draw(n, n) + 2 * math.sqrt(n) * np.eye(n)
        sys = GrushinSystem(P, draw(n, k), draw(k, n))
        if np.linalg.cond(sys.bordered()) < max_cond and np.linalg.cond(P) < max_cond:
            return sys
    raise ValidationError("could not draw a well-conditioned system")


def fredholm_index(A, rtol: float = 1e-10):
    """``dim ker A - dim coker A`` for a finite matrix (equals cols - rows)."""
    A = np.atleast_2d(A)
    rows, cols = A.shape
    s = np.linalg.svd(A, compute_uv=False) if A.size else np.zeros(0)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return (cols - rank) - (rows - rank)


def index_check(sys: GrushinSystem):
    """Indices of the bordered matrix and of ``R_+ P^{-1} R_-``; they agree when P is invertible."""
    if np.linalg.cond(sys.P) > COND_LIMIT:
        raise SingularBorder("P must be invertible for the index comparison")
    ind_b = fredholm_index(sys.bordered())
    S = sys.Rplus @ np.linalg.solve(sys.P, sys.Rminus)
    ind_s = (S.shape[1] - S.shape[0]) if S.size == 0 else fredholm_index(S)
    return ind_b, ind_s


# ---------------------------------------------------------------------------
# Contours

@dataclass(frozen=True)
class Circle:
    center: complex
    radius: float

    def nodes(self, m):
        th = 2 * np.pi * np.arange(m) / m
        z = self.center + self.radius * np.exp(1j * th)
        dz = 1j * self.radius * np.exp(1j * th) * (2 * np.pi / m)
        return z, dz

    def contains(self, z):
        return np.abs(np.asarray(z) - self.center) < self.radius

    def distance(self, z):
        return np.abs(np.abs(np.asarray(z) - self.center) - self.radius)


@dataclass(frozen=True)
class Window:
    """Rectangle ``[re_min, re_max] + i [im_min, im_max]``."""
    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def __post_init__(self):
        if not (self.re_max > self.re_min and self.im_max > self.im_min):
            raise ValidationError("window must have positive width and height")

    @classmethod
    def semiclassical(cls, delta: float, M0: float, h: float):
        """``[-delta, delta] + i [-M0 h log(1/h), M0 h log(1/h)]``."""
        s = M0 * h * math.log(1.0 / h)
        return cls(-delta, delta, -s, s)

    @classmethod
    def parse(cls, text):
        vals = [float(v) for v in str(text).split(",")]
        if len(vals) != 4:
            raise ValidationError("window needs four numbers re_min,re_max,im_min,im_max")
        return cls(*vals)

    def corners(self):
        return (complex(self.re_min, self.im_min), complex(self.re_max, self.im_min),
                complex(self.re_max, self.im_max), complex(self.re_min, self.im_max))

    def nodes(self, order):
        """Gauss-Legendre nodes and weights ``dz`` on the counter-clockwise boundary."""
        x, w = leggauss(order)
        c = self.corners()
        zs, dzs = [], []
        for a, b in zip(c, c[1:] + c[:1]):
            zs.append(0.5 * (a + b) + 0.5 * (b - a) * x)
            dzs.append(0.5 * (b - a) * w)
        return np.concatenate(zs), np.concatenate(dzs)

    def contains(self, z):
        z = np.asarray(z)
        return ((z.real > self.re_min) & (z.real < self.re_max)
                & (z.imag > self.im_min) & (z.imag < self.im_max))

    def split(self, nx, ny, shift=(0.0, 0.0)):
        xs = np.linspace(self.re_min, self.re_max, nx + 1)
        ys = np.linspace(self.im_min, self.im_max, ny + 1)
        xs[1:-1] += shift[0] * (xs[1] - xs[0])
        ys[1:-1] += shift[1] * (ys[1] - ys[0])
        return [Window(xs[a], xs[a + 1], ys[b], ys[b + 1]) for a in range(nx) for b in range(ny)]

    @property
    def diameter(self):
        return math.hypot(self.re_max - self.re_min, self.im_max - self.im_min)

    def describe(self):
        return [self.re_min, self.re_max, self.im_min, self.im_max]


def _settled(prev, val, tol=0.25):
    """Two successive estimates lie within ``tol`` of the same integer."""
    n = round(val.real)
    return round(prev.real) == n and abs(val - n) < tol and abs(prev - n) < tol


def _integer_count(log_deriv, contour, start=32, max_nodes=1 << 14, tol=0.25):
    """``(1 / 2 pi i) * contour integral of log_deriv``, refined until it settles on an integer.

    Returns the integer and the last estimate; raises ContourTooClose when
    the error estimate stays above ``tol``.
    """
    prev = None
    m = start
    while m <= max_nodes:
        z, dz = contour.nodes(m)
        val = np.sum(log_deriv(z) * dz) / (2j * np.pi)
        if prev is not None and _settled(prev, val, tol):
            return int(round(val.real)), complex(val)
        prev = val
        m *= 2
    est = abs(val - round(val.real))
    raise ContourTooClose(f"argument-principle count did not settle (estimate {val:.4f}, off by {est:.3f})")


# ---------------------------------------------------------------------------
# Trace formula

def grushin_log_derivative(family: Callable, dP: Callable):
    """``w -> tr E_-+(w)^{-1} E_-+'(w)`` using ``E_-+' = -E_- P' E_+``."""
    def f(ws):
        out = np.empty(len(ws), dtype=complex)
        for j, w in enumerate(ws):
            sys = family(w)
            inv = np.linalg.inv(sys.bordered())
            n = sys.P.shape[0]
            Ep, Em, Emp = inv[:n, n:], inv[n:, :n], inv[n:, n:]
            dEmp = -Em @ dP(w) @ Ep
            out[j] = np.trace(np.linalg.solve(Emp, dEmp))
        return out
    return f


def verify_trace_formula(family: Callable, dP: Callable, contour, eigenvalues=None):
    """Integer counts on both sides of the Grushin trace formula.

    ``family(z)`` returns a GrushinSystem, ``dP(z)`` the z-derivative of its
    P block.  The left side counts eigenvalues of the family inside the
    contour: directly when ``eigenvalues`` is given (e.g. the generalized
    eigenvalues of a pencil), otherwise by quadrature of ``tr P^{-1} P'``.
    """
    if eigenvalues is not None:
        lhs = int(np.sum(contour.contains(np.asarray(eigenvalues))))
    else:
        def ld(ws):
            return np.array([np.trace(np.linalg.solve(family(w).P, dP(w))) for w in ws])
        lhs = _integer_count(ld, contour)[0]
    rhs = _integer_count(grushin_log_derivative(family, dP), contour)[0]
    return lhs, rhs


def linear_pencil_family(A, B, Rminus, Rplus):
    """``z -> GrushinSystem(A - z B, R_-, R_+)`` and its derivative ``-B``."""
    A = np.asarray(A)
    B = np.eye(A.shape[0]) if B is None else np.asarray(B)
    return (lambda z: GrushinSystem(A - z * B, Rminus, Rplus)), (lambda z: -B)


def bordered_pencil_eigenvalues(A, B, Rminus, Rplus):
    """Finite z where the bordered matrix of ``A - z B`` is singular."""
    A = np.asarray(A, dtype=complex)
    B = np.eye(A.shape[0]) if B is None else np.asarray(B, dtype=complex)
    k = Rminus.shape[1]
    big_A = GrushinSystem(A, Rminus, Rplus).bordered()
    big_B = np.zeros_like(big_A)
    big_B[:A.shape[0], :A.shape[0]] = B
    w = sla.eigvals(big_A, big_B)
    return w[np.isfinite(w)]


def random_pencil_trial(rng: np.random.Generator, min_gap: float = 1e-2):
    """Random pencil ``A - z B``, border and circle for the trace formula.

    The circle keeps at least ``min_gap`` from the pencil eigenvalues and
    from the finite eigenvalues of the bordered pencil, so the bordered
    problem is well posed inside.  Returns ``(A, B, R_-, R_+, circle,
    eigenvalues)``.
    """
    while True:
        n = int(rng.integers(4, 13))
        k = int(rng.integers(1, 4))
        A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        B = np.eye(n) + 0.2 * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
        lam = sla.eigvals(A, B)
        c = lam[rng.integers(n)] + complex(*rng.normal(scale=0.5, size=2))
        circle = Circle(c, float(rng.uniform(0.3, 2.5)))
        if circle.distance(lam).min() < min_gap:
            continue
        for _ in range(200):
            Rm = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
            Rp = rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n))
            mu = bordered_pencil_eigenvalues(A, B, Rm, Rp)
            if mu.size == 0 or (not circle.contains(mu).any() and circle.distance(mu).min() >= min_gap):
                return A, B, Rm, Rp, circle, lam


def selftest(seed: int = 0, schur_trials: int = 200, index_trials: int = 100, trace_trials: int = 50):
    """Randomized Schur, index and trace-formula suites; returns pass counts per suite."""
    rng = np.random.default_rng(seed)
    out = {}
    ok = 0
    for _ in range(schur_trials):
        n, k = int(rng.integers(5, 41)), int(rng.integers(1, 6))
        sys = random_grushin_system(rng, n, k)
        worst = max(*verify_schur_identities(sys.bordered(), k), schur_effective_hamiltonian(sys).schur_residual)
        ok += worst < 1e-10
    out["schur"] = (ok, schur_trials)
    ok = 0
    for _ in range(index_trials):
        n = int(rng.integers(3, 20))
        km, kp = int(rng.integers(0, 6)), int(rng.integers(0, 6))
        P = rng.standard_normal((n, n)) + 3 * math.sqrt(n) * np.eye(n)
        ib, is_ = index_check(GrushinSystem(P, rng.standard_normal((n, km)), rng.standard_normal((kp, n))))
        ok += ib == is_
    out["index"] = (ok, index_trials)
    ok = 0
    for _ in range(trace_trials):
        A, B, Rm, Rp, circle, lam = random_pencil_trial(rng)
        fam, dP = linear_pencil_family(A, B, Rm, Rp)
        lhs, rhs = verify_trace_formula(fam, dP, circle, eigenvalues=lam)
        ok += lhs == rhs
    out["trace"] = (ok, trace_trials)
    return out


# ---------------------------------------------------------------------------
# Zeta determinant

def _dense(M):
    return M.dense() if isinstance(M, OpenMapMatrix) else np.asarray(M, dtype=complex)


def _lu(A):
    with warnings.catch_warnings():
        # an exactly singular I - M is a legitimate zero of zeta
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        return sla.lu_factor(np.eye(A.shape[0]) - A)


def zeta(M):
    """``det(I - M)`` by pivoted LU."""
    A = _dense(M)
    if A.size == 0:
        return 1.0 + 0j
    lu, piv = _lu(A)
    sign = (-1.0) ** np.sum(piv != np.arange(len(piv)))
    return complex(sign * np.prod(np.diag(lu)))


def zeta_logdet(M):
    """``log det(I - M)`` (principal branch of each LU pivot), safe for large matrices."""
    A = _dense(M)
    if A.size == 0:
        return 0j
    lu, piv = _lu(A)
    sign = (-1.0) ** np.sum(piv != np.arange(len(piv)))
    return complex(np.sum(np.log(np.diag(lu).astype(complex))) + (0 if sign > 0 else 1j * np.pi))


def spectral_radius(M):
    A = _dense(M)
    return float(np.abs(np.linalg.eigvals(A)).max(initial=0.0))


def zeta_trace_expansion(M, K: int):
    """``exp(-sum_{k=1}^K tr(M^k) / k)``; requires spectral radius below 1."""
    A = _dense(M)
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise DivergentExpansion(f"spectral radius {rho:.6f} >= 1")
    s = 0j
    Mk = np.eye(A.shape[0], dtype=complex)
    for k in range(1, int(K) + 1):
        Mk = Mk @ A
        s += np.trace(Mk) / k
    return complex(np.exp(-s))


# ---------------------------------------------------------------------------
# Zero finding

@dataclass(frozen=True)
class Zero:
    z: complex
    multiplicity: int
    residual: float


@dataclass(frozen=True)
class ResonanceList:
    window: Window
    zeros: tuple
    boundary_count: int
    meta: dict = field(default_factory=dict)

    @property
    def total_multiplicity(self):
        return sum(z.multiplicity for z in self.zeros)

    def values(self):
        return np.array([z.z for z in self.zeros], dtype=complex)

    def rows(self):
        return [[z.z.real, z.z.imag, z.multiplicity, z.residual] for z in self.zeros]


class ZetaFunction:
    """``zeta(z) = det(I - M(z))`` with logarithmic derivative ``-tr((I - M)^{-1} M')``.

    ``M'`` is analytic when the family exposes ``derivative``; otherwise a
    fourth-order holomorphic difference (real and imaginary steps) is used.
    """

    def __init__(self, family: Callable, derivative: Optional[Callable] = None, step: float = 1e-4):
        self.family = family
        self.derivative = derivative if derivative is not None else getattr(family, "derivative", None)
        self.step = step

    def matrix(self, z):
        return _dense(self.family(z))

    def dmatrix(self, z):
        if self.derivative is not None:
            return np.asarray(self.derivative(z))
        e = self.step
        f = self.matrix
        return (f(z + e) - f(z - e) - 1j * (f(z + 1j * e) - f(z - 1j * e))) / (4 * e)

    def __call__(self, z):
        return zeta(self.matrix(z))

    def _batches(self, zs, chunk=64):
        batch = getattr(self.family, "batch", None)
        for i in range(0, len(zs), chunk):
            part = zs[i:i + chunk]
            if batch is not None:
                yield batch(part)
            else:
                yield (np.stack([self.matrix(z) for z in part]), np.stack([self.dmatrix(z) for z in part]))

    def log_derivative(self, zs):
        zs = np.atleast_1d(np.asarray(zs, dtype=complex))
        out = []
        for M, dM in self._batches(zs):
            A = np.eye(M.shape[1])[None] - M
            out.append(-np.trace(np.linalg.solve(A, dM), axis1=1, axis2=2))
        return np.concatenate(out) if out else np.zeros(0, dtype=complex)

    def values(self, zs):
        zs = np.atleast_1d(np.asarray(zs, dtype=complex))
        if getattr(self.family, "batch", None) is None:
            return np.array([self(z) for z in zs])
        out = []
        for i in range(0, len(zs), 64):
            M, _ = self.family.batch(zs[i:i + 64])
            out.append(np.linalg.det(np.eye(M.shape[1])[None] - M))
        return np.concatenate(out)


class HolomorphicFunction:
    """Adapter for a scalar holomorphic ``f`` with derivative ``df``."""

    def __init__(self, f: Callable, df: Callable):
        self.f = f
        self.df = df

    def __call__(self, z):
        return complex(self.f(z))

    def values(self, zs):
        return np.array([self.f(z) for z in np.atleast_1d(zs)], dtype=complex)

    def log_derivative(self, zs):
        zs = np.atleast_1d(zs)
        return np.array([self.df(z) / self.f(z) for z in zs], dtype=complex)


def count_zeros(fn, contour, start=32, boundary_tol=1e-12):
    """Argument-principle zero count of ``fn`` inside ``contour``."""
    z, _ = contour.nodes(start)
    if np.abs(fn.values(z)).min() < boundary_tol:
        raise BoundaryZero("function vanishes on the contour")
    return _integer_count(fn.log_derivative, contour, start)[0]


def _cell_count(fn, cell, order0=16, max_order=1024, boundary_tol=1e-12):
    """Winding number of ``fn`` on the cell boundary and the power sums of its zeros.

    Returns ``(count, s1, s2)`` with ``s_k = sum_j z_j^k`` over zeros inside.
    """
    order = order0
    prev = None
    while order <= max_order:
        z, dz = cell.nodes(order)
        if np.abs(fn.values(z)).min() < boundary_tol:
            raise BoundaryZero("zeta vanishes on a cell boundary")
        ld = fn.log_derivative(z) * dz / (2j * np.pi)
        val = np.sum(ld)
        if prev is not None and _settled(prev, val):
            c = 0.5 * (cell.corners()[0] + cell.corners()[2])
            # moments about the cell center keep the cancellation small
            s1 = np.sum((z - c) * ld)
            s2 = np.sum((z - c) ** 2 * ld)
            return int(round(val.real)), (c, s1, s2)
        prev = val
        order *= 2
    # a non-integer limit (typically a half integer) means a zero on the edge
    raise BoundaryZero(f"cell count did not stabilize (last estimate {prev:.4f})")


def _newton(fn, z0, m, cell, tol=1e-15, maxit=60):
    """Damped Newton ``z <- z - m f / f'`` for a zero of multiplicity m."""
    z = complex(z0)
    for _ in range(maxit):
        if fn(z) == 0:
            break
        ld = fn.log_derivative(z)[0]
        if ld == 0 or not np.isfinite(ld):
            break
        step = m / ld
        lam = 1.0
        fz = abs(fn(z))
        while lam > 1e-4:
            cand = z - lam * step
            if abs(fn(cand)) <= fz or lam < 2e-4:
                break
            lam *= 0.5
        z_new = z - lam * step
        if abs(z_new - z) <= tol * max(1.0, abs(z)):
            z = z_new
            break
        z = z_new
    return z


def _isolate(fn, cell, count, moments, min_size, out):
    if count == 0:
        return
    c, s1, s2 = moments
    mean = s1 / count
    spread = abs(s2 / count - mean ** 2)
    # all zeros coincide when the second central moment vanishes
    cluster = spread < (1e-6 * cell.diameter) ** 2
    if count == 1 or cluster or cell.diameter < min_size:
        z0 = c + mean
        z = _newton(fn, z0, count, cell)
        if not (abs(z - z0) < cell.diameter):
            z = z0
        out.append((z, count))
        return
    for shift in ((0.0, 0.0), (0.137, -0.091), (-0.211, 0.173)):
        # a zero on an internal edge shows up as BoundaryZero or a count mismatch
        children = cell.split(2, 2, shift=shift)
        try:
            counts = [_cell_count(fn, c) for c in children]
        except BoundaryZero:
            continue
        if sum(k for k, _ in counts) == count:
            break
    else:
        raise ContourTooClose("child cell counts do not add up to the parent count")
    for c, (k, m) in zip(children, counts):
        _isolate(fn, c, k, m, min_size, out)


def find_zeros(fn, window: Window, grid=(4, 4), min_size: Optional[float] = None, retries: int = 5):
    """Zeros of a holomorphic function inside a rectangle, with multiplicities."""
    rng = np.random.default_rng(12345)
    outer = None
    for attempt in range(retries + 1):
        shift = (0.0, 0.0) if attempt == 0 else tuple(rng.uniform(-0.3, 0.3, 2))
        try:
            if outer is None:
                outer = _cell_count(fn, window)[0]
            cells = window.split(grid[0], grid[1], shift)
            counts = [_cell_count(fn, c) for c in cells]
            break
        except BoundaryZero:
            if outer is None or attempt == retries:
                raise
    if sum(k for k, _ in counts) != outer:
        raise ContourTooClose("cell counts do not add up to the boundary count")
    if min_size is None:
        min_size = 1e-7 * window.diameter
    found = []
    for c, (k, m) in zip(cells, counts):
        _isolate(fn, c, k, m, min_size, found)
    scale = np.abs(fn.values(window.nodes(16)[0])).max()
    zeros = [Zero(complex(z), int(m), float(abs(fn(z)) / max(scale, 1e-300))) for z, m in found]
    zeros.sort(key=lambda r: (r.z.real, r.z.imag))
    return zeros, outer


def find_resonances(family: Callable, window: Window, grid=(4, 4), derivative: Optional[Callable] = None,
                    min_size: Optional[float] = None):
    """Zeros of ``det(I - M(z))`` in ``window`` (argument principle + Newton).

    ``residual`` in each Zero is ``|zeta(z*)| / max |zeta|`` over the window
    boundary.
    """
    fn = ZetaFunction(family, derivative)
    zeros, outer = find_zeros(fn, window, grid, min_size)
    meta = {"grid": list(grid)}
    return ResonanceList(window, tuple(zeros), outer, meta)


def dressed_diagonal_family(diag, T: float, h: float):
    """``z -> exp(i z T / h) diag(lambda)`` with analytic derivative (closed-form test family)."""
    lam = np.asarray(diag, dtype=complex)

    class _Fam:
        def __call__(self, z):
            return np.diag(np.exp(1j * z * T / h) * lam)

        def derivative(self, z):
            return np.diag(1j * T / h * np.exp(1j * z * T / h) * lam)

    return _Fam()


def closed_form_zeros(diag, T: float, h: float, window: Window):
    """All ``z = (h / T)(2 pi k + i log lambda)`` solving ``exp(i z T / h) lambda = 1`` in the window."""
    out = []
    for lam in np.asarray(diag, dtype=complex):
        base = (h / T) * (1j * np.log(lam))
        step = 2 * np.pi * h / T
        kmin = math.floor((window.re_min - base.real) / step) - 1
        kmax = math.ceil((window.re_max - base.real) / step) + 1
        for k in range(kmin, kmax + 1):
            z = base + k * step
            if window.contains(z):
                out.append(complex(z))
    return sorted(out, key=lambda z: (z.real, z.imag))


# ---------------------------------------------------------------------------
# Forward parametrix

def _phi(x):
    """``(exp(x) - 1) / x`` with the removable singularity at 0."""
    x = np.asarray(x, dtype=complex)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1 + x / 2 + x * x / 6, np.expm1(safe) / safe)


def forward_parametrix(A, z, T, h):
    """``E = int_0^T exp(-i t (A - z) / h) dt`` for Hermitian A (eigendecomposition)."""
    w, V = np.linalg.eigh(np.asarray(A))
    mu = w - z
    g = T * _phi(-1j * T * mu / h)
    return (V * g) @ V.conj().T


def forward_parametrix_check(A, z, T, h):
    """``|| (i/h)(A - z) E - (I - exp(-i T (A - z) / h)) ||_2`` with the exponential from expm."""
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    n = A.shape[0]
    E = forward_parametrix(A, z, T, h)
    lhs = (1j / h) * (A - z * np.eye(n)) @ E
    rhs = np.eye(n) - sla.expm(-1j * T * (A - z * np.eye(n)) / h)
    return float(np.linalg.norm(lhs - rhs, 2))
