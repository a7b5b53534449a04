"""Classical Hamiltonian dynamics on T*R^n.

The model Hamiltonian is ``p(x, xi) = |xi|^2 + V(x) - 1``, so that
``x' = 2 xi`` and ``xi' = -grad V(x)``.  Trajectories are computed with a
symmetric composition of kinetic/potential leapfrog steps (fourth order),
and tangent frames with the exact derivative of the same discrete map, which
keeps them symplectic to rounding error.

Batches of phase points are stored as arrays of shape ``(m, 2n)`` with
positions first, momenta second.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._parallel import chunked_map
from .errors import EmptySample, StepOverflow, ValidationError

OVERFLOW_LIMIT = 1e9

# Suzuki fourth-order composition of second-order leapfrog steps.
_SUZUKI_P = 1.0 / (4.0 - 4.0 ** (1.0 / 3.0))
SUZUKI4 = (_SUZUKI_P, _SUZUKI_P, 1.0 - 4.0 * _SUZUKI_P, _SUZUKI_P, _SUZUKI_P)


def _kick_drift_schedule(weights):
    kicks = [0.5 * weights[0]]
    for a, b in zip(weights[:-1], weights[1:]):
        kicks.append(0.5 * (a + b))
    return tuple(zip(kicks, weights)), 0.5 * weights[-1]


_KD_SCHEDULE, _KD_LAST = _kick_drift_schedule(SUZUKI4)


def symplectic_form(n):
    """Matrix of the standard symplectic form on R^{2n}, ``[[0, I], [-I, 0]]``."""
    omega = np.zeros((2 * n, 2 * n))
    omega[:n, n:] = np.eye(n)
    omega[n:, :n] = -np.eye(n)
    return omega


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float)).copy()
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float)).copy()
        if x.shape != xi.shape or x.ndim != 1:
            raise ValidationError(f"position {x.shape} and momentum {xi.shape} must be matching vectors")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xi))):
            raise ValidationError("phase point has non-finite coordinates")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)

    @property
    def n(self):
        return self.x.size

    def as_array(self):
        return np.concatenate([self.x, self.xi])

    def __array__(self, dtype=None, copy=None):
        arr = self.as_array()
        return arr if dtype is None else arr.astype(dtype)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        n = arr.size // 2
        return cls(arr[:n], arr[n:])


def as_states(rho, n=None):
    """Coerce a PhasePoint, a flat vector or a batch into an ``(m, 2n)`` array."""
    if isinstance(rho, PhasePoint):
        arr = rho.as_array()[None, :]
    else:
        arr = np.atleast_2d(np.asarray(rho, dtype=float))
    if n is not None and arr.shape[-1] != 2 * n:
        raise ValidationError(f"expected phase points of length {2 * n}, got {arr.shape[-1]}")
    return arr


class Hamiltonian(ABC):
    """Interface shared by the flows that sections and return maps consume."""

    n: int
    interaction_radius: float

    @abstractmethod
    def energy(self, states):
        """Value of the Hamiltonian on a batch of states."""

    @abstractmethod
    def grad_energy(self, states):
        """Gradient ``(dp/dx, dp/dxi)`` on a batch, shape ``(m, 2n)``."""

    @abstractmethod
    def step(self, states, tau):
        """One integrator step of size ``tau`` (may be negative)."""

    @abstractmethod
    def step_tangent(self, states, frames, tau):
        """Step states and propagate tangent frames ``(m, 2n, 2n)``."""

    def vector_field(self, states):
        g = self.grad_energy(as_states(states, self.n))
        n = self.n
        return np.concatenate([g[:, n:], -g[:, :n]], axis=1)

    def normal_momentum(self, x, xi_tan, normal, energy):
        """Solve ``p(x, xi_tan + m * normal) = energy`` for ``m`` by Newton.

        Returns NaN where no positive root exists.  Subclasses with a closed
        form override this.
        """
        x = np.atleast_2d(x)
        xi_tan = np.atleast_2d(xi_tan)
        m = np.ones(len(x))
        for _ in range(50):
            st = np.concatenate([x, xi_tan + m[:, None] * normal], axis=1)
            f = self.energy(st) - energy
            df = self.grad_energy(st)[:, self.n:] @ normal
            with np.errstate(divide="ignore", invalid="ignore"):
                m = m - f / df
            if np.all(np.abs(f) < 1e-14):
                break
        m[~np.isfinite(m)] = np.nan
        return m


class HamiltonianSystem(Hamiltonian):
    """Schrodinger-type Hamiltonian ``|xi|^2 + V(x) - 1`` on T*R^n.

    Parameters
    ----------
    n : int
        Spatial dimension.
    V, gradV : callable
        Potential and its gradient, vectorized over arrays of shape ``(m, n)``.
    interaction_radius : float
        Radius outside which V is negligible.
    hessV : callable, optional
        Hessian, shape ``(m, n, n)``.  Estimated from ``gradV`` by central
        differences (then symmetrized) when omitted.
    """

    def __init__(self, n: int, V: Callable, gradV: Callable, interaction_radius: float,
                 hessV: Optional[Callable] = None, name: str = "custom",
                 params: Optional[dict] = None, check: bool = True):
        if interaction_radius <= 0:
            raise ValidationError("interaction radius must be positive")
        self.n = int(n)
        self.V = V
        self.gradV = gradV
        self._hessV = hessV
        self.interaction_radius = float(interaction_radius)
        self.name = name
        self.params = dict(params or {})
        if check:
            self.check_gradient()

    def check_gradient(self, points=None, rtol=1e-5, step=1e-5, seed=0):
        """Compare ``gradV`` with central differences of ``V`` at test points."""
        if points is None:
            rng = np.random.default_rng(seed)
            points = rng.uniform(-1.0, 1.0, size=(8, self.n)) * min(self.interaction_radius, 2.0)
        points = np.atleast_2d(points)
        g = np.asarray(self.gradV(points), dtype=float)
        fd = np.empty_like(g)
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = step
            fd[:, i] = (self.V(points + e) - self.V(points - e)) / (2 * step)
        scale = np.maximum(np.abs(g).max(), 1e-3)
        err = np.abs(fd - g).max() / scale
        if err > rtol:
            raise ValidationError(f"gradient of V inconsistent with finite differences (relative error {err:.2e})")
        return err

    def hessV(self, x):
        if self._hessV is not None:
            return self._hessV(x)
        x = np.atleast_2d(x)
        eps = 1e-6
        H = np.empty((len(x), self.n, self.n))
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = eps
            H[:, :, i] = (self.gradV(x + e) - self.gradV(x - e)) / (2 * eps)
        return 0.5 * (H + np.swapaxes(H, 1, 2))

    def energy(self, states):
        s = as_states(states, self.n)
        n = self.n
        return np.sum(s[:, n:] ** 2, axis=1) + self.V(s[:, :n]) - 1.0

    def grad_energy(self, states):
        s = as_states(states, self.n)
        n = self.n
        return np.concatenate([self.gradV(s[:, :n]), 2.0 * s[:, n:]], axis=1)

    def normal_momentum(self, x, xi_tan, normal, energy):
        # |xi_tan|^2 + m^2 = 1 + E - V when xi_tan is orthogonal to the unit normal
        x = np.atleast_2d(x)
        xi_tan = np.atleast_2d(xi_tan)
        avail = 1.0 + energy - self.V(x) - np.sum(xi_tan ** 2, axis=1)
        out = np.full(len(x), np.nan)
        ok = avail > 0
        out[ok] = np.sqrt(avail[ok])
        return out

    def step(self, states, tau):
        # kick-drift-kick stages with adjacent half kicks merged
        s = as_states(states, self.n)
        n = self.n
        tau = _column(np.asarray(tau, dtype=float))
        x, xi = s[:, :n], s[:, n:]
        for kick, drift in _KD_SCHEDULE:
            xi = xi - (kick * tau) * self.gradV(x)
            x = x + (2.0 * drift * tau) * xi
        xi = xi - (_KD_LAST * tau) * self.gradV(x)
        return np.concatenate([x, xi], axis=1)

    def step_tangent(self, states, frames, tau):
        s = as_states(states, self.n)
        n = self.n
        tau = _column(np.asarray(tau, dtype=float))
        ttau = tau[..., None] if np.ndim(tau) else tau
        J = np.asarray(frames, dtype=float)
        x, xi = s[:, :n], s[:, n:]
        dx, dxi = J[:, :n, :], J[:, n:, :]
        for kick, drift in _KD_SCHEDULE:
            xi = xi - (kick * tau) * self.gradV(x)
            dxi = dxi - (kick * ttau) * (self.hessV(x) @ dx)
            x = x + (2.0 * drift * tau) * xi
            dx = dx + (2.0 * drift * ttau) * dxi
        xi = xi - (_KD_LAST * tau) * self.gradV(x)
        dxi = dxi - (_KD_LAST * ttau) * (self.hessV(x) @ dx)
        return np.concatenate([x, xi], axis=1), np.concatenate([dx, dxi], axis=1)

    def __repr__(self):
        return f"HamiltonianSystem(name={self.name!r}, n={self.n}, params={self.params})"


class NormalFormSystem(Hamiltonian):
    """The model flow ``p = xi_n``: straight motion along ``x_n`` at unit speed.

    The flow is integrated exactly.
    """

    def __init__(self, n: int = 2, interaction_radius: float = 10.0):
        self.n = int(n)
        self.interaction_radius = float(interaction_radius)
        self.name = "normal-form"
        self.params = {}

    def energy(self, states):
        return as_states(states, self.n)[:, -1].copy()

    def grad_energy(self, states):
        s = as_states(states, self.n)
        g = np.zeros_like(s)
        g[:, -1] = 1.0
        return g

    def step(self, states, tau):
        s = as_states(states, self.n).copy()
        s[:, self.n - 1] += np.asarray(tau, dtype=float)
        return s

    def step_tangent(self, states, frames, tau):
        return self.step(states, tau), np.array(frames, dtype=float)

    def normal_momentum(self, x, xi_tan, normal, energy):
        x = np.atleast_2d(x)
        xi_tan = np.atleast_2d(xi_tan)
        if abs(normal[-1]) < 1e-14:
            return np.full(len(x), np.nan)
        return (energy - xi_tan[:, -1]) / normal[-1]


def _column(tau):
    tau = np.asarray(tau, dtype=float)
    return tau[:, None] if tau.ndim == 1 else tau


# ---------------------------------------------------------------------------
# Concrete potentials

def free_system(n: int = 2, interaction_radius: float = 1.0):
    """``V = 0``."""
    return HamiltonianSystem(
        n,
        V=lambda x: np.zeros(np.atleast_2d(x).shape[0]),
        gradV=lambda x: np.zeros_like(np.atleast_2d(x), dtype=float),
        interaction_radius=interaction_radius,
        hessV=lambda x: np.zeros((np.atleast_2d(x).shape[0], n, n)),
        name="free", check=False)


def three_bump_centers():
    k = np.arange(1, 4)
    return np.stack([np.cos(2 * np.pi * k / 3), np.sin(2 * np.pi * k / 3)], axis=1)


def three_bump_system(R: float = 4.0, height: float = 2.0):
    """Three Gaussian bumps ``height * exp(-R |x - x_k|^2)`` at the cube roots of unity.

    The interaction radius is where each bump has decayed to ``height * e^-36``.
    """
    if R <= 0:
        raise ValidationError("bump sharpness R must be positive")
    centers = three_bump_centers()

    cx, cy = centers[:, 0], centers[:, 1]

    def _offsets(x):
        x = np.atleast_2d(x)
        dx = x[:, 0:1] - cx
        dy = x[:, 1:2] - cy
        return dx, dy, np.exp(-R * (dx * dx + dy * dy))

    def V(x):
        return height * _offsets(x)[2].sum(axis=1)

    def gradV(x):
        dx, dy, g = _offsets(x)
        c = -2.0 * R * height
        return np.stack([c * (g * dx).sum(axis=1), c * (g * dy).sum(axis=1)], axis=1)

    def hessV(x):
        dx, dy, g = _offsets(x)
        a = 4.0 * R * R * height
        b = 2.0 * R * height
        hxx = (g * (a * dx * dx - b)).sum(axis=1)
        hyy = (g * (a * dy * dy - b)).sum(axis=1)
        hxy = (g * (a * dx * dy)).sum(axis=1)
        return np.stack([np.stack([hxx, hxy], axis=1), np.stack([hxy, hyy], axis=1)], axis=1)

    radius = 1.0 + math.sqrt(36.0 / R)
    return HamiltonianSystem(2, V, gradV, radius, hessV=hessV, name="three-bump",
                             params={"R": R, "height": height})


# ---------------------------------------------------------------------------
# Operations

def hamilton_vector_field(sys: Hamiltonian, rho):
    """``H_p = (dp/dxi, -dp/dx)``; for the Schrodinger symbol ``(2 xi, -grad V)``."""
    out = sys.vector_field(as_states(rho, sys.n))
    return out[0] if isinstance(rho, PhasePoint) or np.ndim(rho) == 1 else out


def _check_overflow(s):
    if not np.all(np.isfinite(s)) or np.abs(s).max(initial=0.0) > OVERFLOW_LIMIT:
        raise StepOverflow("trajectory coordinates exceeded 1e9")


def _step_plan(t, dt):
    if dt <= 0:
        raise ValidationError("dt must be positive")
    if abs(t) / dt > 1e8:
        raise ValidationError("|t|/dt exceeds 1e8")
    nsteps = max(1, int(math.ceil(abs(t) / dt - 1e-12)))
    return nsteps, t / nsteps


def integrate_flow(sys: Hamiltonian, rho0, t: float, dt: float = 1e-3, trajectory: bool = False):
    """Flow a point (or a batch) for time ``t``; steps are shrunk to land on ``t``.

    Returns a PhasePoint when given one, otherwise an ``(m, 2n)`` array.  With
    ``trajectory=True`` also returns the sample times and states.
    """
    single = isinstance(rho0, PhasePoint) or np.ndim(rho0) == 1
    s = as_states(rho0, sys.n)
    nsteps, tau = _step_plan(t, dt)
    path = [s] if trajectory else None
    for _ in range(nsteps):
        s = sys.step(s, tau)
        _check_overflow(s)
        if trajectory:
            path.append(s)
    out = PhasePoint.from_array(s[0]) if single else s
    if trajectory:
        times = tau * np.arange(nsteps + 1)
        return out, times, np.stack(path, axis=1)
    return out


@dataclass(frozen=True)
class TangentFrame:
    J: np.ndarray

    def symplectic_defect(self):
        n = self.J.shape[0] // 2
        om = symplectic_form(n)
        return float(np.abs(self.J.T @ om @ self.J - om).max())


def flow_with_tangent(sys: Hamiltonian, states, t: float, dt: float):
    """Batch version of :func:`tangent_flow`: returns final states and frames."""
    s = as_states(states, sys.n)
    m = len(s)
    J = np.broadcast_to(np.eye(2 * sys.n), (m, 2 * sys.n, 2 * sys.n)).copy()
    nsteps, tau = _step_plan(t, dt)
    for _ in range(nsteps):
        s, J = sys.step_tangent(s, J, tau)
        _check_overflow(s)
    return s, J


def tangent_flow(sys: Hamiltonian, rho0, t: float, dt: float = 1e-3):
    _, J = flow_with_tangent(sys, rho0, t, dt)
    return TangentFrame(J[0])


def _first_exit(sys, states, R, tmax, dt, direction):
    """First time |x| >= R along the (forward or backward) flow, capped at tmax."""
    n = sys.n
    s = states.copy()
    m = len(s)
    out = np.full(m, float(tmax))
    r0 = np.linalg.norm(s[:, :n], axis=1)
    out[r0 >= R] = 0.0
    active = np.flatnonzero(r0 < R)
    nsteps, tau = _step_plan(tmax, dt)
    tau *= direction
    t = 0.0
    for k in range(nsteps):
        if active.size == 0:
            break
        prev = s[active]
        new = sys.step(prev, tau)
        _check_overflow(new)
        r = np.linalg.norm(new[:, :n], axis=1)
        hit = r >= R
        if np.any(hit):
            # bisection on the fraction of the last step
            lo = np.zeros(hit.sum())
            hi = np.ones(hit.sum())
            base = prev[hit]
            for _ in range(48):
                mid = 0.5 * (lo + hi)
                trial = sys.step(base, mid * tau)
                inside = np.linalg.norm(trial[:, :n], axis=1) < R
                lo = np.where(inside, mid, lo)
                hi = np.where(inside, hi, mid)
            out[active[hit]] = np.minimum(tmax, (k + hi) * abs(tau))
        s[active] = new
        active = active[~hit]
        t += tau
    return out


def escape_times(sys: Hamiltonian, states, R: float, tmax: float, dt: float = 1e-2):
    """Vectorized :func:`escape_time`; the cap ``tmax`` marks non-escape."""
    if R < sys.interaction_radius - 1e-12:
        raise ValidationError("escape radius must be at least the interaction radius")
    s = as_states(states, sys.n)

    def work(chunk):
        fwd = _first_exit(sys, chunk, R, tmax, dt, +1.0)
        bwd = _first_exit(sys, chunk, R, tmax, dt, -1.0)
        return np.minimum(fwd, bwd)

    return chunked_map(work, s, chunk_size=2048)


def escape_time(sys: Hamiltonian, rho, R: float, tmax: float, dt: float = 1e-2) -> float:
    """Time for the orbit through ``rho`` to leave the ball of radius R.

    The smaller of the forward and backward exit times; ``tmax`` is returned
    when the orbit stays inside on ``[-tmax, tmax]``.
    """
    return float(escape_times(sys, rho, R, tmax, dt)[0])


@dataclass(frozen=True)
class GridSpec:
    """Position grid times momentum directions.

    ``directions`` is either a count of equally spaced angles (n = 2) or an
    explicit array of unit vectors.
    """
    lo: Sequence[float]
    hi: Sequence[float]
    counts: Sequence[int]
    directions: object = 16

    def positions(self):
        axes = [np.linspace(a, b, int(c)) for a, b, c in zip(self.lo, self.hi, self.counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def direction_vectors(self):
        if np.isscalar(self.directions):
            k = int(self.directions)
            if len(self.lo) != 2:
                raise ValidationError("an angle count is only meaningful for n = 2")
            ang = 2 * np.pi * (np.arange(k) + 0.5) / k
            return np.stack([np.cos(ang), np.sin(ang)], axis=1)
        d = np.atleast_2d(np.asarray(self.directions, dtype=float))
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def describe(self):
        dirs = self.directions if np.isscalar(self.directions) else len(self.direction_vectors())
        return {"lo": list(map(float, self.lo)), "hi": list(map(float, self.hi)),
                "counts": list(map(int, self.counts)), "directions": int(dirs)}


def project_to_shell(sys: HamiltonianSystem, x, directions, E: float):
    """Scale momenta along fixed directions onto ``p = E``; NaN rows where forbidden."""
    x = np.atleast_2d(x)
    directions = np.atleast_2d(directions)
    avail = 1.0 + E - sys.V(x)
    speed = np.where(avail > 0, np.sqrt(np.maximum(avail, 0.0)), np.nan)
    return np.concatenate([x, speed[:, None] * directions], axis=1)


@dataclass(frozen=True)
class TrappedSetSample:
    energy: float
    points: np.ndarray
    escape: np.ndarray
    threshold: float
    grid: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)

    def phase_points(self):
        return [PhasePoint.from_array(p) for p in self.points]


def sample_trapped_set(sys: HamiltonianSystem, E: float, grid: GridSpec, t_threshold: float,
                       dt: float = 5e-3, R: Optional[float] = None):
    """Grid points on ``p = E`` whose orbits stay in the interaction ball for ``t_threshold``."""
    R = sys.interaction_radius if R is None else R
    pos = grid.positions()
    dirs = grid.direction_vectors()
    states = project_to_shell(sys, np.repeat(pos, len(dirs), axis=0), np.tile(dirs, (len(pos), 1)), E)
    states = states[np.all(np.isfinite(states), axis=1)]
    states = states[np.linalg.norm(states[:, :sys.n], axis=1) < R]
    if len(states) == 0:
        raise EmptySample("no grid point lies on the energy shell inside the interaction region")
    esc = escape_times(sys, states, R, t_threshold, dt)
    keep = esc >= t_threshold
    if not np.any(keep):
        raise EmptySample(f"no orbit survives t = {t_threshold} inside radius {R}")
    return TrappedSetSample(float(E), states[keep], esc[keep], float(t_threshold), grid.describe())


def transverse_basis(sys: Hamiltonian, state):
    """Orthonormal symplectic basis of the complement of ``span(grad p, H_p)``.

    Columns come in pairs ``(u, Omega^T u)`` so the induced form is standard.
    """
    n = sys.n
    g = sys.grad_energy(state)[0]
    om = symplectic_form(n)
    hp = om @ g
    Q, _ = np.linalg.qr(np.stack([g, hp], axis=1))
    us, vs = [], []
    basis = [Q[:, 0], Q[:, 1]]
    for e in np.eye(2 * n):
        if len(us) == n - 1:
            break
        v = e.copy()
        for b in basis:
            v -= (b @ v) * b
        if np.linalg.norm(v) < 1e-8:
            continue
        v /= np.linalg.norm(v)
        w = om.T @ v
        for b in basis:
            w -= (b @ w) * b
        w /= np.linalg.norm(w)
        us.append(v)
        vs.append(w)
        basis += [v, w]
    return np.stack(us + vs, axis=1)


def reduced_monodromy(sys: Hamiltonian, rho0, t: float, dt: float = 1e-3):
    """Tangent map on the energy shell modulo the flow, in transverse bases."""
    s0 = as_states(rho0, sys.n)
    s1, J = flow_with_tangent(sys, s0, t, dt)
    B0 = transverse_basis(sys, s0)
    B1 = transverse_basis(sys, s1)
    return B1.T @ J[0] @ B0


@dataclass(frozen=True)
class HyperbolicityRecord:
    point: np.ndarray
    rate: float
    poly_order: float
    hyperbolic: bool
    times: np.ndarray
    singular_values: np.ndarray


def _growth_fit(times, sigmas):
    # log sigma = rate * t + order * log t + c; the log term absorbs polynomial growth
    A = np.stack([times, np.log(times), np.ones_like(times)], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(sigmas), rcond=None)
    return float(coef[0]), float(coef[1])


def hyperbolicity_report(sys: Hamiltonian, sample, t: float, dt: float = 1e-3,
                         n_times: int = 20, rate_threshold: float = 0.05, direction: float = 1.0):
    """Fit exponential growth rates of transverse tangent singular values.

    ``sample`` is a TrappedSetSample or an array of states.  A point is
    flagged hyperbolic when the fitted exponential rate exceeds
    ``rate_threshold`` (polynomial growth is absorbed by a ``log t`` term).
    """
    pts = sample.points if isinstance(sample, TrappedSetSample) else as_states(sample, sys.n)
    times = np.linspace(1.0, t, n_times)
    records = []
    for p in pts:
        s = p[None, :]
        J = np.eye(2 * sys.n)[None]
        B0 = transverse_basis(sys, s)
        sig = []
        tprev = 0.0
        for tk in times:
            nsteps, tau = _step_plan(tk - tprev, dt)
            for _ in range(nsteps):
                s, J = sys.step_tangent(s, J, direction * tau)
            _check_overflow(s)
            tprev = tk
            A = transverse_basis(sys, s).T @ J[0] @ B0
            sig.append(np.linalg.svd(A, compute_uv=False)[0])
        sig = np.asarray(sig)
        rate, order = _growth_fit(times, sig)
        records.append(HyperbolicityRecord(p.copy(), rate, order, rate > rate_threshold, times, sig))
    return records
