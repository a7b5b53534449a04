"""Independent reference computations shared by the tests.

The symmetric bounce orbit of the three-bump system is located by shooting
with scipy's DOP853 integrator (not the package's splitting scheme).  The
frozen constants below were produced by :func:`shoot_bounce_orbit`.
"""

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

# bounce orbit between the bumps at angles 2pi/3 and 4pi/3: it crosses the
# x-axis perpendicularly at (BOUNCE_A, 0)
BOUNCE_A = -0.4994894518107755
BOUNCE_PERIOD = 1.6002905984702334
# trace of the monodromy over one period minus the two neutral eigenvalues
# (DOP853 variational equations, see reference_monodromy)
BOUNCE_MONODROMY_TRACE = 137.358813484

_CENTERS = np.array([[np.cos(2 * np.pi * k / 3), np.sin(2 * np.pi * k / 3)] for k in (1, 2, 3)])


def _V(x, R=4.0):
    return 2.0 * np.exp(-R * ((x - _CENTERS) ** 2).sum(axis=1)).sum()


def _gradV(x, R=4.0):
    d = x - _CENTERS
    g = np.exp(-R * (d ** 2).sum(axis=1))
    return -4.0 * R * (g[:, None] * d).sum(axis=0)


def _rhs(t, s):
    return np.concatenate([2.0 * s[2:], -_gradV(s[:2])])


def bounce_state(a=BOUNCE_A, angle=0.0):
    """Phase point of the bounce orbit on the x-axis, rotated by ``angle``."""
    x = np.array([a, 0.0])
    xi = np.array([0.0, -np.sqrt(1.0 - _V(x))])
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return np.concatenate([rot @ x, rot @ xi])


def _quarter(a):
    ev = lambda t, s: s[3]
    ev.terminal = True
    ev.direction = 1
    sol = solve_ivp(_rhs, (0, 5), bounce_state(a), method="DOP853", rtol=1e-13, atol=1e-14,
                    events=ev)
    return sol.y_events[0][0][2], sol.t_events[0][0]


def shoot_bounce_orbit():
    """Return (a, period): the vertical launch point whose orbit turns back along itself."""
    a = brentq(lambda a: _quarter(a)[0], -0.6, -0.3, xtol=1e-15)
    return a, 4.0 * _quarter(a)[1]


def reference_flow(state, t):
    """High-accuracy DOP853 flow of the three-bump system."""
    sol = solve_ivp(_rhs, (0, t), np.asarray(state, dtype=float), method="DOP853",
                    rtol=1e-13, atol=1e-14)
    return sol.y[:, -1]


def _hessV(x, R=4.0):
    d = x - _CENTERS
    g = np.exp(-R * (d ** 2).sum(axis=1))
    return sum(gk * (4.0 * R * R * np.outer(dk, dk) - 2.0 * R * np.eye(2)) for gk, dk in zip(g, d)) * 2.0


def reference_monodromy(state=None, t=BOUNCE_PERIOD):
    """Full 4x4 variational matrix along the DOP853 orbit."""
    state = bounce_state() if state is None else state

    def rhs(t, y):
        s, J = y[:4], y[4:].reshape(4, 4)
        A = np.zeros((4, 4))
        A[:2, 2:] = 2.0 * np.eye(2)
        A[2:, :2] = -_hessV(s[:2])
        return np.concatenate([_rhs(t, s), (A @ J).ravel()])

    y0 = np.concatenate([state, np.eye(4).ravel()])
    sol = solve_ivp(rhs, (0, t), y0, method="DOP853", rtol=1e-12, atol=1e-13)
    return sol.y[4:, -1].reshape(4, 4)


# ---------------------------------------------------------------------------
# One-dimensional barrier resonances by matching outgoing solutions

BARRIER = dict(V0=0.8, a=1.0, w=0.05, h=0.05)


def barrier_potential(x, V0=0.8, a=1.0, w=0.05):
    return 0.5 * V0 * (np.tanh((x + a) / w) - np.tanh((x - a) / w))


def _outgoing(z, x_start, h, sign, **pot):
    """Integrate h^2 u'' = (V - 1 - z) u from x_start to 0 with u ~ exp(sign i k x / h)."""
    k = np.sqrt(1.0 + z + 0j)
    u0 = np.exp(sign * 1j * k * x_start / h)
    du0 = sign * 1j * k / h * u0

    def rhs(x, y):
        return [y[1], (barrier_potential(x, **pot) - 1.0 - z) * y[0] / h ** 2]

    sol = solve_ivp(rhs, (x_start, 0.0), [u0, du0], method="DOP853", rtol=1e-13, atol=1e-300)
    u, du = sol.y[:, -1]
    # normalize to keep the Wronskian O(1)
    s = abs(u) + h * abs(du)
    return u / s, du / s


def matching_wronskian(z, h=0.05, X=3.0, **pot):
    """Wronskian at x = 0 of the solutions outgoing to the right and to the left."""
    pot = {k: v for k, v in dict(BARRIER, **pot).items() if k != "h"}
    uR, dR = _outgoing(z, X, h, +1, **pot)
    uL, dL = _outgoing(z, -X, h, -1, **pot)
    return h * (uL * dR - uR * dL)


def barrier_resonance(z0, h=0.05, **pot):
    """Root of the matching Wronskian near z0 (secant iteration in the complex plane)."""
    from scipy.optimize import newton
    return complex(newton(lambda z: matching_wronskian(z, h, **pot), complex(z0), tol=1e-14, maxiter=100))
