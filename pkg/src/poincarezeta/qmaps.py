"""Finite-dimensional open quantum maps.

Two constructions are provided: exact model maps on the torus (the quantum
baker, built from discrete Fourier matrices) and transfer matrices obtained
by discretizing the Bogomolny kernel of a type-1 generating function on
uniform position grids.  Both produce :class:`OpenMapMatrix` objects, block
matrices indexed by (arrival section, departure section).

Conventions: on the torus ``h = 1 / (2 pi N)`` with positions and momenta
``j / N``; the m-point Fourier matrix is ``F_m[j, k] = exp(-2 pi i j k / m) / sqrt(m)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from scipy.linalg import block_diag

from .errors import (CausticError, DimensionError, GeneratingFunctionMismatch, SpectralGapWarning,
                     ValidationError)


# ---------------------------------------------------------------------------
# Profiles

def smoothstep(t):
    """C-infinity ramp: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def cosine_taper(x, lo, hi, margin):
    """1 on ``[lo + margin, hi - margin]``, cosine roll-off to 0 at ``lo`` and ``hi``."""
    x = np.asarray(x, dtype=float)
    if margin <= 0:
        return ((x >= lo) & (x <= hi)).astype(float)
    up = np.clip((x - lo) / margin, 0.0, 1.0)
    down = np.clip((hi - x) / margin, 0.0, 1.0)
    return np.sin(0.5 * np.pi * up) ** 2 * np.sin(0.5 * np.pi * down) ** 2


def dft_matrix(m: int):
    j = np.arange(m)
    return np.exp(-2j * np.pi * np.outer(j, j) / m) / np.sqrt(m)


def torus_h(N: int) -> float:
    return 1.0 / (2.0 * np.pi * N)


# ---------------------------------------------------------------------------
# Weyl quantization on the torus

def weyl_quantize_torus(a: Callable, N: int):
    """Weyl quantization of a symbol ``a(y, eta)`` on the N-point torus.

    ``Op(a)[j, k] = (1/N) sum_l a(mid(q_j, q_k), p_l) exp(2 pi i (j - k) l / N)``
    where the midpoint is taken along the shorter arc of the circle.  The
    symbol must accept broadcast arrays.
    """
    N = int(N)
    if N < 2:
        raise ValidationError("N must be at least 2")
    mu = np.arange(2 * N)[:, None]
    l = np.arange(N)[None, :]
    A = np.asarray(a(mu / (2.0 * N) + 0 * l, l / N + 0.0 * mu), dtype=complex)
    A = np.broadcast_to(A, (2 * N, N))
    G = np.fft.ifft(A, axis=1)
    j = np.arange(N)[:, None]
    k = np.arange(N)[None, :]
    wrap = np.abs(j - k) > N // 2
    midx = np.where(wrap, (j + k + N) % (2 * N), j + k)
    out = G[midx, (j - k) % N]
    if np.isrealobj(a(np.array([0.25]), np.array([0.5]))):
        # real symbols give Hermitian operators; remove rounding asymmetry
        out = 0.5 * (out + out.conj().T)
    return out


# ---------------------------------------------------------------------------
# Open map matrices

@dataclass(frozen=True)
class OpenMapMatrix:
    """Block matrix ``M(z, h)``; ``blocks[(i, k)]`` maps section k to section i.

    ``grids[k]`` holds the position grid of section k (used to dress blocks
    with return-time phases).
    """
    blocks: Dict[tuple, np.ndarray]
    dims: tuple
    h: float
    z: complex = 0.0
    meta: dict = field(default_factory=dict)
    grids: Optional[tuple] = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        for (i, k), B in self.blocks.items():
            if B.shape != (dims[i], dims[k]):
                raise DimensionError(f"block ({i},{k}) has shape {B.shape}, expected {(dims[i], dims[k])}")

    @property
    def size(self):
        return sum(self.dims)

    @property
    def adjacency(self):
        """J_+(k): the sections reached from section k."""
        return {k: sorted(i for (i, kk) in self.blocks if kk == k) for k in range(len(self.dims))}

    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.dims)])

    def dense(self):
        off = self.offsets()
        M = np.zeros((self.size, self.size), dtype=complex)
        for (i, k), B in self.blocks.items():
            M[off[i]:off[i + 1], off[k]:off[k + 1]] = B
        return M

    def norm(self):
        return float(np.linalg.norm(self.dense(), 2))

    def singular_values(self):
        return np.linalg.svd(self.dense(), compute_uv=False)

    def eigenvalues(self):
        return np.linalg.eigvals(self.dense())

    @classmethod
    def single(cls, M, h, z=0.0, meta=None, grid=None):
        M = np.asarray(M, dtype=complex)
        return cls({(0, 0): M}, (M.shape[0],), h, z, dict(meta or {}),
                   None if grid is None else (np.asarray(grid, dtype=float),))


def open_baker(N: int, kept: Sequence[int] = (0, 1, 2), n_branches: int = 3):
    """Quantum baker ``B = F_N^{-1} blockdiag(G_0, ..., G_{b-1})``.

    ``G_b = F_{N/b}`` for kept branches and zero otherwise; all branches kept
    gives the unitary closed baker.
    """
    N = int(N)
    if N < 1:
        raise ValidationError(f"N must be positive, got {N}")
    if n_branches < 1 or N % n_branches:
        raise DimensionError(f"N = {N} is not divisible by {n_branches}")
    kept = sorted(set(int(b) for b in kept))
    if any(b < 0 or b >= n_branches for b in kept):
        raise ValidationError(f"kept branches must lie in 0..{n_branches - 1}")
    m = N // n_branches
    Fm = dft_matrix(m)
    G = [Fm if b in kept else np.zeros((m, m)) for b in range(n_branches)]
    B = dft_matrix(N).conj().T @ block_diag(*G)
    meta = {"model": "baker", "N": N, "kept": kept, "branches": n_branches}
    return OpenMapMatrix.single(B, torus_h(N), meta=meta, grid=np.arange(N) / N)


def baker_classical_map(q, p, kept: Sequence[int] = (0, 1, 2), n_branches: int = 3):
    """Classical baker ``(q, p) -> (b q - j, (p + j) / b)`` on branch ``j = floor(b q)``.

    Returns the image and a mask of points whose branch is kept.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    j = np.minimum(np.floor(n_branches * q).astype(int), n_branches - 1)
    alive = np.isin(j, list(kept))
    return n_branches * q - j, (p + j) / n_branches, alive


def box_counting_dimension(kept: Sequence[int] = (0, 2), n_branches: int = 3, n_iter: int = 10,
                           samples: int = 2_000_000, levels: Sequence[int] = (1, 2, 3, 4, 5, 6),
                           seed: int = 0):
    """Box-counting dimension of the expanding-direction trace of the repeller.

    Random points are iterated ``n_iter`` times with the classical map; the
    positions of the survivors approximate the forward-trapped set, whose
    occupied boxes of side ``b^{-k}`` are counted and fitted against scale.
    """
    rng = np.random.default_rng(seed)
    q = rng.random(samples)
    p = rng.random(samples)
    q0 = q.copy()
    alive = np.ones(samples, dtype=bool)
    for _ in range(n_iter):
        q, p, ok = baker_classical_map(q, p, kept, n_branches)
        alive &= ok
    pts = q0[alive]
    if pts.size == 0:
        raise ValidationError("no orbit survives; the repeller is empty")
    counts = []
    for k in levels:
        boxes = np.floor(pts * n_branches ** k).astype(np.int64)
        counts.append(np.unique(boxes).size)
    eps = np.array([float(n_branches) ** -k for k in levels])
    slope = np.polyfit(np.log(1.0 / eps), np.log(counts), 1)[0]
    return float(slope), np.asarray(counts)


def fit_power_law(x, y):
    """Least-squares exponent of ``y ~ C x^nu`` in log-log coordinates."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def counting_exponent(Ns: Sequence[int], kept=(0, 2), threshold: float = 0.5, n_branches: int = 3):
    """Counts of baker eigenvalues with ``|lambda| >= threshold`` and their power-law exponent."""
    counts = [int(np.sum(np.abs(open_baker(N, kept, n_branches).eigenvalues()) >= threshold)) for N in Ns]
    return fit_power_law(Ns, counts), counts


# ---------------------------------------------------------------------------
# Energy dressing and analytic families

def _phase_diag(M0: OpenMapMatrix, t_plus, k, z):
    t = t_plus[k] if isinstance(t_plus, dict) else t_plus
    if callable(t):
        if M0.grids is None:
            raise ValidationError("position grids are needed to evaluate a return-time symbol")
        tv = np.asarray(t(M0.grids[k]), dtype=float)
    else:
        tv = np.full(M0.dims[k], float(t))
    return tv, np.exp(1j * z * tv / M0.h)


def dress_with_energy_phase(M0: OpenMapMatrix, t_plus, z: complex):
    """Right-multiply every block by ``diag(exp(i z t_+(q) / h))`` on its departure grid.

    ``t_plus`` is a constant, a callable of position, or a dict of those per
    departure section.
    """
    z = complex(z)
    blocks = {}
    for (i, k), B in M0.blocks.items():
        _, ph = _phase_diag(M0, t_plus, k, z)
        blocks[(i, k)] = B * ph[None, :]
    meta = dict(M0.meta, dressed=True)
    return OpenMapMatrix(blocks, M0.dims, M0.h, M0.z + z, meta, M0.grids)


class DressedFamily:
    """Holomorphic family ``z -> M0 diag(exp(i z t_+ / h))`` with its exact derivative."""

    def __init__(self, M0: OpenMapMatrix, t_plus):
        self.M0 = M0
        self.t_plus = t_plus

    def __call__(self, z):
        return dress_with_energy_phase(self.M0, self.t_plus, z)

    def derivative(self, z):
        """Dense ``dM/dz``; each block picks up the factor ``i t_+(q) / h``."""
        off = self.M0.offsets()
        D = np.zeros((self.M0.size, self.M0.size), dtype=complex)
        for (i, k), B in self.M0.blocks.items():
            tv, ph = _phase_diag(self.M0, self.t_plus, k, complex(z))
            D[off[i]:off[i + 1], off[k]:off[k + 1]] = B * (ph * 1j * tv / self.M0.h)[None, :]
        return D

    def batch(self, zs):
        """Stacked dense ``M(z)`` and ``M'(z)`` for an array of z."""
        zs = np.atleast_1d(np.asarray(zs, dtype=complex))
        if not hasattr(self, "_dense"):
            tv = np.concatenate([_phase_diag(self.M0, self.t_plus, k, 0.0)[0] for k in range(len(self.M0.dims))])
            object.__setattr__(self, "_dense", (self.M0.dense(), tv))
        M0, tv = self._dense
        ph = np.exp(1j * zs[:, None] * tv[None, :] / self.M0.h)
        M = M0[None, :, :] * ph[:, None, :]
        return M, M * (1j * tv / self.M0.h)[None, None, :]

    @property
    def meta(self):
        return dict(self.M0.meta)


# ---------------------------------------------------------------------------
# Spectral projectors

@dataclass(frozen=True)
class SpectralProjector:
    Pi: np.ndarray
    rank: int
    source: str = ""

    def defect(self):
        """max of ``|Pi^2 - Pi|`` and ``|Pi^H - Pi|``."""
        P = self.Pi
        return float(max(np.abs(P @ P - P).max(), np.abs(P.conj().T - P).max()))


def disk_symbol(r: float, center=(0.5, 0.5)):
    """``q = |(y, eta) - center|^2 - r^2``: negative exactly on the disk."""
    cy, ce = center
    return lambda y, eta: (y - cy) ** 2 + (eta - ce) ** 2 - r * r


def spectral_projector(q: Callable, N: int, source: str = "", gap_tol: float = 1e-8):
    """Projector on the negative spectrum of ``Op(q)`` (torus Weyl quantization)."""
    Q = weyl_quantize_torus(q, N)
    Q = 0.5 * (Q + Q.conj().T)
    w, V = np.linalg.eigh(Q)
    if np.any(np.abs(w) < gap_tol):
        warnings.warn(f"eigenvalue within {gap_tol} of 0; rank is ill-defined at N = {N}",
                      SpectralGapWarning, stacklevel=2)
    neg = w < 0
    Vn = V[:, neg]
    return SpectralProjector(Vn @ Vn.conj().T, int(neg.sum()), source)


def truncate(M: OpenMapMatrix, projectors):
    """Blockwise ``Pi_i M_ik Pi_k``; ``projectors`` is one per section (or one for all)."""
    if isinstance(projectors, (SpectralProjector, np.ndarray)):
        projectors = [projectors] * len(M.dims)
    P = [p.Pi if isinstance(p, SpectralProjector) else np.asarray(p) for p in projectors]
    for k, Pk in enumerate(P):
        if Pk.shape != (M.dims[k], M.dims[k]):
            raise DimensionError(f"projector {k} has shape {Pk.shape}, section has dimension {M.dims[k]}")
    blocks = {(i, k): P[i] @ B @ P[k] for (i, k), B in M.blocks.items()}
    return OpenMapMatrix(blocks, M.dims, M.h, M.z, dict(M.meta, truncated=True), M.grids)


def numerical_rank(A, rtol=1e-10):
    s = np.linalg.svd(np.asarray(A), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


# ---------------------------------------------------------------------------
# Egorov diagonostics

def compose_symbol(a: Callable, F: Callable):
    """``(y, eta) -> a(F(y, eta))`` for a classical map returning (y', eta', ...)."""
    def comp(y, eta):
        out = F(y, eta)
        return a(out[0], out[1])
    return comp


def egorov_residual(M, a: Callable, F: Callable, alpha: Optional[Callable] = None,
                    window: Optional[Callable] = None):
    """``|| W (M^H Op(a) M - Op(alpha * (a o F))) W ||`` on the torus.

    ``alpha`` is the cutoff multiplying the pulled-back symbol (default 1),
    ``window`` an optional symbol whose quantization ``W`` restricts the
    comparison to where the cutoff is identically one.
    """
    A = M.dense() if isinstance(M, OpenMapMatrix) else np.asarray(M)
    N = A.shape[0]
    pulled = compose_symbol(a, F)
    if alpha is not None:
        base = pulled
        pulled = lambda y, eta: alpha(y, eta) * base(y, eta)
    D = A.conj().T @ weyl_quantize_torus(a, N) @ A - weyl_quantize_torus(pulled, N)
    if window is not None:
        W = weyl_quantize_torus(window, N)
        D = W @ D @ W
    return float(np.linalg.norm(D, 2))


def momentum_window(lo: float = 0.1, width: float = 0.1):
    """Symbol equal to 1 for ``eta`` in ``[lo + width, 1 - lo - width]``, 0 near ``eta = 0``."""
    return lambda y, eta: (smoothstep((eta - lo) / width) * smoothstep((1.0 - lo - eta) / width)
                           + 0.0 * y)


# ---------------------------------------------------------------------------
# Transfer matrices from generating functions

def _fd(f, x, dx):
    return (f(x + dx) - f(x - dx)) / (2 * dx)


@dataclass(frozen=True)
class GeneratingFunction:
    """Type-1 generating function ``S(q_out, q_in; E)``.

    ``p_out = dS/dq_out`` and ``p_in = -dS/dq_in``.  Missing derivatives are
    taken by central differences.
    """
    S: Callable
    dS_dqout: Optional[Callable] = None
    dS_dqin: Optional[Callable] = None
    d2S: Optional[Callable] = None
    step: float = 1e-5

    def value(self, qo, qi, E=0.0):
        return self.S(qo, qi, E)

    def p_out(self, qo, qi, E=0.0):
        if self.dS_dqout is not None:
            return self.dS_dqout(qo, qi, E)
        return _fd(lambda u: self.S(u, qi, E), qo, self.step)

    def p_in(self, qo, qi, E=0.0):
        if self.dS_dqin is not None:
            return -self.dS_dqin(qo, qi, E)
        return -_fd(lambda u: self.S(qo, u, E), qi, self.step)

    def mixed(self, qo, qi, E=0.0):
        if self.d2S is not None:
            return self.d2S(qo, qi, E)
        return -_fd(lambda u: self.p_in(u, qi, E), qo, self.step)


def linear_generating_function(F, action_time: float = 0.0):
    """Generating function of the linear symplectic map ``F = [[a, b], [c, d]]`` (b != 0).

    ``S = (a q_in^2 - 2 q_in q_out + d q_out^2) / (2 b) + E t``; the energy
    term makes ``dS/dE`` the return time.
    """
    (a, b), (c, d) = np.asarray(F, dtype=float)
    if abs(b) < 1e-14:
        raise CausticError("map has no type-1 generating function (b = 0)")
    return GeneratingFunction(
        S=lambda qo, qi, E: (a * qi * qi - 2 * qi * qo + d * qo * qo) / (2 * b) + E * action_time,
        dS_dqout=lambda qo, qi, E: (d * qo - qi) / b,
        dS_dqin=lambda qo, qi, E: (a * qi - qo) / b,
        d2S=lambda qo, qi, E: -1.0 / b + 0.0 * qo * qi)


def free_generating_function(tau: float, action_time: float = 1.0):
    """Free motion ``q_out = q_in + 2 tau p`` (speed 2|p|) with energy phase ``E t``."""
    return GeneratingFunction(
        S=lambda qo, qi, E: (qo - qi) ** 2 / (4 * tau) + E * action_time,
        dS_dqout=lambda qo, qi, E: (qo - qi) / (2 * tau),
        dS_dqin=lambda qo, qi, E: -(qo - qi) / (2 * tau),
        d2S=lambda qo, qi, E: -1.0 / (2 * tau) + 0.0 * qo * qi)


def section_grid(lo, hi, plo, phi, h, oversample: float = 2.0):
    """Midpoint grid on ``[lo, hi]`` with spacing ``2 pi h / ((phi - plo) * oversample)``."""
    dq = 2 * np.pi * h / ((phi - plo) * oversample)
    n = max(2, int(math.ceil((hi - lo) / dq)))
    dq = (hi - lo) / n
    return lo + (np.arange(n) + 0.5) * dq, dq


def transfer_block(gen: GeneratingFunction, q_out, dq_out, q_in, dq_in, h, E=0.0,
                   w_out=None, w_in=None, p_box_out=None, p_box_in=None, p_margin=0.2):
    """Discretized kernel ``(2 pi i h)^{-1/2} |S''|^{1/2} exp(i S / h)`` with quadrature weights.

    ``w_out``/``w_in`` are position tapers; ``p_box_out``/``p_box_in``
    optionally taper the momenta implied by S, so the window lives in phase
    space and kernel entries with unresolvable momenta are cut off.
    """
    QO, QI = np.meshgrid(q_out, q_in, indexing="ij")
    mixed = gen.mixed(QO, QI, E)
    if np.any(mixed == 0) or (mixed.max() > 0 and mixed.min() < 0):
        raise CausticError("mixed derivative of S changes sign inside the window; shrink the window")
    K = np.exp(1j * gen.value(QO, QI, E) / h) * np.sqrt(np.abs(mixed)) / np.sqrt(2j * np.pi * h)
    K *= np.sqrt(dq_out * dq_in)
    if w_out is not None:
        K *= w_out[:, None]
    if w_in is not None:
        K *= w_in[None, :]
    if p_box_in is not None:
        K *= cosine_taper(gen.p_in(QO, QI, E), p_box_in[0], p_box_in[1], p_margin)
    if p_box_out is not None:
        K *= cosine_taper(gen.p_out(QO, QI, E), p_box_out[0], p_box_out[1], p_margin)
    return K


def check_generating_function(gen: GeneratingFunction, records, E=0.0, tol=1e-3):
    """Largest mismatch of ``(p_in, p_out)`` predicted by S against sampled return-map records."""
    worst = 0.0
    for r in records:
        qi, pi_ = r.rho_in[0], r.rho_in[1]
        qo, po = r.rho_out[0], r.rho_out[1]
        err = max(abs(gen.p_in(qo, qi, E) - pi_), abs(gen.p_out(qo, qi, E) - po))
        worst = max(worst, float(err))
    if worst > tol:
        raise GeneratingFunctionMismatch(f"generating function misses the return map by {worst:.2e}")
    return worst


def bogomolny_transfer(atlas, generating: Dict[tuple, GeneratingFunction], h: float, E: float = 0.0,
                       margin: float = 0.1, oversample: float = 2.0, check: bool = True,
                       windows: Optional[Dict[tuple, tuple]] = None, p_window: bool = False):
    """Transfer matrix with one block per atlas transition (n = 2).

    Section k is discretized on a midpoint grid over the position interval of
    its chart box.  Block (i, k) carries cosine tapers on the departure and
    arrival position intervals; by default these are the ranges of sampled
    ``q_in`` and ``q_out`` for the transition, widened by ``margin``.  With
    ``p_window`` the implied momenta are tapered to the chart boxes as well.
    """
    charts = atlas.sections
    if any(c.dim != 2 for c in charts):
        raise ValidationError("transfer matrices are implemented for one-dimensional sections (n = 2)")
    pos = {c.index: k for k, c in enumerate(charts)}
    grids, steps = [], []
    for c in charts:
        g, dq = section_grid(c.lo[0], c.hi[0], c.lo[1], c.hi[1], h, oversample)
        grids.append(g)
        steps.append(dq)
    blocks = {}
    for (kk, ii), gen in generating.items():
        k, i = pos[kk], pos[ii]
        recs = atlas.records_for(kk, ii)
        if check and recs:
            check_generating_function(gen, recs, E)
        if windows is not None and (kk, ii) in windows:
            (a0, a1), (b0, b1) = windows[(kk, ii)]
        elif recs:
            qi = np.array([r.rho_in[0] for r in recs])
            qo = np.array([r.rho_out[0] for r in recs])
            a0, a1 = qi.min() - margin, qi.max() + margin
            b0, b1 = qo.min() - margin, qo.max() + margin
        else:
            a0, a1 = charts[k].lo[0], charts[k].hi[0]
            b0, b1 = charts[i].lo[0], charts[i].hi[0]
        w_in = cosine_taper(grids[k], a0, a1, margin)
        w_out = cosine_taper(grids[i], b0, b1, margin)
        pbox_out = (charts[i].lo[1], charts[i].hi[1]) if p_window else None
        pbox_in = (charts[k].lo[1], charts[k].hi[1]) if p_window else None
        blocks[(i, k)] = transfer_block(gen, grids[i], steps[i], grids[k], steps[k], h, E, w_out, w_in,
                                        pbox_out, pbox_in, margin)
    meta = {"model": "bogomolny", "E": E, "oversample": oversample, "margin": margin}
    return OpenMapMatrix(blocks, tuple(len(g) for g in grids), h, 0.0, meta, tuple(grids))


# ---------------------------------------------------------------------------
# Poisson operator normalization

def central_difference_matrix(n: int, dx: float, order: int = 8):
    """Sparse first-derivative matrix with centred stencils of the given order."""
    from scipy.sparse import diags
    coeffs = {2: [1 / 2], 4: [2 / 3, -1 / 12], 6: [3 / 4, -3 / 20, 1 / 60],
              8: [4 / 5, -1 / 5, 4 / 105, -1 / 280]}[order]
    offsets, vals = [], []
    for m, c in enumerate(coeffs, start=1):
        offsets += [m, -m]
        vals += [c / dx, -c / dx]
    return diags(vals, offsets, shape=(n, n), format="csr")


def erf_step(width: float):
    from scipy.special import erf
    return lambda x: 0.5 * (1.0 + erf(np.asarray(x) / width))


def smooth_step(width: float):
    """C-infinity step rising from 0 at ``-width`` to 1 at ``width``."""
    return lambda x: smoothstep((np.asarray(x) + width) / (2 * width))


def poisson_normalization_check(N: int, h: float, z: complex, chi0: Callable, L: float = 1.0,
                                v: Optional[Callable] = None, order: int = 8):
    """Discrete ``<(i/h)[h D_n, chi0] K(z) v, K(conj z) v> / ||v||^2``.

    ``K(z) v (x', x_n) = exp(i x_n z / h) v(x')`` on an ``N x N`` grid over
    ``[-L, L]^2``; the commutator is formed with ``order``-th order centred
    differences in ``x_n`` (rows near the ends use only the interior values).
    """
    x = np.linspace(-L, L, N)
    dx = x[1] - x[0]
    v = (lambda s: np.exp(-4.0 * s * s)) if v is None else v
    # rows index x', columns index x_n
    Kz = v(x)[:, None] * np.exp(1j * x * z / h)[None, :]
    Kzb = v(x)[:, None] * np.exp(1j * x * np.conj(z) / h)[None, :]
    D = central_difference_matrix(N, dx, order)
    c = chi0(x)[None, :]
    # (i/h)[h D_n, chi0] = [d/dx_n, chi0]
    comm = (D @ (c * Kz).T).T - c * (D @ Kz.T).T
    half = order // 2
    comm[:, :half] = 0
    comm[:, -half:] = 0
    num = np.sum(comm * np.conj(Kzb)) * dx * dx
    return complex(num / (np.sum(np.abs(v(x)) ** 2) * dx))
