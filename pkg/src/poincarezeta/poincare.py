"""Poincare sections, crossings and return maps.

Sections are pieces of affine hyperplanes ``{(x - c) . nu = 0}`` in
position space, intersected with an energy shell.  A chart parametrizes the
section by tangential position ``y = U^T (x - c)`` and tangential momentum
``eta = U^T xi``; the normal momentum is solved from ``p = E`` on the
branch whose flow crosses along ``nu``, so each section is oriented: it only
records crossings in the direction of ``nu``.  The chart is symplectic, ``d eta ^ dy`` pulls back the
canonical form because ``nu . x`` is constant on the section.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ._parallel import chunked_map
from .errors import EmptyAtlas, NoCrossing, ValidationError
from .flow import (Hamiltonian, PhasePoint, _check_overflow, _step_plan, as_states,
                   symplectic_form, three_bump_centers)

CROSSING_TOL = 1e-10


def _tangent_basis(normal):
    n = normal.size
    if n == 1:
        return np.zeros((1, 0))
    if n == 2:
        # (U, nu) positively oriented
        return np.array([[normal[1]], [-normal[0]]])
    Q, _ = np.linalg.qr(np.column_stack([normal, np.eye(n)]))
    U = Q[:, 1:n]
    return U - np.outer(normal, normal @ U)


@dataclass(frozen=True, eq=False)
class SectionChart:
    """Oriented hyperplane section with a box-shaped chart domain.

    Parameters
    ----------
    index : int
        Label of the section inside an atlas.
    center, normal : array_like
        Base point and normal of the hyperplane in position space.
    lo, hi : array_like
        Chart box in ``(y, eta)``, each of length ``2(n-1)``.
    energy : float
        Energy shell the chart is attached to.
    tangent : array_like, optional
        Orthonormal basis ``U`` of the hyperplane, shape ``(n, n-1)``.
    """
    index: int
    center: np.ndarray
    normal: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    energy: float = 0.0
    tangent: Optional[np.ndarray] = None
    label: str = ""

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).ravel()
        nu = np.asarray(self.normal, dtype=float).ravel()
        if c.shape != nu.shape:
            raise ValidationError("section center and normal must have the same length")
        norm = np.linalg.norm(nu)
        if norm == 0:
            raise ValidationError("section normal must be nonzero")
        nu = nu / norm
        U = _tangent_basis(nu) if self.tangent is None else np.asarray(self.tangent, dtype=float)
        U = U.reshape(c.size, c.size - 1)
        if not np.allclose(U.T @ U, np.eye(c.size - 1), atol=1e-12) or np.abs(U.T @ nu).max(initial=0) > 1e-12:
            raise ValidationError("tangent basis must be orthonormal and orthogonal to the normal")
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.size != 2 * (c.size - 1) or hi.size != lo.size or np.any(hi <= lo):
            raise ValidationError("chart box must have 2(n-1) increasing intervals")
        for name, val in (("center", c), ("normal", nu), ("tangent", U), ("lo", lo), ("hi", hi)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "energy", float(self.energy))

    @property
    def n(self):
        return self.center.size

    @property
    def dim(self):
        return 2 * (self.n - 1)

    def defining(self, states):
        """``s(x, xi) = (x - c) . nu``, positive on the side ``nu`` points to."""
        s = np.atleast_2d(states)
        return (s[:, :self.n] - self.center) @ self.normal

    def chart(self, sys: Hamiltonian, coords):
        """``kappa(y, eta)``: phase points on the section; NaN rows off the shell."""
        w = np.atleast_2d(np.asarray(coords, dtype=float))
        k = self.n - 1
        x = self.center + w[:, :k] @ self.tangent.T
        xi_t = w[:, k:] @ self.tangent.T
        # the system returns the root whose flow crosses along +nu
        m = sys.normal_momentum(x, xi_t, self.normal, self.energy)
        return np.concatenate([x, xi_t + m[:, None] * self.normal], axis=1)

    def inverse(self, states):
        s = np.atleast_2d(states)
        n = self.n
        return np.concatenate([(s[:, :n] - self.center) @ self.tangent, s[:, n:] @ self.tangent], axis=1)

    def in_box(self, coords, tol=1e-12):
        w = np.atleast_2d(coords)
        return np.all((w >= self.lo - tol) & (w <= self.hi + tol), axis=1)

    def chart_derivative(self, sys: Hamiltonian, state):
        """``D kappa`` at a range point, shape ``(2n, 2(n-1))``.

        The normal momentum derivative follows from the implicit function
        theorem applied to ``p(kappa(y, eta)) = E``.
        """
        n, k = self.n, self.n - 1
        g = sys.grad_energy(state)[0]
        gx, gxi = g[:n], g[n:]
        denom = gxi @ self.normal
        dm_dy = -(gx @ self.tangent) / denom
        dm_deta = -(gxi @ self.tangent) / denom
        D = np.zeros((2 * n, 2 * k))
        D[:n, :k] = self.tangent
        D[n:, :k] = np.outer(self.normal, dm_dy)
        D[n:, k:] = self.tangent + np.outer(self.normal, dm_deta)
        return D

    def inverse_derivative(self):
        n, k = self.n, self.n - 1
        D = np.zeros((2 * k, 2 * n))
        D[:k, :n] = self.tangent.T
        D[k:, n:] = self.tangent.T
        return D

    def seed_grid(self, counts):
        """Uniform grid over the chart box; ``counts`` per coordinate or one int."""
        counts = np.broadcast_to(np.asarray(counts, dtype=int), (self.dim,))
        axes = [np.linspace(a, b, c) for a, b, c in zip(self.lo, self.hi, counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def transversality(self, sys: Hamiltonian, coords):
        """Minimum of ``|H_p s|`` over the chart images of ``coords`` (valid ones only)."""
        st = self.chart(sys, coords)
        st = st[np.all(np.isfinite(st), axis=1)]
        if len(st) == 0:
            return float("nan")
        hp = sys.vector_field(st)[:, :self.n] @ self.normal
        return float(np.abs(hp).min())

    def roundtrip_error(self, sys: Hamiltonian, coords):
        """``max |kappa^{-1}(kappa(w)) - w|`` over valid ``coords``."""
        w = np.atleast_2d(coords)
        st = self.chart(sys, w)
        ok = np.all(np.isfinite(st), axis=1)
        if not np.any(ok):
            return 0.0
        return float(np.abs(self.inverse(st[ok]) - w[ok]).max())

    def __eq__(self, other):
        return isinstance(other, SectionChart) and self.describe() == other.describe()

    __hash__ = None

    def describe(self):
        return {"index": int(self.index), "label": self.label, "center": self.center.tolist(),
                "normal": self.normal.tolist(), "tangent": self.tangent.tolist(),
                "lo": self.lo.tolist(), "hi": self.hi.tolist(), "energy": self.energy}


def energy_deformed_section(chart: SectionChart, z: float, delta: float = 0.1):
    """The chart pushed to the shell ``p = E + z``; only the normal momentum moves."""
    if abs(z) > delta:
        raise ValidationError(f"|z| = {abs(z)} exceeds the configured delta = {delta}")
    return replace(chart, energy=chart.energy + float(z))


def chart_distance(sys: Hamiltonian, a: SectionChart, b: SectionChart, counts=21):
    """Smallest phase-space distance between sampled ranges of two charts."""
    pa = a.chart(sys, a.seed_grid(counts))
    pb = b.chart(sys, b.seed_grid(counts))
    pa = pa[np.all(np.isfinite(pa), axis=1)]
    pb = pb[np.all(np.isfinite(pb), axis=1)]
    if len(pa) == 0 or len(pb) == 0:
        return float("inf")
    from scipy.spatial import cKDTree
    d, _ = cKDTree(pb).query(pa)
    return float(d.min())


# ---------------------------------------------------------------------------
# Crossing detection

@dataclass
class _Hits:
    section: np.ndarray
    time: np.ndarray
    states: np.ndarray
    frames: Optional[np.ndarray]


def _refine(sys, chart, prev, frames, tau, sigma):
    """Step fraction in [0, 1] where ``sigma * s`` turns nonnegative, to 1e-10 in s."""
    lo = np.zeros(len(prev))
    hi = np.ones(len(prev))
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        val = sigma * chart.defining(sys.step(prev, mid * tau))
        neg = val < 0
        lo = np.where(neg, mid, lo)
        hi = np.where(neg, hi, mid)
    f = 0.5 * (lo + hi)
    for _ in range(4):
        st = sys.step(prev, f * tau)
        s = chart.defining(st)
        if np.all(np.abs(s) <= 0.01 * CROSSING_TOL):
            break
        ds = (sys.vector_field(st)[:, :chart.n] @ chart.normal) * tau
        with np.errstate(divide="ignore", invalid="ignore"):
            f_new = f - s / ds
        f = np.where(np.isfinite(f_new), np.clip(f_new, lo, hi), f)
    if frames is None:
        return f, sys.step(prev, f * tau), None
    st, J = sys.step_tangent(prev, frames, f * tau)
    return f, st, J


def _propagate(sys, charts, states, horizon, dt, direction=1.0, frames=False, R=None,
               min_time=1e-8):
    """Flow a batch until each orbit first crosses one of ``charts`` inside its box.

    Crossings count when the defining function changes from negative to
    nonnegative along the chosen time direction.  Orbits that leave the ball
    of radius ``R`` or reach the horizon are reported with section ``-1``.
    """
    s = as_states(states, sys.n).copy()
    m = len(s)
    R = sys.interaction_radius if R is None else R
    dim = 2 * sys.n
    J = np.broadcast_to(np.eye(dim), (m, dim, dim)).copy() if frames else None
    hit_sec = np.full(m, -1)
    hit_t = np.full(m, np.nan)
    hit_s = np.full_like(s, np.nan)
    hit_J = np.full((m, dim, dim), np.nan) if frames else None
    active = np.flatnonzero(np.all(np.isfinite(s), axis=1))
    nsteps, tau = _step_plan(horizon, dt)
    sigma = 1.0 if direction > 0 else -1.0
    tau *= sigma
    prev_def = np.stack([c.defining(s) for c in charts], axis=1)
    for k in range(nsteps):
        if active.size == 0:
            break
        prev = s[active]
        if frames:
            new, Jn = sys.step_tangent(prev, J[active], tau)
        else:
            new, Jn = sys.step(prev, tau), None
        _check_overflow(new)
        new_def = np.stack([c.defining(new) for c in charts], axis=1)
        cand = (sigma * prev_def[active] < 0) & (sigma * new_def >= 0)
        best_f = np.full(len(active), np.inf)
        best_c = np.full(len(active), -1)
        best_st = np.full_like(prev, np.nan)
        best_J = np.full_like(Jn, np.nan) if frames else None
        for ci in np.flatnonzero(cand.any(axis=0)):
            rows = np.flatnonzero(cand[:, ci])
            f, st, Jc = _refine(sys, charts[ci], prev[rows], J[active][rows] if frames else None,
                                tau, sigma)
            ok = charts[ci].in_box(charts[ci].inverse(st)) & ((k + f) * abs(tau) > min_time) & (f < best_f[rows])
            rows_ok = rows[ok]
            best_f[rows_ok] = f[ok]
            best_c[rows_ok] = ci
            best_st[rows_ok] = st[ok]
            if frames:
                best_J[rows_ok] = Jc[ok]
        done = best_c >= 0
        if np.any(done):
            idx = active[done]
            hit_sec[idx] = best_c[done]
            hit_t[idx] = (k + best_f[done]) * abs(tau)
            hit_s[idx] = best_st[done]
            if frames:
                hit_J[idx] = best_J[done]
        escaped = np.linalg.norm(new[:, :sys.n], axis=1) >= R
        s[active] = new
        if frames:
            J[active] = Jn
        prev_def[active] = new_def
        active = active[~done & ~escaped]
    return _Hits(hit_sec, hit_t, hit_s, hit_J)


def detect_crossing(sys: Hamiltonian, rho0, chart: SectionChart, dt: float = 1e-3,
                    horizon: float = 20.0, R: Optional[float] = None):
    """First forward crossing of ``chart`` (in the direction of its normal).

    Returns the crossing PhasePoint and the time; ``|s| <= 1e-10`` there.
    """
    hits = _propagate(sys, [chart], as_states(rho0, sys.n), horizon, dt, R=R, min_time=0.0)
    if hits.section[0] < 0:
        raise NoCrossing(f"no crossing of section {chart.index} within t = {horizon}")
    return PhasePoint.from_array(hits.states[0]), float(hits.time[0])


# ---------------------------------------------------------------------------
# Return maps

@dataclass(frozen=True)
class ReturnRecord:
    from_section: int
    to_section: int
    rho_in: np.ndarray
    rho_out: np.ndarray
    t_plus: float
    jacobian: np.ndarray
    seed: int = -1

    def symplectic_defect(self):
        k = self.jacobian.shape[0] // 2
        om = symplectic_form(k)
        return float(np.abs(self.jacobian.T @ om @ self.jacobian - om).max())

    def det_defect(self):
        return float(abs(np.linalg.det(self.jacobian) - 1.0))


def _chart_jacobian(sys, src, dst, start, end, J):
    """Derivative of ``kappa_dst^{-1} o Phi^{t(rho)} o kappa_src``.

    The return time depends on the point; differentiating ``s(Phi^t) = 0``
    adds the correction ``-X_H (ds J) / (ds X_H)`` to the flow Jacobian.
    """
    n = sys.n
    X = sys.vector_field(end[None])[0]
    ds = np.concatenate([dst.normal, np.zeros(n)])
    P = J - np.outer(X, ds @ J) / (ds @ X)
    return dst.inverse_derivative() @ P @ src.chart_derivative(sys, start[None])


def return_map_batch(sys: Hamiltonian, charts: Sequence[SectionChart], k: int, coords,
                     dt: float = 1e-3, horizon: float = 10.0, direction: float = 1.0,
                     R: Optional[float] = None):
    """Return records for many chart points of section ``charts[k]``.

    Entries are ``None`` where the orbit escapes or the chart point is off the
    shell.  With ``direction = -1`` the predecessor map is computed instead
    (the record then maps rhoIn on section k back to rhoOut, with the
    positive elapsed time stored in ``t_plus``).
    """
    src = charts[k]
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    starts = src.chart(sys, coords)

    def work(chunk):
        h = _propagate(sys, charts, chunk, horizon, dt, direction, frames=True, R=R)
        return h.section, h.time, h.states, h.frames

    sec, tt, ends, frames = chunked_map(work, starts, chunk_size=1024)
    out = []
    for j in range(len(coords)):
        i = sec[j]
        if i < 0:
            out.append(None)
            continue
        dst = charts[i]
        jac = _chart_jacobian(sys, src, dst, starts[j], ends[j], frames[j])
        out.append(ReturnRecord(src.index, dst.index, coords[j].copy(), dst.inverse(ends[j])[0],
                                float(tt[j]), jac, j))
    return out


def return_map_sample(sys: Hamiltonian, charts: Sequence[SectionChart], k: int, rho_in,
                      dt: float = 1e-3, horizon: float = 10.0, direction: float = 1.0,
                      R: Optional[float] = None):
    """Return record for one point ``rho_in`` of section ``charts[k]``.

    Raises NoCrossing when the orbit leaves before meeting any section (the
    point is outside every departure set).
    """
    rec = return_map_batch(sys, charts, k, np.atleast_2d(rho_in), dt, horizon, direction, R)[0]
    if rec is None:
        raise NoCrossing(f"orbit from section {charts[k].index} meets no section")
    return rec


@dataclass(frozen=True)
class ReturnMapAtlas:
    sections: tuple
    records: tuple
    energy: float
    t_max: float
    adjacency: dict
    rejected: tuple = ()
    failures: dict = field(default_factory=dict)

    def pairs(self):
        """Sorted list of (k, i) transitions present in the atlas."""
        return sorted({(r.from_section, r.to_section) for r in self.records})

    def records_for(self, k, i):
        return [r for r in self.records if r.from_section == k and r.to_section == i]

    def departure_set(self, k, i):
        """Sampled indicator of D_{ik}: chart coordinates with an (i, k) record."""
        recs = self.records_for(k, i)
        if not recs:
            return np.zeros((0, self.sections[0].dim))
        return np.stack([r.rho_in for r in recs])

    def arrival_set(self, k, i):
        recs = self.records_for(k, i)
        if not recs:
            return np.zeros((0, self.sections[0].dim))
        return np.stack([r.rho_out for r in recs])


def build_atlas(sys: Hamiltonian, charts: Sequence[SectionChart], seeds, E: Optional[float] = None,
                dt: float = 1e-3, horizon: float = 10.0, R: Optional[float] = None):
    """Sweep seeds on every section and collect first-return records.

    ``seeds`` is a grid count (applied to every chart box) or a mapping from
    section position to explicit arrays of chart coordinates.  Records
    returning to their own section are rejected and listed separately.
    """
    charts = list(charts)
    if E is not None:
        charts = [replace(c, energy=float(E)) for c in charts]
    energies = {c.energy for c in charts}
    if len(energies) != 1:
        raise ValidationError("all charts of an atlas must share one energy")
    records, rejected, failures = [], [], {}
    for k, ch in enumerate(charts):
        if isinstance(seeds, dict):
            pts = np.atleast_2d(np.asarray(seeds.get(k, np.zeros((0, ch.dim))), dtype=float))
        else:
            pts = ch.seed_grid(seeds)
        if pts.size == 0:
            continue
        recs = return_map_batch(sys, charts, k, pts, dt, horizon, 1.0, R)
        failures[ch.index] = sum(r is None for r in recs)
        for r in recs:
            if r is None:
                continue
            (rejected if r.from_section == r.to_section else records).append(r)
    if not records:
        raise EmptyAtlas("no seed produced a return between distinct sections")
    records.sort(key=lambda r: (r.from_section, r.seed))
    adjacency = {c.index: sorted({r.to_section for r in records if r.from_section == c.index})
                 for c in charts}
    t_max = max(r.t_plus for r in records)
    return ReturnMapAtlas(tuple(charts), tuple(records), energies.pop(), float(t_max), adjacency,
                          tuple(rejected), failures)


@dataclass(frozen=True)
class SymplecticReport:
    count: int
    max_det_defect: float
    max_form_defect: float
    mean_form_defect: float


def symplectic_check(obj):
    """``|det J - 1|`` and ``max |J^T Omega J - Omega|`` over a record, list or atlas."""
    if isinstance(obj, ReturnMapAtlas):
        jacs = [r.jacobian for r in obj.records]
    elif isinstance(obj, ReturnRecord):
        jacs = [obj.jacobian]
    else:
        jacs = [r.jacobian if isinstance(r, ReturnRecord) else np.asarray(r, dtype=float) for r in obj]
    if not jacs:
        return SymplecticReport(0, 0.0, 0.0, 0.0)
    k = jacs[0].shape[0] // 2
    om = symplectic_form(k)
    det = np.array([abs(np.linalg.det(J) - 1.0) for J in jacs])
    form = np.array([np.abs(J.T @ om @ J - om).max() for J in jacs])
    return SymplecticReport(len(jacs), float(det.max()), float(form.max()), float(form.mean()))


# ---------------------------------------------------------------------------
# Ready-made sections

def three_bump_sections(E: float = 0.0, half_width: float = 0.45, eta_max: float = 1.0):
    """Six oriented sections between pairs of bumps.

    Section ``(j, k)`` lies on the perpendicular bisector of bumps j and k,
    centred at their midpoint, and records crossings heading from bump j to
    bump k.  Opposite orientations share a line but not a range (the normal
    momentum has opposite signs).
    """
    centers = three_bump_centers()
    charts = []
    for idx, (j, k) in enumerate(itertools.permutations(range(3), 2)):
        mid = 0.5 * (centers[j] + centers[k])
        nu = centers[k] - centers[j]
        charts.append(SectionChart(idx, mid, nu, [-half_width, -eta_max], [half_width, eta_max],
                                   energy=E, label=f"{j + 1}->{k + 1}"))
    return charts


def three_bump_transition(charts, a: int, b: int):
    """True when the bump pair of section b continues that of section a (a shared bump)."""
    ja, ka = (int(s) - 1 for s in charts[a].label.split("->"))
    jb, kb = (int(s) - 1 for s in charts[b].label.split("->"))
    return ka == jb


def parallel_sections(n: int = 2, gap: float = 1.0, half_width: float = 1.0, E: float = 0.0):
    """Two sections ``{x_n = 0}`` and ``{x_n = gap}`` for the normal-form flow."""
    nu = np.zeros(n)
    nu[-1] = 1.0
    lo = -half_width * np.ones(2 * (n - 1))
    return [SectionChart(0, np.zeros(n), nu, lo, -lo, energy=E),
            SectionChart(1, gap * nu, nu, lo, -lo, energy=E)]


def atlas_rows(atlas: ReturnMapAtlas):
    """Rows ``k, i, rhoIn..., rhoOut..., tPlus, J11...`` and the matching header."""
    d = atlas.sections[0].dim
    header = (["k", "i"] + [f"in{j + 1}" for j in range(d)] + [f"out{j + 1}" for j in range(d)]
              + ["t_plus"] + [f"J{a + 1}{b + 1}" for a in range(d) for b in range(d)])
    rows = [[r.from_section, r.to_section, *r.rho_in, *r.rho_out, r.t_plus, *r.jacobian.ravel()]
            for r in atlas.records]
    return header, rows
