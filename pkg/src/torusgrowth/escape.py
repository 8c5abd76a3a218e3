"""Escape-function construction on the unit cotangent bundle over T^2.

For a certified structurally-stable field the cotangent lift has an
attracting set (conormals of unstable manifolds, plus whole fibers over
sinks) and a repelling set (conormals of stable manifolds, plus fibers
over sources).  This module builds, on an (x1, x2, theta) grid:

  * an order function m = E - 1 + (3/2) m1 + (1/2) m2, where m1/m2 are
    forward/backward time-averages of a 0/1 profile separating the two
    sets, and E is a small energy term aligned with the flow;
  * a weight f1 blending the forward/backward covector stretching
    log-averages near the respective sets (recentred per branch, since
    additive constants do not change derivatives along the flow);
  * the degree-sigma symbol a = m * f1^sigma * |xi|^sigma, cut off near
    the zero section.

`certify_escape` measures the derivative of a along the full cotangent
flow by central differences and reports the positivity margin delta, the
negative-cone statistics, and the region checks (m < -1/2 on the refined
repeller, m > 1/2 on the refined attractor).  Everything is sampled, so
the certificate is a measurement with explicit margins, not a proof.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial import cKDTree

from .fields import FourierVectorField
from .msanalysis import stable_unstable_manifold_sample
from .quantize import Symbol

TWO_PI = 2.0 * np.pi


def smoothstep(s):
    """C^1 ramp: 0 for s <= 0, 1 for s >= 1, 3s^2 - 2s^3 between."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _embed_phase(x1, x2, th):
    """Chordal embedding of (x, theta) into R^6 for KD-tree distances."""
    return np.stack(
        [np.cos(x1), np.sin(x1), np.cos(x2), np.sin(x2), np.cos(th), np.sin(th)],
        axis=-1,
    )


# ----------------------------------------------------------------------
# phase-space sets from the structural analysis
# ----------------------------------------------------------------------

@dataclass
class PhaseSets:
    """Point clouds sampling the lifted attractor and repeller."""

    attractor: np.ndarray  # (Ma, 3) rows (x1, x2, theta)
    repeller: np.ndarray   # (Mr, 3)

    def trees(self):
        ta = cKDTree(_embed_phase(*self.attractor.T))
        tr = cKDTree(_embed_phase(*self.repeller.T))
        return ta, tr


def _conormal_cloud(branches, closing_point=None):
    """Conormal directions over manifold polylines: rows (x1, x2, theta).

    Tangents come from centered differences along each polyline; the two
    conormal angles (+-) are both included.  closing_point, if given, is
    appended with the conormal of the local tangent there (the saddle
    itself, where the polyline starts a small offset away).
    """
    rows = []
    for br in branches:
        if len(br) < 3:
            continue
        d = np.angle(np.exp(1j * (br[2:] - br[:-2])))
        pts = br[1:-1]
        tang = d / np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-300)
        th_n = np.arctan2(tang[:, 0], -tang[:, 1])  # normal = rot90(tangent)
        for shift in (0.0, np.pi):
            rows.append(np.column_stack([pts, (th_n + shift) % TWO_PI]))
    if closing_point is not None:
        x, th_n = closing_point
        for shift in (0.0, np.pi):
            rows.append(np.array([[x[0], x[1], (th_n + shift) % TWO_PI]]))
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, 3))


def _fiber_cloud(point, n_fiber):
    th = np.linspace(0, TWO_PI, n_fiber, endpoint=False)
    return np.column_stack([np.full(n_fiber, point[0]),
                            np.full(n_fiber, point[1]), th])


def build_phase_sets(V, report, t_max=60.0, dt_rec=0.02, n_fiber=128):
    """Sample the lifted attractor/repeller of a certified field.

    Repeller: conormals of saddle stable manifolds + fibers over sources.
    Attractor: conormals of saddle unstable manifolds + fibers over sinks.
    """
    stops = [c.point for c in report.critical_points]
    att, rep = [], []
    for saddle in report.saddles:
        stable = stable_unstable_manifold_sample(
            V, saddle, "stable", t_max=t_max, dt_rec=dt_rec, stop_points=stops)
        unstable = stable_unstable_manifold_sample(
            V, saddle, "unstable", t_max=t_max, dt_rec=dt_rec,
            stop_points=stops)
        tang_s = saddle.stable_direction()
        tang_u = saddle.unstable_direction()
        rep.append(_conormal_cloud(
            stable, (saddle.point, np.arctan2(tang_s[0], -tang_s[1]))))
        att.append(_conormal_cloud(
            unstable, (saddle.point, np.arctan2(tang_u[0], -tang_u[1]))))
    for src in report.sources:
        rep.append(_fiber_cloud(src.point, n_fiber))
    for snk in report.sinks:
        att.append(_fiber_cloud(snk.point, n_fiber))
    return PhaseSets(np.concatenate(att, axis=0), np.concatenate(rep, axis=0))


# ----------------------------------------------------------------------
# energy term
# ----------------------------------------------------------------------

def build_energy(V, report, n, amplitude=2.0 / 17.0, mode="auto"):
    """Small confining term E on the position grid, sup |E| = amplitude.

    mode "potential" exploits a symmetric Jacobian (V = grad(phi)) and
    takes E proportional to phi, so the derivative of E along the flow is
    |V|^2 >= 0 everywhere; mode "averaged" builds E as a normalized sum
    of bumps, positive at sinks and negative at sources; "auto" picks the
    potential path whenever the Jacobian is symmetric.  amplitude stays
    below 1/8 so E never flips the sign of the order function on the
    target regions.
    """
    if amplitude >= 0.125:
        raise ValueError("energy amplitude must stay below 1/8")
    if mode not in ("auto", "potential", "averaged"):
        raise ValueError(f"unknown energy mode {mode!r}")
    ax = np.linspace(0, TWO_PI, n, endpoint=False)
    X1, X2 = np.meshgrid(ax, ax, indexing="ij")
    grid = V.on_grid(0.0, (n, n))
    xg = np.stack([X1, X2], axis=-1)
    J = V.jacobian(0.0, xg.reshape(-1, 2))
    jac_asym = float(np.max(np.abs(J - np.swapaxes(J, -1, -2))))
    if mode == "potential" and jac_asym >= 1e-9:
        raise ValueError("potential mode needs a symmetric Jacobian")
    if mode != "averaged" and jac_asym < 1e-9:
        # symmetric Jacobian: V = grad(phi); recover phi spectrally
        k1 = np.fft.fftfreq(n, 1.0 / n)
        K1, K2 = np.meshgrid(k1, k1, indexing="ij")
        ksq = K1**2 + K2**2
        num = K1 * np.fft.fft2(grid[..., 0]) + K2 * np.fft.fft2(grid[..., 1])
        phi_hat = np.where(ksq > 0, num / (1j * np.where(ksq > 0, ksq, 1.0)), 0.0)
        phi = np.fft.ifft2(phi_hat).real
    else:
        phi = np.zeros((n, n))
        for snk in report.sinks:
            phi += np.exp(np.cos(X1 - snk.point[0])
                          + np.cos(X2 - snk.point[1]) - 2.0)
        for src in report.sources:
            phi -= np.exp(np.cos(X1 - src.point[0])
                          + np.cos(X2 - src.point[1]) - 2.0)
    sup = np.max(np.abs(phi))
    if sup == 0.0:
        return np.zeros((n, n))
    return amplitude * phi / sup


# ----------------------------------------------------------------------
# lifted marching on batched arrays
# ----------------------------------------------------------------------

def _lift_rhs(V, x, eta, sgn):
    val, jac = V.jet(0.0, x)
    return sgn * val, -sgn * np.einsum("...ba,...b->...a", jac, eta)


def _lift_step(V, x, eta, dt, sgn=1.0):
    k1 = _lift_rhs(V, x, eta, sgn)
    k2 = _lift_rhs(V, x + 0.5 * dt * k1[0], eta + 0.5 * dt * k1[1], sgn)
    k3 = _lift_rhs(V, x + 0.5 * dt * k2[0], eta + 0.5 * dt * k2[1], sgn)
    k4 = _lift_rhs(V, x + dt * k3[0], eta + dt * k3[1], sgn)
    return (x + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            eta + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))


def _averaged_profile(V, x0, eta0, profile, T, dt, sgn):
    """(1/T) int_0^T profile(renormalized lift at time sgn*t) dt."""
    x, eta = x0.copy(), eta0.copy()
    n = int(round(T / dt))
    acc = np.zeros(x.shape[:-1])
    prev = profile(x, eta)
    for _ in range(n):
        x, eta = _lift_step(V, x, eta, dt, sgn)
        nrm = np.linalg.norm(eta, axis=-1, keepdims=True)
        eta = eta / nrm
        cur = profile(x, eta)
        acc += 0.5 * dt * (prev + cur)
        prev = cur
    return acc / T


def _transport_logavg(V, x0, eta0, T, dt, sgn):
    """(1/T) int_0^T log ||eta(t)|| dt along the (un-normalized) lift.

    sgn=+1 follows the forward flow (log-averages repeller-side
    stretching), sgn=-1 the backward flow (attractor side).  The running
    norm is accumulated through per-step renormalization, so no overflow.
    """
    x, eta = x0.copy(), eta0.copy()
    n = int(round(T / dt))
    logn = np.zeros(x.shape[:-1])
    acc = np.zeros_like(logn)
    prev = np.zeros_like(logn)
    for _ in range(n):
        x, eta = _lift_step(V, x, eta, dt, sgn)
        nrm = np.linalg.norm(eta, axis=-1)
        logn = logn + np.log(nrm)
        eta = eta / nrm[..., None]
        acc += 0.5 * dt * (prev + logn)
        prev = logn
    return acc / T


# ----------------------------------------------------------------------
# assembled escape data
# ----------------------------------------------------------------------

@dataclass
class EscapeParams:
    n_grid: int = 64
    sigma: float = 0.1
    t_average: float = 2.0
    t_transport: float = 2.0
    dt: float = 0.05
    plateau: float = 0.18
    branch_radius: float = 0.9
    blend_width: float = 0.5
    energy_amplitude: float = 2.0 / 17.0
    profile_margin: float = 1.0 / 16.0


@dataclass
class EscapeData:
    """Grids over (x1, x2, theta) assembling the escape symbol."""

    params: EscapeParams
    field_spec: dict
    m: np.ndarray        # order function
    logf1: np.ndarray    # log of the blended weight
    m1: np.ndarray       # forward profile average
    m2: np.ndarray       # backward profile average
    d_att: np.ndarray    # phase distance to the lifted attractor
    d_rep: np.ndarray    # phase distance to the lifted repeller

    @property
    def n(self):
        return self.params.n_grid

    def field(self):
        return FourierVectorField.from_dict(self.field_spec)

    def symbol_on_sphere(self):
        """a restricted to |xi| = 1: m * exp(sigma * log f1)."""
        return self.m * np.exp(self.params.sigma * self.logf1)

    def blend_shells(self):
        """Masks of the two blend transition shells (used as the collar)."""
        p = self.params
        wA = smoothstep((p.branch_radius - self.d_att) / p.blend_width)
        wR = smoothstep((p.branch_radius - self.d_rep) / p.blend_width)
        shellA = (wA > 0.05) & (wA < 0.95)
        shellR = (wR > 0.05) & (wR < 0.95)
        return shellA, shellR

    def repeller_core(self):
        e = self.params.profile_margin
        return (self.m1 < e) & (self.m2 < e)

    def attractor_core(self):
        e = self.params.profile_margin
        return (self.m1 > 1 - e) & (self.m2 > 1 - e)

    def interp(self, grid, x1, x2, th, order=3):
        co = np.vstack([np.ravel(x1) % TWO_PI, np.ravel(x2) % TWO_PI,
                        np.ravel(th) % TWO_PI]) * (self.n / TWO_PI)
        return map_coordinates(grid, co, order=order, mode="grid-wrap")

    def save(self, path):
        np.savez_compressed(
            path, m=self.m, logf1=self.logf1, m1=self.m1, m2=self.m2,
            d_att=self.d_att, d_rep=self.d_rep,
            params=json.dumps(asdict(self.params)),
            field=json.dumps(self.field_spec),
        )

    @classmethod
    def load(cls, path):
        z = np.load(path, allow_pickle=False)
        params = EscapeParams(**json.loads(str(z["params"])))
        spec = json.loads(str(z["field"]))
        return cls(params, spec, z["m"], z["logf1"], z["m1"], z["m2"],
                   z["d_att"], z["d_rep"])


def build_escape(V, report, params=None, sets=None):
    """Assemble the order function and weight grids for a certified field.

    Raises if the structural verdict was negative or if the field has
    closed orbits (only point critical elements are handled here).
    """
    params = params or EscapeParams()
    if not report.certified:
        raise ValueError("escape construction requires a certified field:\n"
                         + report.summary())
    if report.cycles.orbits:
        raise ValueError("closed orbits present; only point critical "
                         "elements are supported")
    n = params.n_grid
    sets = sets or build_phase_sets(V, report)
    tree_a, tree_r = sets.trees()

    ax = np.linspace(0, TWO_PI, n, endpoint=False)
    X1, X2, TH = np.meshgrid(ax, ax, ax, indexing="ij")
    emb = _embed_phase(X1.ravel(), X2.ravel(), TH.ravel())
    d_att = tree_a.query(emb)[0].reshape(X1.shape)
    d_rep = tree_r.query(emb)[0].reshape(X1.shape)

    # 0/1 profile: 0 near the repeller, 1 near the attractor, plateaued
    ratio = d_rep / (d_rep + d_att + 1e-300)
    u0_grid = smoothstep((ratio - params.plateau) / (1.0 - 2.0 * params.plateau))

    x0 = np.stack([X1.ravel(), X2.ravel()], axis=-1)
    eta0 = np.stack([np.cos(TH.ravel()), np.sin(TH.ravel())], axis=-1)

    def profile(x, eta):
        th = np.arctan2(eta[..., 1], eta[..., 0])
        co = np.vstack([x[..., 0] % TWO_PI, x[..., 1] % TWO_PI,
                        th % TWO_PI]) * (n / TWO_PI)
        return map_coordinates(u0_grid, co, order=1, mode="grid-wrap")

    m1 = _averaged_profile(V, x0, eta0, profile, params.t_average,
                           params.dt, +1.0).reshape(X1.shape)
    m2 = _averaged_profile(V, x0, eta0, profile, params.t_average,
                           params.dt, -1.0).reshape(X1.shape)

    E = build_energy(V, report, n, params.energy_amplitude)
    m = E[:, :, None] - 1.0 + 1.5 * m1 + 0.5 * m2

    i_rep = _transport_logavg(V, x0, eta0, params.t_transport, params.dt,
                              +1.0).reshape(X1.shape)
    i_att = _transport_logavg(V, x0, eta0, params.t_transport, params.dt,
                              -1.0).reshape(X1.shape)

    wA_raw = smoothstep((params.branch_radius - d_att) / params.blend_width)
    wR_raw = smoothstep((params.branch_radius - d_rep) / params.blend_width)
    wB = np.maximum(0.0, 1.0 - wA_raw - wR_raw)
    tot = wA_raw + wR_raw + wB
    wA, wR = wA_raw / tot, wR_raw / tot

    # per-branch recentering over the blend shells: additive constants do
    # not change the derivative along the flow, but keep f1 near 1 where
    # the branches meet
    shellA = (wA > 0.05) & (wA < 0.95)
    shellR = (wR > 0.05) & (wR < 0.95)
    cA = float(i_att[shellA].mean()) if shellA.any() else 0.0
    cR = float(i_rep[shellR].mean()) if shellR.any() else 0.0
    logf1 = wA * (i_att - cA) + wR * (i_rep - cR)

    return EscapeData(params, V.to_dict(), m, logf1, m1, m2, d_att, d_rep)


# ----------------------------------------------------------------------
# certification
# ----------------------------------------------------------------------

@dataclass
class EscapeCertificate:
    sigma: float
    fraction_positive: float   # of X(a) > 0 off the collar
    delta_hat: float           # 1% quantile of X(a) off the collar
    min_off_collar: float
    collar_fraction: float
    c0: float                  # sup of f1^{+-sigma}
    cone_fraction: float       # of the negative cone {a <= -1/(2 c0)}
    cone_rate_q01: float       # 1% quantile of X(a)/|a| on the cone
    repeller_margin: float     # -1/2 - max m on the refined repeller
    attractor_margin: float    # min m on the refined attractor - 1/2
    region_ok: bool

    def passed(self, min_fraction=0.99):
        return (self.fraction_positive >= min_fraction
                and self.delta_hat > 0.0
                and self.cone_fraction > 0.0
                and self.region_ok)

    def summary(self):
        return (
            f"sigma={self.sigma:g}: X(a)>0 on {self.fraction_positive:.2%} "
            f"off collar (delta_hat={self.delta_hat:.4f}, "
            f"min={self.min_off_collar:.4f}, collar "
            f"{self.collar_fraction:.1%})\n"
            f"cone: fraction {self.cone_fraction:.3%}, rate q01 "
            f"{self.cone_rate_q01:.4f}, c0={self.c0:.3f}\n"
            f"regions: repeller margin {self.repeller_margin:.3f}, "
            f"attractor margin {self.attractor_margin:.3f} "
            f"({'ok' if self.region_ok else 'VIOLATED'})"
        )


def certify_escape(data, V=None, fd_step=1e-3, sigma=None, theta_offset=0.0):
    """Measure the escape derivative X(a) on the grid by central FD.

    Each grid phase point is transported by +-fd_step along the full
    (un-normalized) cotangent flow; a is evaluated there by cubic
    interpolation of the m and log f1 grids times |xi|^sigma.  Returns
    the margins that the growth harness consumes.  The m/log f1 grids do
    not depend on sigma, so one build certifies any order: pass sigma to
    override the value stored in the parameters.  theta_offset rotates
    the covector sampling grid (a grid-independence probe); the collar
    and cone masks are re-evaluated at the rotated points.
    """
    V = V or data.field()
    p = data.params
    sigma = p.sigma if sigma is None else float(sigma)
    n = data.n
    ax = np.linspace(0, TWO_PI, n, endpoint=False)
    X1, X2, TH = np.meshgrid(ax, ax, ax + theta_offset, indexing="ij")
    x0 = np.stack([X1.ravel(), X2.ravel()], axis=-1)
    eta0 = np.stack([np.cos(TH.ravel()), np.sin(TH.ravel())], axis=-1)

    def a_eval(x, eta):
        r = np.linalg.norm(eta, axis=-1)
        th = np.arctan2(eta[..., 1], eta[..., 0])
        mm = data.interp(data.m, x[..., 0], x[..., 1], th)
        lf = data.interp(data.logf1, x[..., 0], x[..., 1], th)
        return mm * np.exp(sigma * (lf + np.log(r)))

    xp, ep = _lift_step(V, x0, eta0, +fd_step)
    xm, em = _lift_step(V, x0, eta0, -fd_step)
    Xa = (a_eval(xp, ep) - a_eval(xm, em)) / (2.0 * fd_step)

    if theta_offset == 0.0:
        m_flat = data.m.ravel()
        lf_flat = data.logf1.ravel()
        d_att, d_rep = data.d_att.ravel(), data.d_rep.ravel()
        m1, m2 = data.m1.ravel(), data.m2.ravel()
    else:
        m_flat = data.interp(data.m, X1, X2, TH)
        lf_flat = data.interp(data.logf1, X1, X2, TH)
        d_att = data.interp(data.d_att, X1, X2, TH, order=1)
        d_rep = data.interp(data.d_rep, X1, X2, TH, order=1)
        m1 = data.interp(data.m1, X1, X2, TH, order=1)
        m2 = data.interp(data.m2, X1, X2, TH, order=1)

    wA = smoothstep((p.branch_radius - d_att) / p.blend_width)
    wR = smoothstep((p.branch_radius - d_rep) / p.blend_width)
    collar = (((wA > 0.05) & (wA < 0.95)) | ((wR > 0.05) & (wR < 0.95)))
    interior = ~collar
    frac = float(np.mean(Xa[interior] > 0.0))
    delta_hat = float(np.quantile(Xa[interior], 0.01))
    worst = float(np.min(Xa[interior]))

    a0 = m_flat * np.exp(sigma * lf_flat)
    c0 = float(max(np.exp(sigma * data.logf1).max(),
                   np.exp(-sigma * data.logf1.min())))
    cone = a0 <= -0.5 / c0
    if cone.any():
        rate = float(np.quantile(Xa[cone] / np.abs(a0[cone]), 0.01))
    else:
        rate = float("nan")

    e = p.profile_margin
    rep_core = (m1 < e) & (m2 < e)
    att_core = (m1 > 1 - e) & (m2 > 1 - e)
    rep_margin = float(-0.5 - m_flat[rep_core].max()) if rep_core.any() else np.inf
    att_margin = float(m_flat[att_core].min() - 0.5) if att_core.any() else np.inf
    region_ok = bool(rep_margin > 0 and att_margin > 0)

    return EscapeCertificate(
        sigma=sigma, fraction_positive=frac, delta_hat=delta_hat,
        min_off_collar=worst, collar_fraction=float(np.mean(collar)),
        c0=c0, cone_fraction=float(np.mean(cone)), cone_rate_q01=rate,
        repeller_margin=rep_margin, attractor_margin=att_margin,
        region_ok=region_ok,
    )


# ----------------------------------------------------------------------
# quantizable symbol
# ----------------------------------------------------------------------

class EscapeSymbol(Symbol):
    """Weyl symbol rho(|xi|) m(x, theta(xi)) f1(x, theta(xi))^sigma.

    rho(r) = step(r - 1) r^sigma vanishes for |xi| <= 1 and is full
    strength past |xi| = 2, removing the zero-section singularity of the
    polar angle.  The fiber-angle Fourier expansion (theta-smooth data,
    so few harmonics carry weight) exposes the separable form used by the
    matrix-free Weyl path; `negate` builds the symbol of -a for energy
    tracking.
    """

    def __init__(self, data, n_harmonics=12, x_band=20, negate=False,
                 sigma=None, offset_tol=1e-15):
        super().__init__(2, x_band, x_grid_size=data.n, offset_tol=offset_tol)
        self.data = data
        self.sigma = data.params.sigma if sigma is None else float(sigma)
        self.sign = -1.0 if negate else 1.0
        self.n_harmonics = int(n_harmonics)
        sym = self.sign * data.m * np.exp(self.sigma * data.logf1)
        # theta-FFT on the last axis: a(x, theta) = sum_q g_q(x) e^{iq theta}
        G = np.fft.fft(sym, axis=2) / data.n
        qs = np.fft.fftfreq(data.n, 1.0 / data.n).astype(int)
        keep = np.abs(qs) <= self.n_harmonics
        self._harmonics = [(int(q), G[:, :, i].copy())
                           for i, q in enumerate(qs) if keep[i]]

    def _rho(self, r):
        return smoothstep(r - 1.0) * np.maximum(r, 1e-300) ** self.sigma

    def eval(self, x, xi):
        r = np.linalg.norm(xi, axis=-1)
        th = np.arctan2(xi[..., 1], xi[..., 0])
        mm = self.data.interp(self.data.m, x[..., 0], x[..., 1], th)
        lf = self.data.interp(self.data.logf1, x[..., 0], x[..., 1], th)
        val = self.sign * mm * np.exp(self.sigma * lf) * self._rho(r)
        return val.reshape(r.shape)

    def xi_terms(self):
        terms = []
        for q, g in self._harmonics:
            def psi(xi, q=q):
                r = np.linalg.norm(xi, axis=-1)
                th = np.arctan2(xi[..., 1], xi[..., 0])
                return np.exp(1j * q * th) * self._rho(r)

            terms.append((g, psi))
        return terms
