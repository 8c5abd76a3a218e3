"""Band-limited vector fields on the torus and their flows.

Everything lives on T^n = (R/2pi Z)^n with the flat metric.  A field is a
finite Fourier sum

    V(t, x) = sum_{k,l} v_{k,l} exp(i(k.x + l t)),   v_{-k,-l} = conj(v_{k,l}),

with integer spatial modes |k|_inf <= K and integer time modes |l| <= L.
The reality constraint makes V real-valued; evaluation checks and strips
the residual imaginary part.

Flows are computed with fixed-step RK4 over batched coordinate arrays, so a
single call can advance anywhere from one point to a few hundred thousand
grid points.  Covectors are transported by the adjoint variational equation

    d(eta)/dt = -dV(t, x(t))^T eta,

which realizes the lifted (cotangent) flow without matrix inversions.
"""

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi

# Tolerance for the residual imaginary part of a reality-constrained sum.
IMAG_TOL = 1e-12


def wrap(x):
    """Reduce coordinates to the fundamental domain [0, 2pi)."""
    return np.mod(x, TWO_PI)


def torus_distance(x, y):
    """Chordal distance on T^n: sqrt(sum_j |e^{i x_j} - e^{i y_j}|^2)."""
    d = np.asarray(x) - np.asarray(y)
    return np.sqrt(np.sum(2.0 - 2.0 * np.cos(d), axis=-1))


@dataclass
class StepControls:
    """Fixed-step integrator controls.

    dt is the nominal step; a run over duration t uses ceil(|t|/dt) equal
    steps so the endpoint is hit exactly.
    """

    dt: float = 0.01

    def n_steps(self, t):
        if t == 0.0:
            return 0
        return max(1, int(np.ceil(abs(t) / self.dt - 1e-12)))


@dataclass
class FlowJet:
    """Endpoint of a flow together with its Jacobian d(phi^t)(x)."""

    point: np.ndarray
    time: float
    jacobian: np.ndarray


@dataclass
class CotangentState:
    """Point (x, xi) of the cotangent bundle T*T^n."""

    point: np.ndarray
    covector: np.ndarray

    def unit(self):
        """Rescale the covector onto the cosphere bundle."""
        nrm = np.linalg.norm(self.covector, axis=-1, keepdims=True)
        return CotangentState(self.point.copy(), self.covector / nrm)


def _canonical(k, l):
    """Pick one representative of the conjugate pair {(k,l), (-k,-l)}."""
    for c in (*k, l):
        if c > 0:
            return True
        if c < 0:
            return False
    return True  # the zero mode is self-conjugate


class FourierVectorField:
    """Real vector field on T^n given by a finite Fourier mode table.

    Parameters
    ----------
    dim : int
        Spatial dimension n (1 or 2 in the shipped scenarios).
    modes : dict, optional
        Mapping (k_1, ..., k_n, l) -> coefficient vector (length dim,
        complex).  Conjugate modes may be given explicitly or left implied;
        consistency is checked either way.
    """

    def __init__(self, dim, modes=None):
        self.dim = int(dim)
        self._modes = {}
        if modes:
            for key, c in modes.items():
                k, l = tuple(int(v) for v in key[:-1]), int(key[-1])
                self.add_mode(k, l, c)
        self._tables = None

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------
    def add_mode(self, k, l, coeff):
        """Accumulate coefficient `coeff` on e^{i(k.x + l t)} (and its conjugate)."""
        k = tuple(int(v) for v in np.atleast_1d(k))
        if len(k) != self.dim:
            raise ValueError("mode index has wrong dimension")
        coeff = np.asarray(coeff, dtype=complex).reshape(self.dim)
        if not _canonical(k, l):
            k = tuple(-v for v in k)
            l = -l
            coeff = coeff.conj()
        key = (*k, l)
        cur = self._modes.get(key)
        self._modes[key] = coeff if cur is None else cur + coeff
        if all(v == 0 for v in key):
            if np.max(np.abs(self._modes[key].imag)) > IMAG_TOL:
                raise ValueError("zero mode must be real")
            self._modes[key] = self._modes[key].real + 0j
        self._tables = None
        return self

    @classmethod
    def constant(cls, nu):
        """The constant field V = nu."""
        nu = np.atleast_1d(np.asarray(nu, dtype=float))
        f = cls(nu.size)
        f.add_mode((0,) * nu.size, 0, nu.astype(complex))
        return f

    @classmethod
    def gradient(cls, dim, potential_modes):
        """Field grad(f) for f = sum_k f_k e^{ik.x} (autonomous).

        potential_modes maps k-tuples to complex scalars; conjugates implied.
        """
        f = cls(dim)
        for k, c in potential_modes.items():
            k = tuple(int(v) for v in k)
            kv = np.asarray(k, dtype=float)
            f.add_mode(k, 0, 1j * kv * complex(c))
        return f

    @classmethod
    def from_callable(cls, fn, dim, band, grid=None):
        """Band-limit an autonomous callable x -> V(x) by FFT truncation.

        The callable is sampled on a `grid`^dim tensor grid (default 4*band
        rounded up to a power of two) and modes with |k|_inf <= band are kept.
        """
        if grid is None:
            grid = max(32, int(2 ** np.ceil(np.log2(4 * band))))
        axes = [np.linspace(0, TWO_PI, grid, endpoint=False)] * dim
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        vals = np.asarray(fn(pts), dtype=float)  # (grid**dim, dim)
        f = cls(dim)
        freqs = np.fft.fftfreq(grid, d=1.0 / grid).astype(int)
        for comp in range(dim):
            comp_grid = vals[:, comp].reshape((grid,) * dim)
            coeffs = np.fft.fftn(comp_grid) / grid**dim
            for idx in np.ndindex(*coeffs.shape):
                k = tuple(int(freqs[i]) for i in idx)
                if max(abs(v) for v in k) > band:
                    continue
                # real input: the non-canonical partner is the exact conjugate
                if not _canonical(k, 0):
                    continue
                c = coeffs[idx]
                if abs(c) < 1e-14:
                    continue
                vec = np.zeros(dim, dtype=complex)
                vec[comp] = c
                key = (*k, 0)
                f._modes.setdefault(key, np.zeros(dim, dtype=complex))
                f._modes[key] = f._modes[key] + vec
        zero_key = (0,) * (dim + 1)
        if zero_key in f._modes:
            f._modes[zero_key] = f._modes[zero_key].real + 0j
        f._tables = None
        return f

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------
    def to_dict(self):
        """JSON-ready mode table {"dim": n, "modes": [[k..., l, re..., im...]]}."""
        rows = []
        for key in sorted(self._modes):
            c = self._modes[key]
            rows.append([*map(int, key), *c.real.tolist(), *c.imag.tolist()])
        return {"dim": self.dim, "modes": rows}

    @classmethod
    def from_dict(cls, d):
        f = cls(int(d["dim"]))
        n = f.dim
        for row in d["modes"]:
            key = tuple(int(v) for v in row[: n + 1])
            re = np.asarray(row[n + 1 : 2 * n + 1], dtype=float)
            im = np.asarray(row[2 * n + 1 : 3 * n + 1], dtype=float)
            f.add_mode(key[:-1], key[-1], re + 1j * im)
        return f

    # ------------------------------------------------------------------
    # derived structure
    # ------------------------------------------------------------------
    def modes(self):
        """Canonical mode triples (k, l, coeff); conjugate modes are implied."""
        return [(key[:-1], key[-1], self._modes[key].copy())
                for key in sorted(self._modes)]

    @property
    def space_band(self):
        if not self._modes:
            return 0
        return max(max(abs(v) for v in key[:-1]) for key in self._modes)

    @property
    def time_band(self):
        if not self._modes:
            return 0
        return max(abs(key[-1]) for key in self._modes)

    def is_autonomous(self):
        return all(key[-1] == 0 for key in self._modes)

    def sup_norm_bound(self, include_mean=True):
        """Upper bound for sup_x |V(t,x)|_2 (triangle inequality over modes).

        include_mean=False drops the constant mode, bounding the oscillatory
        part only (what a co-moving frame actually advects with).
        """
        bound = np.zeros(self.dim)
        for key, c in self._modes.items():
            if all(v == 0 for v in key):
                if include_mean:
                    bound += np.abs(c)
            else:
                bound += 2.0 * np.abs(c)
        return float(np.linalg.norm(bound))

    def _build_tables(self):
        keys = sorted(self._modes)
        K = np.array([key[:-1] for key in keys], dtype=float).reshape(len(keys), self.dim)
        L = np.array([key[-1] for key in keys], dtype=float)
        C = np.array([self._modes[key] for key in keys], dtype=complex).reshape(
            len(keys), self.dim
        )
        zero = np.all(K == 0, axis=1) & (L == 0)
        self._tables = (K, L, C, zero)

    def _trig(self, t, x):
        """cos/sin tables of the mode phases at batched points x (..., dim)."""
        if self._tables is None:
            self._build_tables()
        K, L, C, zero = self._tables
        phase = np.tensordot(x, K, axes=([-1], [1])) + L * t  # (..., M)
        return np.cos(phase), np.sin(phase)

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------
    def value(self, t, x):
        """V(t, x) for batched x of shape (..., dim); returns (..., dim)."""
        x = np.asarray(x, dtype=float)
        if not self._modes:
            return np.zeros_like(x)
        cos, sin = self._trig(t, x)
        K, L, C, zero = self._tables
        # real sum over canonical representatives: w Re(c e^{i phase})
        w = np.where(zero, 1.0, 2.0)
        return np.tensordot(cos, w * C.real.T, axes=([-1], [1])) - np.tensordot(
            sin, w * C.imag.T, axes=([-1], [1])
        )

    def jacobian(self, t, x):
        """dV/dx at batched points; returns (..., dim, dim) with [a,b] = dV_a/dx_b."""
        return self.jet(t, x)[1]

    def divergence(self, t, x):
        """div V at batched points; returns (...,)."""
        J = self.jet(t, x)[1]
        return np.trace(J, axis1=-2, axis2=-1)

    def jet(self, t, x):
        """Fused (value, jacobian) with one trig evaluation."""
        x = np.asarray(x, dtype=float)
        if not self._modes:
            z = np.zeros_like(x)
            return z, np.zeros(x.shape + (self.dim,))
        if self._tables is None:
            self._build_tables()
        K, L, C, zero = self._tables
        cos, sin = self._trig(t, x)
        w = np.where(zero, 1.0, 2.0)
        val = (
            np.tensordot(cos, (w * C.real.T), axes=([-1], [1]))
            - np.tensordot(sin, (w * C.imag.T), axes=([-1], [1]))
        )
        # d/dx_b of w Re(c_a e^{i phase}) = -w k_b (Re c_a sin + Im c_a cos)
        GR = np.einsum("ma,mb->abm", C.real, K) * w  # (dim, dim, M)
        GI = np.einsum("ma,mb->abm", C.imag, K) * w
        jac = -np.tensordot(sin, GR, axes=([-1], [2])) - np.tensordot(cos, GI, axes=([-1], [2]))
        return val, jac

    def on_grid(self, t, shape, offset=None):
        """Evaluate V(t, .) on the tensor grid of `shape` points per axis.

        offset, if given, shifts the grid: the field is evaluated at
        x_grid + offset (used by co-moving frames).  Exact via zero-padded
        inverse FFT of the mode table.  Returns (..., dim) real array.
        """
        if isinstance(shape, int):
            shape = (shape,) * self.dim
        out = np.zeros(tuple(shape) + (self.dim,))
        if not self._modes:
            return out
        spec = np.zeros(tuple(shape), dtype=complex)
        npts = int(np.prod(shape))
        for comp in range(self.dim):
            spec[...] = 0.0
            for key, c in self._modes.items():
                k, l = key[:-1], key[-1]
                pairs = [(k, c[comp] * np.exp(1j * l * t))]
                if any(v != 0 for v in key):
                    pairs.append(
                        (tuple(-v for v in k), np.conj(c[comp]) * np.exp(-1j * l * t))
                    )
                for kk, cc in pairs:
                    if any(abs(v) > s // 2 for v, s in zip(kk, shape)):
                        raise ValueError("grid too coarse for field band")
                    idx = tuple(v % s for v, s in zip(kk, shape))
                    ph = 1.0
                    if offset is not None:
                        ph = np.exp(1j * float(np.dot(kk, offset)))
                    spec[idx] += cc * ph
            vals = np.fft.ifftn(spec) * npts
            if np.max(np.abs(vals.imag)) > 1e-9 * max(1.0, np.max(np.abs(vals.real))):
                raise ValueError("field evaluation produced a non-real grid")
            out[..., comp] = vals.real
        return out


# ----------------------------------------------------------------------
# flow operations
# ----------------------------------------------------------------------

def evaluate_field(V, t, x):
    """V(t, x); checks the imaginary residue is below IMAG_TOL (by construction)."""
    return V.value(t, np.asarray(x, dtype=float))


def _march(V, x0, t, ctrl, t0, stages):
    """Generic RK4 march; `stages` maps (t, state) -> d(state)/dt as tuples."""
    n = ctrl.n_steps(t)
    if n == 0:
        return x0
    dt = t / n
    state = x0
    for i in range(n):
        ti = t0 + i * dt
        k1 = stages(ti, state)
        s2 = tuple(s + 0.5 * dt * k for s, k in zip(state, k1))
        k2 = stages(ti + 0.5 * dt, s2)
        s3 = tuple(s + 0.5 * dt * k for s, k in zip(state, k2))
        k3 = stages(ti + 0.5 * dt, s3)
        s4 = tuple(s + dt * k for s, k in zip(state, k3))
        k4 = stages(ti + dt, s4)
        state = tuple(
            s + dt / 6.0 * (a + 2 * b + 2 * c + d)
            for s, a, b, c, d in zip(state, k1, k2, k3, k4)
        )
    return state


def flow(V, x, t, ctrl=None, t0=0.0):
    """Flow map phi^t of dx/ds = V(t0+s, x); batched over leading axes of x."""
    ctrl = ctrl or StepControls()
    x = np.asarray(x, dtype=float)

    def stages(s, st):
        return (V.value(s, st[0]),)

    (xt,) = _march(V, (x.copy(),), t, ctrl, t0, stages)
    return wrap(xt)


def variational_flow(V, x, t, ctrl=None, t0=0.0):
    """Flow with its Jacobian: integrates dJ/ds = dV(s, x(s)) J from J = Id."""
    ctrl = ctrl or StepControls()
    x = np.asarray(x, dtype=float)
    J0 = np.broadcast_to(np.eye(V.dim), x.shape + (V.dim,)).copy()

    def stages(s, st):
        xs, Js = st
        val, jac = V.jet(s, xs)
        return val, jac @ Js

    xt, Jt = _march(V, (x.copy(), J0), t, ctrl, t0, stages)
    return FlowJet(point=wrap(xt), time=t, jacobian=Jt)


def lift_flow(V, s, t, ctrl=None, t0=0.0):
    """Cotangent lift: transports (x, xi) by d(xi)/ds = -dV(s, x)^T xi."""
    ctrl = ctrl or StepControls()
    x = np.asarray(s.point, dtype=float)
    xi = np.asarray(s.covector, dtype=float)

    def stages(tt, st):
        xs, es = st
        val, jac = V.jet(tt, xs)
        return val, -np.einsum("...ba,...b->...a", jac, es)

    xt, et = _march(V, (x.copy(), xi.copy()), t, ctrl, t0, stages)
    return CotangentState(point=wrap(xt), covector=et)


def projected_lift(V, s, t, ctrl=None, t0=0.0):
    """Lifted flow on the cosphere bundle: lift_flow followed by normalization.

    Exact projection: covector transport is linear in xi, so normalizing the
    endpoint equals flowing the normalized ray.  Long intervals are split so
    the norm never over/underflows.
    """
    ctrl = ctrl or StepControls()
    state = CotangentState(np.asarray(s.point, float).copy(),
                           np.asarray(s.covector, float).copy()).unit()
    remaining = t
    # renormalize every ~5 time units; |log ||xi||| stays safely bounded
    chunk = 5.0 if t >= 0 else -5.0
    while abs(remaining) > 1e-15:
        step = chunk if abs(remaining) > abs(chunk) else remaining
        state = lift_flow(V, state, step, ctrl, t0=t0 + (t - remaining)).unit()
        remaining -= step
    return state


def hamiltonian(V, s, t=0.0):
    """h(x, xi) = <xi, V(t, x)>, the symbol generating the lifted flow."""
    val = V.value(t, np.asarray(s.point, dtype=float))
    return np.sum(np.asarray(s.covector) * val, axis=-1)
