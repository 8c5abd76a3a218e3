"""Fourier-side states, Sobolev norms, and Weyl operators on the torus.

States are finite Fourier series u = sum_{|k_j| <= N_j} u_hat(k) e^{ik.x}
with the normalization u_hat(k) = (2pi)^{-n} int u e^{-ik.x} dx, so that
||e^{ik.x}||_{L^2} = 1 and ||u||_{L^2}^2 = sum |u_hat(k)|^2 exactly.

The Weyl rule used throughout is the symmetric torus quantization

    (Op(a) u)^(k) = sum_{k'} a_hat_{k-k'}((k + k')/2) u_hat(k'),

where a_hat_m(xi) is the m-th x-Fourier coefficient of a(., xi).  Real
symbols give Hermitian operators.  Two evaluation strategies are provided:
a dense matrix for small bands, and a matrix-free path for symbols that
expose a separable expansion a(x, xi) = sum_q g_q(x) psi_q(xi) (grid-backed
escape symbols do, via a fiber-angle Fourier expansion).
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ive

TWO_PI = 2.0 * np.pi


def _as_band(dim, band):
    if np.isscalar(band):
        return (int(band),) * dim
    band = tuple(int(b) for b in band)
    if len(band) != dim:
        raise ValueError("band must be scalar or one entry per axis")
    return band


class SpectralState:
    """Band-limited complex function on T^n stored by Fourier coefficients.

    coeffs has shape (2 N_1 + 1, ..., 2 N_n + 1); index i along axis j holds
    the mode k_j = i - N_j.
    """

    def __init__(self, dim, band, coeffs=None):
        self.dim = int(dim)
        self.band = _as_band(dim, band)
        shape = tuple(2 * b + 1 for b in self.band)
        if coeffs is None:
            self.coeffs = np.zeros(shape, dtype=complex)
        else:
            coeffs = np.asarray(coeffs, dtype=complex)
            if coeffs.shape != shape:
                raise ValueError(f"coeffs shape {coeffs.shape} != {shape}")
            self.coeffs = coeffs

    # -- constructors ---------------------------------------------------
    @classmethod
    def from_modes(cls, dim, band, modes):
        """Build from a {k-tuple: coefficient} mapping."""
        st = cls(dim, band)
        for k, c in modes.items():
            k = tuple(int(v) for v in np.atleast_1d(k))
            idx = tuple(v + b for v, b in zip(k, st.band))
            if any(i < 0 or i >= 2 * b + 1 for i, b in zip(idx, st.band)):
                raise ValueError(f"mode {k} outside band {st.band}")
            st.coeffs[idx] = c
        return st

    @classmethod
    def from_grid(cls, values, band):
        """Project grid samples onto the band (FFT, then truncate)."""
        values = np.asarray(values, dtype=complex)
        dim = values.ndim
        st = cls(dim, band)
        spec = np.fft.fftn(values) / values.size
        for idx in np.ndindex(*st.coeffs.shape):
            k = tuple(i - b for i, b in zip(idx, st.band))
            st.coeffs[idx] = spec[tuple(v % s for v, s in zip(k, values.shape))]
        return st

    def copy(self):
        return SpectralState(self.dim, self.band, self.coeffs.copy())

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        return SpectralState(self.dim, self.band, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return SpectralState(self.dim, self.band, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralState(self.dim, self.band, self.coeffs * scalar)

    __rmul__ = __mul__

    # -- geometry -------------------------------------------------------
    def k_arrays(self):
        """Meshgrid of integer wavenumbers, one (2N+1,... ) array per axis."""
        axes = [np.arange(-b, b + 1) for b in self.band]
        return np.meshgrid(*axes, indexing="ij")

    def ksq(self):
        ks = self.k_arrays()
        return sum(k.astype(float) ** 2 for k in ks)

    def inner(self, other):
        """<u, v> = sum_k u_hat(k) conj(v_hat(k))."""
        return complex(np.sum(self.coeffs * np.conj(other.coeffs)))

    def l2_norm(self):
        return float(np.linalg.norm(self.coeffs))

    # -- grid transforms --------------------------------------------------
    def to_grid(self, shape):
        """Sample u on a tensor grid (exact if the grid over-resolves the band)."""
        if isinstance(shape, int):
            shape = (shape,) * self.dim
        if any(s < 2 * b + 1 for s, b in zip(shape, self.band)):
            raise ValueError("grid too coarse for band")
        spec = np.zeros(shape, dtype=complex)
        sl_src, sl_dst = [], []
        for b, s in zip(self.band, shape):
            sl_src.append(slice(0, 2 * b + 1))
            sl_dst.append(None)
        # place coefficient k at fft index k mod s, axis by axis via roll
        embedded = np.zeros(shape, dtype=complex)
        idx = np.ix_(*[np.arange(-b, b + 1) % s for b, s in zip(self.band, shape)])
        embedded[idx] = self.coeffs
        return np.fft.ifftn(embedded) * int(np.prod(shape))

    def evaluate(self, x, chunk=65536):
        """Pointwise trig-sum evaluation at arbitrary points x (..., dim)."""
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.dim)
        ks = np.stack([k.ravel() for k in self.k_arrays()], axis=-1)  # (B, dim)
        cs = self.coeffs.ravel()
        keep = np.abs(cs) > 0
        ks, cs = ks[keep], cs[keep]
        out = np.zeros(flat.shape[0], dtype=complex)
        for start in range(0, flat.shape[0], chunk):
            blk = flat[start : start + chunk]
            phase = blk @ ks.T
            out[start : start + chunk] = np.exp(1j * phase) @ cs
        return out.reshape(x.shape[:-1])


def sobolev_norm(u, sigma):
    """|| u ||_sigma = ( sum_k (1 + |k|^2)^sigma |u_hat(k)|^2 )^{1/2}."""
    w = (1.0 + u.ksq()) ** float(sigma)
    return float(np.sqrt(np.sum(w * np.abs(u.coeffs) ** 2)))


def wave_packet(dim, band, center, freq, width=0.8):
    """Frequency-shifted periodic bump: chi0(x - c) e^{i k0.x}.

    The envelope is the product of von Mises bumps exp(kappa (cos y_j - 1))
    with kappa = 1/width^2, whose Fourier coefficients are Bessel ratios
    ive(m, kappa); coefficients are exact up to the band clip.  The L^2 norm
    is independent of the carrier frequency k0 (exactly, modulo the clip).

    Returns the packet as a SpectralState; the packet scale is h = 1/|k0|.
    """
    band = _as_band(dim, band)
    center = np.broadcast_to(np.asarray(center, float), (dim,))
    freq = np.asarray(freq, int)
    kappa = 1.0 / float(width) ** 2
    st = SpectralState(dim, band)
    axes = []
    for j in range(dim):
        m = np.arange(-band[j], band[j] + 1) - freq[j]
        prof = ive(m, kappa) * np.exp(-1j * m * center[j])
        axes.append(prof)
    coeffs = axes[0]
    for j in range(1, dim):
        coeffs = np.multiply.outer(coeffs, axes[j])
    st.coeffs = coeffs.astype(complex)
    return st


# ----------------------------------------------------------------------
# symbols
# ----------------------------------------------------------------------

class Symbol:
    """Phase-space function a(x, xi) with a declared spatial band.

    Subclasses implement eval(x, xi) on batched arrays.  Symbols that admit
    a separable expansion a = sum_q g_q(x) psi_q(xi) can return it from
    xi_terms() as a list of (g_grid, psi_callable) pairs to unlock the
    matrix-free Weyl path; g_grid must sample g_q on the uniform
    (x_grid_size,)*dim tensor grid.
    """

    def __init__(self, dim, x_band, x_grid_size=None, offset_tol=1e-15):
        self.dim = int(dim)
        self.x_band = int(x_band)
        self.x_grid_size = int(x_grid_size or max(8, 2 * self.x_band + 2))
        # relative cutoff below which spatial Fourier offsets of g_q are
        # dropped in the separable path; +-m pairs share a magnitude, so
        # real symbols stay Hermitian under the truncation
        self.offset_tol = float(offset_tol)
        self._matrices = {}

    def eval(self, x, xi):
        raise NotImplementedError

    def xi_terms(self):
        return None

    def x_grid(self):
        axes = [np.linspace(0, TWO_PI, self.x_grid_size, endpoint=False)] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)


class MultiplierSymbol(Symbol):
    """a(x, xi) = psi(xi): Fourier multiplier (x_band = 0)."""

    def __init__(self, dim, psi):
        super().__init__(dim, 0)
        self.psi = psi

    def eval(self, x, xi):
        return np.asarray(self.psi(xi), dtype=complex)

    def xi_terms(self):
        g = np.ones((self.x_grid_size,) * self.dim, dtype=complex)
        return [(g, self.psi)]


class ProductSymbol(Symbol):
    """a(x, xi) = g(x) psi(xi) with band-limited g."""

    def __init__(self, dim, g, psi, x_band, x_grid_size=None):
        super().__init__(dim, x_band, x_grid_size)
        self.g = g
        self.psi = psi

    def eval(self, x, xi):
        return np.asarray(self.g(x), dtype=complex) * np.asarray(self.psi(xi), dtype=complex)

    def xi_terms(self):
        gv = np.asarray(self.g(self.x_grid()), dtype=complex)
        return [(gv, self.psi)]


class CallableSymbol(Symbol):
    """Generic a(x, xi) given as a callable; dense Weyl path only."""

    def __init__(self, dim, fn, x_band, x_grid_size=None):
        super().__init__(dim, x_band, x_grid_size)
        self.fn = fn

    def eval(self, x, xi):
        return np.asarray(self.fn(x, xi), dtype=complex)


# ----------------------------------------------------------------------
# Weyl application
# ----------------------------------------------------------------------

_DENSE_LIMIT = 30_000_000  # matrix entries; ~0.5 GB of complex128


def _mode_list(band):
    axes = [np.arange(-b, b + 1) for b in band]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)  # (B, n)


def weyl_matrix(sym, band):
    """Dense matrix of Op(a) over the flattened mode basis of `band`.

    Built column-block-wise: for every midpoint s on the half-integer
    lattice, the x-FFT of a(., s) supplies a_hat_m(s) for all offsets m at
    once.  Cached on the symbol per band.
    """
    band = _as_band(sym.dim, band)
    if band in sym._matrices:
        return sym._matrices[band]
    ks = _mode_list(band)  # (B, n)
    B = ks.shape[0]
    if B * B > _DENSE_LIMIT:
        raise MemoryError("band too large for dense Weyl; use a separable symbol")
    n = sym.dim
    Mx = sym.x_grid_size
    xg = sym.x_grid().reshape(-1, n)  # (Mx^n, n)

    # unique midpoints (k + k')/2 live on the half-integer lattice spanned by 2s
    two_s = ks[:, None, :] + ks[None, :, :]  # (B, B, n) of 2s values
    two_s_flat = two_s.reshape(-1, n)
    # encode to index the table of unique midpoints
    spans = [np.arange(-2 * b, 2 * b + 1) for b in band]
    table_shape = tuple(len(sp) for sp in spans)
    enc = np.ravel_multi_index(
        tuple((two_s_flat[:, j] + 2 * band[j]) for j in range(n)), table_shape
    )

    # x-FFT of the symbol at every needed midpoint
    fft_tables = np.empty((int(np.prod(table_shape)),) + (Mx,) * n, dtype=complex)
    mesh = np.meshgrid(*spans, indexing="ij")
    all_two_s = np.stack([m.ravel() for m in mesh], axis=-1)
    for row, ts in enumerate(all_two_s):
        xi = np.broadcast_to(ts / 2.0, xg.shape)
        vals = sym.eval(xg, xi).reshape((Mx,) * n)
        fft_tables[row] = np.fft.fftn(vals) / Mx**n

    m_off = (ks[:, None, :] - ks[None, :, :]).reshape(-1, n)  # k - k'
    in_band = np.all(np.abs(m_off) <= sym.x_band, axis=1)
    gather = tuple(m_off[:, j] % Mx for j in range(n))
    M = np.zeros(B * B, dtype=complex)
    M[in_band] = fft_tables[(enc[in_band],) + tuple(g[in_band] for g in gather)]
    M = M.reshape(B, B)
    sym._matrices[band] = M
    return M


def _psi_parity_tables(psi, band, x_band, dim):
    """psi evaluated on the lattices {v - p/2} per parity p in {0,1}^dim."""
    half = x_band // 2 + 1
    axes = [np.arange(-b - half, b + half + 1) for b in band]
    tables = {}
    for p in np.ndindex(*(2,) * dim):
        grids = np.meshgrid(
            *[ax - pv / 2.0 for ax, pv in zip(axes, p)], indexing="ij"
        )
        xi = np.stack(grids, axis=-1)
        tables[p] = np.asarray(psi(xi), dtype=complex)
    lo = [b + half for b in band]  # index of lattice point v=0
    return tables, lo


def _prep_separable(sym, band):
    """Per-band tables for the separable path (cached on the symbol)."""
    cached = getattr(sym, "_sep_cache", None)
    if cached is not None and cached[0] == band:
        return cached[1]
    n = sym.dim
    Mx = sym.x_grid_size
    terms = []
    for g_grid, psi in sym.xi_terms():
        ghat = np.fft.fftn(np.asarray(g_grid, dtype=complex)) / g_grid.size
        tables, lo = _psi_parity_tables(psi, band, sym.x_band, n)
        # significant offsets within the declared x-band
        spans = [np.arange(-sym.x_band, sym.x_band + 1) for _ in range(n)]
        mesh = np.meshgrid(*spans, indexing="ij")
        offs = np.stack([m.ravel() for m in mesh], axis=-1)
        coefs = ghat[tuple(offs[:, j] % Mx for j in range(n))]
        keep = np.abs(coefs) > sym.offset_tol * max(np.abs(coefs).max(), 1e-300)
        terms.append((offs[keep], coefs[keep], tables, lo))
    sym._sep_cache = (band, terms)
    return terms


def _separable_apply(sym, u):
    """out(k) = sum_q sum_m ghat_{q,m} psi_q(k - m/2) u_hat(k - m)."""
    band = u.band
    n = u.dim
    out = np.zeros_like(u.coeffs)
    shape = u.coeffs.shape
    for offs, coefs, tables, lo in _prep_separable(sym, band):
        for m, c in zip(offs, coefs):
            par = tuple(int(v) & 1 for v in m)
            j_int = [(int(v) - (int(v) & 1)) // 2 for v in m]
            tab = tables[par]
            sl_out, sl_in, sl_psi = [], [], []
            ok = True
            for ax in range(n):
                N2 = shape[ax] - 1  # = 2*band[ax]
                a0, a1 = max(0, m[ax]), min(N2, N2 + m[ax])
                if a0 > a1:
                    ok = False
                    break
                sl_out.append(slice(a0, a1 + 1))
                sl_in.append(slice(a0 - m[ax], a1 - m[ax] + 1))
                # psi index of k - m/2: v = (k - j) where m/2 = j + par/2
                base = lo[ax] - band[ax] - j_int[ax]
                sl_psi.append(slice(base + a0, base + a1 + 1))
            if not ok:
                continue
            out[tuple(sl_out)] += (
                c * tab[tuple(sl_psi)] * u.coeffs[tuple(sl_in)]
            )
    return SpectralState(u.dim, band, out)


def weyl_apply(sym, u):
    """Apply Op(a) to a state, truncating the output to the state's band."""
    if sym.xi_terms() is not None:
        return _separable_apply(sym, u)
    M = weyl_matrix(sym, u.band)
    out = M @ u.coeffs.ravel()
    return SpectralState(u.dim, u.band, out.reshape(u.coeffs.shape))


def quadratic_form(sym, u):
    """<Op(a) u, u>; returns a real number for (effectively) real symbols."""
    val = weyl_apply(sym, u).inner(u)
    scale = max(abs(val), 1e-300)
    if abs(val.imag) > 1e-8 * scale:
        raise ValueError(f"quadratic form has imaginary residue {val.imag:.3e}")
    return val.real


def energy_functional(sym_smoothed, u):
    """A = <Op(-a~) u, u> for the smoothed escape symbol a~."""
    return -quadratic_form(sym_smoothed, u)


def growth_criterion(sym_smoothed, u0, beta):
    """F(u0) = <Op(a~) u0, u0> + beta ||u0||^2; growth certified when F < 0.

    Returns (F, certified).
    """
    F = quadratic_form(sym_smoothed, u0) + beta * u0.l2_norm() ** 2
    return F, bool(F < 0.0)
