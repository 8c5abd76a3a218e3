"""Tests for spectral states, Sobolev norms, and torus Weyl operators."""

import numpy as np
import pytest

from torusgrowth.quantize import (
    CallableSymbol,
    MultiplierSymbol,
    ProductSymbol,
    SpectralState,
    energy_functional,
    growth_criterion,
    quadratic_form,
    sobolev_norm,
    wave_packet,
    weyl_apply,
    weyl_matrix,
)

RNG = np.random.default_rng(20240817)


def random_state(band=4, seed=0):
    rng = np.random.default_rng(seed)
    shape = tuple(2 * b + 1 for b in (band, band)) if np.isscalar(band) else None
    st = SpectralState(2, band)
    st.coeffs = rng.standard_normal(st.coeffs.shape) + 1j * rng.standard_normal(
        st.coeffs.shape
    )
    return st


def test_sobolev_norm_single_mode():
    # || e^{i(1,5).x} ||_sigma = (1 + 26)^{sigma/2}
    u = SpectralState.from_modes(2, 8, {(1, 5): 1.0})
    assert abs(sobolev_norm(u, 2.0) - 27.0) < 1e-12
    assert abs(sobolev_norm(u, 0.5) - 27.0**0.25) < 1e-12
    assert abs(sobolev_norm(u, 0.0) - 1.0) < 1e-12


def test_sobolev_norm_two_modes_frozen():
    # ||2 e^{i(1,0).x} + 3i e^{i(0,2).x}||_1^2 = 4*2 + 9*5 = 53
    u = SpectralState.from_modes(2, 4, {(1, 0): 2.0, (0, 2): 3.0j})
    assert abs(sobolev_norm(u, 1.0) - np.sqrt(53.0)) < 1e-12
    assert abs(u.l2_norm() - np.sqrt(13.0)) < 1e-12


def test_grid_roundtrip_and_parseval():
    u = random_state(band=5, seed=1)
    g = u.to_grid(24)
    v = SpectralState.from_grid(g, 5)
    assert np.max(np.abs(u.coeffs - v.coeffs)) < 1e-12
    # Parseval against direct quadrature of |u|^2 on the grid
    quad = np.mean(np.abs(g) ** 2)
    assert abs(quad - u.l2_norm() ** 2) < 1e-10 * max(1.0, quad)


def test_evaluate_matches_grid():
    u = random_state(band=3, seed=2)
    n = 16
    ax = np.linspace(0, 2 * np.pi, n, endpoint=False)
    mesh = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
    direct = u.evaluate(mesh)
    assert np.max(np.abs(direct - u.to_grid(n))) < 1e-10


def test_multiplier_symbol_is_diagonal():
    u = random_state(band=4, seed=3)
    sym = MultiplierSymbol(2, lambda xi: xi[..., 0] ** 2 + xi[..., 1] ** 2)
    out = weyl_apply(sym, u)
    expected = u.ksq() * u.coeffs
    assert np.max(np.abs(out.coeffs - expected)) < 1e-10


def test_weyl_midpoint_rule_frozen():
    # a = e^{i x_1} (xi_1^2 + xi_2) sends the mode k to k + e_1 with
    # coefficient evaluated at the midpoint: psi((2.5, 3)) = 9.25.
    sym = CallableSymbol(
        2,
        lambda x, xi: np.exp(1j * x[..., 0]) * (xi[..., 0] ** 2 + xi[..., 1]),
        x_band=1,
    )
    u = SpectralState.from_modes(2, 6, {(2, 3): 1.0})
    out = weyl_apply(sym, u)
    idx = (3 + 6, 3 + 6)
    assert abs(out.coeffs[idx] - 9.25) < 1e-10
    out.coeffs[idx] = 0.0
    assert np.max(np.abs(out.coeffs)) < 1e-12


def test_real_symbol_hermitian_and_real_form():
    def fn(x, xi):
        return np.cos(x[..., 0]) * xi[..., 1] + np.sin(x[..., 1] + x[..., 0]) + 0.3

    sym = CallableSymbol(2, fn, x_band=2)
    M = weyl_matrix(sym, (4, 4))
    assert np.max(np.abs(M - M.conj().T)) < 1e-12
    u = random_state(band=4, seed=4)
    val = quadratic_form(sym, u)
    assert isinstance(val, float)


def test_position_symbol_is_multiplication():
    # Op(cos x_1) is multiplication by cos x_1
    sym = ProductSymbol(2, lambda x: np.cos(x[..., 0]), lambda xi: np.ones(xi.shape[:-1]), x_band=1)
    u = random_state(band=4, seed=5)
    out = weyl_apply(sym, u)
    grid = u.to_grid(16)
    ax = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    mult = grid * np.cos(ax)[:, None]
    ref = SpectralState.from_grid(mult, 4)
    assert np.max(np.abs(out.coeffs - ref.coeffs)) < 1e-10


def test_separable_fast_path_matches_dense():
    def g(x):
        return np.cos(x[..., 0]) + 0.3 * np.sin(2 * x[..., 1])

    def psi(xi):
        return np.sqrt(1.0 + xi[..., 0] ** 2 + xi[..., 1] ** 2) + 0.5 * xi[..., 0]

    fast = ProductSymbol(2, g, psi, x_band=2)
    dense = CallableSymbol(2, lambda x, xi: g(x) * psi(xi), x_band=2)
    u = random_state(band=5, seed=6)
    out_fast = weyl_apply(fast, u)
    out_dense = weyl_apply(dense, u)
    assert np.max(np.abs(out_fast.coeffs - out_dense.coeffs)) < 1e-10


def test_nonnegative_multiplier_form():
    sym = MultiplierSymbol(2, lambda xi: xi[..., 0] ** 2 + xi[..., 1] ** 2)
    for seed in range(5):
        u = random_state(band=4, seed=seed)
        assert quadratic_form(sym, u) >= 0.0


def test_wave_packet_norm_carrier_independent():
    a = wave_packet(2, 24, center=(1.0, 2.0), freq=(8, 0), width=0.7)
    b = wave_packet(2, 24, center=(0.3, 0.1), freq=(16, 0), width=0.7)
    na, nb = a.l2_norm(), b.l2_norm()
    assert abs(na - nb) < 1e-6 * na
    # envelope peaks at the requested center
    n = 96
    ax = np.linspace(0, 2 * np.pi, n, endpoint=False)
    mesh = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1)
    mag = np.abs(a.evaluate(mesh))
    peak = np.unravel_index(np.argmax(mag), mag.shape)
    loc = np.array([ax[peak[0]], ax[peak[1]]])
    assert np.linalg.norm(loc - np.array([1.0, 2.0])) < 2 * (2 * np.pi / n)


def test_wave_packet_sobolev_scales_with_carrier():
    a = wave_packet(2, 40, center=(0.0, 0.0), freq=(10, 0), width=0.6)
    b = wave_packet(2, 40, center=(0.0, 0.0), freq=(20, 0), width=0.6)
    ra = sobolev_norm(a, 1.0) / a.l2_norm()
    rb = sobolev_norm(b, 1.0) / b.l2_norm()
    # || . ||_1 / || . ||_0 ~ |k0|, so the ratio should roughly double
    assert 1.7 < rb / ra < 2.3


def test_energy_functional_and_growth_criterion():
    # For a~ = -1 the energy is ||u||^2 and F = (beta - 1) ||u||^2.
    sym = MultiplierSymbol(2, lambda xi: -np.ones(xi.shape[:-1]))
    u = random_state(band=3, seed=7)
    assert abs(energy_functional(sym, u) - u.l2_norm() ** 2) < 1e-10
    F, ok = growth_criterion(sym, u, beta=0.5)
    assert ok and abs(F + 0.5 * u.l2_norm() ** 2) < 1e-10
    F2, ok2 = growth_criterion(sym, u, beta=2.0)
    assert not ok2 and F2 > 0.0
