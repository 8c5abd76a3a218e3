"""Tests for the escape-function builder and its certification."""

import dataclasses

import numpy as np
import pytest

from torusgrowth import quantize as qz
from torusgrowth.escape import (
    EscapeData,
    EscapeParams,
    EscapeSymbol,
    _lift_step,
    build_energy,
    build_escape,
    certify_escape,
)
from torusgrowth.fields import FourierVectorField
from torusgrowth.msanalysis import ClosedOrbit, CycleSearch, certify_morse_smale


def gradient_field():
    """(sin x1, sin x2) = grad(-cos x1 - cos x2), the standard MS example."""
    return FourierVectorField.gradient(2, {(1, 0): -0.5, (0, 1): -0.5})


@pytest.fixture(scope="module")
def report():
    return certify_morse_smale(gradient_field())


@pytest.fixture(scope="module")
def data(report):
    # 32^3 keeps the whole module fast; the certificate values below were
    # recorded at this resolution and are deterministic
    return build_escape(gradient_field(), report, EscapeParams(n_grid=32))


@pytest.fixture(scope="module")
def cert(data):
    return certify_escape(data, V=gradient_field())


def test_certificate_headline_values(cert):
    assert cert.passed(min_fraction=0.99), cert.summary()
    assert cert.fraction_positive == 1.0
    assert cert.delta_hat == pytest.approx(0.117221, rel=1e-3)
    assert cert.min_off_collar == pytest.approx(0.090918, rel=1e-3)
    assert cert.collar_fraction == pytest.approx(0.299561, rel=1e-3)
    assert cert.c0 == pytest.approx(1.099889, rel=1e-3)
    assert cert.cone_fraction == pytest.approx(0.079224, rel=1e-3)
    assert cert.cone_rate_q01 == pytest.approx(0.1, rel=1e-3)
    assert "sigma=0.1" in cert.summary()


def test_one_build_certifies_every_order(data):
    # m and log f1 carry no sigma; re-certification only re-weights them
    for sg, delta in [(0.05, 0.072062), (0.2, 0.178054)]:
        c = certify_escape(data, V=gradient_field(), sigma=sg)
        assert c.fraction_positive == 1.0
        assert c.delta_hat == pytest.approx(delta, rel=1e-3)
        # the worst cone samples sit where the linearization rate is 1,
        # so the decay rate on the cone is sigma itself
        assert c.cone_rate_q01 == pytest.approx(sg, rel=0.02)


def test_halving_sigma_halves_cone_rate(data, cert):
    half = certify_escape(data, V=gradient_field(), sigma=0.05)
    assert cert.cone_rate_q01 / half.cone_rate_q01 == pytest.approx(2.0, rel=0.05)


def test_rotated_covector_grid_agrees(data, cert):
    rot = certify_escape(data, V=gradient_field(), theta_offset=np.pi / 32)
    assert abs(rot.fraction_positive - cert.fraction_positive) <= 0.01
    assert rot.delta_hat > 0.0


def test_order_function_range_and_sign_structure(data, cert):
    # |E| < 1/8 and m1, m2 in [0, 1] pin m to [-9/8, 9/8]
    assert np.max(np.abs(data.m)) <= 9.0 / 8.0 + 1e-12
    assert cert.repeller_margin == pytest.approx(0.5, abs=1e-3)
    assert cert.attractor_margin == pytest.approx(0.5, abs=1e-3)
    a = data.symbol_on_sphere()
    assert np.min(a[data.attractor_core()]) > 0.5
    # every refined-repeller sample lies in the recorded negative cone
    assert np.max(a[data.repeller_core()]) <= -0.5 / cert.c0
    assert cert.cone_fraction > 0.0


def test_fiber_rate_matches_linearization(data):
    # over a critical point the lift is exactly linear: eta' = -dV^T eta,
    # so the transported log-weight grows at the eigenvalue rate +-1
    V = gradient_field()
    h = 1e-3
    th = np.linspace(0.3, 2 * np.pi, 8, endpoint=False)
    for point, rate in [((np.pi, np.pi), 1.0), ((0.0, 0.0), -1.0)]:
        x = np.tile(point, (len(th), 1))
        eta = np.stack([np.cos(th), np.sin(th)], axis=-1)
        vals = []
        for s in (h, -h):
            xx, ee = _lift_step(V, x, eta, s)
            nrm = np.linalg.norm(ee, axis=-1)
            tt = np.arctan2(ee[:, 1], ee[:, 0])
            vals.append(data.interp(data.logf1, xx[:, 0], xx[:, 1], tt)
                        + np.log(nrm))
        X = (vals[0] - vals[1]) / (2 * h)
        assert np.max(np.abs(X - rate)) < 1e-9


def test_product_rule_consistency(data):
    # FD of a = m f_sigma along the flow vs X(m) f + m X(f) termwise
    V = gradient_field()
    sg = data.params.sigma
    h = 1e-3
    rng = np.random.default_rng(7)
    x = rng.uniform(0, 2 * np.pi, size=(400, 2))
    th = rng.uniform(0, 2 * np.pi, size=400)
    eta = np.stack([np.cos(th), np.sin(th)], axis=-1)
    m_s, f_s = [], []
    for s in (h, -h):
        xx, ee = _lift_step(V, x, eta, s)
        nrm = np.linalg.norm(ee, axis=-1)
        tt = np.arctan2(ee[:, 1], ee[:, 0])
        m_s.append(data.interp(data.m, xx[:, 0], xx[:, 1], tt))
        f_s.append(np.exp(sg * (
            data.interp(data.logf1, xx[:, 0], xx[:, 1], tt) + np.log(nrm))))
    m0 = data.interp(data.m, x[:, 0], x[:, 1], th)
    f0 = np.exp(sg * data.interp(data.logf1, x[:, 0], x[:, 1], th))
    Xa = (m_s[0] * f_s[0] - m_s[1] * f_s[1]) / (2 * h)
    Xm = (m_s[0] - m_s[1]) / (2 * h)
    Xf = (f_s[0] - f_s[1]) / (2 * h)
    dev = np.abs(Xa - (Xm * f0 + m0 * Xf))
    assert np.max(dev) / np.max(np.abs(Xa)) < 1e-4


def test_symbol_homogeneity_and_cutoff(data):
    sym = EscapeSymbol(data)
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 2 * np.pi, size=(60, 2))
    th = rng.uniform(0, 2 * np.pi, size=60)
    unit = np.stack([np.cos(th), np.sin(th)], axis=-1)
    base = sym.eval(x, 2.0 * unit)
    for lam in (1.5, 3.0, 12.0):
        scaled = sym.eval(x, 2.0 * lam * unit)
        assert np.max(np.abs(scaled - lam**sym.sigma * base)) < 1e-10
    # vanishes inside the unit ball, pure power law past |xi| = 2
    assert np.max(np.abs(sym.eval(x, 0.97 * unit))) == 0.0
    mm = data.interp(data.m, x[:, 0], x[:, 1], th)
    lf = data.interp(data.logf1, x[:, 0], x[:, 1], th)
    r = 4.7
    assert sym.eval(x, r * unit) == pytest.approx(
        mm * np.exp(sym.sigma * lf) * r**sym.sigma, abs=1e-12)


def test_symbol_sigma_override(data):
    s1 = EscapeSymbol(data)
    s2 = EscapeSymbol(data, sigma=0.2)
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 2 * np.pi, size=(30, 2))
    th = rng.uniform(0, 2 * np.pi, size=30)
    xi = 3.0 * np.stack([np.cos(th), np.sin(th)], axis=-1)
    lf = data.interp(data.logf1, x[:, 0], x[:, 1], th)
    expect = s1.eval(x, xi) * np.exp(0.1 * lf) * 3.0**0.1
    assert np.max(np.abs(s2.eval(x, xi) - expect)) < 1e-12


def test_symbol_fast_path_matches_dense(data):
    band = (6, 6)
    sym = EscapeSymbol(data)
    M = qz.weyl_matrix(sym, band)
    assert np.max(np.abs(M - M.conj().T)) / np.max(np.abs(M)) < 1e-12
    neg = EscapeSymbol(data, negate=True)
    rng = np.random.default_rng(3)
    for _ in range(5):
        c = rng.standard_normal(M.shape[0]) + 1j * rng.standard_normal(M.shape[0])
        u = qz.SpectralState(2, band, c.reshape(13, 13))
        fast = qz.weyl_apply(sym, u).coeffs
        dense = (M @ c).reshape(13, 13)
        # the gap is the fiber-harmonic truncation, not the matrix path
        assert np.linalg.norm(fast - dense) / np.linalg.norm(dense) < 0.07
        flipped = qz.weyl_apply(neg, u).coeffs
        assert np.max(np.abs(flipped + fast)) < 1e-12 * np.max(np.abs(fast))
    u = qz.wave_packet(2, band, (np.pi, 0.1), (0.0, 4.0))
    q = qz.quadratic_form(sym, u)
    assert isinstance(q, float)


def test_save_load_roundtrip(data, tmp_path):
    path = tmp_path / "escape.npz"
    data.save(path)
    back = EscapeData.load(path)
    assert back.params == data.params
    for name in ("m", "logf1", "m1", "m2", "d_att", "d_rep"):
        assert np.array_equal(getattr(back, name), getattr(data, name))
    x = np.array([[0.5, 1.7]])
    assert np.allclose(back.field().value(0.0, x), gradient_field().value(0.0, x))


def test_energy_gradient_potential(report):
    n = 64
    E = build_energy(gradient_field(), report, n, mode="potential")
    ax = np.linspace(0, 2 * np.pi, n, endpoint=False)
    X1, X2 = np.meshgrid(ax, ax, indexing="ij")
    assert np.max(np.abs(E + (np.cos(X1) + np.cos(X2)) / 17.0)) < 1e-12
    assert np.abs(E).max() == pytest.approx(2.0 / 17.0, abs=1e-12)
    # derivative along the flow is |V|^2 rescaled, nonnegative everywhere
    lve = (np.sin(X1) ** 2 + np.sin(X2) ** 2) / 17.0
    assert lve.min() >= 0.0


def test_energy_rescaling_keeps_the_verdict(report):
    E1 = build_energy(gradient_field(), report, 32)
    for lam in (0.5, 0.25):
        E2 = build_energy(gradient_field(), report, 32,
                          amplitude=lam * 2.0 / 17.0)
        assert np.max(np.abs(E2 - lam * E1)) < 1e-14


def test_energy_averaged_mode_certifies(report):
    n = 64
    V = gradient_field()
    E = build_energy(V, report, n, mode="averaged")
    assert np.abs(E).max() == pytest.approx(2.0 / 17.0, abs=1e-12)
    k = np.fft.fftfreq(n, 1.0 / n)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    Eh = np.fft.fft2(E)
    grid = V.on_grid(0.0, (n, n))
    lve = (grid[..., 0] * np.fft.ifft2(1j * K1 * Eh).real
           + grid[..., 1] * np.fft.ifft2(1j * K2 * Eh).real)
    assert lve.min() > -1e-9
    ax = np.linspace(0, 2 * np.pi, n, endpoint=False)
    X1, X2 = np.meshgrid(ax, ax, indexing="ij")
    away = np.full((n, n), True)
    for c in report.critical_points:
        d1 = np.angle(np.exp(1j * (X1 - c.point[0])))
        d2 = np.angle(np.exp(1j * (X2 - c.point[1])))
        away &= np.hypot(d1, d2) > 0.2
    assert lve[away].min() > 1e-3


def test_energy_input_guards(report):
    V = gradient_field()
    with pytest.raises(ValueError, match="amplitude"):
        build_energy(V, report, 16, amplitude=0.125)
    with pytest.raises(ValueError, match="mode"):
        build_energy(V, report, 16, mode="synthetic")
    shear = FourierVectorField(2)
    shear.add_mode((0, 1), 0, [1.0 / (2.0j), 0.0])  # (sin x2, 0)
    with pytest.raises(ValueError, match="symmetric Jacobian"):
        build_energy(shear, report, 16, mode="potential")


def test_build_requires_certified_report():
    V = FourierVectorField.constant([0.7, 0.3])
    bad = certify_morse_smale(V, n_omega=20, cycle_seeds=2)
    assert not bad.certified
    with pytest.raises(ValueError, match="certified"):
        build_escape(V, bad, EscapeParams(n_grid=8))


def test_build_rejects_closed_orbits(report):
    orbit = ClosedOrbit(point=np.array([np.pi, np.pi]), period=6.3,
                        multipliers=np.array([1.0, 0.5]),
                        trail=np.zeros((4, 2)), return_gap=1e-8)
    faked = dataclasses.replace(
        report, cycles=CycleSearch(orbits=[orbit], unresolved=np.array([])))
    with pytest.raises(ValueError, match="orbits"):
        build_escape(gradient_field(), faked, EscapeParams(n_grid=8))
