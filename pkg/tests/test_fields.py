"""Unit tests for band-limited fields, flows, and cotangent lifts."""

import numpy as np
import pytest

from torusgrowth.fields import (
    CotangentState,
    FourierVectorField,
    StepControls,
    evaluate_field,
    flow,
    hamiltonian,
    lift_flow,
    projected_lift,
    torus_distance,
    variational_flow,
    wrap,
)


def sine_field():
    """V(x) = (sin x1, sin x2): gradient of -(cos x1 + cos x2)."""
    f = FourierVectorField(2)
    f.add_mode((1, 0), 0, np.array([1 / 2j, 0]))
    f.add_mode((0, 1), 0, np.array([0, 1 / 2j]))
    return f


def drifting_field():
    """Time-dependent field (sin(x1 + t), sin(x2 + t))."""
    f = FourierVectorField(2)
    f.add_mode((1, 0), 1, np.array([1 / 2j, 0]))
    f.add_mode((0, 1), 1, np.array([0, 1 / 2j]))
    return f


CTRL = StepControls(dt=0.005)


def test_evaluate_matches_closed_form():
    V = sine_field()
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 2 * np.pi, size=(40, 2))
    got = evaluate_field(V, 0.0, x)
    want = np.stack([np.sin(x[:, 0]), np.sin(x[:, 1])], axis=-1)
    assert np.max(np.abs(got - want)) < 1e-12, "trig sum disagrees with sin"


def test_evaluate_time_dependent():
    V = drifting_field()
    x = np.array([[0.3, 1.1]])
    t = 0.7
    got = evaluate_field(V, t, x)[0]
    want = np.array([np.sin(0.3 + t), np.sin(1.1 + t)])
    assert np.max(np.abs(got - want)) < 1e-12


def test_jacobian_and_divergence():
    V = sine_field()
    x = np.array([[0.5, 2.0]])
    J = V.jacobian(0.0, x)[0]
    want = np.diag([np.cos(0.5), np.cos(2.0)])
    assert np.max(np.abs(J - want)) < 1e-12
    div = V.divergence(0.0, x)[0]
    assert abs(div - (np.cos(0.5) + np.cos(2.0))) < 1e-12


def test_flow_scalar_closed_form():
    # dx/dt = sin x has solution x(t) = 2 atan(e^t tan(x0/2))
    V = sine_field()
    x0 = np.array([[0.1, 0.1]])
    t = 1.5
    xt = flow(V, x0, t, CTRL)[0]
    want = 2 * np.arctan(np.exp(t) * np.tan(0.05))
    assert abs(xt[0] - want) < 1e-9, f"flow endpoint {xt[0]} vs {want}"
    assert abs(xt[1] - want) < 1e-9


def test_flow_cocycle_and_reversibility():
    V = sine_field()
    rng = np.random.default_rng(1)
    x0 = rng.uniform(0, 2 * np.pi, size=(10, 2))
    a = flow(V, flow(V, x0, 0.7, CTRL), 0.4, CTRL)
    b = flow(V, x0, 1.1, CTRL)
    assert np.max(torus_distance(a, b)) < 1e-9, "cocycle property failed"
    back = flow(V, flow(V, x0, 0.9, CTRL), -0.9, CTRL)
    assert np.max(torus_distance(back, x0)) < 1e-9, "reversibility failed"


def test_variational_chain_rule_and_determinant():
    V = sine_field()
    x0 = np.array([[1.2, 0.4]])
    jet_s = variational_flow(V, x0, 0.6, CTRL)
    jet_t = variational_flow(V, jet_s.point, 0.5, CTRL)
    jet_ts = variational_flow(V, x0, 1.1, CTRL)
    chained = jet_t.jacobian[0] @ jet_s.jacobian[0]
    assert np.max(np.abs(chained - jet_ts.jacobian[0])) < 1e-8, "chain rule failed"
    # Liouville: det d(phi^t) = exp int div V along the orbit
    dt = 1.1 / 1100
    xs = x0.copy()
    acc = 0.0
    prev = V.divergence(0, xs)[0]
    for _ in range(1100):
        xs = flow(V, xs, dt, StepControls(dt=dt))
        cur = V.divergence(0, xs)[0]
        acc += 0.5 * dt * (prev + cur)
        prev = cur
    assert abs(np.linalg.det(jet_ts.jacobian[0]) - np.exp(acc)) < 1e-5


def test_lift_hamiltonian_conserved_autonomous():
    V = sine_field()
    s = CotangentState(np.array([[0.9, 2.5]]), np.array([[0.3, -1.2]]))
    h0 = hamiltonian(V, s)
    st = lift_flow(V, s, 2.0, CTRL)
    h1 = hamiltonian(V, st)
    assert abs(h1[0] - h0[0]) < 1e-10, f"h drifted {h0} -> {h1}"


def test_lift_linear_in_covector():
    V = sine_field()
    x = np.array([[0.9, 2.5]])
    xi = np.array([[0.3, -1.2]])
    a = lift_flow(V, CotangentState(x, xi), 1.3, CTRL)
    b = lift_flow(V, CotangentState(x, 2.5 * xi), 1.3, CTRL)
    assert np.max(np.abs(b.covector - 2.5 * a.covector)) < 1e-12, "transport not linear"
    assert np.max(np.abs(b.point - a.point)) < 1e-12


def test_projected_lift_matches_normalized_lift():
    V = sine_field()
    s = CotangentState(np.array([[0.9, 2.5]]), np.array([[0.3, -1.2]]))
    a = projected_lift(V, s, 1.7, CTRL)
    b = lift_flow(V, CotangentState(s.point, s.covector), 1.7, CTRL).unit()
    assert np.max(np.abs(a.covector - b.covector)) < 1e-9
    assert np.max(np.abs(np.linalg.norm(a.covector, axis=-1) - 1.0)) < 1e-12


def test_lift_preserves_symplectic_form():
    # finite-difference the full (x, xi) map and check Z^T Omega Z = Omega
    V = sine_field()
    x = np.array([1.0, 2.2])
    xi = np.array([0.7, -0.4])
    t = 0.8
    eps = 1e-5

    def phi(z):
        st = lift_flow(
            V, CotangentState(z[:2][None, :], z[2:][None, :]), t, StepControls(dt=0.002)
        )
        # unwrapped comparison: use raw endpoint from un-wrapped integration
        return np.concatenate([st.point[0], st.covector[0]])

    z0 = np.concatenate([x, xi])
    Z = np.zeros((4, 4))
    for j in range(4):
        dz = np.zeros(4)
        dz[j] = eps
        Z[:, j] = (phi(z0 + dz) - phi(z0 - dz)) / (2 * eps)
    Om = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
    assert np.max(np.abs(Z.T @ Om @ Z - Om)) < 1e-5, "lift is not symplectic"


def test_saddle_covector_rates():
    # at the saddle (0, pi) of (sin x1, sin x2): covector along e1 decays,
    # along e2 grows, both at unit rate
    V = sine_field()
    saddle = np.array([[0.0, np.pi]])
    t = 2.0
    dec = lift_flow(V, CotangentState(saddle, np.array([[1.0, 0.0]])), t, CTRL)
    gro = lift_flow(V, CotangentState(saddle, np.array([[0.0, 1.0]])), t, CTRL)
    assert abs(np.linalg.norm(dec.covector) - np.exp(-t)) < 1e-8
    assert abs(np.linalg.norm(gro.covector) - np.exp(t)) < 1e-6


def test_reality_validation_and_roundtrip():
    V = drifting_field()
    d = V.to_dict()
    W = FourierVectorField.from_dict(d)
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 2 * np.pi, size=(20, 2))
    assert np.max(np.abs(V.value(0.3, x) - W.value(0.3, x))) < 1e-14
    with pytest.raises(ValueError):
        FourierVectorField(2).add_mode((0, 0), 0, np.array([1j, 0.0]))


def test_from_callable_recovers_band_limited_field():
    V = sine_field()
    W = FourierVectorField.from_callable(lambda p: V.value(0.0, p), 2, band=3)
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 2 * np.pi, size=(50, 2))
    assert np.max(np.abs(V.value(0.0, x) - W.value(0.0, x))) < 1e-12


def test_on_grid_matches_pointwise():
    V = drifting_field()
    g = V.on_grid(0.4, (16, 16))
    xs = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    X1, X2 = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([X1, X2], axis=-1)
    want = V.value(0.4, pts)
    assert np.max(np.abs(g - want)) < 1e-12
    # offset grid (co-moving frame evaluation)
    off = np.array([0.3, -0.1])
    g2 = V.on_grid(0.4, (16, 16), offset=off)
    want2 = V.value(0.4, pts + off)
    assert np.max(np.abs(g2 - want2)) < 1e-12


def test_gradient_constructor_amplitude():
    # phi = -cos(x1) - cos(x2); grad(phi) = (sin(x1), sin(x2)), not twice it
    V = FourierVectorField.gradient(2, {(1, 0): -0.5, (0, 1): -0.5})
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 2 * np.pi, size=(40, 2))
    assert np.max(np.abs(V.value(0.0, x) - np.sin(x))) < 1e-14
    J = V.jacobian(0.0, x)
    assert np.max(np.abs(J - np.swapaxes(J, -1, -2))) < 1e-14


def test_constant_field_translation():
    V = FourierVectorField.constant([0.5, 0.25])
    x0 = np.array([[1.0, 1.0]])
    xt = flow(V, x0, 2.0, CTRL)
    assert np.max(np.abs(xt - wrap(x0 + 2.0 * np.array([0.5, 0.25])))) < 1e-12


def test_sup_norm_bound():
    V = sine_field()
    bound = V.sup_norm_bound()
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 2 * np.pi, size=(500, 2))
    vals = np.linalg.norm(V.value(0.0, x), axis=-1)
    assert vals.max() <= bound + 1e-12
    assert bound <= np.sqrt(2.0) + 1e-12
