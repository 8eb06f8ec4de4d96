import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isdpd.errors import CoincidentGeometry, ValidationError
from isdpd.scene import (
    EmitterState,
    RadioParams,
    ReceiverGeometry,
    ReceiverState,
    basis_matrix,
    beta,
    doppler_matrix,
    doppler_mu,
    doppler_phasors,
    steering_vector,
    ula_offsets,
    unit_phasor_powers,
)

RADIO = RadioParams(1e8, 3e8, 12.8e-3, 128)
coord = st.floats(-2e4, 2e4, allow_nan=False)


def rx(u=(0.0, 0.0), v=(300.0, 0.0), M=3, spacing=1.5, heading=(1.0, 0.0)):
    return ReceiverState(np.array(u), np.array(v), ula_offsets(heading, M, spacing))


def test_beta_unit_direction():
    radio = RadioParams(3e8, 3e8, 1.0, 4)
    np.testing.assert_allclose(beta(rx(), (1000.0, 0.0), radio), [-2 * np.pi, 0.0], atol=1e-12)


def test_beta_coincident():
    with pytest.raises(CoincidentGeometry):
        beta(rx(), (0.0, 0.0), RADIO)
    with pytest.raises(CoincidentGeometry):
        doppler_mu(rx(), (0.3, 0.4), RADIO)


def test_beta_345():
    got = beta(rx(), (3e3, 4e3), RADIO)
    k = 2 * math.pi * 1e8 / 3e8
    dist = math.sqrt(3e3**2 + 4e3**2)
    assert got[0] == pytest.approx(k * (0 - 3e3) / dist, rel=1e-12)
    assert got[1] == pytest.approx(k * (0 - 4e3) / dist, rel=1e-12)
    np.testing.assert_allclose(got, (2 * np.pi / 3) * np.array([-0.6, -0.8]), rtol=1e-12)


def test_doppler_mu_examples():
    assert doppler_mu(rx(v=(0.0, 300.0)), (5e3, 0.0), RADIO) == pytest.approx(0.0, abs=1e-18)
    assert doppler_mu(rx(v=(300.0, 0.0)), (5e3, 0.0), RADIO) == pytest.approx(1e-6, rel=1e-12)
    u, v, p = (0.0, 10000.0), (300.0, 0.0), (5000.0, 2500.0)
    expect = (v[0] * (p[0] - u[0]) + v[1] * (p[1] - u[1])) / (3e8 * math.hypot(p[0] - u[0], p[1] - u[1]))
    assert doppler_mu(rx(u=u, v=v), p, RADIO) == pytest.approx(expect, rel=1e-12)


def test_steering_vector_examples():
    one = ReceiverState(np.zeros(2), np.zeros(2), np.zeros((1, 2)))
    np.testing.assert_array_equal(steering_vector(one, (100.0, 50.0), RADIO), [1.0])
    r = rx(M=3, spacing=RADIO.wavelength / 2)
    a = steering_vector(r, (0.0, 7e3), RADIO)
    b = beta(r, (0.0, 7e3), RADIO)
    for m, d in enumerate(r.antenna_offsets):
        assert a[m] == pytest.approx(complex(math.cos(b @ d), math.sin(b @ d)), abs=1e-12)
    np.testing.assert_allclose(np.angle(a), np.angle(a[0]), atol=1e-12)


def test_doppler_matrix_examples():
    still = rx(v=(0.0, 0.0))
    np.testing.assert_array_equal(doppler_matrix(still, (4e3, 1e3), RADIO), np.ones(RADIO.samples_per_interval))
    radio = RadioParams(1e8, 3e8, 1e-4 * 8, 8)
    f = doppler_matrix(rx(v=(300.0, 0.0)), (5e3, 0.0), radio)
    assert f[0] == 1.0
    assert f[1] == pytest.approx(np.exp(2j * np.pi * 1e-2), abs=1e-13)
    np.testing.assert_allclose(np.abs(f), 1.0, atol=1e-12)


def test_basis_matrix_examples():
    radio = RadioParams(1e8, 3e8, 5e-4, 5)
    one = ReceiverState(np.zeros(2), np.zeros(2), np.zeros((1, 2)))
    np.testing.assert_allclose(basis_matrix(one, (3e3, 1e3), radio), np.eye(5), atol=1e-15)

    radio2 = RadioParams(1e8, 3e8, 2e-4, 2)
    r = rx(M=2)
    p = (2e3, 3e3)
    a = steering_vector(r, p, radio2)
    f = doppler_matrix(r, p, radio2)
    hand = np.array([[a[0] * f[0], 0], [0, a[0] * f[1]], [a[1] * f[0], 0], [0, a[1] * f[1]]])
    np.testing.assert_allclose(basis_matrix(r, p, radio2), hand, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(coord, coord, coord, coord, st.floats(0, 1000), st.floats(0, 2 * np.pi), st.integers(1, 6))
def test_kernel_properties(ux, uy, px, py, speed, ang, M):
    if math.hypot(px - ux, py - uy) < 10:
        return
    heading = (math.cos(ang), math.sin(ang))
    r = ReceiverState(np.array([ux, uy]), speed * np.array(heading), ula_offsets(heading, M, 1.5))
    b = beta(r, (px, py), RADIO)
    assert np.linalg.norm(b) == pytest.approx(RADIO.wavenumber, rel=1e-12)
    assert abs(doppler_mu(r, (px, py), RADIO)) <= speed / RADIO.propagation_speed * (1 + 1e-12)
    np.testing.assert_allclose(np.abs(steering_vector(r, (px, py), RADIO)), 1.0, atol=1e-12)
    radio = RadioParams(1e8, 3e8, 1.6e-3, 16)
    D = basis_matrix(r, (px, py), radio)
    gram = D.conj().T @ D
    assert np.linalg.norm(gram - M * np.eye(16)) / np.linalg.norm(M * np.eye(16)) < 1e-10
    np.testing.assert_array_equal(D, basis_matrix(r, (px, py), radio))


def test_unit_phasor_powers_matches_direct():
    rng = np.random.default_rng(1)
    phase = rng.uniform(-0.3, 0.3, 50)
    for N in (1, 2, 7, 100, 128):
        direct = np.exp(1j * np.outer(phase, np.arange(N)))
        np.testing.assert_allclose(unit_phasor_powers(phase, N), direct, atol=1e-12)


def test_batched_equals_scalar():
    r = rx(u=(1e3, 9e3))
    pts = np.array([[4e3, 2e3], [7e3, -3e3]])
    batch = doppler_phasors(r, pts, RADIO)
    for i, p in enumerate(pts):
        np.testing.assert_array_equal(batch[i], doppler_matrix(r, p, RADIO))


def test_receiver_state_invariants():
    with pytest.raises(ValidationError):
        ReceiverState(np.zeros(2), np.zeros(2), np.array([[0, 0], [1, 0], [3, 0]], float))
    with pytest.raises(ValidationError):
        ReceiverState(np.zeros(2), np.array([np.inf, 0]), np.zeros((1, 2)))
    r = rx(M=4, spacing=1.5)
    assert r.num_elements == 4
    steps = np.diff(r.antenna_offsets, axis=0)
    np.testing.assert_allclose(np.linalg.norm(steps, axis=1), 1.5)
    with pytest.raises(ValueError):
        r.position[0] = 1.0


def test_geometry_from_tracks(base_geometry, base_radio):
    g = base_geometry
    assert (g.num_receivers, g.num_intervals, g.num_elements) == (2, 10, 3)
    np.testing.assert_allclose(g.positions[0, 0], [1e3, 10e3])
    np.testing.assert_allclose(g.positions[1, -1], [1e3, -10e3])
    np.testing.assert_allclose(g.velocities[1, 3], [-300.0, 0.0])
    spacing = np.linalg.norm(np.diff(g.antenna_offsets[0, 0], axis=0), axis=1)
    np.testing.assert_allclose(spacing, base_radio.wavelength / 2)
    # array aligned with the direction of travel
    d = g.antenna_offsets[1, 0, -1] - g.antenna_offsets[1, 0, 0]
    assert d[1] == pytest.approx(0.0) and d[0] < 0
    with pytest.raises(ValidationError):
        ReceiverGeometry.from_tracks([dict(start=(0, 0), end=(1, 0), speed=4e8, num_elements=2, num_intervals=2)],
                                     base_radio)


def test_emitter_inside():
    from isdpd.sampler import SearchBox

    box = SearchBox(0, 10, 0, 10, 2, 2)
    assert EmitterState(np.array([5.0, 5.0])).inside(box)
    assert not EmitterState(np.array([11.0, 5.0])).inside(box)


def test_radio_params():
    r = RadioParams(1e8, 3e8, 12.8e-3, 128)
    assert r.sample_period == 12.8e-3 / 128
    for bad in [(0, 3e8, 1, 1), (1e8, -1, 1, 1), (1e8, 3e8, 1, 0), (1e8, 3e8, 1, 1.5)]:
        with pytest.raises(ValidationError):
            RadioParams(*bad)
