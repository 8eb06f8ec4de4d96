import numpy as np
import pytest

from isdpd.harness import load_scenario, make_observations
from isdpd.scene import RadioParams, ReceiverGeometry, ReceiverState, ula_offsets
from isdpd.synth import AttenuationSet, Scene, generate_waveforms, synthesize

TRACKS = [
    dict(start=(1e3, 10e3), end=(10e3, 10e3), speed=300.0, num_elements=3, num_intervals=10),
    dict(start=(10e3, -10e3), end=(1e3, -10e3), speed=300.0, num_elements=3, num_intervals=10),
]
TRUTH = np.array([[5e3, 2.5e3], [5e3, -2.5e3]])


@pytest.fixture(scope="session")
def base_radio():
    return RadioParams(1e8, 3e8, 12.8e-3, 128)


@pytest.fixture(scope="session")
def base_geometry(base_radio):
    return ReceiverGeometry.from_tracks(TRACKS, base_radio)


@pytest.fixture(scope="session")
def base_cfg():
    return load_scenario("two-emitter")


@pytest.fixture(scope="session")
def noisy_obs(base_cfg):
    obs, _ = make_observations(base_cfg, 15.0, 0)
    return obs


def random_receiver(rng, M=3, speed=300.0, spacing=1.5):
    heading = rng.normal(size=2)
    vel = speed * heading / np.linalg.norm(heading)
    return ReceiverState(rng.uniform(-5e3, 5e3, 2), vel, ula_offsets(heading, M, spacing))


def small_obs(rng, Q=2, N=16, K=3, L=2, M=3, sigma2=0.1, emitters=None):
    """A random compact scenario for cross-checks; not tied to any preset."""
    radio = RadioParams(1e8, 3e8, N * 1e-4, N)
    tracks = []
    for l in range(L):
        y = 12e3 if l % 2 == 0 else -12e3
        tracks.append(dict(start=(rng.uniform(-2e3, 2e3), y), end=(rng.uniform(8e3, 12e3), y + rng.uniform(-1e3, 1e3)),
                           speed=300.0, num_elements=M, num_intervals=K))
    geom = ReceiverGeometry.from_tracks(tracks, radio)
    em = rng.uniform([0, -8e3], [10e3, 8e3], size=(Q, 2)) if emitters is None else np.asarray(emitters, float)
    w = generate_waveforms(rng.integers(1 << 30), Q, K, N)
    b = AttenuationSet(rng.normal(1, 0.1, (Q, K, L)) * np.exp(2j * np.pi * rng.random((Q, K, L))))
    return synthesize(Scene(geom, radio, em), w, b, rng.integers(1 << 30), sigma2), em
