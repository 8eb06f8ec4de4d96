"""Ground-truth generation: waveforms, attenuations, noise and observations.

Random streams
--------------
A single integer seed is expanded with :func:`seed_streams` into independent
substreams for waveforms, attenuations, noise and the estimator's uniform
draws, so a run can be replayed component by component.

SNR convention
--------------
``snr_db`` is the per-sample, per-antenna ratio between the power received
from one emitter with unit-magnitude attenuation and the noise power of one
complex component.  With unit-power waveforms, ``sigma2 = 10 ** (-snr_db / 10)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SchemaError, ValidationError
from .scene import RadioParams, ReceiverGeometry, doppler_phasors, steering_vectors

STREAMS = ("waveforms", "attenuations", "noise", "estimator")

CONTAINER_FORMAT = "isdpd.observations"
CONTAINER_VERSION = 1


def seed_streams(seed, trial: int | None = None) -> dict:
    """Derive named, independent :class:`numpy.random.SeedSequence` substreams.

    ``trial`` adds one level to the spawn key so Monte-Carlo trials of the
    same master seed never share draws.
    """
    if isinstance(seed, np.random.SeedSequence):
        root = seed
    else:
        key = () if trial is None else (int(trial),)
        root = np.random.SeedSequence(int(seed), spawn_key=key)
    # equivalent to a first root.spawn(), but without mutating a caller's SeedSequence
    return {name: np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + (i,))
            for i, name in enumerate(STREAMS)}


def _complex_normal(rng: np.random.Generator, shape, variance: float = 1.0) -> np.ndarray:
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True)
class Scene:
    """Deterministic part of a scenario: where the receivers and emitters are."""

    geometry: ReceiverGeometry
    radio: RadioParams
    emitters: np.ndarray  # (Q, 2)

    def __post_init__(self):
        em = np.asarray(self.emitters, dtype=float).reshape(-1, 2)
        em.setflags(write=False)
        object.__setattr__(self, "emitters", em)

    @property
    def num_emitters(self) -> int:
        return self.emitters.shape[0]


@dataclass(frozen=True)
class WaveformSet:
    """Known transmitted samples ``s[q, k, n]``."""

    samples: np.ndarray  # (Q, K, N) complex

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.ndim != 3:
            raise ValidationError("waveform samples must have shape (Q, K, N)")
        if np.any(np.linalg.norm(s, axis=-1) == 0):
            raise ValidationError("every waveform must have non-zero energy")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def energies(self) -> np.ndarray:
        """``|s_{q,k}|^2``, shape (Q, K)."""
        return np.sum(np.abs(self.samples) ** 2, axis=-1)

    @property
    def shape(self):
        return self.samples.shape


@dataclass(frozen=True)
class AttenuationSet:
    """Complex path gains ``b[q, k, l]``."""

    gains: np.ndarray  # (Q, K, L) complex

    def __post_init__(self):
        b = np.asarray(self.gains, dtype=complex)
        if b.ndim != 3 or not np.all(np.isfinite(b)):
            raise ValidationError("gains must be a finite (Q, K, L) array")
        b.setflags(write=False)
        object.__setattr__(self, "gains", b)


@dataclass(frozen=True)
class ObservationSet:
    """Received samples with everything needed to evaluate the model.

    ``samples[l, k]`` is the ``(M, N)`` block of one interception; the vector
    form ``r_{l,k}`` is its antenna-major flattening, see :meth:`vector`.
    """

    samples: np.ndarray  # (L, K, M, N) complex
    waveforms: WaveformSet
    sigma2: float
    geometry: ReceiverGeometry
    radio: RadioParams

    def __post_init__(self):
        r = np.asarray(self.samples, dtype=complex)
        L, K, M = self.geometry.num_receivers, self.geometry.num_intervals, self.geometry.num_elements
        N = self.radio.samples_per_interval
        if r.shape != (L, K, M, N):
            raise ValidationError(f"samples shape {r.shape} != {(L, K, M, N)}")
        Q, Kw, Nw = self.waveforms.shape
        if (Kw, Nw) != (K, N):
            raise ValidationError("waveforms inconsistent with geometry/radio")
        if not self.sigma2 >= 0:
            raise ValidationError("sigma2 must be >= 0")
        r.setflags(write=False)
        object.__setattr__(self, "samples", r)

    @property
    def num_emitters(self) -> int:
        return self.waveforms.shape[0]

    def vector(self, l: int, k: int) -> np.ndarray:
        return self.samples[l, k].reshape(-1)

    def with_samples(self, samples) -> "ObservationSet":
        return ObservationSet(samples, self.waveforms, self.sigma2, self.geometry, self.radio)

    def with_waveforms(self, waveforms: WaveformSet) -> "ObservationSet":
        return ObservationSet(self.samples, waveforms, self.sigma2, self.geometry, self.radio)

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": CONTAINER_FORMAT,
            "version": CONTAINER_VERSION,
            "sigma2": float(self.sigma2),
            "radio": {
                "carrier_frequency": self.radio.carrier_frequency,
                "propagation_speed": self.radio.propagation_speed,
                "observation_time": self.radio.observation_time,
                "samples_per_interval": int(self.radio.samples_per_interval),
            },
            "geometry": {
                "positions": self.geometry.positions.tolist(),
                "velocities": self.geometry.velocities.tolist(),
                "antenna_offsets": self.geometry.antenna_offsets.tolist(),
            },
            "samples": _pack(self.samples),
            "waveforms": _pack(self.waveforms.samples),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ObservationSet":
        if doc.get("format") != CONTAINER_FORMAT:
            raise SchemaError(f"not an {CONTAINER_FORMAT} document")
        if doc.get("version") != CONTAINER_VERSION:
            raise SchemaError(f"unsupported container version {doc.get('version')!r}")
        try:
            radio = RadioParams(**doc["radio"])
            g = doc["geometry"]
            geometry = ReceiverGeometry(
                np.asarray(g["positions"]), np.asarray(g["velocities"]), np.asarray(g["antenna_offsets"])
            )
            return cls(
                _unpack(doc["samples"]), WaveformSet(_unpack(doc["waveforms"])), float(doc["sigma2"]), geometry, radio
            )
        except KeyError as exc:
            raise SchemaError(f"missing field {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ObservationSet":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _pack(z: np.ndarray) -> dict:
    """Complex array as shape + flat interleaved (re, im) float64 list."""
    z = np.ascontiguousarray(z, dtype=np.complex128)
    return {"shape": list(z.shape), "data": z.view(np.float64).ravel().tolist()}


def _unpack(doc: dict) -> np.ndarray:
    flat = np.asarray(doc["data"], dtype=np.float64)
    return flat.view(np.complex128).reshape(doc["shape"]).copy()


def generate_waveforms(rng_seed, Q: int, K: int, N: int) -> WaveformSet:
    """Flat unit-power circular Gaussian samples, redrawn per interval."""
    if min(Q, K, N) < 1:
        raise ValueError("Q, K, N must all be >= 1")
    return WaveformSet(_complex_normal(np.random.default_rng(rng_seed), (Q, K, N)))


def generate_attenuations(rng_seed, Q: int, K: int, L: int, mean: float = 1.0, std: float = 0.1) -> AttenuationSet:
    """Gains with Normal(mean, std) magnitude and uniform phase, per (q, k, l)."""
    rng = np.random.default_rng(rng_seed)
    mag = rng.normal(mean, std, size=(Q, K, L))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(Q, K, L))
    return AttenuationSet(mag * np.exp(1j * phase))


def snr_to_sigma2(snr_db: float, waveforms: WaveformSet | None = None) -> float:
    """Noise variance for ``snr_db`` given the (empirical) waveform power."""
    power = 1.0 if waveforms is None else float(np.mean(np.abs(waveforms.samples) ** 2))
    return 10.0 ** (-snr_db / 10.0) * power


def noiseless_samples(scene: Scene, waveforms: WaveformSet, attenuations: AttenuationSet) -> np.ndarray:
    """Deterministic superposition ``sum_q b D(p_q) s_q`` as (L, K, M, N)."""
    geom, radio = scene.geometry, scene.radio
    Q = scene.num_emitters
    s, b = waveforms.samples, attenuations.gains
    if s.shape[0] != Q or b.shape != (Q, geom.num_intervals, geom.num_receivers):
        raise ValidationError("waveform/attenuation dimensions do not match the scene")
    out = np.zeros((geom.num_receivers, geom.num_intervals, geom.num_elements, radio.samples_per_interval), complex)
    for l, k, st in geom.states():
        a = steering_vectors(st, scene.emitters, radio)  # (Q, M)
        f = doppler_phasors(st, scene.emitters, radio)  # (Q, N)
        cols = b[:, k, l, None] * f * s[:, k, :]  # (Q, N)
        out[l, k] = a.T @ cols
    return out


def synthesize(scene, waveforms: WaveformSet, attenuations: AttenuationSet, rng_seed, sigma2: float) -> ObservationSet:
    """Observed samples: noiseless superposition plus white circular noise.

    ``scene`` is a :class:`Scene` or anything with a ``scene`` attribute.
    """
    scene = getattr(scene, "scene", scene)
    clean = noiseless_samples(scene, waveforms, attenuations)
    if sigma2 > 0:
        clean = clean + _complex_normal(np.random.default_rng(rng_seed), clean.shape, sigma2)
    return ObservationSet(clean, waveforms, float(sigma2), scene.geometry, scene.radio)
