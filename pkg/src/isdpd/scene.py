"""Planar geometry, ULA steering and Doppler kernels of the narrowband model.

Every kernel comes in two flavours: a scalar one taking a single candidate
position (``beta``, ``doppler_mu``, ``steering_vector``, ...) and a batched
one taking an ``(n, 2)`` array of positions (``steering_vectors``,
``doppler_phasors``).  The scalar flavour is a thin wrapper around the batched
one, so both always agree.

Conventions
-----------
* Positions are metres, velocities metres/second, always length-2 (planar).
* Element offsets ``d_m`` are stored relative to the receiver reference point
  ``u`` but expressed in the global frame.  A common offset only multiplies
  every column of the model by a per-interval phase, which the unknown complex
  attenuation absorbs.
* The stacked basis ``D = a (x) F`` is antenna-major: entry ``m * N + n`` is
  element ``m`` at time sample ``n``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CoincidentGeometry, ValidationError

#: Positions closer than this to a receiver (metres) are rejected.
EPS_GEO = 1.0


@dataclass(frozen=True)
class RadioParams:
    carrier_frequency: float
    propagation_speed: float
    observation_time: float
    samples_per_interval: int

    def __post_init__(self):
        if not self.carrier_frequency > 0:
            raise ValidationError("carrier_frequency must be > 0")
        if not self.propagation_speed > 0:
            raise ValidationError("propagation_speed must be > 0")
        if not self.observation_time > 0:
            raise ValidationError("observation_time must be > 0")
        if int(self.samples_per_interval) != self.samples_per_interval or self.samples_per_interval < 1:
            raise ValidationError("samples_per_interval must be an integer >= 1")

    @property
    def sample_period(self) -> float:
        return self.observation_time / self.samples_per_interval

    @property
    def wavelength(self) -> float:
        return self.propagation_speed / self.carrier_frequency

    @property
    def wavenumber(self) -> float:
        """``2 pi f_c / c`` in radians per metre."""
        return 2.0 * np.pi * self.carrier_frequency / self.propagation_speed


@dataclass(frozen=True)
class ReceiverState:
    """One receiver during one interception interval."""

    position: np.ndarray
    velocity: np.ndarray
    antenna_offsets: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2)
        vel = np.asarray(self.velocity, dtype=float).reshape(2)
        off = np.asarray(self.antenna_offsets, dtype=float)
        if off.ndim != 2 or off.shape[1] != 2 or off.shape[0] < 1:
            raise ValidationError("antenna_offsets must have shape (M, 2)")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel)) and np.all(np.isfinite(off))):
            raise ValidationError("receiver state must be finite")
        if off.shape[0] > 2:
            steps = np.diff(off, axis=0)
            if not np.allclose(steps, steps[0], rtol=0, atol=1e-9 * max(1.0, np.abs(steps).max())):
                raise ValidationError("antenna_offsets are not a uniform linear array")
        for name, arr in (("position", pos), ("velocity", vel), ("antenna_offsets", off)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_elements(self) -> int:
        return self.antenna_offsets.shape[0]


@dataclass(frozen=True)
class EmitterState:
    position: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2)
        pos.setflags(write=False)
        object.__setattr__(self, "position", pos)

    def inside(self, box) -> bool:
        x, y = self.position
        return box.x_min <= x <= box.x_max and box.y_min <= y <= box.y_max


def ula_offsets(heading, num_elements: int, spacing: float) -> np.ndarray:
    """Element offsets of a ULA centred on the reference point along ``heading``."""
    h = np.asarray(heading, dtype=float)
    norm = np.linalg.norm(h)
    if norm == 0:
        raise ValidationError("array heading must be non-zero")
    idx = np.arange(num_elements) - (num_elements - 1) / 2.0
    return np.outer(idx * spacing, h / norm)


@dataclass(frozen=True)
class ReceiverGeometry:
    """States of all L receivers over all K interception intervals.

    Attributes
    ----------
    positions, velocities : ndarray, shape (L, K, 2)
    antenna_offsets : ndarray, shape (L, K, M, 2)
    """

    positions: np.ndarray
    velocities: np.ndarray
    antenna_offsets: np.ndarray
    _states: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        vel = np.asarray(self.velocities, dtype=float)
        off = np.asarray(self.antenna_offsets, dtype=float)
        if pos.ndim != 3 or pos.shape[2] != 2 or vel.shape != pos.shape:
            raise ValidationError("positions/velocities must both have shape (L, K, 2)")
        if off.ndim != 4 or off.shape[:2] != pos.shape[:2] or off.shape[3] != 2:
            raise ValidationError("antenna_offsets must have shape (L, K, M, 2)")
        states = tuple(
            tuple(ReceiverState(pos[l, k], vel[l, k], off[l, k]) for k in range(pos.shape[1]))
            for l in range(pos.shape[0])
        )
        for name, arr in (("positions", pos), ("velocities", vel), ("antenna_offsets", off)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_states", states)

    @property
    def num_receivers(self) -> int:
        return self.positions.shape[0]

    @property
    def num_intervals(self) -> int:
        return self.positions.shape[1]

    @property
    def num_elements(self) -> int:
        return self.antenna_offsets.shape[2]

    def state(self, l: int, k: int) -> ReceiverState:
        return self._states[l][k]

    def states(self):
        """Yield ``(l, k, ReceiverState)`` in receiver-major order."""
        for l, row in enumerate(self._states):
            for k, st in enumerate(row):
                yield l, k, st

    def check_speed(self, radio: RadioParams) -> None:
        if np.any(np.linalg.norm(self.velocities, axis=-1) >= radio.propagation_speed):
            raise ValidationError("receiver speed must be below the propagation speed")

    @classmethod
    def from_tracks(cls, tracks, radio: RadioParams) -> "ReceiverGeometry":
        """Build from straight tracks.

        ``tracks`` is a sequence of dicts with keys ``start``, ``end`` (metres),
        ``speed`` (m/s), ``num_elements`` and optionally ``element_spacing``
        (defaults to half a wavelength).  All tracks share the same number of
        interception intervals ``num_intervals``, spread evenly from start to
        end inclusive.  The array is aligned with the direction of travel.
        """
        tracks = list(tracks)
        ks = {int(t["num_intervals"]) for t in tracks}
        ms = {int(t["num_elements"]) for t in tracks}
        if len(ks) != 1 or len(ms) != 1:
            raise ValidationError("all receivers must share num_intervals and num_elements")
        K, M = ks.pop(), ms.pop()
        L = len(tracks)
        pos = np.empty((L, K, 2))
        vel = np.empty((L, K, 2))
        off = np.empty((L, K, M, 2))
        for l, t in enumerate(tracks):
            start = np.asarray(t["start"], dtype=float)
            end = np.asarray(t["end"], dtype=float)
            heading = end - start
            if np.linalg.norm(heading) == 0:
                heading = np.asarray(t.get("heading", (1.0, 0.0)), dtype=float)
            heading = heading / np.linalg.norm(heading)
            spacing = float(t.get("element_spacing") or radio.wavelength / 2.0)
            pos[l] = start if K == 1 else np.linspace(start, end, K)
            vel[l] = float(t["speed"]) * heading
            off[l] = ula_offsets(heading, M, spacing)
        geom = cls(pos, vel, off)
        geom.check_speed(radio)
        return geom


def _as_points(p) -> np.ndarray:
    pts = np.asarray(p, dtype=float)
    if pts.shape[-1] != 2:
        raise ValueError("positions must be length-2 vectors")
    return pts.reshape(-1, 2)


def _line_of_sight(receiver: ReceiverState, points: np.ndarray):
    """Vectors ``u - p`` and their norms, guarding against coincidence."""
    diff = receiver.position[None, :] - points
    dist = np.hypot(diff[:, 0], diff[:, 1])
    if np.any(dist < EPS_GEO):
        raise CoincidentGeometry(
            f"candidate position within {EPS_GEO} m of receiver at {receiver.position.tolist()}"
        )
    return diff, dist


def betas(receiver: ReceiverState, points, radio: RadioParams) -> np.ndarray:
    """Batched spatial frequency vectors, shape (n, 2)."""
    diff, dist = _line_of_sight(receiver, _as_points(points))
    return radio.wavenumber * diff / dist[:, None]


def doppler_mus(receiver: ReceiverState, points, radio: RadioParams) -> np.ndarray:
    """Batched normalized Doppler ``v.(p - u) / (c |p - u|)``, shape (n,)."""
    diff, dist = _line_of_sight(receiver, _as_points(points))
    return -(diff @ receiver.velocity) / (radio.propagation_speed * dist)


def steering_vectors(receiver: ReceiverState, points, radio: RadioParams) -> np.ndarray:
    """Batched ``a(p)``, shape (n, M)."""
    return np.exp(1j * (betas(receiver, points, radio) @ receiver.antenna_offsets.T))


def doppler_phasors(receiver: ReceiverState, points, radio: RadioParams) -> np.ndarray:
    """Batched diagonals of ``F(p)``, shape (n, N)."""
    mu = doppler_mus(receiver, points, radio)
    return unit_phasor_powers(2.0 * np.pi * radio.carrier_frequency * radio.sample_period * mu, radio.samples_per_interval)


def unit_phasor_powers(phase, N: int) -> np.ndarray:
    """``exp(1j * phase[:, None] * arange(N))`` from two short exponent tables.

    Writing ``n = B * hi + lo`` needs ``B + ceil(N / B)`` complex exponentials
    per row instead of ``N``; the product is accurate to a few ulps.
    """
    phase = np.asarray(phase, dtype=float).reshape(-1)
    B = max(1, int(np.ceil(np.sqrt(N))))
    lo = np.exp(1j * np.outer(phase, np.arange(B)))
    hi = np.exp(1j * np.outer(phase, B * np.arange(-(-N // B))))
    return (hi[:, :, None] * lo[:, None, :]).reshape(len(phase), -1)[:, :N]


def beta(receiver: ReceiverState, p, radio: RadioParams) -> np.ndarray:
    return betas(receiver, p, radio)[0]


def doppler_mu(receiver: ReceiverState, p, radio: RadioParams) -> float:
    return float(doppler_mus(receiver, p, radio)[0])


def steering_vector(receiver: ReceiverState, p, radio: RadioParams) -> np.ndarray:
    return steering_vectors(receiver, p, radio)[0]


def doppler_matrix(receiver: ReceiverState, p, radio: RadioParams) -> np.ndarray:
    """Diagonal of ``F(p)`` as a length-N vector (entry 0 is exactly 1)."""
    return doppler_phasors(receiver, p, radio)[0]


def basis_matrix(receiver: ReceiverState, p, radio: RadioParams) -> np.ndarray:
    """Dense ``D(p) = a(p) (x) F(p)`` of shape (N M, N)."""
    return np.kron(steering_vector(receiver, p, radio)[:, None], np.diag(doppler_matrix(receiver, p, radio)))
