"""Concentrated likelihood, separable surrogate and diagonal-dominance ratio.

The model column of emitter ``q`` at interception ``(l, k)`` is
``g_q = D(p_q) s_q = a(p_q) (x) (f(p_q) * s_q)``.  Everything here is written
in terms of the two Kronecker factors so no ``N M x N`` matrix is formed:

* ``g_q^H r = sum_m conj(a_m) sum_n conj(f_n s_n) r[m, n]``
* ``g_i^H g_j = (a_i^H a_j) * ((f_i s_i)^H (f_j s_j))``
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IllConditioned
from .scene import RadioParams, ReceiverState, betas, doppler_mus, doppler_phasors, steering_vectors, unit_phasor_powers
from .synth import ObservationSet, WaveformSet

#: Largest accepted condition number of the Q x Q Gram matrix.
KAPPA_MAX = 1e10


def stacked_basis(obs: ObservationSet, positions, l: int, k: int) -> np.ndarray:
    """Dense ``D_bar_{l,k}`` of shape (N M, Q); column q is ``D(p_q) s_{q,k}``."""
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    st = obs.geometry.state(l, k)
    a = steering_vectors(st, pts, obs.radio)
    fs = doppler_phasors(st, pts, obs.radio) * obs.waveforms.samples[: len(pts), k, :]
    return (a[:, :, None] * fs[:, None, :]).reshape(len(pts), -1).T


def attenuation_ls(Dbar, r) -> np.ndarray:
    """Least-squares gains ``(D^H D)^{-1} D^H r``.

    Raises
    ------
    IllConditioned
        If the Gram matrix condition number exceeds :data:`KAPPA_MAX`.
    """
    Dbar = np.asarray(Dbar, dtype=complex)
    gram = Dbar.conj().T @ Dbar
    if _gram_condition(gram[None])[0] > KAPPA_MAX:
        raise IllConditioned("stacked basis Gram matrix is numerically singular")
    return np.linalg.solve(gram, Dbar.conj().T @ np.asarray(r, dtype=complex))


def _conj_phasors(st: ReceiverState, pts: np.ndarray, radio: RadioParams) -> np.ndarray:
    """``conj(f(p))`` for many points, generated directly from the negated phase."""
    mu = doppler_mus(st, pts, radio)
    return unit_phasor_powers(-2.0 * np.pi * radio.carrier_frequency * radio.sample_period * mu, radio.samples_per_interval)


def _matched(obs: ObservationSet, st: ReceiverState, l: int, k: int, pts: np.ndarray, qs) -> np.ndarray:
    """``g_q^H r`` for every point and every emitter in ``qs``, shape (n, len(qs))."""
    a_conj = np.exp(-1j * (betas(st, pts, obs.radio) @ st.antenna_offsets.T))  # (n, M)
    fc = _conj_phasors(st, pts, obs.radio)  # (n, N)
    r = obs.samples[l, k]  # (M, N)
    s = obs.waveforms.samples[qs, k, :]  # (q, N)
    W = (s.conj()[:, :, None] * r.T[None]).transpose(1, 0, 2).reshape(r.shape[1], -1)  # (N, q M)
    y = (fc @ W).reshape(len(pts), len(qs), -1)  # (n, q, M)
    return np.einsum("nm,nqm->nq", a_conj, y)


def _gram_condition(gram: np.ndarray) -> np.ndarray:
    """Condition numbers of a stack of Hermitian PSD Gram matrices."""
    ev = np.linalg.eigvalsh(gram)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ev[..., 0] > 0, ev[..., -1] / ev[..., 0], np.inf)


def _solve_pair(d0, d1, c, z):
    """Quadratic form ``z^H G^{-1} z`` and condition of 2x2 Grams ``[[d0, c], [c*, d1]]``."""
    det = d0 * d1 - np.abs(c) ** 2
    half = 0.5 * (d0 + d1)
    rad = np.sqrt(0.25 * (d0 - d1) ** 2 + np.abs(c) ** 2)
    lo = half - rad
    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(lo > 0, (half + rad) / lo, np.inf)
        num = d1 * np.abs(z[:, 0]) ** 2 + d0 * np.abs(z[:, 1]) ** 2 - 2.0 * np.real(z[:, 0].conj() * c * z[:, 1])
        return num / det, kappa


def evaluate_joint(joint, obs: ObservationSet):
    """Concentrated likelihood and separable terms for many joint positions.

    Parameters
    ----------
    joint : array_like, shape (R, Q, 2)
        Candidate joint positions; emitter ``q`` uses waveform ``q``.
    obs : ObservationSet

    Returns
    -------
    l2 : ndarray (R,)
        ``sum_{l,k} r^H D (D^H D)^{-1} D^H r``; NaN where ill-conditioned.
    iq : ndarray (R, Q)
        ``I_q`` of each emitter's own position (shares the matched outputs).
    ill : ndarray of bool (R,)
        Realizations whose Gram matrix exceeded :data:`KAPPA_MAX` somewhere.
    """
    P = np.asarray(joint, dtype=float)
    if P.ndim == 2:
        P = P[None]
    R, Q, _ = P.shape
    radio = obs.radio
    s_all = obs.waveforms.samples
    energy = obs.waveforms.energies
    M = obs.geometry.num_elements
    pairs = [(i, j) for i in range(Q) for j in range(i + 1, Q)]
    l2 = np.zeros(R)
    iq = np.zeros((R, Q))
    ill = np.zeros(R, dtype=bool)
    for l, k, st in obs.geometry.states():
        r = obs.samples[l, k]
        z = np.empty((R, Q), complex)
        a_conj = []
        mus = []
        for q in range(Q):
            a_conj.append(np.exp(-1j * (betas(st, P[:, q], radio) @ st.antenna_offsets.T)))
            mus.append(doppler_mus(st, P[:, q], radio))
            fc = unit_phasor_powers(-2.0 * np.pi * radio.carrier_frequency * radio.sample_period * mus[q], radio.samples_per_interval)
            y = fc @ (s_all[q, k].conj()[:, None] * r.T)  # (R, M)
            z[:, q] = np.einsum("rm,rm->r", a_conj[q], y)
        iq += np.abs(z) ** 2 / energy[:Q, k]
        diag = M * energy[:Q, k]
        cross = {}
        for i, j in pairs:
            # (f_i s_i)^H (f_j s_j) needs only the Doppler difference
            dphase = 2.0 * np.pi * radio.carrier_frequency * radio.sample_period * (mus[j] - mus[i])
            fs_ij = unit_phasor_powers(dphase, radio.samples_per_interval) @ (s_all[i, k].conj() * s_all[j, k])
            aa = np.einsum("rm,rm->r", a_conj[i], a_conj[j].conj())
            cross[i, j] = aa * fs_ij
        if Q == 1:
            l2 += np.abs(z[:, 0]) ** 2 / diag[0]
            continue
        if Q == 2:
            quad, kappa = _solve_pair(diag[0], diag[1], cross[0, 1], z)
            ill |= ~(kappa <= KAPPA_MAX)
            l2 += np.where(ill, 0.0, quad)
            continue
        gram = np.zeros((R, Q, Q), complex)
        gram[:, np.arange(Q), np.arange(Q)] = diag
        for (i, j), c in cross.items():
            gram[:, i, j] = c
            gram[:, j, i] = c.conj()
        ill |= _gram_condition(gram) > KAPPA_MAX
        safe = ~ill
        x = np.zeros_like(z)
        if np.any(safe):
            x[safe] = np.linalg.solve(gram[safe], z[safe][..., None])[..., 0]
        l2 += np.einsum("rq,rq->r", z.conj(), x).real
    l2[ill] = np.nan
    return l2, iq, ill


def clf_l2_batch(joint, obs: ObservationSet):
    """``(l2, ill)`` of :func:`evaluate_joint`."""
    l2, _, ill = evaluate_joint(joint, obs)
    return l2, ill


def clf_L2(joint, obs: ObservationSet) -> float:
    """Concentrated likelihood of one joint position ``(Q, 2)``."""
    values, ill = clf_l2_batch(np.asarray(joint, dtype=float)[None], obs)
    if ill[0]:
        raise IllConditioned("joint position yields a singular Gram matrix")
    return float(values[0])


def iq_fields(points, obs: ObservationSet, qs=None) -> np.ndarray:
    """``I_q`` of several emitters at an ``(n, 2)`` array of positions, shape (len(qs), n).

    The geometry terms are shared, so this is much cheaper than one call per emitter.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    qs = np.arange(obs.num_emitters) if qs is None else np.atleast_1d(np.asarray(qs, dtype=int))
    out = np.zeros((len(qs), len(pts)))
    energy = obs.waveforms.energies[qs]  # (q, K)
    for l, k, st in obs.geometry.states():
        z = _matched(obs, st, l, k, pts, qs)
        out += (np.abs(z) ** 2 / energy[:, k]).T
    return out


def iq_field(q: int, points, obs: ObservationSet) -> np.ndarray:
    """Separable term ``I_q`` evaluated at an ``(n, 2)`` array of positions."""
    return iq_fields(points, obs, [q])[0]


def separable_iq(q: int, p, obs: ObservationSet) -> float:
    return float(iq_field(q, np.asarray(p, dtype=float)[None], obs)[0])


def _waveform_pair(waveforms, i: int, g: int, k: int):
    s = waveforms.samples if isinstance(waveforms, WaveformSet) else np.asarray(waveforms)
    if s.ndim == 3:
        s = s[:, k, :]
    return s[i], s[g]


def delta_ratios(p_i, p_g, receiver: ReceiverState, s_i, s_g, radio: RadioParams) -> np.ndarray:
    """Batched off-diagonal/diagonal ratio of ``D_bar^H D_bar``.

    ``p_i``, ``p_g`` have shape (n, 2); ``s_i``, ``s_g`` shape (N,) or (n, N).
    """
    p_i = np.asarray(p_i, dtype=float).reshape(-1, 2)
    p_g = np.asarray(p_g, dtype=float).reshape(-1, 2)
    s_i = np.atleast_2d(s_i)
    s_g = np.atleast_2d(s_g)
    dmu = doppler_mus(receiver, p_g, radio) - doppler_mus(receiver, p_i, radio)
    n = np.arange(radio.samples_per_interval)
    chirp = np.exp(2j * np.pi * radio.carrier_frequency * radio.sample_period * np.outer(dmu, n))
    corr = np.abs(np.sum(s_i.conj() * s_g * chirp, axis=-1))
    dbeta = betas(receiver, p_g, radio) - betas(receiver, p_i, radio)
    array_sum = np.abs(np.exp(1j * dbeta @ receiver.antenna_offsets.T).sum(axis=-1))
    M = receiver.num_elements
    return corr / (M * np.sum(np.abs(s_i) ** 2, axis=-1)) * array_sum


def delta_ratio(i: int, g: int, p_i, p_g, receiver: ReceiverState, waveforms, radio: RadioParams, k: int = 0) -> float:
    if i == g:
        raise ValueError("delta ratio is defined for i != g only")
    s_i, s_g = _waveform_pair(waveforms, i, g, k)
    return float(delta_ratios(p_i, p_g, receiver, s_i, s_g, radio)[0])


@dataclass(frozen=True)
class DeltaSetup:
    """Single receiver at the origin, defaults mirroring the CCDF study."""

    carrier_frequency: float = 1e8
    propagation_speed: float = 3e8
    observation_time: float = 12.8e-3
    samples_per_interval: int = 100
    speed: float = 300.0
    num_elements: int = 3
    half_extent: float = 100e3

    def radio(self) -> RadioParams:
        return RadioParams(self.carrier_frequency, self.propagation_speed, self.observation_time, self.samples_per_interval)

    def receiver(self) -> ReceiverState:
        spacing = self.propagation_speed / self.carrier_frequency / 2.0
        idx = np.arange(self.num_elements) - (self.num_elements - 1) / 2.0
        offsets = np.column_stack([idx * spacing, np.zeros(self.num_elements)])
        return ReceiverState(np.zeros(2), np.array([self.speed, 0.0]), offsets)


DEFAULT_THRESHOLDS = np.round(np.arange(0, 201) * 0.005, 6)


def sample_deltas(samples: int, rng_seed, setup: DeltaSetup = DeltaSetup(), chunk: int = 20000) -> np.ndarray:
    """Draw ``samples`` ratios with IID uniform positions and fresh Gaussian waveforms."""
    rng = np.random.default_rng(rng_seed)
    radio, rx = setup.radio(), setup.receiver()
    N = setup.samples_per_interval
    out = []
    left = int(samples)
    while left > 0:
        n = min(chunk, left)
        p = rng.uniform(-setup.half_extent, setup.half_extent, size=(2, n, 2))
        s = (rng.standard_normal((2, n, N)) + 1j * rng.standard_normal((2, n, N))) / np.sqrt(2.0)
        out.append(delta_ratios(p[0], p[1], rx, s[0], s[1], radio))
        left -= n
    return np.concatenate(out)


def ccdf_delta(samples: int, rng_seed, setup: DeltaSetup = DeltaSetup(), thresholds=None):
    """Empirical CCDF ``P(delta > t)`` over a threshold sweep.

    Returns
    -------
    thresholds, ccdf : ndarray
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    t = DEFAULT_THRESHOLDS if thresholds is None else np.sort(np.asarray(thresholds, dtype=float))
    d = np.sort(sample_deltas(samples, rng_seed, setup))
    exceed = len(d) - np.searchsorted(d, t, side="right")
    return t, exceed / len(d)


def write_ccdf_csv(path, thresholds, ccdf) -> None:
    with open(path, "w") as fh:
        fh.write("threshold,ccdf\n")
        for t, c in zip(thresholds, ccdf):
            fh.write(f"{t:.6g},{c:.10g}\n")
