"""IS-DPD: importance weights and circular / linear mean position estimates."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import AllWeightsZero, ValidationError, ZeroResultant
from .likelihood import evaluate_joint
from .sampler import RealizationSet, SearchBox, build_pdf_grids, draw_realizations

log = logging.getLogger(__name__)

MEAN_MODES = ("circular", "linear")

#: Below this normalized resultant length the circular mean is undefined.
MIN_RESULTANT = 1e-12


@dataclass(frozen=True)
class EstimatorKnobs:
    rho0: float = 100.0
    rho1: float = 0.035
    R: int = 1000
    mean_mode: str = "circular"

    def __post_init__(self):
        if not self.rho0 > 0:
            raise ValidationError("rho0 must be > 0")
        if not self.rho1 > 0:
            raise ValidationError("rho1 must be > 0")
        if int(self.R) != self.R or self.R < 1:
            raise ValidationError("R must be an integer >= 1")
        if self.mean_mode not in MEAN_MODES:
            raise ValidationError(f"mean_mode must be one of {MEAN_MODES}")

    def replace(self, **changes) -> "EstimatorKnobs":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {"rho0": self.rho0, "rho1": self.rho1, "R": int(self.R), "mean_mode": self.mean_mode}


@dataclass(frozen=True)
class PositionEstimate:
    """Estimated emitter positions with weight diagnostics.

    ``resultant[q, axis]`` is the length of the normalized weighted phasor
    mean (1 for a point mass, NaN in linear mode).
    """

    positions: np.ndarray  # (Q, 2)
    resultant: np.ndarray  # (Q, 2)
    ess: float
    mean_mode: str
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mean_mode": self.mean_mode,
            "emitters": [
                {
                    "q": q,
                    "x": float(p[0]),
                    "y": float(p[1]),
                    "resultant_x": _json_float(self.resultant[q, 0]),
                    "resultant_y": _json_float(self.resultant[q, 1]),
                }
                for q, p in enumerate(self.positions)
            ],
            "effective_sample_size": float(self.ess),
            **self.extras,
        }


def _json_float(v):
    v = float(v)
    return None if np.isnan(v) else v


def log_weights(realizations: RealizationSet, obs, knobs: EstimatorKnobs):
    """Unnormalized log importance weights ``rho0 L2 - rho1 sum_q I_q``.

    Ill-conditioned realizations get ``-inf``.
    """
    l2, iq, ill = evaluate_joint(realizations.positions, obs)
    logw = knobs.rho0 * l2 - knobs.rho1 * iq.sum(axis=1)
    logw[ill] = -np.inf
    return logw, l2, ill


def stabilized_weights(logw) -> np.ndarray:
    """``exp(logw - max(logw))``; the largest weight is exactly 1."""
    logw = np.asarray(logw, dtype=float)
    finite = np.isfinite(logw)
    if not np.any(finite):
        raise AllWeightsZero("every realization was rejected")
    w = np.zeros_like(logw)
    w[finite] = np.exp(logw[finite] - np.max(logw[finite]))
    return w


def weights_eta_prime(realizations: RealizationSet, obs, knobs: EstimatorKnobs) -> np.ndarray:
    """Max-stabilized importance weights of every joint realization."""
    logw, _, ill = log_weights(realizations, obs, knobs)
    if np.any(ill):
        log.debug("%d of %d realizations ill-conditioned, weight set to 0", ill.sum(), len(ill))
    return stabilized_weights(logw)


def _circular(draws, weights, p_min: float, d: float):
    draws = np.asarray(draws, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not d > 0:
        raise ValueError("axis span must be positive")
    total = weights.sum(axis=0)
    if np.any(~(total > 0)):
        raise AllWeightsZero("no positive weight")
    theta = 2.0 * np.pi * (-0.5 + (draws - p_min) / d)
    phasor = np.tensordot(weights, np.exp(1j * theta), axes=(0, 0)) / total
    length = np.abs(phasor)
    if np.any(length < MIN_RESULTANT):
        raise ZeroResultant("weighted phasor mean vanished; increase rho0 or R")
    ang = np.angle(phasor)
    ang = np.where(ang >= np.pi, -np.pi, ang)
    return d * (ang / (2.0 * np.pi) + 0.5) + p_min, length


def circular_mean_axis(draws, weights, p_min: float, d: float) -> float:
    """Weighted circular mean of coordinates in ``[p_min, p_min + d)``."""
    value, _ = _circular(draws, weights, p_min, d)
    return float(value)


def linear_mean_axis(draws, weights) -> float:
    weights = np.asarray(weights, dtype=float)
    return float(np.dot(weights, draws) / weights.sum())


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / np.dot(w, w))


def estimate_positions(realizations: RealizationSet, weights, box: SearchBox, mean_mode: str = "circular") -> PositionEstimate:
    """Per-emitter, per-axis weighted mean of the realizations."""
    w = np.asarray(weights, dtype=float)
    P = realizations.positions
    Q = P.shape[1]
    if mean_mode == "circular":
        x, rx = _circular(P[:, :, 0], w, box.x_min, box.d_x)
        y, ry = _circular(P[:, :, 1], w, box.y_min, box.d_y)
        res = np.column_stack([rx, ry])
    elif mean_mode == "linear":
        total = w.sum()
        if not total > 0:
            raise AllWeightsZero("no positive weight")
        x = w @ P[:, :, 0] / total
        y = w @ P[:, :, 1] / total
        res = np.full((Q, 2), np.nan)
    else:
        raise ValueError(f"unknown mean_mode {mean_mode!r}")
    return PositionEstimate(np.column_stack([x, y]), res, effective_sample_size(w), mean_mode)


@dataclass
class ISDPDRun:
    """Every intermediate of one estimator run, for diagnostics and reuse."""

    grids: list
    realizations: RealizationSet
    log_weights: np.ndarray
    weights: np.ndarray
    l2: np.ndarray

    def estimate(self, box: SearchBox, mean_mode: str) -> PositionEstimate:
        return estimate_positions(self.realizations, self.weights, box, mean_mode)


def is_dpd_run(obs, box: SearchBox, knobs: EstimatorKnobs, rng_seed) -> ISDPDRun:
    """Importance grids, draws and weights (everything but the final mean)."""
    grids = build_pdf_grids(obs, box, knobs.rho1)
    real = draw_realizations(grids, int(knobs.R), rng_seed)
    logw, l2, _ = log_weights(real, obs, knobs)
    return ISDPDRun(grids, real, logw, stabilized_weights(logw), l2)


def run_is_dpd(obs, box: SearchBox, knobs: EstimatorKnobs = EstimatorKnobs(), rng_seed=0) -> PositionEstimate:
    """Full estimator: grids, draws, weights and the ``knobs.mean_mode`` mean."""
    run = is_dpd_run(obs, box, knobs, rng_seed)
    est = run.estimate(box, knobs.mean_mode)
    est.extras.update(
        knobs=knobs.to_dict(),
        seed=int(rng_seed) if isinstance(rng_seed, (int, np.integer)) else None,
        best_realization=run.realizations.positions[int(np.argmax(run.weights))].tolist(),
        degenerate_conditionals=int(run.realizations.degenerate.sum()),
    )
    return est
