"""Discretized per-emitter importance densities and inverse-transform draws.

A :class:`PseudoPdfGrid` holds ``exp(rho1 * I_q)`` on the nodes of a
:class:`SearchBox`, normalized with the rectangle rule so that
``sum(values) * dx * dy == 1``.

Draws use a marginal / conditional factorization.  Along one axis the node
densities are treated as a piecewise-linear function, so the cumulative value
at every node is the trapezoid integral up to that node (rescaled to end at
exactly 1) and the inverse CDF interpolates linearly between nodes.  The
conditional density of the second coordinate is linearly interpolated
between the two grid lines that bracket the first draw.  Neither coordinate
is snapped to grid nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePdf, ValidationError
from .likelihood import iq_field, iq_fields


@dataclass(frozen=True)
class SearchBox:
    """Rectangular search region with an ``nx x ny`` grid including the edges."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValidationError("search box needs max > min on both axes")
        if self.nx < 2 or self.ny < 2:
            raise ValidationError("search grid needs at least 2 nodes per axis")

    @classmethod
    def from_step(cls, x_min, x_max, y_min, y_max, step_x, step_y=None) -> "SearchBox":
        """Grid with the given node spacing; the spans must be whole multiples of it."""
        step_y = step_x if step_y is None else step_y
        counts = []
        for span, step in ((x_max - x_min, step_x), (y_max - y_min, step_y)):
            cells = span / step
            if step <= 0 or abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
                raise ValidationError(f"step {step} does not divide span {span}")
            counts.append(int(round(cells)) + 1)
        return cls(float(x_min), float(x_max), float(y_min), float(y_max), *counts)

    @property
    def d_x(self) -> float:
        return self.x_max - self.x_min

    @property
    def d_y(self) -> float:
        return self.y_max - self.y_min

    @property
    def step_x(self) -> float:
        return self.d_x / (self.nx - 1)

    @property
    def step_y(self) -> float:
        return self.d_y / (self.ny - 1)

    @property
    def x_nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def y_nodes(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny)

    def points(self) -> np.ndarray:
        """All nodes as ``(nx * ny, 2)``, x index major (matches ``values.ravel()``)."""
        gx, gy = np.meshgrid(self.x_nodes, self.y_nodes, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return (
            (pts[..., 0] >= self.x_min)
            & (pts[..., 0] <= self.x_max)
            & (pts[..., 1] >= self.y_min)
            & (pts[..., 1] <= self.y_max)
        )

    def cell_index(self, pts) -> np.ndarray:
        """Index of the nearest node along each axis, shape (..., 2)."""
        pts = np.asarray(pts, dtype=float)
        ix = np.clip(np.rint((pts[..., 0] - self.x_min) / self.step_x), 0, self.nx - 1)
        iy = np.clip(np.rint((pts[..., 1] - self.y_min) / self.step_y), 0, self.ny - 1)
        return np.stack([ix, iy], axis=-1).astype(int)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("x_min", "x_max", "y_min", "y_max", "nx", "ny")}


@dataclass(frozen=True)
class PseudoPdfGrid:
    """Normalized grid density; ``values[ix, iy]`` lives at node ``(x_ix, y_iy)``."""

    box: SearchBox
    values: np.ndarray
    log_field: np.ndarray
    log_norm: float

    def __post_init__(self):
        if self.values.shape != (self.box.nx, self.box.ny):
            raise ValidationError("grid values do not match the search box")

    def transposed(self) -> "PseudoPdfGrid":
        """Same density with the axes swapped (for y-then-x sampling)."""
        b = self.box
        tb = SearchBox(b.y_min, b.y_max, b.x_min, b.x_max, b.ny, b.nx)
        return PseudoPdfGrid(tb, self.values.T.copy(), self.log_field.T.copy(), self.log_norm)

    def to_csv(self, path) -> None:
        pts = self.box.points()
        with open(path, "w") as fh:
            fh.write("x,y,density\n")
            for (x, y), v in zip(pts, self.values.ravel()):
                fh.write(f"{x:.6f},{y:.6f},{v:.10g}\n")


@dataclass(frozen=True)
class MarginalCdf:
    """Cumulative distribution tabulated on grid nodes."""

    nodes: np.ndarray
    cdf: np.ndarray
    pdf: np.ndarray = field(default=None)

    def __post_init__(self):
        if np.any(np.diff(self.cdf) < 0):
            raise ValidationError("CDF must be non-decreasing")


def pdf_grid_from_log(box: SearchBox, log_field) -> PseudoPdfGrid:
    """Exponentiate a log-density field with max subtraction and normalize."""
    log_field = np.asarray(log_field, dtype=float).reshape(box.nx, box.ny)
    peak = np.max(log_field)
    if not np.isfinite(peak):
        raise DegeneratePdf("log-density has no finite maximum")
    raw = np.exp(log_field - peak)
    total = raw.sum() * box.step_x * box.step_y
    if not (total > 0 and np.isfinite(total)):
        raise DegeneratePdf("density underflowed to zero everywhere")
    return PseudoPdfGrid(box, raw / total, log_field, float(peak + math.log(total)))


def build_pdf_grid(q: int, obs, box: SearchBox, rho1: float) -> PseudoPdfGrid:
    """Importance density ``exp(rho1 * I_q)`` of emitter ``q`` on the box grid."""
    if rho1 < 0:
        raise ValueError("rho1 must be non-negative")
    iq = iq_field(q, box.points(), obs)
    return pdf_grid_from_log(box, rho1 * iq)


def build_pdf_grids(obs, box: SearchBox, rho1: float) -> list:
    """One importance density per emitter, sharing the node geometry."""
    if rho1 < 0:
        raise ValueError("rho1 must be non-negative")
    return [pdf_grid_from_log(box, rho1 * iq) for iq in iq_fields(box.points(), obs)]


def _trapezoid_cdf(pdf: np.ndarray, step: float) -> np.ndarray:
    """Node CDF of a piecewise-linear density, last axis, ending at exactly 1."""
    inc = 0.5 * (pdf[..., 1:] + pdf[..., :-1]) * step
    cdf = np.concatenate([np.zeros(pdf.shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)
    end = cdf[..., -1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        cdf = cdf / end
    cdf = np.minimum(cdf, 1.0)
    cdf[..., -1] = 1.0
    return cdf


def marginal_x(grid: PseudoPdfGrid) -> MarginalCdf:
    """Marginal density of x (``sum_y values * dy``) and its CDF."""
    pdf = grid.values.sum(axis=1) * grid.box.step_y
    return MarginalCdf(grid.box.x_nodes, _trapezoid_cdf(pdf, grid.box.step_x), pdf)


def _invert_rows(nodes: np.ndarray, cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Piecewise-linear inverse CDF, one row of ``cdf`` per entry of ``u``."""
    j = np.sum(cdf < u[:, None], axis=1)  # first node with cdf >= u
    j = np.clip(j, 0, len(nodes) - 1)
    out = nodes[j].astype(float)
    inner = j > 0
    rows = np.nonzero(inner)[0]
    jj = j[inner]
    lo = cdf[rows, jj - 1]
    hi = cdf[rows, jj]
    frac = (u[inner] - lo) / (hi - lo)
    out[inner] = nodes[jj - 1] + frac * (nodes[jj] - nodes[jj - 1])
    return out


def sample_inverse(cdf: MarginalCdf, u):
    """Coordinate(s) ``x`` with ``G(x) = u`` on the linearly interpolated CDF.

    Flat runs resolve to their left endpoint; ``u = 0`` gives the left edge.
    """
    scalar = np.ndim(u) == 0
    uu = np.atleast_1d(np.asarray(u, dtype=float))
    rows = np.broadcast_to(cdf.cdf, (len(uu), len(cdf.cdf)))
    x = _invert_rows(np.asarray(cdf.nodes, dtype=float), rows, uu)
    return float(x[0]) if scalar else x


def _interpolated_columns(grid: PseudoPdfGrid, x_draw: np.ndarray) -> np.ndarray:
    b = grid.box
    t = (np.asarray(x_draw, dtype=float) - b.x_min) / b.step_x
    i0 = np.clip(np.floor(t).astype(int), 0, b.nx - 2)
    w = np.clip(t - i0, 0.0, 1.0)[:, None]
    return (1.0 - w) * grid.values[i0] + w * grid.values[i0 + 1]


def conditional_cdfs(grid: PseudoPdfGrid, x_draws):
    """Conditional y CDFs for many x draws.

    Returns
    -------
    cdf : ndarray (n, ny)
    degenerate : ndarray of bool (n,)
        Rows whose interpolated column was identically zero; those fall back
        to a uniform density over y.
    """
    cols = _interpolated_columns(grid, np.atleast_1d(x_draws))
    mass = cols.sum(axis=1)
    degenerate = ~(mass > 0)
    if np.any(degenerate):
        cols[degenerate] = 1.0
        mass[degenerate] = grid.box.ny
    pdf = cols / (mass[:, None] * grid.box.step_y)
    return _trapezoid_cdf(pdf, grid.box.step_y), degenerate, pdf


def conditional_y(grid: PseudoPdfGrid, x_draw: float, strict: bool = False) -> MarginalCdf:
    """CDF of y given ``x = x_draw``.

    Raises
    ------
    DegeneratePdf
        Only when ``strict`` and the interpolated column carries no mass;
        otherwise a uniform fallback is returned.
    """
    if not grid.box.x_min <= x_draw <= grid.box.x_max:
        raise ValueError("x_draw outside the search box")
    cdf, degenerate, pdf = conditional_cdfs(grid, [x_draw])
    if strict and degenerate[0]:
        raise DegeneratePdf(f"conditional density at x={x_draw} is identically zero")
    return MarginalCdf(grid.box.y_nodes, cdf[0], pdf[0])


@dataclass(frozen=True)
class RealizationSet:
    """``positions[r, q]`` is the draw of emitter ``q`` in joint realization ``r``."""

    positions: np.ndarray  # (R, Q, 2)
    uniforms: np.ndarray  # (R, Q, 2): the two uniforms used, in sampling order
    degenerate: np.ndarray  # (R, Q) flags for uniform-fallback conditionals

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def num_emitters(self) -> int:
        return self.positions.shape[1]


def draw_axis_pair(grid: PseudoPdfGrid, u_first: np.ndarray, u_second: np.ndarray):
    """Draw (first, second) coordinates: marginal of the first, then conditional."""
    first = sample_inverse(marginal_x(grid), u_first)
    cdf, degenerate, _ = conditional_cdfs(grid, first)
    second = _invert_rows(grid.box.y_nodes, cdf, u_second)
    return first, second, degenerate


def draw_realizations(grids, R: int, rng_seed, order: str = "xy") -> RealizationSet:
    """Independent per-emitter inverse-transform draws from each grid.

    ``order="xy"`` samples x from its marginal then y from the conditional;
    ``order="yx"`` does the reverse.  Emitter ``q`` uses its own substream.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    if order not in ("xy", "yx"):
        raise ValueError("order must be 'xy' or 'yx'")
    grids = list(grids)
    Q = len(grids)
    seq = rng_seed if isinstance(rng_seed, np.random.SeedSequence) else np.random.SeedSequence(rng_seed)
    pos = np.empty((R, Q, 2))
    uni = np.empty((R, Q, 2))
    deg = np.zeros((R, Q), dtype=bool)
    # children derived by key, not spawn(), so reusing a SeedSequence replays the same draws
    children = [np.random.SeedSequence(seq.entropy, spawn_key=tuple(seq.spawn_key) + (q,)) for q in range(Q)]
    for q, child in enumerate(children):
        u = np.random.default_rng(child).random((2, R))
        g = grids[q] if order == "xy" else grids[q].transposed()
        a, b, d = draw_axis_pair(g, u[0], u[1])
        if order == "xy":
            pos[:, q, 0], pos[:, q, 1] = a, b
        else:
            pos[:, q, 0], pos[:, q, 1] = b, a
        uni[:, q] = u.T
        deg[:, q] = d
    return RealizationSet(pos, uni, deg)
