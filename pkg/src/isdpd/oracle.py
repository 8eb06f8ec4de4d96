"""Brute-force reference: exhaustive grid ML and an explicit-loop CLF.

Nothing here goes through :mod:`isdpd.likelihood`; both routes are written
against the dense model columns ``D(p) s`` so they cross-check the factored
implementation used by the estimator.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceeded, IllConditioned
from .sampler import SearchBox
from .scene import basis_matrix, doppler_phasors, steering_vectors

#: Default ceiling on the number of joint grid tuples evaluated.
DEFAULT_BUDGET = 10**8

_KAPPA_MAX = 1e10


@dataclass(frozen=True)
class GridSearchResult:
    argmax: np.ndarray  # (Q, 2) grid node coordinates
    argmax_index: tuple  # flat node index per emitter (x-major)
    max_value: float
    field: np.ndarray | None
    evaluations: int
    elapsed: float

    def to_dict(self) -> dict:
        return {
            "argmax": self.argmax.tolist(),
            "argmax_index": [int(i) for i in self.argmax_index],
            "max_value": self.max_value,
            "evaluations": self.evaluations,
            "elapsed_s": self.elapsed,
        }


def clf_L2_reference(joint, obs) -> float:
    """``sum_{l,k} r^H D_bar b_hat`` with explicit loops and dense matrices."""
    joint = np.asarray(joint, dtype=float).reshape(-1, 2)
    Q = joint.shape[0]
    total = 0.0
    for l in range(obs.geometry.num_receivers):
        for k in range(obs.geometry.num_intervals):
            st = obs.geometry.state(l, k)
            r = obs.samples[l, k].reshape(-1)
            cols = []
            for q in range(Q):
                D = basis_matrix(st, joint[q], obs.radio)
                cols.append(D @ obs.waveforms.samples[q, k])
            Dbar = np.column_stack(cols)
            gram = Dbar.conj().T @ Dbar
            if np.linalg.cond(gram) > _KAPPA_MAX:
                raise IllConditioned("reference CLF: singular Gram matrix")
            rhs = Dbar.conj().T @ r
            b_hat = np.linalg.solve(gram, rhs)
            total += float(np.real(np.vdot(r, Dbar @ b_hat)))
    return total


def _node_columns(obs, st, k: int, q: int, nodes: np.ndarray) -> np.ndarray:
    """Dense model columns of every node, shape (n, N M), antenna-major."""
    a = steering_vectors(st, nodes, obs.radio)
    fs = doppler_phasors(st, nodes, obs.radio) * obs.waveforms.samples[q, k][None, :]
    return (a[:, :, None] * fs[:, None, :]).reshape(len(nodes), -1)


def exhaustive_ml(obs, box: SearchBox, budget: int = DEFAULT_BUDGET, keep_field: bool = False) -> GridSearchResult:
    """Exact grid argmax of the CLF over all Q-tuples of nodes.

    Ties resolve to the lexicographically smallest tuple of x-major node
    indices.  Tuples whose Gram matrix is numerically singular in any
    interval score ``-inf``.  ``keep_field`` retains the full ``n**Q`` CLF array.

    Raises
    ------
    BudgetExceeded
        If ``(nx * ny) ** Q`` exceeds ``budget``.
    """
    t0 = time.perf_counter()
    nodes = box.points()
    n = len(nodes)
    Q = obs.num_emitters
    evaluations = n**Q
    if evaluations > budget:
        raise BudgetExceeded(f"{evaluations} joint evaluations exceed the budget of {budget}")

    if Q == 1:
        field = np.zeros(n)
    elif Q == 2:
        field = np.zeros((n, n))
        singular = np.zeros((n, n), dtype=bool)
    else:
        field = np.zeros((n,) * Q)
        pairs = list(itertools.combinations(range(Q), 2))

    for l in range(obs.geometry.num_receivers):
        for k in range(obs.geometry.num_intervals):
            st = obs.geometry.state(l, k)
            r = obs.samples[l, k].reshape(-1)
            G = [_node_columns(obs, st, k, q, nodes) for q in range(Q)]
            z = [g.conj() @ r for g in G]
            d = [np.einsum("ij,ij->i", g.conj(), g).real for g in G]
            if Q == 1:
                field += np.abs(z[0]) ** 2 / d[0]
            elif Q == 2:
                C = G[0].conj() @ G[1].T
                det = d[0][:, None] * d[1][None, :] - np.abs(C) ** 2
                num = (
                    d[1][None, :] * (np.abs(z[0]) ** 2)[:, None]
                    + d[0][:, None] * (np.abs(z[1]) ** 2)[None, :]
                    - 2.0 * np.real(z[0].conj()[:, None] * C * z[1][None, :])
                )
                # 2x2 Hermitian eigenvalues give the condition number in closed form
                rad = np.sqrt(0.25 * (d[0][:, None] - d[1][None, :]) ** 2 + np.abs(C) ** 2)
                mid = 0.5 * (d[0][:, None] + d[1][None, :])
                singular |= (mid - rad) * _KAPPA_MAX < (mid + rad)
                with np.errstate(divide="ignore", invalid="ignore"):
                    field += num / det
            else:
                cross = {(i, j): G[i].conj() @ G[j].T for i, j in pairs}
                for idx in np.ndindex(*(n,) * Q):
                    gram = np.diag([d[q][idx[q]] for q in range(Q)]).astype(complex)
                    for i, j in pairs:
                        gram[i, j] = cross[i, j][idx[i], idx[j]]
                        gram[j, i] = np.conj(gram[i, j])
                    if np.linalg.cond(gram) > _KAPPA_MAX:
                        field[idx] = -np.inf
                        continue
                    zz = np.array([z[q][idx[q]] for q in range(Q)])
                    field[idx] += float(np.real(np.vdot(zz, np.linalg.solve(gram, zz))))

    if Q == 2:
        field[singular] = -np.inf
    flat = int(np.argmax(field))
    index = np.unravel_index(flat, field.shape)
    argmax = nodes[list(index)]
    elapsed = time.perf_counter() - t0
    return GridSearchResult(
        argmax, tuple(int(i) for i in index), float(field.flat[flat]),
        field if (keep_field or Q == 1) else None, evaluations, elapsed,
    )


def write_field_csv(path, result: GridSearchResult, box: SearchBox) -> None:
    """Dump the single-emitter CLF field as ``x,y,clf`` rows."""
    if result.field is None or result.field.ndim != 1:
        raise ValueError("only a single-emitter field can be written")
    with open(path, "w") as fh:
        fh.write("x,y,clf\n")
        for (x, y), v in zip(box.points(), result.field):
            fh.write(f"{x:.6f},{y:.6f},{v:.12g}\n")
