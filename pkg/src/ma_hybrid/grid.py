"""Uniform grid on the closed unit square, node sets, and discrete norms.

The mesh is the lattice [0,1]^2 intersected with h*Z^2 for a mesh size h
with 1/h an integer.  A mesh function is a dense (m+1, m+1) float array
indexed as ``v[i, j]`` for the node (i*h, j*h); node sets are boolean arrays
of the same shape.  Vector and matrix fields append trailing axes of length
2 and (2, 2).

Summation conventions.  The weighted inner product sums h^2 * v * w over an
explicit node set S.  The H1 seminorm over S sums, for each axis, the
squared forward differences over every difference pair that touches S, i.e.
over the nodes {x : x in S or x + h*e_i in S}.  With this convention the
summation-by-parts identity

    <-lap_h v, w>_S  =  sum_i  h^2 * sum_{pairs touching S} d+_i v * d+_i w

is exact for v, w vanishing on the one-layer shell around S, and the
smallest Dirichlet eigenvalue of -lap_h on S is exactly the optimal
constant in the discrete Poincare inequality measured in these norms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "GridSpec",
    "restrict",
    "max_norm",
    "l2_inner",
    "l2_norm",
    "h1_inner",
    "h1_seminorm",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the closed unit square with mesh size h, 1/h integral.

    Only the planar case is supported; ``n`` is carried for clarity.  The
    minimum resolution is h = 1/4 (a 5x5 lattice), the coarsest grid on
    which every discrete operator has at least one admissible node.
    """

    h: float
    n: int = 2

    def __post_init__(self):
        if self.n != 2:
            raise ValueError(f"only n=2 is supported, got n={self.n}")
        if not (0.0 < self.h <= 0.25):
            raise ValueError(f"mesh size must satisfy 0 < h <= 1/4, got h={self.h}")
        m = round(1.0 / self.h)
        if abs(m * self.h - 1.0) > 1e-9 * m:
            raise ValueError(f"1/h must be an integer, got h={self.h}")

    @property
    def m(self) -> int:
        """Number of subdivisions per axis (1/h)."""
        return round(1.0 / self.h)

    @property
    def npts(self) -> int:
        """Nodes per axis, m + 1."""
        return self.m + 1

    def nodes(self):
        """Coordinate arrays X1, X2 of shape (npts, npts), X1[i, j] = i*h."""
        x = np.arange(self.npts) * self.h
        return np.meshgrid(x, x, indexing="ij")

    def all_nodes(self) -> np.ndarray:
        return np.ones((self.npts, self.npts), dtype=bool)

    def interior(self) -> np.ndarray:
        mask = np.zeros((self.npts, self.npts), dtype=bool)
        mask[1:-1, 1:-1] = True
        return mask

    def boundary(self) -> np.ndarray:
        return ~self.interior()


def restrict(v: Callable, g: GridSpec, where: np.ndarray | None = None) -> np.ndarray:
    """Sample a function of (x1, x2) at the grid nodes.

    ``where`` restricts sampling to a node set (values elsewhere are zero);
    by default the whole lattice is sampled.  Non-finite samples are
    rejected.
    """
    X1, X2 = g.nodes()
    if where is None:
        vals = np.asarray(v(X1, X2), dtype=float)
        vals = np.broadcast_to(vals, X1.shape).copy()
        if not np.isfinite(vals).all():
            raise ValueError("restriction produced non-finite values")
        return vals
    out = np.zeros_like(X1)
    vals = np.asarray(v(X1[where], X2[where]), dtype=float)
    vals = np.broadcast_to(vals, X1[where].shape)
    if not np.isfinite(vals).all():
        raise ValueError("restriction produced non-finite values on the node set")
    out[where] = vals
    return out


def max_norm(v: np.ndarray, T: np.ndarray) -> float:
    """Max of |v| over the node set T."""
    T = np.asarray(T, dtype=bool)
    if not T.any():
        raise ValueError("max_norm over an empty node set")
    return float(np.abs(v[T]).max())


def l2_inner(v: np.ndarray, w: np.ndarray, S: np.ndarray, g: GridSpec) -> float:
    """Weighted inner product h^2 * sum_{x in S} v(x) w(x)."""
    S = np.asarray(S, dtype=bool)
    return float(g.h * g.h * np.sum(v[S] * w[S]))


def l2_norm(v: np.ndarray, S: np.ndarray, g: GridSpec) -> float:
    return float(np.sqrt(max(l2_inner(v, v, S, g), 0.0)))


def _check_forward_ok(S: np.ndarray, g: GridSpec) -> None:
    if S[g.m, :].any() or S[:, g.m].any():
        raise ValueError("S contains a node whose forward neighbor is off the grid")


def h1_inner(v: np.ndarray, w: np.ndarray, S: np.ndarray, g: GridSpec) -> float:
    """Forward-difference H1 pairing over the difference pairs touching S.

    For each axis i the sum runs over {x : x in S or x + h*e_i in S}; see
    the module docstring for why this index set is the one that makes
    summation by parts exact.
    """
    S = np.asarray(S, dtype=bool)
    _check_forward_ok(S, g)
    h = g.h
    total = 0.0
    # axis 0: forward differences live at i = 0..m-1
    B0 = S[:-1, :] | S[1:, :]
    dv = (v[1:, :] - v[:-1, :]) / h
    dw = (w[1:, :] - w[:-1, :]) / h
    total += np.sum(dv[B0] * dw[B0])
    # axis 1
    B1 = S[:, :-1] | S[:, 1:]
    dv = (v[:, 1:] - v[:, :-1]) / h
    dw = (w[:, 1:] - w[:, :-1]) / h
    total += np.sum(dv[B1] * dw[B1])
    return float(h * h * total)


def h1_seminorm(v: np.ndarray, S: np.ndarray, g: GridSpec) -> float:
    """Discrete H1 seminorm of v with the pairing of :func:`h1_inner`."""
    return float(np.sqrt(max(h1_inner(v, v, S, g), 0.0)))
