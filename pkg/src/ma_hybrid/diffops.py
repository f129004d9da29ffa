"""Difference operators, the divergence-form determinant, and Poisson tools.

All field-valued operators return full (npts, npts, ...) arrays whose
entries are meaningful only where the stencil fits inside the lattice;
the companion ``*_nodes`` helpers return that node set.  Values outside it
are zero and must not be read.

The divergence-form Monge-Ampere operator is

    (1/2) div_h [ (cof sym Hd v)^T Dh v ]

with Dh the forward gradient, Hd the backward-of-forward second difference
matrix, and div_h the backward divergence.  It reproduces det A exactly on
quadratics (1/2) x^T A x + b^T x + c.
"""

from __future__ import annotations

import numpy as np

from .grid import GridSpec

__all__ = [
    "SolverFailure",
    "forward_diff",
    "backward_diff",
    "grad_forward",
    "grad_backward",
    "div_backward",
    "discrete_hessian",
    "hessian_nodes",
    "sym",
    "cof",
    "frobenius",
    "det_divergence_form",
    "det_divergence_form_nodes",
    "laplacian",
    "poisson_solve",
    "poincare_constant",
]


class SolverFailure(RuntimeError):
    """An iterative linear/eigen solve stopped short of its tolerance."""

    def __init__(self, message: str, residual: float | None = None,
                 rayleigh: float | None = None):
        super().__init__(message)
        self.residual = residual
        self.rayleigh = rayleigh


def _check_node(g: GridSpec, i: int, j: int) -> None:
    if not (0 <= i <= g.m and 0 <= j <= g.m):
        raise ValueError(f"node ({i},{j}) outside the lattice")


def forward_diff(v: np.ndarray, g: GridSpec, axis: int, at: tuple[int, int]) -> float:
    """(v(x + h e_axis) - v(x)) / h at a single node."""
    i, j = at
    _check_node(g, i, j)
    di, dj = (1, 0) if axis == 0 else (0, 1)
    _check_node(g, i + di, j + dj)
    return float((v[i + di, j + dj] - v[i, j]) / g.h)


def backward_diff(v: np.ndarray, g: GridSpec, axis: int, at: tuple[int, int]) -> float:
    """(v(x) - v(x - h e_axis)) / h at a single node."""
    i, j = at
    _check_node(g, i, j)
    di, dj = (1, 0) if axis == 0 else (0, 1)
    _check_node(g, i - di, j - dj)
    return float((v[i, j] - v[i - di, j - dj]) / g.h)


def grad_forward(v: np.ndarray, g: GridSpec) -> np.ndarray:
    """Forward gradient field; valid where both forward neighbors exist."""
    out = np.zeros(v.shape + (2,))
    out[:-1, :, 0] = (v[1:, :] - v[:-1, :]) / g.h
    out[:, :-1, 1] = (v[:, 1:] - v[:, :-1]) / g.h
    return out


def grad_backward(v: np.ndarray, g: GridSpec) -> np.ndarray:
    """Backward gradient field; valid where both backward neighbors exist."""
    out = np.zeros(v.shape + (2,))
    out[1:, :, 0] = (v[1:, :] - v[:-1, :]) / g.h
    out[:, 1:, 1] = (v[:, 1:] - v[:, :-1]) / g.h
    return out


def div_backward(F: np.ndarray, g: GridSpec) -> np.ndarray:
    """Backward divergence of a vector field; valid for i >= 1 and j >= 1."""
    out = np.zeros(F.shape[:2])
    out[1:, 1:] = (F[1:, 1:, 0] - F[:-1, 1:, 0] + F[1:, 1:, 1] - F[1:, :-1, 1]) / g.h
    return out


def hessian_nodes(g: GridSpec) -> np.ndarray:
    """Node set where the discrete Hessian is defined (the interior)."""
    return g.interior()


def discrete_hessian(v: np.ndarray, g: GridSpec) -> np.ndarray:
    """Backward-of-forward second differences, entry (a,b) = d-_b d+_a v.

    Defined on the interior.  The matrix is not symmetric in general: the
    two mixed entries agree only up to O(h), so consumers symmetrize
    explicitly where a symmetric Hessian is required.
    """
    h = g.h
    m = g.m
    H = np.zeros(v.shape + (2, 2))
    I = slice(1, m)
    for a in range(2):
        da = np.zeros_like(v)
        if a == 0:
            da[:-1, :] = (v[1:, :] - v[:-1, :]) / h
        else:
            da[:, :-1] = (v[:, 1:] - v[:, :-1]) / h
        H[I, I, a, 0] = (da[1:m, 1:m] - da[0:m - 1, 1:m]) / h
        H[I, I, a, 1] = (da[1:m, 1:m] - da[1:m, 0:m - 1]) / h
    return H


def sym(M: np.ndarray) -> np.ndarray:
    """Symmetric part (M + M^T)/2, acting on trailing (2, 2) axes."""
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def cof(M: np.ndarray) -> np.ndarray:
    """Cofactor matrix of 2x2 blocks: cof [[a,b],[c,d]] = [[d,-c],[-b,a]]."""
    out = np.empty_like(M)
    out[..., 0, 0] = M[..., 1, 1]
    out[..., 0, 1] = -M[..., 1, 0]
    out[..., 1, 0] = -M[..., 0, 1]
    out[..., 1, 1] = M[..., 0, 0]
    return out


def frobenius(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Frobenius inner product A:B over trailing (2, 2) axes."""
    return np.sum(A * B, axis=(-2, -1))


def det_divergence_form_nodes(g: GridSpec) -> np.ndarray:
    """Nodes where the full composite footprint fits: [2, m-1]^2."""
    mask = np.zeros((g.npts, g.npts), dtype=bool)
    mask[2:g.m, 2:g.m] = True
    return mask


def det_divergence_form(v: np.ndarray, g: GridSpec) -> np.ndarray:
    """Divergence-form Monge-Ampere operator (see module docstring).

    The backward divergence needs the Hessian one layer back along each
    axis, so the evaluation set is the interior shrunk by one backward
    layer, ``det_divergence_form_nodes``.
    """
    m = g.m
    H = discrete_hessian(v, g)
    C = cof(sym(H))
    D = grad_forward(v, g)
    # G_i = sum_j C_ji D_j  ((cof sym Hd)^T Dh), valid on the interior
    G = np.einsum("...ji,...j->...i", C, D)
    out = np.zeros_like(v)
    sl = slice(2, m)
    out[sl, sl] = (
        (G[2:m, 2:m, 0] - G[1:m - 1, 2:m, 0])
        + (G[2:m, 2:m, 1] - G[2:m, 1:m - 1, 1])
    ) / (g.h * g.n)
    return out


def laplacian(v: np.ndarray, g: GridSpec) -> np.ndarray:
    """Five-point Laplacian, valid on the interior."""
    out = np.zeros_like(v)
    h2 = g.h * g.h
    out[1:-1, 1:-1] = (
        v[2:, 1:-1] + v[:-2, 1:-1] + v[1:-1, 2:] + v[1:-1, :-2] - 4.0 * v[1:-1, 1:-1]
    ) / h2
    return out


def _neighbor_sum(z: np.ndarray) -> np.ndarray:
    out = np.zeros_like(z)
    out[1:-1, 1:-1] = z[2:, 1:-1] + z[:-2, 1:-1] + z[1:-1, 2:] + z[1:-1, :-2]
    return out


def _divergence_form_apply(z: np.ndarray, coeff: np.ndarray, S: np.ndarray,
                           g: GridSpec) -> np.ndarray:
    """div_h [ coeff^T D_h z ] on S, for z supported on S."""
    h = g.h
    z = np.where(S, z, 0.0)
    D = np.zeros(z.shape + (2,))
    D[:-1, :, 0] = (z[1:, :] - z[:-1, :]) / h
    D[:, :-1, 1] = (z[:, 1:] - z[:, :-1]) / h
    G = np.einsum("...ji,...j->...i", coeff, D)
    out = np.zeros_like(z)
    out[1:, 1:] = (G[1:, 1:, 0] - G[:-1, 1:, 0] + G[1:, 1:, 1] - G[1:, :-1, 1]) / h
    return np.where(S, out, 0.0)


def elliptic_solve(rhs: np.ndarray, bdry: np.ndarray, S: np.ndarray, g: GridSpec,
                   *, coeff: np.ndarray | None = None, rel_tol: float = 1e-10,
                   max_iter: int | None = None) -> np.ndarray:
    """Solve div_h[coeff^T D_h w] = rhs on S with w = bdry outside S.

    ``coeff`` is a symmetric positive definite 2x2 field (identity if
    omitted, which makes this the five-point Dirichlet Poisson solve).
    The operator is self-adjoint negative definite under the grid module's
    summation-by-parts pairing, so matrix-free conjugate gradients apply;
    iterates until the max-norm residual of the original system is below
    ``rel_tol * (max|rhs on S| + 1)``, else raises :class:`SolverFailure`
    carrying the achieved residual.
    """
    S = np.asarray(S, dtype=bool)
    if S[0, :].any() or S[-1, :].any() or S[:, 0].any() or S[:, -1].any():
        raise ValueError("Dirichlet node set S must not touch the lattice boundary")
    w = np.array(bdry, dtype=float, copy=True)
    if not S.any():
        return w
    h2 = g.h * g.h
    n_unknowns = int(S.sum())
    if max_iter is None:
        max_iter = 4 * n_unknowns + 200
    tol_abs = rel_tol * (float(np.abs(rhs[S]).max()) + 1.0)

    B = np.where(S, 0.0, w)
    if coeff is None:
        def apply_neg(z):
            return np.where(S, (4.0 * z - _neighbor_sum(z)) / h2, 0.0)

        b = np.where(S, -rhs + _neighbor_sum(B) / h2, 0.0)
    else:
        def apply_neg(z):
            return -_divergence_form_apply(z, coeff, S, g)

        # move the Dirichlet data to the right-hand side
        h = g.h
        D = np.zeros(B.shape + (2,))
        D[:-1, :, 0] = (B[1:, :] - B[:-1, :]) / h
        D[:, :-1, 1] = (B[:, 1:] - B[:, :-1]) / h
        G = np.einsum("...ji,...j->...i", coeff, D)
        lapB = np.zeros_like(B)
        lapB[1:, 1:] = (G[1:, 1:, 0] - G[:-1, 1:, 0] + G[1:, 1:, 1] - G[1:, :-1, 1]) / h
        b = np.where(S, -rhs + lapB, 0.0)

    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(np.sum(r * r))
    res = float(np.abs(r[S]).max())
    it = 0
    while res > tol_abs and it < max_iter:
        Ap = apply_neg(p)
        denom = float(np.sum(p * Ap))
        if denom <= 0.0:
            break
        alpha = rs / denom
        x += alpha * p
        if (it + 1) % 64 == 0:
            r = b - apply_neg(x)
        else:
            r -= alpha * Ap
        rs_new = float(np.sum(r * r))
        p = r + (rs_new / rs) * p
        rs = rs_new
        res = float(np.abs(r[S]).max())
        it += 1
    # true residual, guarding against drift in the recurrence
    res = float(np.abs((b - apply_neg(x))[S]).max())
    if res > tol_abs:
        raise SolverFailure(
            f"elliptic solve stalled at residual {res:.3e} (target {tol_abs:.3e}) "
            f"after {it} iterations", residual=res)
    w[S] = x[S]
    return w


def poisson_solve(rhs: np.ndarray, bdry: np.ndarray, S: np.ndarray, g: GridSpec,
                  *, rel_tol: float = 1e-10, max_iter: int | None = None) -> np.ndarray:
    """Solve lap_h w = rhs on S with w = bdry outside S (Dirichlet)."""
    return elliptic_solve(rhs, bdry, S, g, rel_tol=rel_tol, max_iter=max_iter)


def psd_floor(M: np.ndarray, *, rel: float = 0.05, absolute: float = 1e-8) -> np.ndarray:
    """Clip the eigenvalues of symmetric 2x2 blocks from below.

    Each block's eigenvalues are raised to at least ``rel`` times its
    spectral radius (and at least ``absolute``), keeping the eigenvectors.
    Used to keep lagged coefficient fields safely positive definite.
    """
    a = M[..., 0, 0]
    b = 0.5 * (M[..., 0, 1] + M[..., 1, 0])
    d = M[..., 1, 1]
    mean = 0.5 * (a + d)
    spread = np.sqrt(0.25 * (a - d) ** 2 + b * b)
    lo = mean - spread
    hi = mean + spread
    floor = np.maximum(rel * np.maximum(np.abs(hi), np.abs(lo)), absolute)
    lo_c = np.maximum(lo, floor)
    hi_c = np.maximum(hi, floor)
    # rebuild from the (unchanged) eigenvectors; guard the isotropic case
    denom = np.where(spread > 0, spread, 1.0)
    ca = np.where(spread > 0, (a - mean) / denom, 0.0)
    cb = np.where(spread > 0, b / denom, 0.0)
    mean_c = 0.5 * (hi_c + lo_c)
    spread_c = 0.5 * (hi_c - lo_c)
    out = np.empty_like(M)
    out[..., 0, 0] = mean_c + spread_c * ca
    out[..., 1, 1] = mean_c - spread_c * ca
    out[..., 0, 1] = spread_c * cb
    out[..., 1, 0] = spread_c * cb
    return out


def poincare_constant(S: np.ndarray, g: GridSpec, *, tol: float = 1e-8,
                      max_iter: int = 200) -> float:
    """Optimal constant in |v|_{1,h} >= C_p ||v||_{0,h} for v vanishing off S.

    Equals sqrt of the smallest Dirichlet eigenvalue of -lap_h on S (the
    two agree exactly under the summation convention of the grid module).
    Computed by inverse power iteration to the given relative eigenvalue
    tolerance; raises :class:`SolverFailure` with the last Rayleigh
    quotient on stagnation.
    """
    S = np.asarray(S, dtype=bool)
    if not S.any():
        raise ValueError("Poincare constant of an empty node set")
    zeros = np.zeros((g.npts, g.npts))
    z = np.where(S, 1.0, 0.0)
    z /= np.sqrt(float(np.sum(z * z)))
    lam_prev = None
    lam = None
    for _ in range(max_iter):
        # y = (-lap_h)^{-1} z  via  lap_h y = -z
        y = poisson_solve(-z, zeros, S, g, rel_tol=1e-12)
        zy = float(np.sum(z * y))
        lam = float(np.sum(z * z)) / zy
        ynorm = np.sqrt(float(np.sum(y * y)))
        z = y / ynorm
        if lam_prev is not None and abs(lam - lam_prev) <= tol * abs(lam):
            return float(np.sqrt(lam))
        lam_prev = lam
    raise SolverFailure(
        f"inverse power iteration stagnated; last Rayleigh quotient {lam}",
        rayleigh=lam)
