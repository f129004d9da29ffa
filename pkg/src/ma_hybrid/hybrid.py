"""Region partition, the hybrid operator, discrete convexity, hybrid norm.

Interior nodes split into a regular core (divergence-form scheme) and a
singular set (wide-stencil monotone scheme).  Heuristics flag tentative
singular nodes; normalization then reclassifies every tentatively regular
node whose divergence-form footprint touches a flagged node, the lattice
boundary, or leaves the lattice.  The reclassified shell is recorded as the
``interface``: it carries the zero Dirichlet data of the core Poisson
preconditioner and separates the core from the boundary, which is what
makes the hybrid norm a norm.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .grid import GridSpec, max_norm, h1_seminorm
from .diffops import (
    det_divergence_form,
    discrete_hessian,
    poisson_solve,
    poincare_constant,
    sym,
)
from .monotone import (
    DirectionSet,
    det_wide_stencil_pos_field,
    min_second_difference_field,
)

__all__ = [
    "MaskHeuristics",
    "RegionMask",
    "MR_FOOTPRINT",
    "build_mask",
    "mask_from_regular",
    "all_regular_mask",
    "all_singular_mask",
    "interface_violations",
    "hybrid_residual",
    "ConvexityReport",
    "is_discrete_convex",
    "hybrid_norm",
    "precondition",
    "save_mask",
    "load_mask",
]

# Node offsets read by the divergence-form operator: the backward divergence
# pulls the Hessian/gradient footprints from x, x-e1 and x-e2.
MR_FOOTPRINT = (
    (0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1),
    (-2, 0), (0, -2), (-1, -1), (-2, 1), (1, -2),
)


@dataclass(frozen=True)
class MaskHeuristics:
    """Thresholds flagging nodes singular a priori.

    Nodes where f falls outside [f_min, f_max], inside any user box, or
    within ``boundary_margin`` layers of the boundary are flagged.  Boxes
    are ((x1_lo, x1_hi), (x2_lo, x2_hi)) in physical coordinates.
    """

    f_min: float = 1e-8
    f_max: float = 1e8
    boundary_margin: int = 0
    user_boxes: tuple = ()

    def __post_init__(self):
        if not (0.0 < self.f_min < self.f_max):
            raise ValueError("need 0 < f_min < f_max")
        if self.boundary_margin < 0:
            raise ValueError("boundary_margin must be >= 0")


class RegionMask:
    """Partition of the interior into regular core and singular nodes.

    Immutable after construction.  ``interface`` marks the formerly regular
    shell reclassified by normalization (a subset of ``singular``); masks
    loaded from file have an empty interface record.
    """

    def __init__(self, grid: GridSpec, core: np.ndarray,
                 interface: np.ndarray | None = None):
        core = np.array(core, dtype=bool)
        if core.shape != (grid.npts, grid.npts):
            raise ValueError("core mask has wrong shape")
        interior = grid.interior()
        if (core & ~interior).any():
            raise ValueError("core nodes must be interior nodes")
        ok = np.zeros_like(core)
        ok[2:grid.m, 2:grid.m] = True
        if (core & ~ok).any():
            raise ValueError("core contains nodes where the divergence-form "
                             "footprint leaves the lattice")
        if interface is None:
            interface = np.zeros_like(core)
        interface = np.array(interface, dtype=bool)
        singular = interior & ~core
        if (interface & ~singular).any():
            raise ValueError("interface nodes must be singular interior nodes")
        for arr in (core, interface, singular):
            arr.setflags(write=False)
        self.grid = grid
        self.core = core
        self.interface = interface
        self.singular = singular

    @cached_property
    def poincare(self) -> float | None:
        """Poincare constant of the regular core, or None if the core is empty."""
        if not self.core.any():
            return None
        return poincare_constant(self.core, self.grid)

    def counts(self) -> dict:
        return {
            "core": int(self.core.sum()),
            "interface": int(self.interface.sum()),
            "singular": int(self.singular.sum()),
        }


def _shifted(mask: np.ndarray, dp: int, dq: int) -> np.ndarray:
    """shifted[x] = mask[x + (dp, dq)], False where the shift leaves the grid."""
    out = np.zeros_like(mask)
    n0, n1 = mask.shape
    i0, i1 = max(0, -dp), n0 - max(0, dp)
    j0, j1 = max(0, -dq), n1 - max(0, dq)
    out[i0:i1, j0:j1] = mask[i0 + dp:i1 + dp, j0 + dq:j1 + dq]
    return out


def _erode(allowed: np.ndarray) -> np.ndarray:
    """Nodes whose whole divergence-form footprint lies in ``allowed``."""
    ok = allowed.copy()
    for dp, dq in MR_FOOTPRINT:
        if (dp, dq) == (0, 0):
            continue
        ok &= _shifted(allowed, dp, dq)
    return ok


def mask_from_regular(g: GridSpec, tentative_regular: np.ndarray) -> RegionMask:
    """Normalize a tentative regular labeling into a RegionMask.

    A tentatively regular node stays in the core only if its whole
    divergence-form footprint consists of tentatively regular nodes; the
    rest of the tentative set becomes the interface.
    """
    tentative = np.asarray(tentative_regular, dtype=bool) & g.interior()
    core = _erode(tentative)
    return RegionMask(g, core, interface=tentative & ~core)


def all_singular_mask(g: GridSpec) -> RegionMask:
    return mask_from_regular(g, np.zeros((g.npts, g.npts), dtype=bool))


def all_regular_mask(g: GridSpec) -> RegionMask:
    """Largest admissible core; the interface ring is still singular."""
    return mask_from_regular(g, g.interior())


def build_mask(fvals: np.ndarray, heur: MaskHeuristics, g: GridSpec,
               *, allow_nonpositive_f: bool = False) -> RegionMask:
    """Threshold-based mask: flag f outside [f_min, f_max], boxes, margin.

    ``fvals`` needs meaningful values on interior nodes only.  A
    nonpositive f anywhere in the interior rejects the problem unless
    ``allow_nonpositive_f`` is set (degenerate catalog cases); flagged
    nodes end up singular either way via the f_min threshold.
    """
    interior = g.interior()
    if not allow_nonpositive_f and (fvals[interior] <= 0.0).any():
        raise ValueError("f must be positive at interior nodes")
    flagged = (fvals < heur.f_min) | (fvals > heur.f_max)
    if heur.boundary_margin > 0:
        X = np.arange(g.npts)
        I, J = np.meshgrid(X, X, indexing="ij")
        depth = np.minimum(np.minimum(I, J), np.minimum(g.m - I, g.m - J))
        flagged |= depth <= heur.boundary_margin
    if heur.user_boxes:
        X1, X2 = g.nodes()
        for (x1lo, x1hi), (x2lo, x2hi) in heur.user_boxes:
            flagged |= (X1 >= x1lo) & (X1 <= x1hi) & (X2 >= x2lo) & (X2 <= x2hi)
    return mask_from_regular(g, interior & ~flagged)


def interface_violations(mask: RegionMask) -> int:
    """Core nodes whose footprint touches a heuristically singular or boundary node.

    Zero for any normalized mask: normalization is idempotent.
    """
    allowed = mask.core | mask.interface
    ok = _erode(allowed)
    return int((mask.core & ~ok).sum())


def hybrid_residual(v: np.ndarray, mask: RegionMask, fvals: np.ndarray,
                    dirs: DirectionSet) -> np.ndarray:
    """The hybrid operator: clipped wide-stencil determinant minus f on the
    singular nodes, divergence-form determinant minus f on the core.

    Returns a full array that is zero on the boundary (where the Dirichlet
    condition is enforced exactly).
    """
    g = mask.grid
    out = np.zeros_like(v)
    ms = det_wide_stencil_pos_field(v, g, dirs)
    out[mask.singular] = ms[mask.singular] - fvals[mask.singular]
    if mask.core.any():
        mr = det_divergence_form(v, g)
        out[mask.core] = mr[mask.core] - fvals[mask.core]
    return out


@dataclass
class ConvexityReport:
    ok: bool
    worst_min_second_diff: float | None
    worst_hessian_eig: float | None
    tol: float
    offending: tuple = ()


def is_discrete_convex(v: np.ndarray, mask: RegionMask, dirs: DirectionSet,
                       tol: float = 1e-8) -> ConvexityReport:
    """Discrete convexity: directional second differences nonnegative on the
    singular nodes, symmetrized discrete Hessian PSD on the core (both up
    to -tol).  2x2 eigenvalues in closed form."""
    g = mask.grid
    offending = []
    worst_l1 = None
    if mask.singular.any():
        l1 = min_second_difference_field(v, g, dirs)
        vals = l1[mask.singular]
        worst_l1 = float(vals.min())
        if worst_l1 < -tol:
            bad = mask.singular & (l1 < -tol)
            offending.extend((int(i), int(j), "singular")
                             for i, j in zip(*np.nonzero(bad)))
    worst_eig = None
    if mask.core.any():
        H = sym(discrete_hessian(v, g))
        a = H[..., 0, 0]
        d = H[..., 1, 1]
        b = H[..., 0, 1]
        lam_min = 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b * b)
        vals = lam_min[mask.core]
        worst_eig = float(vals.min())
        if worst_eig < -tol:
            bad = mask.core & (lam_min < -tol)
            offending.extend((int(i), int(j), "core")
                             for i, j in zip(*np.nonzero(bad)))
    ok = ((worst_l1 is None or worst_l1 >= -tol)
          and (worst_eig is None or worst_eig >= -tol))
    return ConvexityReport(ok=ok, worst_min_second_diff=worst_l1,
                           worst_hessian_eig=worst_eig, tol=tol,
                           offending=tuple(offending[:16]))


def hybrid_norm(v: np.ndarray, mask: RegionMask, cp: float | None = None) -> float:
    """max of the sup norm on the singular nodes and the scaled H1 seminorm
    on the core, the scale being h^{-1} over the core's Poincare constant."""
    g = mask.grid
    sing = max_norm(v, mask.singular) if mask.singular.any() else 0.0
    if not mask.core.any():
        return sing
    if cp is None:
        cp = mask.poincare
    reg = h1_seminorm(v, mask.core, g) / (g.h * cp)
    return max(sing, reg)


def precondition(v: np.ndarray, mask: RegionMask) -> np.ndarray:
    """Identity on the singular nodes; inverse Dirichlet Laplacian (zero
    interface data) on the core.  Boundary values pass through."""
    w = v.copy()
    if mask.core.any():
        zeros = np.zeros_like(v)
        solved = poisson_solve(v, zeros, mask.core, mask.grid)
        w[mask.core] = solved[mask.core]
    return w


def save_mask(mask: RegionMask, path) -> None:
    """Write the three-way node labels, LF-terminated, one char per node:
    'r' core, 's' singular, 'b' boundary; rows from x2 = 1 down to x2 = 0."""
    g = mask.grid
    lines = []
    for j in range(g.m, -1, -1):
        row = []
        for i in range(g.npts):
            if i == 0 or j == 0 or i == g.m or j == g.m:
                row.append("b")
            elif mask.core[i, j]:
                row.append("r")
            else:
                row.append("s")
        lines.append("".join(row))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def load_mask(path, g: GridSpec | None = None) -> RegionMask:
    """Read a mask file written by :func:`save_mask`.

    The labels are taken as-is (no renormalization), so a save/load
    round-trip is bit-exact; structural errors raise ValueError.
    """
    text = Path(path).read_bytes().decode("ascii")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    npts = len(lines)
    if npts < 5:
        raise ValueError(f"malformed mask file {path}: expected at least 5 rows")
    if any(len(line) != npts for line in lines):
        raise ValueError(f"malformed mask file {path}: rows must be square")
    bad = set("".join(lines)) - set("rsb")
    if bad:
        raise ValueError(f"malformed mask file {path}: unknown labels {sorted(bad)}")
    m = npts - 1
    if g is None:
        g = GridSpec(1.0 / m)
    elif g.npts != npts:
        raise ValueError(f"mask file {path} is {npts}x{npts} but the grid has "
                         f"{g.npts} nodes per axis")
    core = np.zeros((npts, npts), dtype=bool)
    for row, line in enumerate(lines):
        j = m - row
        for i, ch in enumerate(line):
            on_bdry = i == 0 or j == 0 or i == m or j == m
            if on_bdry != (ch == "b"):
                raise ValueError(f"malformed mask file {path}: label '{ch}' at "
                                 f"node ({i},{j}) is inconsistent with the boundary")
            if ch == "r":
                core[i, j] = True
    return RegionMask(g, core)
