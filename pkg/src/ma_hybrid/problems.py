"""Catalog of test problems and error evaluation against exact solutions.

Each problem carries a positive right-hand side f, Dirichlet data, an
optional convex exact solution, and mask heuristics that reproduce the
intended region split.  f is only ever sampled at interior nodes (P4's f
blows up at the corner node (1,1), which no operator reads).  All callables
are dtype-preserving so the high-accuracy verification can run them in
extended precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import GridSpec, max_norm, h1_seminorm, restrict
from .hybrid import MaskHeuristics, RegionMask, hybrid_norm

__all__ = [
    "Problem",
    "catalog",
    "problem_by_name",
    "sample_f",
    "sample_g",
    "errors_vs_exact",
    "VerifyReport",
    "verify_problem",
]


@dataclass(frozen=True)
class Problem:
    name: str
    f: Callable
    g: Callable
    exact_u: Callable | None = None
    heuristics: MaskHeuristics = field(default_factory=MaskHeuristics)
    degenerate: bool = False
    notes: str = ""
    # distance to the known non-smooth loci of exact_u, for verification
    singularity_distance: Callable | None = None


def _p3_rho(x, y):
    return np.hypot(x - 0.5, y - 0.5)


def catalog() -> list[Problem]:
    """The built-in test problems.

    P1  quadratic bowl, f = 1 (both schemes exact).
    P2  u = exp(|x|^2/2), the classic smooth radial benchmark.
    P3  C^1 cone-like solution flat on a disc; f vanishes there, outside
        the f > 0 hypothesis, so it is flagged degenerate.
    P4  smooth inside but with unbounded gradient at the corner (1,1).
    """
    p1 = Problem(
        name="P1",
        f=lambda x, y: 1.0 + 0.0 * x,
        g=lambda x, y: 0.5 * (x * x + y * y),
        exact_u=lambda x, y: 0.5 * (x * x + y * y),
        heuristics=MaskHeuristics(),
        notes="smooth quadratic; discrete schemes are exact",
    )
    p2 = Problem(
        name="P2",
        f=lambda x, y: (1.0 + x * x + y * y) * np.exp(x * x + y * y),
        g=lambda x, y: np.exp((x * x + y * y) / 2.0),
        exact_u=lambda x, y: np.exp((x * x + y * y) / 2.0),
        heuristics=MaskHeuristics(),
        notes="smooth strictly convex exponential",
    )
    p3 = Problem(
        name="P3",
        f=lambda x, y: np.maximum(1.0 - 0.2 / np.maximum(_p3_rho(x, y), 1e-300), 0.0),
        g=lambda x, y: 0.5 * np.maximum(_p3_rho(x, y) - 0.2, 0.0) ** 2,
        exact_u=lambda x, y: 0.5 * np.maximum(_p3_rho(x, y) - 0.2, 0.0) ** 2,
        heuristics=MaskHeuristics(f_min=0.1),
        degenerate=True,
        notes="C^1 only; f vanishes on the disc |x - x0| <= 0.2",
        singularity_distance=lambda x, y: np.abs(_p3_rho(x, y) - 0.2),
    )
    p4 = Problem(
        name="P4",
        f=lambda x, y: 2.0 / (2.0 - x * x - y * y) ** 2,
        g=lambda x, y: -np.sqrt(2.0 - x * x - y * y),
        exact_u=lambda x, y: -np.sqrt(2.0 - x * x - y * y),
        heuristics=MaskHeuristics(f_max=50.0),
        notes="smooth inside; gradient blow-up at the corner (1,1)",
        singularity_distance=lambda x, y: np.hypot(x - 1.0, y - 1.0),
    )
    return [p1, p2, p3, p4]


def problem_by_name(name: str) -> Problem:
    for p in catalog():
        if p.name == name:
            return p
    known = ", ".join(p.name for p in catalog())
    raise ValueError(f"unknown problem '{name}'; available: {known}")


def sample_f(problem: Problem, g: GridSpec) -> np.ndarray:
    """f at interior nodes (zero elsewhere; no operator reads boundary f)."""
    return restrict(problem.f, g, where=g.interior())


def sample_g(problem: Problem, g: GridSpec) -> np.ndarray:
    """Dirichlet data at boundary nodes (zero elsewhere)."""
    return restrict(problem.g, g, where=g.boundary())


def errors_vs_exact(u_h: np.ndarray, problem: Problem, mask: RegionMask) -> dict:
    """Error of u_h against the restricted exact solution, in the norms the
    two regions are controlled in: sup on the singular nodes, H1 seminorm
    on the core, the hybrid norm, and the global interior sup."""
    if problem.exact_u is None:
        raise ValueError(f"problem {problem.name} has no exact solution")
    g = mask.grid
    e = u_h - restrict(problem.exact_u, g)
    return {
        "err_max_singular": max_norm(e, mask.singular) if mask.singular.any() else 0.0,
        "err_h1_regular": h1_seminorm(e, mask.core, g) if mask.core.any() else 0.0,
        "err_hybrid": hybrid_norm(e, mask),
        "err_max_global": max_norm(e, g.interior()),
    }


@dataclass
class VerifyReport:
    checked: int
    failed: int
    worst_rel_err: float
    failures: tuple = ()

    @property
    def ok(self) -> bool:
        return self.failed == 0


def _hessian_fd(u, x, y, d):
    """Richardson-extrapolated central second differences at step d, 2d."""

    def at(dd):
        uxx = (u(x + dd, y) - 2.0 * u(x, y) + u(x - dd, y)) / dd ** 2
        uyy = (u(x, y + dd) - 2.0 * u(x, y) + u(x, y - dd)) / dd ** 2
        uxy = (u(x + dd, y + dd) - u(x + dd, y - dd)
               - u(x - dd, y + dd) + u(x - dd, y - dd)) / (4.0 * dd ** 2)
        return uxx, uyy, uxy

    fine = at(d)
    coarse = at(2.0 * d)
    return tuple((4.0 * a - b) / 3.0 for a, b in zip(fine, coarse))


def verify_problem(problem: Problem, samples: int = 10_000, *, seed: int = 0,
                   step: float = 1e-5, rel_tol: float = 1e-6,
                   standoff: float = 0.05, fvals: Callable | None = None) -> VerifyReport:
    """Check det D^2 exact_u = f at random interior points.

    Second derivatives come from Richardson-extrapolated central
    differences evaluated in extended precision (double precision cannot
    reach the tolerance at this step size).  Points within ``standoff`` of
    the problem's known singular loci are skipped.  ``fvals`` substitutes
    an alternative right-hand side (used to test sensitivity).
    """
    if problem.exact_u is None:
        raise ValueError(f"problem {problem.name} has no exact solution")
    rng = np.random.default_rng(seed)
    ld = np.longdouble
    d = ld(step)
    f = fvals if fvals is not None else problem.f
    margin = 1e-3
    pts = rng.uniform(margin, 1.0 - margin, size=(samples, 2))
    if problem.singularity_distance is not None:
        keep = problem.singularity_distance(pts[:, 0], pts[:, 1]) >= standoff
        pts = pts[keep]
    x = pts[:, 0].astype(ld)
    y = pts[:, 1].astype(ld)
    uxx, uyy, uxy = _hessian_fd(problem.exact_u, x, y, d)
    det = uxx * uyy - uxy * uxy
    fv = f(x, y)
    rel = np.abs((det - fv).astype(float)) / np.maximum(1.0, np.abs(fv.astype(float)))
    bad = rel > rel_tol
    failures = tuple(
        (float(x[k]), float(y[k]), float(rel[k]))
        for k in np.nonzero(bad)[0][:16]
    )
    return VerifyReport(
        checked=int(len(pts)),
        failed=int(bad.sum()),
        worst_rel_err=float(rel.max()) if len(rel) else 0.0,
        failures=failures,
    )
