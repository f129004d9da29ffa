"""Damped, preconditioned fixed-point iteration for the hybrid scheme.

Writing r = hybrid_residual(u) (wide-stencil branch on singular nodes,
divergence-form branch on the core), the update is

    u <- u + nu1 * r                  on singular nodes
    u <- u + nu2 * (-L_k)^{-1} r      on the regular core

where L_k z = div_h[(cof sym Hd u_k)^T D_h z] is the divergence-form
operator with its coefficient frozen at the current iterate (eigenvalues
floored to keep it positive definite), solved with zero Dirichlet data on
the interface.  Both branches damp their residual: the singular branch is
the classical Euler map for degenerate elliptic schemes, and L_k matches
the linearized divergence-form operator up to first order, so the
preconditioned core spectrum clusters on the stable side.  The frozen
coefficient makes this a Picard-type preconditioner, not a Newton step.
A constant-coefficient inverse Laplacian in place of L_k is unstable under
refinement: the mismatch with the variable-coefficient linearization
produces interface-guided eigenmodes whose real part crosses zero near
h = 1/64, which no explicit step size can damp.

Boundary values are pinned to the Dirichlet data bit for bit and never
enter the update.  Step sizes default to 0.5 / K with K estimated by
Lipschitz probes of each branch around the initial guess; backtracking
shrinks both steps whenever a trial leaves the recent residual envelope.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .grid import GridSpec, max_norm
from .diffops import (
    cof,
    det_divergence_form,
    discrete_hessian,
    elliptic_solve,
    poisson_solve,
    psd_floor,
    sym,
)
from .monotone import DirectionSet, det_wide_stencil_pos_of, lipschitz_probe, stencil_at
from .hybrid import ConvexityReport, RegionMask, hybrid_norm, hybrid_residual, is_discrete_convex
from .problems import Problem, errors_vs_exact, sample_f, sample_g

__all__ = [
    "SolverConfig",
    "SolveReport",
    "initial_guess",
    "residuals",
    "estimate_steps",
    "solve",
]

# fallbacks when a Lipschitz probe degenerates to K = 0 (constant residual)
_FALLBACK_NU1_SCALE = 0.25  # times h^2
_FALLBACK_NU2 = 0.5


@dataclass
class SolverConfig:
    """Iteration parameters.  ``None`` step sizes are probed at solve time.

    Backtracking is windowed and tolerant: a trial step is rejected only
    when it exceeds ``backtrack_growth`` times the worst of the last
    ``backtrack_window`` accepted residuals.  The two branches relax on
    different time scales, so a core move transiently lifts the interface
    residual even when the coupled iteration is contracting (the lift is
    directional, visible at arbitrarily small steps); a strict decrease
    rule would strangle the step sizes on exactly those transients, while
    runaway steps still overshoot the envelope and get shrunk.
    """

    nu_singular: float | None = None
    nu_regular: float | None = None
    tol: float = 1e-8
    hybrid_tol: float | None = None
    max_iter: int = 50_000
    backtracking: bool = True
    shrink: float = 0.5
    backtrack_window: int = 20
    backtrack_growth: float = 2.0
    stencil_radius: int = 3
    convexity_tol: float = 1e-8
    probe_seed: int = 0

    def __post_init__(self):
        if self.nu_singular is not None and self.nu_singular <= 0:
            raise ValueError("nu_singular must be positive")
        if self.nu_regular is not None and self.nu_regular <= 0:
            raise ValueError("nu_regular must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not (0.0 < self.shrink < 1.0):
            raise ValueError("shrink factor must lie in (0, 1)")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if self.stencil_radius < 1:
            raise ValueError("stencil_radius must be >= 1")
        if self.backtrack_window < 1:
            raise ValueError("backtrack_window must be >= 1")
        if self.backtrack_growth < 1.0:
            raise ValueError("backtrack_growth must be >= 1")


@dataclass
class SolveReport:
    converged: bool
    termination: str  # converged | budget | diverged | stalled | nan
    iterations: int
    res_max_history: list
    res_hybrid_history: list
    final_res_max: float
    final_res_hybrid: float
    sup_norm: float
    nu_singular: float
    nu_regular: float
    shrink_events: int
    convexity: ConvexityReport | None = None
    errors: dict | None = None

    def to_json_dict(self) -> dict:
        out = asdict(self)
        if self.convexity is not None:
            out["convexity"] = asdict(self.convexity)
        return out


def initial_guess(problem: Problem, g: GridSpec) -> np.ndarray:
    """Solve lap_h w = 2 sqrt(f) with the problem's Dirichlet data.

    det D^2 u = f with an isotropic Hessian ansatz gives trace 2 sqrt(f),
    so this Poisson solve lands on the exact solution whenever it is a
    quadratic, and otherwise provides a convex-leaning smooth start.
    """
    fvals = sample_f(problem, g)
    interior = g.interior()
    rhs = np.zeros_like(fvals)
    rhs[interior] = g.n * np.sqrt(np.maximum(fvals[interior], 0.0))
    bdry = sample_g(problem, g)
    return poisson_solve(rhs, bdry, interior, g)


def residuals(v: np.ndarray, mask: RegionMask, problem: Problem,
              radius: int = 3) -> dict:
    """Max-norm and hybrid-norm of the hybrid residual of v."""
    dirs = DirectionSet.with_radius(radius)
    fvals = sample_f(problem, mask.grid)
    r = hybrid_residual(v, mask, fvals, dirs)
    return {
        "max_norm": max_norm(r, mask.grid.interior()),
        "hybrid_norm": hybrid_norm(r, mask),
    }


def _nu_from_k(K: float, fallback: float) -> float:
    """The probe-to-step rule: half the reciprocal Lipschitz bound."""
    return 0.5 / K if K > 0.0 else fallback


def _probe_nodes(region: np.ndarray, fvals: np.ndarray, limit: int = 40) -> list:
    nodes = list(zip(*np.nonzero(region)))
    if not nodes:
        return []
    stride = max(1, len(nodes) // limit)
    chosen = nodes[::stride][:limit]
    flat = np.where(region, fvals, -np.inf)
    peak = np.unravel_index(int(np.argmax(flat)), flat.shape)
    if peak not in chosen:
        chosen.append(peak)
    return [(int(i), int(j)) for i, j in chosen]


def estimate_steps(problem: Problem, mask: RegionMask, cfg: SolverConfig,
                   *, _guess: np.ndarray | None = None) -> tuple[float, float]:
    """Step sizes 0.5/K from Lipschitz probes of the two branches.

    The probes sample stencil-value (resp. mesh-function) pairs in a tight
    neighborhood of the initial guess: the iteration only ever sees
    iterate-sized differences, and the local slope there is the one that
    governs contraction.  Configured step sizes pass through; degenerate
    probes (constant residual) fall back to 0.25 h^2 and 0.5.
    """
    g = mask.grid
    if cfg.nu_singular is not None and cfg.nu_regular is not None:
        return cfg.nu_singular, cfg.nu_regular
    guess = _guess if _guess is not None else initial_guess(problem, g)
    fvals = sample_f(problem, g)
    dirs = DirectionSet.with_radius(cfg.stencil_radius)

    nu1 = cfg.nu_singular
    if nu1 is None:
        # Perturbation scales must shrink like h^2: a value perturbation of
        # size t moves second differences by O(t / h^2), and only
        # perturbations that leave the second differences near their local
        # values measure the slope the iteration actually sees.
        probe_scales = (0.05 * g.h * g.h, 0.2 * g.h * g.h)
        K1 = 0.0
        for node in _probe_nodes(mask.singular, fvals):
            st = stencil_at(g, dirs, node)
            if not st.pairs:
                continue
            ev = lambda vec, st=st: det_wide_stencil_pos_of(vec, st)
            K1 = max(K1, lipschitz_probe(
                ev, st.value_vector(guess), 1.0, samples=6,
                scales=probe_scales, spread=probe_scales[-1],
                explore_corners=False, seed=cfg.probe_seed))
        nu1 = _nu_from_k(K1, _FALLBACK_NU1_SCALE * g.h * g.h)

    nu2 = cfg.nu_regular
    if nu2 is None:
        if not mask.core.any():
            nu2 = _FALLBACK_NU2
        else:
            core = mask.core
            interior = g.interior()
            zeros = np.zeros_like(guess)
            rng = np.random.default_rng(cfg.probe_seed)
            coeff = psd_floor(cof(sym(discrete_hessian(guess, g))))

            def core_map(v):
                r = np.where(core, det_divergence_form(v, g) - fvals, 0.0)
                return elliptic_solve(-r, zeros, core, g, coeff=coeff)

            base = core_map(guess)
            X1, X2 = g.nodes()
            smooth = np.sin(np.pi * X1) * np.sin(np.pi * X2)
            K2 = 0.0
            for delta in (1e-3, 1e-2):
                perts = [delta * smooth]
                for _ in range(3):
                    perts.append(rng.uniform(-delta, delta, size=guess.shape))
                for pert in perts:
                    pert = np.where(interior, pert, 0.0)
                    z = core_map(guess + pert)
                    num = float(np.abs((z - base)[core]).max())
                    den = float(np.abs(pert[interior]).max())
                    K2 = max(K2, num / den)
            nu2 = _nu_from_k(K2, _FALLBACK_NU2)
    return nu1, nu2


def solve(problem: Problem, mask: RegionMask,
          cfg: SolverConfig | None = None) -> tuple[np.ndarray, SolveReport]:
    """Run the damped preconditioned fixed-point iteration.

    Stops when the interior max-norm residual reaches ``cfg.tol`` (and the
    hybrid-norm residual reaches ``cfg.hybrid_tol`` when set).  A spent
    budget or divergence yields a non-converged report, not an exception;
    any NaN aborts immediately with the last finite iterate.
    """
    if cfg is None:
        cfg = SolverConfig()
    g = mask.grid
    dirs = DirectionSet.with_radius(cfg.stencil_radius)
    fvals = sample_f(problem, g)
    interior = g.interior()
    sing = mask.singular
    core = mask.core

    u = initial_guess(problem, g)
    nu1, nu2 = estimate_steps(problem, mask, cfg, _guess=u)
    scale = np.where(sing, nu1, 0.0) + np.where(core, nu2, 0.0)

    zeros = np.zeros_like(u)
    r = hybrid_residual(u, mask, fvals, dirs)
    res_max = max_norm(r, interior)
    res_hyb = hybrid_norm(r, mask)
    hist_max = [res_max]
    hist_hyb = [res_hyb]

    def done(rm, rh):
        if rm > cfg.tol:
            return False
        return cfg.hybrid_tol is None or rh <= cfg.hybrid_tol

    termination = None
    iterations = 0
    shrink_events = 0
    increases = 0

    def lagged_coeff(v):
        return psd_floor(cof(sym(discrete_hessian(v, g))))

    def direction(res, coeff):
        d = np.where(sing, res, 0.0)
        if core.any():
            z = elliptic_solve(-res, zeros, core, g, coeff=coeff)
            d[core] = z[core]
        return d

    # The preconditioned core linearization keeps a rotational component
    # (skew staggering defects), so the step is advanced with a three-stage
    # SSP composition of the damped update, whose stability region covers
    # eigenvalues near the imaginary axis.  Being a convex combination of
    # Euler maps it inherits the monotone branch's contraction; pure
    # wide-stencil masks keep the plain Euler map.
    stages = 3 if core.any() else 1

    def advance(res):
        coeff = lagged_coeff(u) if core.any() else None
        d1 = direction(res, coeff)
        u1 = u + scale * d1
        if stages == 1:
            return u1
        u2 = u + 0.25 * ((u1 + scale * direction(
            hybrid_residual(u1, mask, fvals, dirs), coeff)) - u)
        e2 = u2 + scale * direction(hybrid_residual(u2, mask, fvals, dirs), coeff)
        return u + (2.0 / 3.0) * (e2 - u)

    if done(res_max, res_hyb):
        termination = "converged"
    else:
        for _ in range(cfg.max_iter):
            ref = cfg.backtrack_growth * max(hist_max[-cfg.backtrack_window:])
            shrinks_here = 0
            while True:
                u_trial = advance(r)
                r_trial = hybrid_residual(u_trial, mask, fvals, dirs)
                m_trial = float(np.abs(r_trial[interior]).max())
                if not np.isfinite(m_trial):
                    termination = "nan"
                    break
                if not cfg.backtracking or m_trial <= ref:
                    break
                if shrinks_here >= 60:
                    termination = "stalled"
                    break
                nu1 *= cfg.shrink
                nu2 *= cfg.shrink
                scale *= cfg.shrink
                shrink_events += 1
                shrinks_here += 1
            if termination in ("nan", "stalled"):
                break
            prev = res_max
            u = u_trial
            r = r_trial
            res_max = m_trial
            res_hyb = hybrid_norm(r, mask)
            iterations += 1
            hist_max.append(res_max)
            hist_hyb.append(res_hyb)
            if not cfg.backtracking:
                increases = increases + 1 if res_max > prev else 0
                if increases >= 10:
                    termination = "diverged"
                    break
            if done(res_max, res_hyb):
                termination = "converged"
                break
        else:
            termination = "budget"

    report = SolveReport(
        converged=termination == "converged",
        termination=termination,
        iterations=iterations,
        res_max_history=hist_max,
        res_hybrid_history=hist_hyb,
        final_res_max=hist_max[-1],
        final_res_hybrid=hist_hyb[-1],
        sup_norm=max_norm(u, interior),
        nu_singular=nu1,
        nu_regular=nu2,
        shrink_events=shrink_events,
        convexity=is_discrete_convex(u, mask, dirs, cfg.convexity_tol),
        errors=errors_vs_exact(u, problem, mask) if problem.exact_u else None,
    )
    return u, report
