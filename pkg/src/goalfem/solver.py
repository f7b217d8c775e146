"""Newton's method with residual-ratio line search and matrix reuse,
plus the estimator-balanced variant for (multi)goal adjoints.

The Jacobian is refreshed only when the residual sup-norm contracted by
less than 0.85 over the last update; the stale factorization is reused
otherwise, including (transposed) for the adjoint solves of the
balanced variant.  Tiny pivots are tolerated here on purpose: the
barely-regularized p-Laplacian produces quasi-singular Jacobians that
the damped updates handle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import assemble_jacobian, assemble_residual
from .errors import IterationCap, LineSearchExhausted, MaxIterations
from .linalg import factorize, max_norm

ITERATION_CAP = 100
REBUILD_RATIO = 0.85


@dataclass
class LineSearchConfig:
    gamma: float = 0.9
    l_max: int = 200


def acceptance_factor(L, l_max=200):
    """Required residual contraction c(L, L_max) for damping gamma^L."""
    if L == 0:
        return 0.8
    if L == 1:
        return 0.888
    return 0.888 + 0.112 * np.sqrt((L + 1) / l_max)


@dataclass
class NewtonStats:
    iterations: int = 0
    residual_norms: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    rebuilds: list = field(default_factory=list)
    termination: str = ""


@dataclass
class AdaptiveNewtonStats(NewtonStats):
    eta_m: list = field(default_factory=list)


def line_search(problem, space, constraints, u, delta, cfg, quad=None,
                res_norm=None):
    """Smallest L with |A(u + gamma^L du)| < c(L) |A(u)| (sup norms).

    Returns (alpha, L, new_u, new_residual, new_norm); the caller reuses
    the accepted residual.
    """
    if res_norm is None:
        res_norm = max_norm(assemble_residual(problem, space, constraints, u,
                                              quad))
    if res_norm == 0.0:
        raise ValueError("line search requires a nonzero residual")
    for L in range(cfg.l_max):
        alpha = cfg.gamma ** L
        u_try = u.space.function(u.coeffs + alpha * delta)
        res = assemble_residual(problem, space, constraints, u_try, quad)
        norm = max_norm(res)
        if norm < acceptance_factor(L, cfg.l_max) * res_norm:
            return alpha, L, u_try, res, norm
    raise LineSearchExhausted(
        f"no damping in {cfg.l_max} tries from |A| = {res_norm:.3e}")


def nested_tolerance(level, initial_residual_norm):
    """1e-8 |A(u0)| on the first level, 1e-2 |A(u0)| afterwards."""
    if level < 1:
        raise ValueError("levels start at 1")
    factor = 1e-8 if level == 1 else 1e-2
    return factor * initial_residual_norm


def newton_solve(problem, space, constraints, u0, tol_abs, cfg=None,
                 quad=None, log=None):
    """Damped Newton until the residual sup-norm drops to ``tol_abs``.

    ``log`` receives one trace line per iteration (k, |A|, alpha,
    rebuilt flag).
    """
    cfg = cfg or LineSearchConfig(gamma=0.9)
    stats = NewtonStats()
    u = space.function(constraints.apply(u0.coeffs))
    res = assemble_residual(problem, space, constraints, u, quad)
    norm = max_norm(res)
    stats.residual_norms.append(norm)
    lu = None
    prev_norm = None
    while norm > tol_abs:
        if stats.iterations >= ITERATION_CAP:
            raise MaxIterations(f"|A| = {norm:.3e} > {tol_abs:.3e} "
                                f"after {ITERATION_CAP} iterations")
        rebuild = lu is None or norm / prev_norm > REBUILD_RATIO
        if rebuild:
            lu = factorize(assemble_jacobian(problem, space, constraints, u,
                                             quad), pivot_rtol=0.0)
        delta = constraints.distribute(lu.solve(-res))
        try:
            alpha, _, u, res, new_norm = line_search(
                problem, space, constraints, u, delta, cfg, quad,
                res_norm=norm)
        except LineSearchExhausted:
            if rebuild:
                raise
            # a stale direction may not descend at all; retry fresh
            rebuild = True
            lu = factorize(assemble_jacobian(problem, space, constraints, u,
                                             quad), pivot_rtol=0.0)
            delta = constraints.distribute(lu.solve(-res))
            alpha, _, u, res, new_norm = line_search(
                problem, space, constraints, u, delta, cfg, quad,
                res_norm=norm)
        stats.rebuilds.append(rebuild)
        stats.alphas.append(alpha)
        prev_norm = norm
        norm = new_norm
        stats.residual_norms.append(norm)
        stats.iterations += 1
        if log:
            log(f"  newton k={stats.iterations} |A|={norm:.6e} "
                f"alpha={alpha:.4g} rebuilt={rebuild}")
    stats.termination = "tolerance"
    return u, stats


def adaptive_newton_multigoal(problem, space, constraints, u0, eta_prev,
                              adjoint_rhs, cfg=None, quad=None,
                              mode="adaptive", fixed_tol=1e-8, log=None):
    """Newton iteration stopped by the iteration-error indicator.

    Each sweep solves the adjoint with the current (possibly stale)
    factorization transposed and RHS ``adjoint_rhs(u)`` evaluated at the
    new iterate; the loop ends once eta_m = |A(u)(z)| falls to
    1e-2 * eta_prev (``mode='adaptive'``) or once |A(u)| <= fixed_tol
    (``mode='fixed'``, the comparison variant).

    Returns (u, z, stats).
    """
    cfg = cfg or LineSearchConfig(gamma=0.85)
    stats = AdaptiveNewtonStats()
    u = space.function(constraints.apply(u0.coeffs))
    res = assemble_residual(problem, space, constraints, u, quad)
    norm = max_norm(res)
    stats.residual_norms.append(norm)
    floor = 1e-14 * (1.0 + norm)

    lu = factorize(assemble_jacobian(problem, space, constraints, u, quad),
                   pivot_rtol=0.0)
    z = constraints.distribute(lu.solve(adjoint_rhs(u), transposed=True))
    eta_m = abs(float(res @ z))
    stats.eta_m.append(eta_m)

    prev_norm = None
    while True:
        if mode == "adaptive":
            if eta_m <= 1e-2 * eta_prev:
                stats.termination = "balanced"
                break
        elif norm <= fixed_tol:
            stats.termination = "tolerance"
            break
        if norm <= floor:
            stats.termination = "residual_floor"
            break
        if stats.iterations >= ITERATION_CAP:
            raise IterationCap(
                f"eta_m = {eta_m:.3e} vs target {1e-2 * eta_prev:.3e}", stats)

        rebuild = prev_norm is not None and norm / prev_norm > REBUILD_RATIO
        if rebuild:
            lu = factorize(assemble_jacobian(problem, space, constraints, u,
                                             quad), pivot_rtol=0.0)
        delta = constraints.distribute(lu.solve(-res))
        try:
            alpha, _, u, res, new_norm = line_search(
                problem, space, constraints, u, delta, cfg, quad,
                res_norm=norm)
        except LineSearchExhausted:
            try:
                if rebuild:
                    raise
                rebuild = True
                lu = factorize(assemble_jacobian(problem, space, constraints,
                                                 u, quad), pivot_rtol=0.0)
                delta = constraints.distribute(lu.solve(-res))
                alpha, _, u, res, new_norm = line_search(
                    problem, space, constraints, u, delta, cfg, quad,
                    res_norm=norm)
            except LineSearchExhausted:
                # float-limit stagnation of an already-converged iterate
                if norm <= 1e-10 * (1.0 + stats.residual_norms[0]):
                    stats.termination = "stagnation"
                    break
                raise
        stats.rebuilds.append(rebuild)
        stats.alphas.append(alpha)
        prev_norm = norm
        norm = new_norm
        stats.residual_norms.append(norm)
        stats.iterations += 1

        z = constraints.distribute(lu.solve(adjoint_rhs(u), transposed=True))
        eta_m = abs(float(res @ z))
        stats.eta_m.append(eta_m)
        if log:
            log(f"  newton k={stats.iterations} |A|={norm:.6e} "
                f"alpha={alpha:.4g} rebuilt={rebuild} eta_m={eta_m:.3e}")

    z_fn = space.function(z)
    return u, z_fn, stats
