"""Dual-weighted-residual estimation with partition-of-unity localization.

The practical estimator halves the primal and adjoint weighted
residuals,

    eta = 1/2 rho(u_h)(z2 - i_h z2) + 1/2 rho*(u_h, z_h)(u2 - u_h),

with the enriched adjoint interpolated back for the primal weight.  The
same densities, multiplied by the Q1 vertex hats, give nodal values
eta_i summing exactly to the global number; hanging vertices fold their
share onto the face endpoints so the hats still partition unity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import assembly
from .errors import ZeroTrueError
from .fespace import build_constraints, interpolate_between, tensor_basis
from .linalg import factorize


@dataclass
class EstimatorBreakdown:
    eta_signed: float
    eta_primal_signed: float
    eta_adjoint_signed: float
    nodal: np.ndarray          # per mesh vertex, hanging entries folded away
    cellwise: np.ndarray       # per active cell, nonnegative

    @property
    def eta_h(self):
        return abs(self.eta_signed)

    @property
    def pu_sum(self):
        return float(np.sum(self.nodal))


def make_initial_guess(space, constraints):
    """All-ones nodal vector with the boundary data imposed."""
    return space.function(constraints.apply(np.ones(space.n_dofs)))


def solve_enriched_adjoint(problem, functional, space2, constraints2, u_h2,
                           quad=None):
    """One transposed linear solve at the enriched primal state."""
    rule = quad or assembly.default_rule(space2)
    A = assembly.assemble_jacobian(problem, space2, constraints2, u_h2, rule)
    rhs = functional.gradient(space2, constraints2, u_h2, rule)
    lu = factorize(A, pivot_rtol=0.0)
    return space2.function(constraints2.distribute(lu.solve(rhs, transposed=True)))


def _pu_hats(mesh, rule, sl):
    """Q1 hat values and physical gradients on a cell chunk."""
    N1, dN1 = tensor_basis(1, rule.points)
    _, invJT, _ = assembly.cell_geometry(mesh, rule)
    gpsi = np.einsum("cqij,aqj->caqi", invJT[sl], dN1, optimize=True)
    return N1, gpsi


def _nodal_primal(problem, u, combo, quad):
    """Per-vertex rho(u)(w psi_a); also returns the global rho(u)(w)."""
    mesh = u.space.mesh
    rule = quad
    det, _, xq = assembly.cell_geometry(mesh, rule)
    out = np.zeros(mesh.n_points)
    total = 0.0
    active = mesh.active_cells
    for sl in assembly._chunks(len(active)):
        uv, ug = assembly.eval_chunk(u, rule, sl)
        val, grd = problem.residual(xq[sl], uv, ug)
        wv, wg = assembly.eval_combo(combo, rule, sl)
        wdet = rule.weights[None, :] * det[sl]
        t1 = np.einsum("ekq,ekq->eq", val, wv, optimize=True)
        t1 += np.einsum("ekqi,ekqi->eq", grd, wg, optimize=True)
        t2 = np.einsum("ekqi,ekq->eqi", grd, wv, optimize=True)
        N1, gpsi = _pu_hats(mesh, rule, sl)
        contrib = np.einsum("eq,eq,aq->ea", wdet, t1, N1, optimize=True)
        contrib += np.einsum("eq,eqi,eaqi->ea", wdet, t2, gpsi, optimize=True)
        np.add.at(out, mesh.cell_verts[active[sl]], -contrib)
        total -= float(np.einsum("eq,eq->", wdet, t1, optimize=True))
    return out, total


def _nodal_jacobian(problem, u, combo, z, quad):
    """Per-vertex A'(u)(w psi_a, z) plus the global A'(u)(w, z)."""
    mesh = u.space.mesh
    rule = quad
    det, _, xq = assembly.cell_geometry(mesh, rule)
    out = np.zeros(mesh.n_points)
    total = 0.0
    active = mesh.active_cells
    for sl in assembly._chunks(len(active)):
        uv, ug = assembly.eval_chunk(u, rule, sl)
        blocks = problem.jacobian(xq[sl], uv, ug)
        wv, wg = assembly.eval_combo(combo, rule, sl)
        zv, zg = assembly.eval_chunk(z, rule, sl)
        wdet = rule.weights[None, :] * det[sl]
        s1 = np.zeros(wdet.shape)
        s2 = np.zeros(wdet.shape + (2,))
        if "gg" in blocks:
            s1 += np.einsum("eqkmij,ekqi,emqj->eq", blocks["gg"], zg, wg,
                            optimize=True)
            s2 += np.einsum("eqkmij,ekqi,emq->eqj", blocks["gg"], zg, wv,
                            optimize=True)
        if "vv" in blocks:
            s1 += np.einsum("eqkm,ekq,emq->eq", blocks["vv"], zv, wv,
                            optimize=True)
        if "gv" in blocks:
            s1 += np.einsum("eqkmi,ekqi,emq->eq", blocks["gv"], zg, wv,
                            optimize=True)
        if "vg" in blocks:
            s1 += np.einsum("eqkmi,ekq,emqi->eq", blocks["vg"], zv, wg,
                            optimize=True)
            s2 += np.einsum("eqkmi,ekq,emq->eqi", blocks["vg"], zv, wv,
                            optimize=True)
        N1, gpsi = _pu_hats(mesh, rule, sl)
        contrib = np.einsum("eq,eq,aq->ea", wdet, s1, N1, optimize=True)
        contrib += np.einsum("eq,eqi,eaqi->ea", wdet, s2, gpsi, optimize=True)
        np.add.at(out, mesh.cell_verts[active[sl]], contrib)
        total += float(np.einsum("eq,eq->", wdet, s1, optimize=True))
    return out, total


def fold_hanging(mesh, nodal):
    """Move hanging-vertex shares onto the face endpoints (weights 1/2)."""
    out = nodal.copy()
    for _, (a, b), m in mesh.hanging_interfaces():
        out[a] += 0.5 * out[m]
        out[b] += 0.5 * out[m]
        out[m] = 0.0
    return out


def distribute_to_cells(nodal, mesh):
    """Split each |eta_i| equally among the active cells at vertex i."""
    active = mesh.active_cells
    corners = mesh.cell_verts[active]
    counts = np.zeros(mesh.n_points)
    np.add.at(counts, corners, 1.0)
    share = np.abs(nodal) / np.maximum(counts, 1.0)
    return share[corners].sum(axis=1)


def estimate(problem, functional, u_h, z_h, u_h2, z_h2, quad=None):
    """Estimator breakdown from the four solutions of one level.

    ``functional`` must expose ``directional`` and ``nodal_directional``
    evaluated at the coarse state (single goals and frozen combinations
    both do).
    """
    space = u_h.space
    mesh = space.mesh
    rule = quad or assembly.default_rule(z_h2.space)

    hanging_only = build_constraints(space)
    ihz2 = interpolate_between(z_h2, space, constraints=hanging_only)
    primal_weight = [(1.0, z_h2), (-1.0, ihz2)]
    adjoint_weight = [(1.0, u_h2), (-1.0, u_h)]

    pn, pg = _nodal_primal(problem, u_h, primal_weight, rule)
    jn, jg = _nodal_jacobian(problem, u_h, adjoint_weight, z_h, rule)
    fn = functional.nodal_directional(u_h, adjoint_weight, rule)
    fg = functional.directional(u_h, adjoint_weight, quad=rule)

    nodal = fold_hanging(mesh, 0.5 * (pn + fn - jn))
    primal_signed = 0.5 * pg
    adjoint_signed = 0.5 * (fg - jg)
    cellwise = distribute_to_cells(nodal, mesh)
    return EstimatorBreakdown(primal_signed + adjoint_signed,
                              primal_signed, adjoint_signed, nodal, cellwise)


def effectivity(true_error, breakdown):
    """(I_eff, I_effp, I_effa); the part indices drop the 1/2 factors."""
    err = abs(float(true_error))
    if err == 0.0:
        raise ZeroTrueError("effectivity undefined for zero true error")
    return (breakdown.eta_h / err,
            abs(2.0 * breakdown.eta_primal_signed) / err,
            abs(2.0 * breakdown.eta_adjoint_signed) / err)
