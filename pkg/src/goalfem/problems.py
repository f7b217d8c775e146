"""PDE kernels: regularized p-Laplacian and a quasilinear 3-field system.

Kernels are pure functions of batched quadrature-point data.  Residual
kernels return the densities pairing with test values and test
gradients; Jacobian kernels return the coefficient blocks of the exact
linearization,

    A'(u)(du, v) = v_k vv[k,m] du_m + v_k vg[k,m].grad(du_m)
                 + grad(v_k).gv[k,m] du_m + grad(v_k).gg[k,m] grad(du_m),

with k the test and m the trial component.  Blocks that vanish
identically are omitted from the returned dict.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .mesh import DIRICHLET


@dataclass(frozen=True)
class ProblemDefinition:
    """Weak-form kernels plus boundary data for one PDE instance."""

    name: str
    n_components: int
    residual: Callable
    jacobian: Callable
    dirichlet: tuple  # of (boundary tag, component, g(x, y, side))


# ----------------------------------------------------------------------
# regularized p-Laplacian
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class PLaplaceParams:
    p: float
    epsilon: float
    rhs: Optional[Callable] = None           # f(x, y), vectorized
    dirichlet: Optional[Callable] = None     # g(x, y, side); default 0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def plaplace_flux(grad_u, params):
    """a(grad u) = (eps^2 + |grad u|^2)^((p-2)/2) grad u."""
    g = np.asarray(grad_u, dtype=float)
    s = np.sum(g * g, axis=-1)
    a = (params.epsilon ** 2 + s) ** ((params.p - 2.0) / 2.0)
    return a[..., None] * g


def plaplace_flux_jacobian(grad_u, grad_dir, params):
    """Directional derivative of the flux at grad_u in direction grad_dir."""
    g = np.asarray(grad_u, dtype=float)
    d = np.asarray(grad_dir, dtype=float)
    s = np.sum(g * g, axis=-1)
    base = params.epsilon ** 2 + s
    a = base ** ((params.p - 2.0) / 2.0)
    out = a[..., None] * d
    if params.p != 2.0:
        b = (params.p - 2.0) * base ** ((params.p - 4.0) / 2.0)
        out = out + (b * np.sum(g * d, axis=-1))[..., None] * g
    return out


def build_plaplace(params):
    """Weak form <a(grad u), grad v> - <f, v> with Dirichlet data."""
    f = params.rhs
    p, eps = params.p, params.epsilon
    eye = np.eye(2)

    def residual(x, u, grad_u):
        val = np.zeros_like(u)
        if f is not None:
            val[:, 0, :] = -f(x[..., 0], x[..., 1])
        grad = plaplace_flux(grad_u, params)
        return val, grad

    def jacobian(x, u, grad_u):
        g = grad_u[:, 0]                       # (nc, nq, 2)
        s = np.sum(g * g, axis=-1)
        base = eps ** 2 + s
        a = base ** ((p - 2.0) / 2.0)
        gg = a[..., None, None] * eye
        if p != 2.0:
            b = (p - 2.0) * base ** ((p - 4.0) / 2.0)
            gg = gg + b[..., None, None] * (g[..., :, None] * g[..., None, :])
        return {"gg": gg[:, :, None, None, :, :]}

    g = params.dirichlet or (lambda x, y, side: 0.0)
    return ProblemDefinition("plaplace", 1, residual, jacobian,
                             ((DIRICHLET, 0, g),))


def manufactured_rhs(grad_fn, hess_fn, params):
    """Right-hand side making a given smooth function the exact solution.

    With s = |grad u|^2 and H the Hessian,
        f = -[(eps^2+s)^((p-2)/2) tr(H)
              + (p-2)(eps^2+s)^((p-4)/2) grad(u)^T H grad(u)].
    """
    p, eps = params.p, params.epsilon

    def f(x, y):
        g = grad_fn(x, y)
        H = hess_fn(x, y)
        s = np.sum(g * g, axis=-1)
        base = eps ** 2 + s
        lap = np.trace(H, axis1=-2, axis2=-1)
        gHg = np.einsum("...i,...ij,...j->...", g, H, g)
        return -(base ** ((p - 2.0) / 2.0) * lap
                 + (p - 2.0) * base ** ((p - 4.0) / 2.0) * gHg)

    return f


# ----------------------------------------------------------------------
# quasilinear three-field system on the slit domain
# ----------------------------------------------------------------------
def _g1(t):
    return np.exp(t) - np.sin(t - 1.0)


def _dg1(t):
    return np.exp(t) - np.cos(t - 1.0)


def _g2(t):
    return np.exp(t * t - t)


def _dg2(t):
    return (2.0 * t - 1.0) * np.exp(t * t - t)


@dataclass(frozen=True)
class QuasilinearParams:
    g1: Callable = field(default=_g1)
    dg1: Callable = field(default=_dg1)
    g2: Callable = field(default=_g2)
    dg2: Callable = field(default=_dg2)

    def __post_init__(self):
        # guard the hand-written derivative formulas
        h = 1e-6
        for t in (-0.7, 0.0, 0.4, 1.3):
            for fn, dfn in ((self.g1, self.dg1), (self.g2, self.dg2)):
                fd = (fn(t + h) - fn(t - h)) / (2 * h)
                if abs(fd - dfn(t)) > 1e-6 * (1.0 + abs(fd)):
                    raise AssertionError("nonlinearity derivative mismatch")


def slit_exact(x, y, side=0.0):
    """sign(y) sqrt(sqrt(x^2+y^2) - x); the side hint resolves y == 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sgn = np.sign(y)
    sgn = np.where(y == 0.0, side, sgn)
    root = np.sqrt(x * x + y * y) - x
    return sgn * np.sqrt(np.maximum(root, 0.0))


def build_quasilinear(params=None):
    """Coupled system with exact solution u1 = 1 - u2 = u3 = slit_exact.

    Weak forms (all tested componentwise, homogeneous natural conditions
    on the slit lips):
        <grad u1, grad v1> + <u2 + u3 - 1, v1>
        <grad u2, grad v2> + <g1(1-u2) - g1(u3), v2>
        <g2(u1+u2) grad u3, grad v3> + <g1(u3) - g1(u1), v3>
    """
    prm = params or QuasilinearParams()
    g1, dg1, g2, dg2 = prm.g1, prm.dg1, prm.g2, prm.dg2
    eye = np.eye(2)

    def residual(x, u, grad_u):
        u1, u2, u3 = u[:, 0], u[:, 1], u[:, 2]
        val = np.empty_like(u)
        val[:, 0] = u2 + u3 - 1.0
        val[:, 1] = g1(1.0 - u2) - g1(u3)
        val[:, 2] = g1(u3) - g1(u1)
        grad = np.empty_like(grad_u)
        grad[:, 0] = grad_u[:, 0]
        grad[:, 1] = grad_u[:, 1]
        grad[:, 2] = g2(u1 + u2)[..., None] * grad_u[:, 2]
        return val, grad

    def jacobian(x, u, grad_u):
        nc, _, nq = u.shape
        u1, u2, u3 = u[:, 0], u[:, 1], u[:, 2]
        vv = np.zeros((nc, nq, 3, 3))
        vv[..., 0, 1] = 1.0
        vv[..., 0, 2] = 1.0
        vv[..., 1, 1] = -dg1(1.0 - u2)
        vv[..., 1, 2] = -dg1(u3)
        vv[..., 2, 0] = -dg1(u1)
        vv[..., 2, 2] = dg1(u3)
        gg = np.zeros((nc, nq, 3, 3, 2, 2))
        gg[..., 0, 0, :, :] = eye
        gg[..., 1, 1, :, :] = eye
        gg[..., 2, 2, :, :] = g2(u1 + u2)[..., None, None] * eye
        gv = np.zeros((nc, nq, 3, 3, 2))
        coupling = dg2(u1 + u2)[..., None] * grad_u[:, 2]
        gv[..., 2, 0, :] = coupling
        gv[..., 2, 1, :] = coupling
        return {"vv": vv, "gg": gg, "gv": gv}

    def u1_data(x, y, side):
        return slit_exact(x, y, side)

    def u2_data(x, y, side):
        return 1.0 - slit_exact(x, y, side)

    return ProblemDefinition("quasilinear", 3, residual, jacobian,
                             ((DIRICHLET, 0, u1_data),
                              (DIRICHLET, 1, u2_data),
                              (DIRICHLET, 2, u1_data)))
