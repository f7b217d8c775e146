import numpy as np
import pytest

from goalfem.assembly import assemble_jacobian, assemble_residual, gauss
from goalfem.fespace import build_constraints, build_space
from goalfem.linalg import factorize
from goalfem.mesh import build_unit_square
from goalfem.problems import PLaplaceParams, build_plaplace


def poisson_problem(f=None):
    """p = 2 with unit right-hand side unless overridden."""
    rhs = f or (lambda x, y: np.ones(np.shape(x)))
    return build_plaplace(PLaplaceParams(2.0, 1.0, rhs=rhs))


def linear_solve(problem, space, constraints, quad=None):
    """One exact Newton step from the constrained zero state."""
    u = space.function(constraints.apply(np.zeros(space.n_dofs)))
    A = assemble_jacobian(problem, space, constraints, u, quad)
    r = assemble_residual(problem, space, constraints, u, quad)
    lu = factorize(A)
    u = space.function(u.coeffs + constraints.distribute(lu.solve(-r)))
    return u, lu


def poisson_setup(n=4, degree=1, quad_n=None):
    problem = poisson_problem()
    mesh = build_unit_square(n)
    space = build_space(mesh, degree)
    cons = build_constraints(space, problem.dirichlet)
    quad = gauss(quad_n) if quad_n else None
    u, lu = linear_solve(problem, space, cons, quad)
    return problem, mesh, space, cons, u, lu


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
