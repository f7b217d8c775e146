import numpy as np
import pytest
import scipy.sparse as sp

from goalfem.assembly import (assemble_functional_gradient, assemble_jacobian,
                              assemble_residual, cell_geometry, gauss,
                              jacobian_weighted, space_tab,
                              weighted_adjoint_residual,
                              weighted_primal_residual)
from goalfem.errors import QuadratureFailure
from goalfem.estimator import solve_enriched_adjoint
from goalfem.fespace import build_constraints, build_space
from goalfem.goals import PointValue, Product, RegionIntegral
from goalfem.linalg import factorize, max_norm
from goalfem.mesh import build_unit_square
from goalfem.problems import PLaplaceParams, build_plaplace

from conftest import linear_solve, poisson_problem, poisson_setup


class TestQuadrature:
    @pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
    def test_polynomial_exactness(self, n):
        rule = gauss(n)
        for d in range(2 * n):
            val = np.sum(rule.weights * rule.points[:, 0] ** d
                         * rule.points[:, 1] ** d)
            assert val == pytest.approx(1.0 / (d + 1) ** 2, rel=1e-13)

    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_mass_row_sums_are_cell_areas(self, degree):
        # the enriched-degree rule integrates phi_i phi_j exactly; row
        # sums of the local mass matrix add up to the cell area
        mesh = build_unit_square(4)
        space = build_space(mesh, degree)
        rule = gauss(degree + 3)
        det, _, _ = cell_geometry(mesh, rule)
        N, _ = space_tab(space, rule)
        mass = np.einsum("q,eq,bq,dq->ebd",
                         rule.weights, det, N, N)
        assert np.allclose(mass.sum(axis=(1, 2)), 1.0 / 16.0, atol=1e-14)


class TestResidual:
    def test_exact_solution_residual_vanishes(self):
        problem, _, space, cons, u, _ = poisson_setup(n=3, degree=2)
        assert max_norm(assemble_residual(problem, space, cons, u)) <= 1e-12

    def test_interior_hat_entry(self):
        # p=2, u=0, f=1: the single interior Q1 node of a 2x2 mesh pairs
        # with a hat of unit integral over area 1/4
        problem, _, space, cons, _, _ = poisson_setup(n=2, degree=1)
        u0 = space.function(cons.apply(np.zeros(space.n_dofs)))
        r = assemble_residual(problem, space, cons, u0)
        assert r[~cons.constrained] == pytest.approx([-0.25], abs=1e-14)

    def test_linearity_in_f(self):
        mesh = build_unit_square(3)
        space = build_space(mesh, 1)
        rs = {}
        for scale in (1.0, 2.0):
            prob = build_plaplace(PLaplaceParams(
                2.0, 1.0, rhs=lambda x, y, s=scale: s * np.ones(np.shape(x))))
            cons = build_constraints(space, prob.dirichlet)
            u = space.function(cons.apply(np.zeros(space.n_dofs)))
            rs[scale] = assemble_residual(prob, space, cons, u)
        assert np.allclose(rs[2.0], 2.0 * rs[1.0], atol=1e-14)

    def test_nonfinite_integrand_raises(self):
        prob = build_plaplace(PLaplaceParams(
            2.0, 1.0, rhs=lambda x, y: np.full(np.shape(x), np.nan)))
        mesh = build_unit_square(2)
        space = build_space(mesh, 1)
        cons = build_constraints(space, prob.dirichlet)
        with pytest.raises(QuadratureFailure):
            assemble_residual(prob, space, cons,
                              space.function(np.zeros(space.n_dofs)))


class TestJacobian:
    def test_p2_stiffness_independent_of_u(self, rng):
        problem, _, space, cons, _, _ = poisson_setup(n=3, degree=1)
        a = assemble_jacobian(problem, space, cons,
                              space.function(rng.normal(size=space.n_dofs)))
        b = assemble_jacobian(problem, space, cons,
                              space.function(rng.normal(size=space.n_dofs)))
        assert (a - b).nnz == 0 or np.max(np.abs((a - b).data)) <= 1e-14

    def test_plaplace_symmetry(self, rng):
        prob = build_plaplace(PLaplaceParams(4.0, 1.0))
        mesh = build_unit_square(3).refine([2])
        space = build_space(mesh, 1)
        cons = build_constraints(space, prob.dirichlet)
        u = space.function(cons.apply(rng.normal(size=space.n_dofs)))
        A = assemble_jacobian(prob, space, cons, u)
        assert abs(A - A.T).max() <= 1e-12

    @pytest.mark.parametrize("p", [1.5, 4.0, 5.0])
    def test_fd_consistency(self, p, rng):
        prob = build_plaplace(PLaplaceParams(
            p, 0.8, rhs=lambda x, y: np.ones(np.shape(x))))
        mesh = build_unit_square(2).refine([1])
        space = build_space(mesh, 1)
        cons = build_constraints(space, prob.dirichlet)
        for _ in range(5):
            u = space.function(cons.apply(rng.normal(size=space.n_dofs)))
            d = cons.distribute(rng.normal(size=space.n_dofs))
            A = assemble_jacobian(prob, space, cons, u)
            h = 1e-6 * (1 + np.abs(u.coeffs).max())
            fd = (assemble_residual(prob, space, cons,
                                    space.function(u.coeffs + h * d))
                  - assemble_residual(prob, space, cons,
                                      space.function(u.coeffs - h * d))) / (2 * h)
            free = ~cons.constrained
            assert np.max(np.abs((A @ d - fd)[free])) \
                <= 1e-6 * (1 + np.abs(fd).max())

    def test_condensation_matches_reduced_system(self):
        # eliminating constrained DOFs explicitly (rectangular reduction of
        # the raw Galerkin system) must reproduce the square condensed solve
        from goalfem.fespace import ConstraintSet

        problem = poisson_problem()
        mesh = build_unit_square(2).refine([0])
        space = build_space(mesh, 1)
        cons = build_constraints(space, problem.dirichlet)
        u0 = space.function(cons.apply(np.zeros(space.n_dofs)))
        A = assemble_jacobian(problem, space, cons, u0)
        r = assemble_residual(problem, space, cons, u0)
        du_condensed = cons.distribute(factorize(A).solve(-r))

        empty = ConstraintSet(space.n_dofs, {})
        raw_A = assemble_jacobian(problem, space, empty, u0)
        raw_r = assemble_residual(problem, space, empty, u0)
        free = np.flatnonzero(~cons.constrained)
        C = cons.matrix[:, free]
        K = sp.csr_matrix(C.T @ raw_A @ C)
        x = factorize(K).solve(-(C.T @ raw_r))
        du_reduced = C @ x
        assert np.max(np.abs(du_reduced - du_condensed)) <= 1e-10


class TestFunctionalGradient:
    def test_linear_integral_gradient_u_independent(self, rng):
        problem, _, space, cons, u, _ = poisson_setup(n=2, degree=1)
        J = RegionIntegral()
        quad = gauss(3)
        g1 = assemble_functional_gradient(J, space, cons, u, quad)
        g2 = assemble_functional_gradient(
            J, space, cons, space.function(rng.normal(size=space.n_dofs)),
            quad)
        assert np.allclose(g1, g2)
        # entries are int phi_i over the free hat: 0.25 for the interior node
        assert g1[~cons.constrained] == pytest.approx([0.25], abs=1e-14)

    def test_point_gradient_is_delta(self):
        problem, _, space, cons, u, _ = poisson_setup(n=2, degree=1)
        g = assemble_functional_gradient(PointValue((0.5, 0.5)), space, cons,
                                         u, gauss(3))
        expected = np.zeros(space.n_dofs)
        free = np.flatnonzero(~cons.constrained)
        expected[free] = 1.0   # the interior hat equals 1 at its node
        assert np.allclose(g, expected)

    def test_product_gradient_fd(self, rng):
        problem, _, space, cons, u, _ = poisson_setup(n=3, degree=1)
        J = Product([RegionIntegral(), PointValue((0.4, 0.6))])
        quad = gauss(3)
        g = assemble_functional_gradient(J, space, cons, u, quad)
        d = cons.distribute(rng.normal(size=space.n_dofs))
        h = 1e-6
        fd = (J.value(space.function(u.coeffs + h * d))
              - J.value(space.function(u.coeffs - h * d))) / (2 * h)
        assert g @ d == pytest.approx(fd, abs=1e-7 * (1 + abs(fd)))


class TestWeightedResiduals:
    def test_zero_weight(self):
        problem, _, space, cons, u, _ = poisson_setup(n=2, degree=1)
        z = space.function(np.zeros(space.n_dofs))
        assert weighted_primal_residual(problem, u, z) == 0.0

    def test_galerkin_orthogonality(self, rng):
        problem, _, space, cons, u, _ = poisson_setup(n=4, degree=1)
        w = space.function(cons.distribute(rng.normal(size=space.n_dofs)))
        assert abs(weighted_primal_residual(problem, u, w)) <= 1e-11

    def test_linear_identity_with_enriched_adjoint(self):
        # -A(u_h)(z2) equals J(u2) - J(u_h) for a linear goal: the Poisson
        # run provides the oracle values
        problem, mesh, space, cons, u, _ = poisson_setup(n=4, degree=1,
                                                         quad_n=4)
        quad = gauss(4)
        space2 = build_space(mesh, 2)
        cons2 = build_constraints(space2, problem.dirichlet)
        u2, _ = linear_solve(problem, space2, cons2, quad)
        J = RegionIntegral()
        z2 = solve_enriched_adjoint(problem, J, space2, cons2, u2, quad)
        lhs = weighted_primal_residual(problem, u, z2, quad)
        rhs = J.value(u2) - J.value(u)
        assert lhs == pytest.approx(rhs, rel=1e-9)

    def test_adjoint_weight_vanishes_on_discrete_adjoint(self, rng):
        problem, mesh, space, cons, u, lu = poisson_setup(n=4, degree=1,
                                                          quad_n=4)
        quad = gauss(4)
        J = RegionIntegral()
        rhs = J.gradient(space, cons, u, quad)
        z = space.function(cons.distribute(lu.solve(rhs, transposed=True)))
        w = space.function(cons.distribute(rng.normal(size=space.n_dofs)))
        out = weighted_adjoint_residual(problem, J, u, z, w, quad)
        assert abs(out) <= 1e-11

    def test_p2_primal_adjoint_symmetry(self):
        # linear self-adjoint case: rho(u_h)(w) = rho*(u_h, z_h)(w') when
        # the roles mirror; checked through equal halves of the estimator
        problem, mesh, space, cons, u, lu = poisson_setup(n=4, degree=1,
                                                          quad_n=4)
        quad = gauss(4)
        space2 = build_space(mesh, 2)
        cons2 = build_constraints(space2, problem.dirichlet)
        u2, _ = linear_solve(problem, space2, cons2, quad)
        J = RegionIntegral()
        z = space.function(cons.distribute(
            lu.solve(J.gradient(space, cons, u, quad), transposed=True)))
        z2 = solve_enriched_adjoint(problem, J, space2, cons2, u2, quad)
        primal = weighted_primal_residual(
            problem, u, [(1.0, z2), (-1.0, z)], quad)
        adjoint = weighted_adjoint_residual(
            problem, J, u, z, [(1.0, u2), (-1.0, u)], quad)
        assert primal == pytest.approx(adjoint, rel=1e-8)

    def test_weight_linearity(self, rng):
        problem, _, space, cons, u, _ = poisson_setup(n=3, degree=2)
        ws = [space.function(rng.normal(size=space.n_dofs)) for _ in range(3)]
        single = sum(weighted_primal_residual(problem, u, w) for w in ws)
        combo = weighted_primal_residual(problem, u,
                                         [(1.0, w) for w in ws])
        assert combo == pytest.approx(single, abs=1e-12 * (1 + abs(single)))

    def test_jacobian_weighted_matches_matrix(self, rng):
        prob = build_plaplace(PLaplaceParams(4.0, 1.0))
        mesh = build_unit_square(3)
        space = build_space(mesh, 1)
        cons = build_constraints(space, prob.dirichlet)
        u = space.function(cons.apply(rng.normal(size=space.n_dofs)))
        raw_cons = build_constraints(space)
        A = assemble_jacobian(prob, space, raw_cons, u)
        w = rng.normal(size=space.n_dofs)
        z = rng.normal(size=space.n_dofs)
        direct = float(z @ (A @ w))
        weak = jacobian_weighted(prob, u, space.function(w), space.function(z))
        assert weak == pytest.approx(direct, rel=1e-12)
