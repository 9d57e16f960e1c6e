"""Test the iterative solvers on dense matrices and on small meshes."""

import logging

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given
from hypothesis import strategies as st
from scipy.sparse.linalg import LinearOperator, aslinearoperator
from util import (
    box_mesh,
    restricted_matrix,
    single_tet_mesh,
    tangential_basis,
    two_tet_mesh,
)

from chdg.benchmarks import (
    BenchmarkSpec,
    build_problem,
    l2_projection_error,
    plane_wave_reference,
    reference_boundary_sources,
)
from chdg.reference import get_reference
from chdg.solvers import (
    IdentityMass,
    IterationReport,
    Method,
    SolverConfig,
    SolverConfigError,
    Termination,
    _History,
    cgnr,
    fixed_point,
    gmres,
    solve,
)
from chdg.transmission import TransmissionSystem

METHODS = list(Method)


class DiagonalMass:
    def __init__(self, weights: np.ndarray):
        self.weights = weights

    def apply(self, g: np.ndarray) -> np.ndarray:
        return self.weights * g

    def solve(self, g: np.ndarray) -> np.ndarray:
        return g / self.weights


def random_problem(seed: int, n: int = 20, scale: float = 0.2):
    """Return a matrix close to identity, a right-hand side and a mass."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    matrix = np.eye(n) + scale / np.sqrt(2 * n) * noise
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    mass = DiagonalMass(rng.uniform(0.5, 2.0, n))
    return matrix, b, mass


def zero_operator(n: int) -> LinearOperator:
    return LinearOperator(
        (n, n),
        matvec=lambda x: np.zeros(n, complex),
        rmatvec=lambda x: np.zeros(n, complex),
        dtype=complex,
    )


class TestConfig:
    @pytest.mark.parametrize(
        "name, method",
        [
            ("fp", Method.FIXED_POINT),
            ("fixed-point", Method.FIXED_POINT),
            ("cgnr-nodal", Method.CGNR_NODAL),
            ("CGNR_MODAL", Method.CGNR_MODAL),
            ("gmres-nodal", Method.GMRES_NODAL),
            (" gmres_modal ", Method.GMRES_MODAL),
        ],
    )
    def test_parse(self, name: str, method: Method):
        assert Method.parse(name) is method

    def test_parse_wrong(self):
        with pytest.raises(SolverConfigError):
            Method.parse("bicgstab")

    def test_modal(self):
        assert [m for m in Method if m.modal] == [Method.CGNR_MODAL, Method.GMRES_MODAL]

    def test_defaults(self):
        cfg = SolverConfig()
        assert cfg.solver_method is Method.CGNR_MODAL
        assert cfg.restart == 30
        assert cfg.rtol == 1e-6
        assert cfg.initial_guess is None

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(rtol=0.0),
            dict(rtol=-1e-6),
            dict(maxit=0),
            dict(restart=-1),
            dict(error_every=0),
            dict(method="nope"),
        ],
    )
    def test_invalid(self, kwargs: dict):
        with pytest.raises(SolverConfigError):
            SolverConfig(**kwargs)

    def test_initial_guess_shape(self):
        cfg = SolverConfig(method="fp", initial_guess=np.zeros(3))
        with pytest.raises(SolverConfigError):
            solve(aslinearoperator(np.eye(4)), np.ones(4), cfg)


class TestTrivial:
    @pytest.mark.parametrize("method", METHODS)
    def test_identity(self, method: Method):
        b = np.arange(1.0, 7.0) + 1j
        g, report = solve(aslinearoperator(np.eye(6)), b, SolverConfig(method=method))
        assert report.converged
        assert report.iterations == 1
        assert report.residuals[0] == 1.0
        assert np.allclose(g, b)

    @pytest.mark.parametrize("method", METHODS)
    def test_zero_rhs(self, method: Method):
        g, report = solve(
            aslinearoperator(np.eye(6)), np.zeros(6), SolverConfig(method=method)
        )
        assert report.converged
        assert report.iterations == 0
        assert report.residuals == [0.0]
        assert np.all(g == 0)

    @pytest.mark.parametrize("method", METHODS)
    def test_initial_guess(self, method: Method):
        matrix, b, _ = random_problem(0)
        exact = la.solve(matrix, b)
        start = exact + 1e-3 * np.random.default_rng(1).standard_normal(exact.size)
        cfg = SolverConfig(method=method, initial_guess=start, rtol=1e-10)
        g, report = solve(aslinearoperator(matrix), b, cfg)
        assert report.converged
        assert report.residuals[0] == 1.0
        assert np.allclose(g, exact, rtol=1e-9)


class TestDense:
    @given(seed=st.integers(0, 2**32 - 1), method=st.sampled_from(METHODS))
    def test_direct(self, seed: int, method: Method):
        matrix, b, mass = random_problem(seed)
        cfg = SolverConfig(method=method, rtol=1e-10, restart=8)
        g, report = solve(aslinearoperator(matrix), b, cfg, mass=mass)
        assert report.converged
        exact = la.solve(matrix, b)
        assert np.linalg.norm(g - exact) <= 1e-8 * np.linalg.norm(exact)
        # final residual is the true one
        true = np.linalg.norm(b - matrix @ g) / np.linalg.norm(b)
        assert np.isclose(report.final_residual, true, rtol=1e-6, atol=1e-15)

    @given(seed=st.integers(0, 2**32 - 1), method=st.sampled_from(METHODS))
    def test_history(self, seed: int, method: Method):
        matrix, b, mass = random_problem(seed)
        cfg = SolverConfig(method=method, rtol=1e-8, restart=5)
        _, report = solve(aslinearoperator(matrix), b, cfg, mass=mass)
        assert len(report.residuals) == report.iterations + 1
        assert len(report.residuals_M) == report.iterations + 1
        assert report.residuals[0] == 1.0
        assert np.isclose(report.residuals_M[0], 1.0)
        assert report.final_residual <= cfg.rtol
        assert report.wall_time >= 0

    @pytest.mark.parametrize("seed", range(5))
    def test_cgnr_monotone(self, seed: int):
        """CGNR minimizes the residual over growing Krylov spaces."""
        matrix, b, mass = random_problem(seed, scale=0.3)
        A = aslinearoperator(matrix)
        _, report = cgnr(A, b, SolverConfig(method="cgnr-nodal", rtol=1e-12), mass)
        assert np.all(np.diff(report.residuals) <= 1e-10)
        _, report = cgnr(A, b, SolverConfig(method="cgnr-modal", rtol=1e-12), mass)
        assert np.all(np.diff(report.residuals_M) <= 1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_gmres_monotone(self, seed: int):
        matrix, b, mass = random_problem(seed, scale=0.3)
        A = aslinearoperator(matrix)
        cfg = SolverConfig(method="gmres-nodal", rtol=1e-12, restart=0)
        _, report = gmres(A, b, cfg, mass)
        assert np.all(np.diff(report.residuals) <= 1e-10)
        cfg = SolverConfig(method="gmres-modal", rtol=1e-12, restart=0)
        _, report = gmres(A, b, cfg, mass)
        assert np.all(np.diff(report.residuals_M) <= 1e-10)

    def test_unrestarted(self):
        """Without restart GMRES terminates in at most n iterations."""
        matrix, b, _ = random_problem(1, n=15, scale=0.3)
        cfg = SolverConfig(method="gmres-nodal", rtol=1e-10, restart=0)
        _, report = gmres(aslinearoperator(matrix), b, cfg)
        assert report.converged
        assert report.iterations <= 15

    @pytest.mark.parametrize("method", ["gmres-nodal", "gmres-modal"])
    def test_gmres_residuals(self, method: str):
        """Residuals recorded along a cycle are those of the iterates."""
        matrix, b, mass = random_problem(3, n=30, scale=0.5)
        A = aslinearoperator(matrix)
        cfg = SolverConfig(method=method, rtol=1e-14, restart=0, maxit=12)
        _, report = gmres(A, b, cfg, mass)
        for j in range(1, 12):
            cfg = SolverConfig(method=method, rtol=1e-14, restart=0, maxit=j)
            g, _ = gmres(A, b, cfg, mass)
            r = b - matrix @ g
            assert np.isclose(
                report.residuals[j], np.linalg.norm(r) / np.linalg.norm(b), rtol=1e-8
            )
            norm_m = np.sqrt(np.vdot(r, mass.apply(r)).real)
            norm0_m = np.sqrt(np.vdot(b, mass.apply(b)).real)
            assert np.isclose(report.residuals_M[j], norm_m / norm0_m, rtol=1e-8)

    def test_gmres_long_cycle(self):
        """An unrestarted cycle only stores what it uses."""
        matrix, b, _ = random_problem(4, n=10, scale=0.2)
        cfg = SolverConfig(method="gmres-nodal", rtol=1e-10, restart=0, maxit=20000)
        g, report = gmres(aslinearoperator(matrix), b, cfg)
        assert report.converged
        assert report.iterations <= 10
        assert np.allclose(matrix @ g, b)

    def test_restart(self):
        matrix, b, _ = random_problem(2, n=40, scale=0.3)
        A = aslinearoperator(matrix)
        _, short = gmres(A, b, SolverConfig(method="gmres-nodal", restart=3))
        _, full = gmres(A, b, SolverConfig(method="gmres-nodal", restart=0))
        assert short.converged and full.converged
        assert short.iterations >= full.iterations


class TestTermination:
    def test_fixed_point_rate(self):
        """With A = I/2 the residual is halved at each iteration."""
        b = np.ones(4, dtype=complex)
        A = aslinearoperator(0.5 * np.eye(4))

        errors = []

        def monitor(g):
            errors.append(np.linalg.norm(g - 2 * b))
            return errors[-1]

        cfg = SolverConfig(method="fp", error_every=5)
        g, report = fixed_point(A, b, cfg, monitor=monitor)
        assert report.converged
        assert report.iterations == 20
        assert np.allclose(report.residuals, 0.5 ** np.arange(21))
        assert sorted(report.errors) == [0, 5, 10, 15, 20]
        assert np.isclose(report.errors[20], np.linalg.norm(g - 2 * b))

    @pytest.mark.parametrize("method", METHODS)
    def test_maxit(self, method: Method):
        A = aslinearoperator(np.diag(np.linspace(0.01, 1.0, 50)))
        b = np.ones(50)
        cfg = SolverConfig(method=method, maxit=3, rtol=1e-12, restart=30)
        _, report = solve(A, b, cfg)
        assert report.termination is Termination.MAXIT
        assert report.iterations == 3
        assert not report.converged

    def test_fixed_point_best(self):
        """A diverging fixed point returns its best iterate."""
        A = aslinearoperator(3.0 * np.eye(3))
        b = np.ones(3)
        g, report = fixed_point(A, b, SolverConfig(method="fp", maxit=5))
        assert report.termination is Termination.MAXIT
        assert np.all(g == 0)

    @pytest.mark.parametrize(
        "method, iterations",
        [
            (Method.FIXED_POINT, 50),
            (Method.CGNR_NODAL, 0),
            (Method.CGNR_MODAL, 0),
            (Method.GMRES_NODAL, 50),
            (Method.GMRES_MODAL, 50),
        ],
    )
    def test_stagnation(self, method: Method, iterations: int):
        b = np.ones(5, dtype=complex)
        _, report = solve(zero_operator(5), b, SolverConfig(method=method))
        assert report.termination is Termination.STAGNATION
        assert report.iterations == iterations

    def test_logging(self, caplog):
        A = aslinearoperator(3.0 * np.eye(3))
        with caplog.at_level(logging.WARNING, logger="chdg.solvers"):
            fixed_point(A, np.ones(3), SolverConfig(method="fp", maxit=2))
        assert "maxit after 2 iterations" in caplog.text

    def test_replace_last(self):
        """An explicit residual also replaces the best residual it overwrites."""
        history = _History(SolverConfig(), IdentityMass(), np.ones(4), None)
        history.record(np.ones(4))
        history.record(1e-3 * np.ones(4))
        assert np.isclose(history.best, 1e-3)
        history.replace_last(0.5 * np.ones(4))
        assert history.best == 0.5
        assert history.since_best == 0
        history.replace_last(2.0 * np.ones(4))
        assert history.best == 1.0
        assert history.since_best == 1
        assert history.report.residuals == [1.0, 2.0]


class TestReport:
    def test_dict(self):
        report = IterationReport(
            Method.GMRES_MODAL,
            residuals=[1.0, 0.1],
            residuals_M=[1.0, 0.2],
            errors={0: 1.0, 1: 0.5},
            termination=Termination.CONVERGED,
            wall_time=0.5,
        )
        assert report.iterations == 1
        assert report.converged
        out = report.as_dict()
        assert out["method"] == "gmres_modal"
        assert out["termination"] == "converged"
        assert out["errors"] == {"0": 1.0, "1": 0.5}
        assert out["final_residual"] == 0.1
        assert "gmres_modal: converged after 1 iterations" in str(report)


def skeleton_problem(mesh, p: int = 1, kappa: float = 2.0):
    """Return the system, the right-hand side, and the dense solution."""
    system = TransmissionSystem(mesh, get_reference(p), kappa)
    wave = plane_wave_reference(kappa)
    b = system.build_rhs(reference_boundary_sources(wave)).ravel()
    basis = tangential_basis(mesh.normals, system.ref.Nfp)
    reduced = restricted_matrix(system.apply_A, basis)
    exact = basis @ la.solve(reduced, basis.T @ b)
    return system, b, exact


class TestSkeleton:
    """All methods agree with the dense solution of the hybridized system."""

    @pytest.mark.parametrize("method", METHODS)
    @pytest.mark.parametrize(
        "mesh",
        [two_tet_mesh(("E", "H", "I") * 2), box_mesh(1)],
        ids=["two-tet", "box"],
    )
    def test_oracle(self, mesh, method: Method):
        system, b, exact = skeleton_problem(mesh)
        cfg = SolverConfig(method=method, rtol=1e-10, maxit=5000)
        g, report = solve(system.as_linear_operator(), b, cfg, mass=system.mass)
        assert report.converged
        error = system.norm_M(g - exact) / system.norm_M(exact)
        assert error <= 1e-8

    def test_single_tet(self):
        system = TransmissionSystem(single_tet_mesh("I"), get_reference(2), 3.0)
        wave = plane_wave_reference(3.0)
        b = system.build_rhs(reference_boundary_sources(wave))
        for method in METHODS:
            g, report = solve(
                system.as_linear_operator(), b, SolverConfig(method=method)
            )
            assert report.iterations == 1
            assert np.allclose(g, b.ravel())

    def test_fixed_point_contraction(self):
        """Each fixed-point step brings the iterate closer to the solution."""
        system, b, exact = skeleton_problem(two_tet_mesh(), p=1)

        def monitor(g):
            return system.norm_M(g - exact)

        cfg = SolverConfig(method="fp", rtol=1e-10, error_every=1)
        A = system.as_linear_operator()
        _, report = fixed_point(A, b, cfg, system.mass, monitor)
        assert report.converged
        errors = [report.errors[i] for i in range(report.iterations + 1)]
        assert np.all(np.diff(errors) < 0)

    def test_reproducible(self):
        mesh = box_mesh(1)
        cfg = SolverConfig(method="gmres-modal", rtol=1e-10, restart=5)
        reports = []
        for threads in [2, 2]:
            system = TransmissionSystem(mesh, get_reference(1), 2.0, threads=threads)
            b = system.build_rhs(reference_boundary_sources(plane_wave_reference(2.0)))
            _, report = solve(system.as_linear_operator(), b, cfg, mass=system.mass)
            reports.append(report)
        assert reports[0].residuals == reports[1].residuals


class TestRefined:
    """Krylov solvers on a refined box, where rounding leaves normal components."""

    @pytest.fixture(scope="class")
    def problem(self):
        return build_problem(BenchmarkSpec(mesh="box:2", p=2))

    @pytest.fixture(scope="class")
    def reference(self, problem):
        cfg = SolverConfig(method="cgnr-modal", rtol=1e-10, maxit=5000)
        system = problem.system
        g, report = solve(system.as_linear_operator(), problem.rhs, cfg, system.mass)
        assert report.converged
        return g

    @pytest.mark.parametrize("restart", [0, 30])
    @pytest.mark.parametrize("method", [Method.GMRES_NODAL, Method.GMRES_MODAL])
    def test_gmres(self, problem, reference, method: Method, restart: int):
        system = problem.system
        cfg = SolverConfig(method=method, rtol=1e-10, restart=restart, maxit=5000)
        g, report = solve(system.as_linear_operator(), problem.rhs, cfg, system.mass)
        assert report.converged
        assert system.norm_M(g - reference) <= 1e-7 * system.norm_M(reference)

        error = problem.relative_error(g)
        assert error >= l2_projection_error(problem.reference, problem.mesh, problem.ref)
        assert np.isclose(error, problem.relative_error(reference), rtol=1e-5)

    def test_krylov_tangency(self, problem):
        """Arnoldi vectors stay tangential up to rounding."""
        system = problem.system
        A = system.as_linear_operator()
        v = problem.rhs.ravel() / np.linalg.norm(problem.rhs)
        for _ in range(20):
            w = A.matvec(v)
            normal = w - system.tangential_part(w)
            assert np.max(np.abs(normal)) <= 1e-12 * np.max(np.abs(w))
            v = w / np.linalg.norm(w)
