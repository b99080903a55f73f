"""
Small dense convex quadratic programs and the bias-variance coefficient program.

``solve_qp`` is a primal-dual interior-point method with Mehrotra
predictor-corrector steps for

    minimize    1/2 z^T Q z + q^T z
    subject to  G z <= h

It is meant for the tiny problems that arise when choosing polynomial
coefficients (a handful of variables, a few thousand constraints).
"""

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.linalg

from shapedist.errors import DataError, InfeasibleError, NumericalError

ACCEPT_TOL = 1e-8
RIDGE = 1e-12


class QpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"


@dataclass(frozen=True)
class QuadraticProgram:
    q_matrix: np.ndarray
    q_vector: np.ndarray
    g_matrix: np.ndarray
    h_vector: np.ndarray

    def __post_init__(self):
        n = self.q_vector.shape[0]
        if self.q_matrix.shape != (n, n):
            raise DataError("q_matrix must be n x n")
        if self.g_matrix.shape[1:] != (n,) or self.g_matrix.shape[0] != self.h_vector.shape[0]:
            raise DataError("g_matrix must be k x n with k = len(h_vector)")
        scale = max(1.0, float(np.max(np.abs(self.q_matrix))))
        if np.max(np.abs(self.q_matrix - self.q_matrix.T)) > 1e-10 * scale:
            raise DataError("q_matrix must be symmetric")

    @property
    def n(self):
        return self.q_vector.shape[0]

    @property
    def k(self):
        return self.h_vector.shape[0]

    def objective(self, z):
        return float(0.5 * z @ self.q_matrix @ z + self.q_vector @ z)


@dataclass(frozen=True)
class QpSolution:
    z: np.ndarray
    objective: float
    kkt_residual: float
    status: QpStatus
    iterations: int
    duality_gap: float
    multipliers: Optional[np.ndarray] = None


def _step_length(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _residuals(p, z, s, lam):
    rd = p.q_matrix @ z + p.q_vector + p.g_matrix.T @ lam
    rp = p.g_matrix @ z + s - p.h_vector
    return rd, rp


def _kkt(p, z, s, lam):
    rd, rp = _residuals(p, z, s, lam)
    qz = p.q_matrix @ z
    dual_scale = 1.0 + max(np.max(np.abs(qz)), np.max(np.abs(p.q_vector)),
                           np.max(np.abs(p.g_matrix.T @ lam), initial=0.0))
    primal_scale = 1.0 + np.max(np.abs(p.h_vector), initial=0.0)
    comp = float(s @ lam) / max(p.k, 1)
    obj = p.objective(z)
    res = max(np.max(np.abs(rd)) / dual_scale,
              np.max(np.abs(rp), initial=0.0) / primal_scale,
              comp / (1.0 + abs(obj)))
    return float(res), float(s @ lam)


def _solve_unconstrained(p):
    qm = p.q_matrix + RIDGE * np.eye(p.n)
    try:
        z = scipy.linalg.solve(qm, -p.q_vector, assume_a="sym")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"singular unconstrained QP: {exc}") from exc
    res = float(np.max(np.abs(p.q_matrix @ z + p.q_vector)))
    res /= 1.0 + float(np.max(np.abs(p.q_vector)))
    return QpSolution(z, p.objective(z), res, QpStatus.OPTIMAL, 0, 0.0, np.zeros(0))


def solve_qp(p, tol=1e-10, max_iter=200):
    """Minimise ``1/2 z^T Q z + q^T z`` subject to ``G z <= h``.

    Returns a :class:`QpSolution`; ``status`` is ``infeasible`` when a Farkas
    certificate (``lam >= 0``, ``G^T lam ~ 0``, ``h^T lam < 0``) emerges from
    the diverging dual iterates, and ``max_iter`` when the cap is reached, in
    which case the best iterate found is returned.
    """
    if p.k == 0:
        return _solve_unconstrained(p)
    G, h = p.g_matrix, p.h_vector
    Q = p.q_matrix + RIDGE * np.eye(p.n)
    k = p.k

    # Start from the least-squares point with unit slacks and multipliers,
    # shifted so both are strictly positive.
    z = np.zeros(p.n)
    s = np.maximum(h - G @ z, 1.0)
    lam = np.ones(k)

    best = None
    for it in range(1, max_iter + 1):
        rd, rp = _residuals(p, z, s, lam)
        res, gap = _kkt(p, z, s, lam)
        if best is None or res < best[0]:
            best = (res, z.copy(), s.copy(), lam.copy(), gap)
        viol = float(np.max(G @ z - h))
        if res <= tol and viol <= 1e-9:
            return QpSolution(z, p.objective(z), res, QpStatus.OPTIMAL, it, gap, lam)

        # Farkas certificate for primal infeasibility.
        lam_norm = float(np.sum(lam))
        if lam_norm > 1e6:
            y = lam / lam_norm
            hy = float(h @ y)
            if hy < -1e-9 and np.max(np.abs(G.T @ y)) <= 1e-6 * abs(hy) + 1e-12:
                return QpSolution(z, p.objective(z), res, QpStatus.INFEASIBLE, it, gap, lam)

        mu = gap / k
        d = lam / s
        kkt_mat = Q + (G.T * d) @ G
        try:
            factor = scipy.linalg.cho_factor(kkt_mat, check_finite=False)
            solve = lambda b: scipy.linalg.cho_solve(factor, b, check_finite=False)
        except np.linalg.LinAlgError:
            solve = lambda b: np.linalg.lstsq(kkt_mat, b, rcond=None)[0]

        def direction(rc):
            rhs = -rd - G.T @ ((lam * rp - rc) / s)
            dz = solve(rhs)
            ds = -rp - G @ dz
            dlam = (-rc - lam * ds) / s
            return dz, ds, dlam

        # Predictor.
        dz, ds, dlam = direction(lam * s)
        a_aff = min(_step_length(s, ds), _step_length(lam, dlam))
        mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam)) / k
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # Corrector.
        dz, ds, dlam = direction(lam * s + ds * dlam - sigma * mu)
        alpha = 0.99 * min(_step_length(s, ds), _step_length(lam, dlam))
        alpha = min(alpha, 1.0)
        z = z + alpha * dz
        s = s + alpha * ds
        lam = lam + alpha * dlam
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(lam))):
            raise NumericalError("interior-point iterates became non-finite")
        s = np.maximum(s, 1e-300)
        lam = np.maximum(lam, 1e-300)

    res, zb, sb, lb, gap = best
    # Stalled close to the optimum: accept if the optimality contract still holds.
    status = QpStatus.MAX_ITER
    if res <= ACCEPT_TOL and float(np.max(G @ zb - h)) <= ACCEPT_TOL:
        status = QpStatus.OPTIMAL
    return QpSolution(zb, p.objective(zb), res, status, max_iter, gap, lb)


# --- bias-variance coefficient program -------------------------------------


@dataclass(frozen=True)
class CoefficientSolution:
    """Polynomial coefficients for the truncated power-series nuclear-norm estimate.

    ``gamma[p]`` multiplies the scaled moment of order ``p``. ``u`` is the
    worst-case error of the polynomial approximation of ``sqrt(x)`` on
    ``[0, 1]`` (verified on a fine grid), so the absolute bias in scaled units
    is at most ``N * u``. ``variance`` is ``gamma^T A gamma``.
    """

    gamma: np.ndarray
    u: float
    variance: float
    objective: float
    dims: int
    bias_cap: Optional[float]
    grid_size: int
    intercept: bool = True
    status: QpStatus = QpStatus.OPTIMAL

    @property
    def order(self):
        return len(self.gamma) - 1

    def polynomial(self, x):
        x = np.asarray(x, dtype=float)
        return np.polynomial.polynomial.polyval(x, self.gamma)


def linear_grid(grid_size):
    return np.linspace(0.0, 1.0, grid_size)


def _powers(x, order, intercept):
    v = np.vander(np.asarray(x, dtype=float), order + 1, increasing=True)
    return v if intercept else v[:, 1:]


def _cov_block(a, order, intercept):
    a = np.asarray(a, dtype=float)
    if a.shape != (order + 1, order + 1):
        raise DataError(f"moment covariance must be {(order + 1, order + 1)}, got {a.shape}")
    a = (a + a.T) / 2
    return a if intercept else a[1:, 1:]


def build_bias_variance_qp(a, dims, order, grid_size=1000, bias_cap=None,
                           intercept=True, extra_points=None):
    """Epigraph form of the bias-variance program on a linear grid over ``[0, 1]``.

    Decision vector ``z = (gamma_0, ..., gamma_P, u)``; objective
    ``gamma^T A gamma + N^2 u^2``; for each grid point ``x_t``
    ``|sqrt(x_t) - sum_p gamma_p x_t^p| <= u``. With a cap ``c`` the extra
    constraint ``N u <= c`` (and ``u >= 0``) is appended. ``intercept=False``
    drops ``gamma_0`` from the decision vector.
    """
    if order < 1:
        raise DataError("polynomial order must be at least 1")
    if grid_size < order + 2:
        raise DataError(f"grid size must be at least P + 2 = {order + 2}")
    if dims < 1:
        raise DataError("dimension must be positive")
    if bias_cap is not None and bias_cap < 0:
        raise DataError("bias cap must be non-negative")
    block = _cov_block(a, order, intercept)
    x = linear_grid(grid_size)
    if extra_points is not None and len(extra_points):
        x = np.concatenate([x, np.asarray(extra_points, dtype=float)])
    v = _powers(x, order, intercept)
    nc = v.shape[1]
    ridge = RIDGE * max(float(np.trace(block)) / max(nc, 1), 1.0)
    qm = np.zeros((nc + 1, nc + 1))
    qm[:nc, :nc] = 2 * (block + ridge * np.eye(nc))
    qm[nc, nc] = 2.0 * dims**2
    root = np.sqrt(x)
    ones = np.ones((len(x), 1))
    # u + poly >= sqrt(x)  <=>  -poly - u <= -sqrt(x);  u - poly >= -sqrt(x)  <=>  poly - u <= sqrt(x)
    g = np.vstack([np.hstack([-v, -ones]), np.hstack([v, -ones])])
    h = np.concatenate([-root, root])
    if bias_cap is not None:
        cap_rows = np.zeros((2, nc + 1))
        cap_rows[0, nc] = dims
        cap_rows[1, nc] = -1.0
        g = np.vstack([g, cap_rows])
        h = np.concatenate([h, [bias_cap, 0.0]])
    return QuadraticProgram(qm, np.zeros(nc + 1), g, h)


def approximation_error(gamma, x):
    return np.abs(np.sqrt(x) - np.polynomial.polynomial.polyval(x, gamma))


def select_coefficients(a, dims, order, grid_size=1000, bias_cap=None, intercept=True,
                        verify_factor=10, max_exchange=20):
    """Solve the bias-variance program and package the verified solution.

    After each solve the approximation error is checked on a grid
    ``verify_factor`` times finer; fine-grid points that exceed ``u`` are
    added as constraints and the program is re-solved, so the reported ``u``
    is the fine-grid worst case and any cap holds on that grid.
    """
    if bias_cap is not None:
        if bias_cap < 0:
            raise DataError("bias cap must be non-negative")
        # An inactive cap leaves the (unique) optimum unchanged; reusing the
        # uncapped solution keeps cap sweeps exactly flat until the cap binds.
        free = select_coefficients(a, dims, order, grid_size, None, intercept,
                                   verify_factor, max_exchange)
        if dims * free.u <= bias_cap:
            return replace(free, bias_cap=bias_cap)
    fine = linear_grid(verify_factor * (grid_size - 1) + 1)
    extra = np.zeros(0)
    block = np.asarray(a, dtype=float)
    block = (block + block.T) / 2
    for _ in range(max_exchange):
        prog = build_bias_variance_qp(block, dims, order, grid_size, bias_cap, intercept, extra)
        sol = solve_qp(prog)
        if sol.status == QpStatus.INFEASIBLE:
            raise InfeasibleError(
                f"bias cap {bias_cap} is unattainable at order P={order}; "
                "use a larger cap or a larger order"
            )
        if sol.status != QpStatus.OPTIMAL:
            raise NumericalError(f"coefficient program did not converge (status {sol.status.value})")
        gamma = sol.z[:-1] if intercept else np.concatenate([[0.0], sol.z[:-1]])
        u_qp = float(sol.z[-1])
        err = approximation_error(gamma, fine)
        u_fine = float(np.max(err))
        if u_fine <= u_qp + 1e-10:
            break
        worst = fine[np.argsort(err)[::-1][:8]]
        worst = worst[err[np.argsort(err)[::-1][:8]] > u_qp + 1e-10]
        extra = np.unique(np.concatenate([extra, worst]))
    u = max(u_qp, u_fine)
    variance = max(float(gamma @ block @ gamma), 0.0)
    if bias_cap is not None and dims * u > bias_cap + 1e-8:
        raise InfeasibleError(
            f"bias cap {bias_cap} could not be met on the verification grid (N*u = {dims * u:.3g})"
        )
    return CoefficientSolution(
        gamma=gamma,
        u=u,
        variance=variance,
        objective=variance + dims**2 * u**2,
        dims=dims,
        bias_cap=bias_cap,
        grid_size=grid_size,
        intercept=intercept,
        status=sol.status,
    )
