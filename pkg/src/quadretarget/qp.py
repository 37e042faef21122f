"""Dense ADMM solver for small convex QPs.

Problems use the two-sided form ``min 0.5 x'Px + q'x  s.t.  l <= Ax <= u``.
The operator-splitting iteration solves one quasi-definite KKT system per
step via an unpivoted dense LDL^T factorization, reusing the factor until
the step-size vector ``rho`` is rescaled.  Everything is deterministic:
identical inputs produce identical iterates.
"""

from dataclasses import dataclass

import numpy as np

from ._accel import maybe_njit

STATUS_SOLVED = "solved"
STATUS_MAX_ITER = "max_iter"
STATUS_PRIMAL_INFEASIBLE = "primal_infeasible"
_STATUS_BY_CODE = {1: STATUS_SOLVED, 0: STATUS_MAX_ITER, -1: STATUS_PRIMAL_INFEASIBLE}


@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        n = self.q.shape[0]
        if self.P.shape != (n, n):
            raise ValueError(f"P must be ({n}, {n}), got {self.P.shape}")
        if np.max(np.abs(self.P - self.P.T), initial=0.0) > 1e-10:
            raise ValueError("P must be symmetric")
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        m = self.A.shape[0]
        self.lower = np.asarray(self.lower, dtype=float).reshape(m)
        self.upper = np.asarray(self.upper, dtype=float).reshape(m)
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass
class QpSettings:
    rho: float = 0.1
    sigma: float = 1e-6
    alpha_relax: float = 1.6
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 4000
    check_every: int = 25


@dataclass
class QpResult:
    x: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float


@maybe_njit
def _ldl_factor(K):
    n = K.shape[0]
    L = np.eye(n)
    D = np.empty(n)
    for j in range(n):
        d = K[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k] * D[k]
        D[j] = d
        for i in range(j + 1, n):
            s = K[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k] * D[k]
            L[i, j] = s / d
    return L, D


@maybe_njit
def _ldl_solve(L, D, b):
    n = b.shape[0]
    x = b.copy()
    for i in range(n):
        for k in range(i):
            x[i] -= L[i, k] * x[k]
    for i in range(n):
        x[i] /= D[i]
    for i in range(n - 1, -1, -1):
        for k in range(i + 1, n):
            x[i] -= L[k, i] * x[k]
    return x


@maybe_njit
def _build_kkt(P, A, sigma, rho_vec):
    n = P.shape[0]
    m = A.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = P
    for i in range(n):
        K[i, i] += sigma
    K[:n, n:] = A.T
    K[n:, :n] = A
    for i in range(m):
        K[n + i, n + i] = -1.0 / rho_vec[i]
    return K


@maybe_njit
def _inf_norm(v):
    best = 0.0
    for i in range(v.shape[0]):
        a = abs(v[i])
        if a > best:
            best = a
    return best


@maybe_njit
def _admm_core(P, q, A, l, u, rho0, sigma, relax, eps_abs, eps_rel, max_iter, check_every):
    n = q.shape[0]
    m = A.shape[0]
    rho_vec = np.empty(m)
    for i in range(m):
        # Equality rows get a much stiffer step size, as in operator
        # splitting practice.
        if u[i] - l[i] < 1e-9:
            rho_vec[i] = 1e3 * rho0
        else:
            rho_vec[i] = rho0

    L, D = _ldl_factor(_build_kkt(P, A, sigma, rho_vec))

    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)
    y_prev = np.zeros(m)
    rhs = np.empty(n + m)
    status = 0
    pri_res = np.inf
    dua_res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        for i in range(n):
            rhs[i] = sigma * x[i] - q[i]
        for i in range(m):
            rhs[n + i] = z[i] - y[i] / rho_vec[i]
        sol = _ldl_solve(L, D, rhs)
        z_tilde = np.empty(m)
        for i in range(m):
            z_tilde[i] = z[i] + (sol[n + i] - y[i]) / rho_vec[i]
        for i in range(n):
            x[i] = relax * sol[i] + (1.0 - relax) * x[i]
        for i in range(m):
            zi = relax * z_tilde[i] + (1.0 - relax) * z[i]
            z_new = min(max(zi + y[i] / rho_vec[i], l[i]), u[i])
            y_prev[i] = y[i]
            y[i] = y[i] + rho_vec[i] * (zi - z_new)
            z[i] = z_new

        if it % check_every == 0 or it == max_iter:
            ax = A @ x
            px = P @ x
            aty = A.T @ y
            pri_res = _inf_norm(ax - z)
            dua = px + q + aty
            dua_res = _inf_norm(dua)
            eps_pri = eps_abs + eps_rel * max(_inf_norm(ax), _inf_norm(z))
            eps_dua = eps_abs + eps_rel * max(max(_inf_norm(px), _inf_norm(aty)), _inf_norm(q))
            if (m == 0 or pri_res <= eps_pri) and dua_res <= eps_dua:
                status = 1
                break

            # Primal infeasibility certificate from the dual update direction.
            if m > 0:
                dy = y - y_prev
                dy_norm = _inf_norm(dy)
                if dy_norm > 1e-12:
                    aty_dy = _inf_norm(A.T @ dy) / dy_norm
                    support = 0.0
                    certificate = aty_dy <= 1e-6
                    for i in range(m):
                        di = dy[i] / dy_norm
                        if di > 1e-12:
                            if np.isinf(u[i]):
                                certificate = False
                                break
                            support += u[i] * di
                        elif di < -1e-12:
                            if np.isinf(l[i]):
                                certificate = False
                                break
                            support += l[i] * di
                    if certificate and support < -1e-6:
                        status = -1
                        break

            # Deterministic step-size rescaling on fixed schedule.
            if m > 0 and it != max_iter:
                num = pri_res / max(max(_inf_norm(ax), _inf_norm(z)), 1e-12)
                den = dua_res / max(max(max(_inf_norm(px), _inf_norm(aty)), _inf_norm(q)), 1e-12)
                scaling = np.sqrt(num / max(den, 1e-18))
                if scaling > 5.0 or scaling < 0.2:
                    new0 = min(max(rho0 * scaling, 1e-6), 1e6)
                    if abs(new0 - rho0) > 1e-12:
                        rho0 = new0
                        for i in range(m):
                            if u[i] - l[i] < 1e-9:
                                rho_vec[i] = 1e3 * rho0
                            else:
                                rho_vec[i] = rho0
                        L, D = _ldl_factor(_build_kkt(P, A, sigma, rho_vec))
    return x, status, it, pri_res, dua_res


def solve_qp(prob: QpProblem, settings: QpSettings | None = None) -> QpResult:
    """Solve the QP; status is solved, max_iter or primal_infeasible."""
    if settings is None:
        settings = QpSettings()
    x, code, iterations, pri, dua = _admm_core(
        np.ascontiguousarray(prob.P),
        np.ascontiguousarray(prob.q),
        np.ascontiguousarray(prob.A),
        np.ascontiguousarray(prob.lower),
        np.ascontiguousarray(prob.upper),
        settings.rho,
        settings.sigma,
        settings.alpha_relax,
        settings.eps_abs,
        settings.eps_rel,
        settings.max_iter,
        settings.check_every,
    )
    return QpResult(x, _STATUS_BY_CODE[int(code)], iterations, float(pri), float(dua))
