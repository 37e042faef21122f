"""Iterative LQG trajectory optimizer.

Shooting method alternating a backward value recursion with a
line-searched forward rollout.  Second-order dynamics terms are dropped
(Gauss-Newton form) and the control Hessian is Levenberg-Marquardt
regularized; states may live on a manifold, in which case the plant's
``state_add``/``state_diff`` define the tangent coordinates used for all
derivatives, gains and feedback.
"""

from dataclasses import dataclass

import numpy as np


class QuuNotPositiveDefinite(RuntimeError):
    """Backward pass failure signal; the caller raises the regularizer."""


class DdpDivergence(RuntimeError):
    """Every rollout produced non-finite states."""


class VectorPlant:
    """Plant base class for plain vector state spaces.

    Subclasses implement ``step`` and the dims; derivatives default to
    per-coordinate central finite differences.
    """

    tangent_dim: int
    control_dim: int
    fd_step: float = 1e-6

    def step(self, x, u, i):
        raise NotImplementedError

    def state_add(self, x, d):
        return x + d

    def state_diff(self, x1, x0):
        return x1 - x0

    def rollout(self, x0, us):
        xs = np.empty((us.shape[0] + 1, x0.shape[0]))
        xs[0] = x0
        for i in range(us.shape[0]):
            xs[i + 1] = self.step(xs[i], us[i], i)
        return xs

    def rollout_feedback(self, xs_nom, us_nom, ks, Ks, step_scale):
        h = us_nom.shape[0]
        xs = np.empty_like(xs_nom)
        us = np.empty_like(us_nom)
        xs[0] = xs_nom[0]
        for i in range(h):
            dx = self.state_diff(xs[i], xs_nom[i])
            us[i] = us_nom[i] + step_scale * ks[i] + Ks[i] @ dx
            if not np.all(np.isfinite(us[i])):
                return None, None
            xs[i + 1] = self.step(xs[i], us[i], i)
            if not np.all(np.isfinite(xs[i + 1])):
                return None, None
        return xs, us

    def derivs(self, xs, us):
        h = us.shape[0]
        n, m = self.tangent_dim, self.control_dim
        fx = np.empty((h, n, n))
        fu = np.empty((h, n, m))
        for i in range(h):
            x, u = xs[i], us[i]
            x_next = self.step(x, u, i)
            d = np.zeros(n)
            for k in range(n):
                hk = self.fd_step
                d[k] = hk
                xp = self.step(self.state_add(x, d), u, i)
                d[k] = -hk
                xm = self.step(self.state_add(x, d), u, i)
                d[k] = 0.0
                fx[i, :, k] = (self.state_diff(xp, x_next) - self.state_diff(xm, x_next)) / (2 * hk)
            du = np.zeros(m)
            for k in range(m):
                hk = self.fd_step * (1.0 + abs(u[k]))
                du[k] = hk
                xp = self.step(x, u + du, i)
                du[k] = -hk
                xm = self.step(x, u + du, i)
                du[k] = 0.0
                fu[i, :, k] = (self.state_diff(xp, x_next) - self.state_diff(xm, x_next)) / (2 * hk)
        return fx, fu


@dataclass
class OcpProblem:
    """Finite-horizon tracking problem: dynamics plant plus cost evaluator.

    ``cost`` provides ``stage(i, x, u)``, ``final(x)`` and their
    derivatives in tangent coordinates:
    ``stage_derivs(i, x, u) -> (lx, lu, lxx, luu, lux)`` and
    ``final_derivs(x) -> (lx, lxx)``.
    """

    horizon: int
    dt: float
    x0: np.ndarray
    plant: object
    cost: object
    contacts: np.ndarray | None = None

    def total_cost(self, xs, us) -> float:
        total = 0.0
        for i in range(self.horizon):
            total += self.cost.stage(i, xs[i], us[i])
        return total + self.cost.final(xs[self.horizon])

    def rollout(self, us):
        xs = self.plant.rollout(self.x0, us)
        return xs, self.total_cost(xs, us)


@dataclass
class Gains:
    ks: np.ndarray
    Ks: np.ndarray
    expected_improvement: float  # Delta-V, nonpositive by construction
    grad_inf: float  # max |Q_u| along the trajectory


@dataclass
class OcpSolution:
    xs: np.ndarray
    us: np.ndarray
    gains: Gains | None
    cost_trace: list
    converged: bool
    iterations: int

    @property
    def cost(self) -> float:
        return self.cost_trace[-1]

    def rerollout_error(self, problem: OcpProblem) -> float:
        """Max deviation between stored states and an open-loop re-simulation."""
        xs = problem.plant.rollout(self.xs[0], self.us)
        return float(np.max(np.abs(xs - self.xs)))


@dataclass
class OcpOptions:
    max_iter: int = 100
    tol: float = 1e-6
    lambda_init: float = 1e-6
    lambda_factor: float = 10.0
    lambda_cap: float = 1e10
    n_alphas: int = 7  # line-search candidates 1, 1/2, ..., 1/64


def backward_pass(traj, problem: OcpProblem, reg: float, derivs=None) -> Gains:
    """Value recursion along ``traj = (xs, us)``.

    Returns feedforward/feedback gains with the expected cost change;
    raises :class:`QuuNotPositiveDefinite` when the regularized control
    Hessian loses positive-definiteness.
    """
    xs, us = traj
    h = us.shape[0]
    n = problem.plant.tangent_dim
    m = problem.plant.control_dim
    fx_all, fu_all = problem.plant.derivs(xs, us) if derivs is None else derivs

    vx, vxx = problem.cost.final_derivs(xs[h])
    ks = np.empty((h, m))
    Ks = np.empty((h, m, n))
    dv = 0.0
    grad_inf = 0.0
    eye = np.eye(m)
    for i in range(h - 1, -1, -1):
        fx, fu = fx_all[i], fu_all[i]
        lx, lu, lxx, luu, lux = problem.cost.stage_derivs(i, xs[i], us[i])
        qx = lx + fx.T @ vx
        qu = lu + fu.T @ vx
        qxx = lxx + fx.T @ vxx @ fx
        quu = luu + fu.T @ vxx @ fu + reg * eye
        qux = lux + fu.T @ vxx @ fx
        quu = 0.5 * (quu + quu.T)
        try:
            np.linalg.cholesky(quu)
        except np.linalg.LinAlgError as exc:
            raise QuuNotPositiveDefinite(f"Q_uu not PD at step {i} (reg={reg:g})") from exc
        k = -np.linalg.solve(quu, qu)
        K = -np.linalg.solve(quu, qux)
        ks[i] = k
        Ks[i] = K
        dv += 0.5 * float(qu @ k)  # -1/2 Qu' Quu^-1 Qu
        grad_inf = max(grad_inf, float(np.max(np.abs(qu))))
        vx = qx + K.T @ qu
        vxx = qxx + K.T @ qux
        vxx = 0.5 * (vxx + vxx.T)
    return Gains(ks, Ks, dv, grad_inf)


def forward_pass(traj, gains: Gains, problem: OcpProblem, step: float):
    """Line-search rollout with the feedback policy; ``step`` scales the
    feedforward term.  Returns ``(xs, us, cost)`` or ``None`` when the
    rollout leaves the finite domain.
    """
    xs_nom, us_nom = traj
    xs, us = problem.plant.rollout_feedback(xs_nom, us_nom, gains.ks, gains.Ks, step)
    if xs is None or not np.all(np.isfinite(xs)):
        return None
    cost = problem.total_cost(xs, us)
    if not np.isfinite(cost):
        return None
    return xs, us, cost


def solve_ocp(problem: OcpProblem, u_init: np.ndarray, opts: OcpOptions | None = None) -> OcpSolution:
    """Full iterative LQG loop with Levenberg-Marquardt regularization.

    The cost trace records the initial cost and every accepted iterate,
    so it is non-increasing by construction.
    """
    if opts is None:
        opts = OcpOptions()
    us = np.asarray(u_init, dtype=float).reshape(problem.horizon, problem.plant.control_dim).copy()
    xs, cost = problem.rollout(us)
    if not np.isfinite(cost):
        raise DdpDivergence("initial rollout is non-finite")
    trace = [cost]
    lam = opts.lambda_init
    gains = None
    converged = False
    alphas = [0.5**k for k in range(opts.n_alphas)]

    it = 0
    for it in range(1, opts.max_iter + 1):
        derivs = problem.plant.derivs(xs, us)
        while True:
            try:
                gains = backward_pass((xs, us), problem, lam, derivs=derivs)
                break
            except QuuNotPositiveDefinite:
                lam *= opts.lambda_factor
                if lam > opts.lambda_cap:
                    return OcpSolution(xs, us, None, trace, False, it)

        if -gains.expected_improvement < opts.tol * max(cost, 1e-12):
            converged = True
            break

        accepted = None
        for alpha in alphas:
            result = forward_pass((xs, us), gains, problem, alpha)
            if result is not None and result[2] < cost:
                accepted = result
                break
        if accepted is None:
            lam *= opts.lambda_factor
            if lam > opts.lambda_cap:
                break
            continue
        xs, us, new_cost = accepted
        lam = max(lam / 2.0, 1e-12)
        improvement = cost - new_cost
        cost = new_cost
        trace.append(cost)
        if improvement < opts.tol * max(cost, 1e-12):
            converged = True
            break
    return OcpSolution(xs, us, gains, trace, converged, it)
