"""Temporal motion retargeting.

Outer Bayesian optimization over per-segment time scales with the
trajectory tracker as the inner evaluator.  Candidates are scored by how
well the reduced-model rollout reproduces the warped base pose and
contact schedule; a Gaussian process surrogate over log2 scales drives
an expected-improvement search for the next candidate.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .ddp import DdpDivergence, OcpOptions, OcpSolution, solve_ocp
from .metrics import contact_iou
from .motion import Heightmap, Motion, TemporalParams
from .quatmath import quat_to_rpy
from .tracking import TrackingWeights, build_tracking_problem, initial_controls

_SQRT5 = math.sqrt(5.0)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class ScoreWeights:
    """Scoring function weights: contact agreement reward and a
    regularizer against extreme time scales (in log2 units)."""

    w_contact: float = 1.0
    w_reg: float = 0.01


@dataclass
class GpHyper:
    length_scale: float = 0.3  # in log2-scale coordinates
    signal_var: float = 1.0
    noise_var: float = 1e-6


@dataclass
class GpModel:
    """Matern-5/2 GP posterior over log2 time scales, zero prior mean."""

    x: np.ndarray  # (k, S) log2 coordinates
    y: np.ndarray  # (k,)
    hyper: GpHyper
    chol: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        k = self.x.shape[0]
        kernel = _matern52(self.x, self.x, self.hyper)
        jitter = 0.0
        while True:
            try:
                self.chol = np.linalg.cholesky(
                    kernel + (self.hyper.noise_var + jitter) * np.eye(k)
                )
                break
            except np.linalg.LinAlgError:
                jitter = max(jitter * 10.0, 1e-12)
                if jitter > 1e-6:
                    raise ValueError("kernel matrix is too ill-conditioned") from None
        self.weights = _chol_solve(self.chol, self.y)

    def predict(self, x_query: np.ndarray) -> tuple[float, float]:
        """Posterior mean and variance at one log2-scale point."""
        xq = np.atleast_2d(np.asarray(x_query, dtype=float))
        k_star = _matern52(self.x, xq, self.hyper)[:, 0]
        mean = float(k_star @ self.weights)
        v = np.linalg.solve(self.chol, k_star)
        var = float(self.hyper.signal_var - v @ v)
        return mean, max(var, 0.0)


def _matern52(xa: np.ndarray, xb: np.ndarray, hyper: GpHyper) -> np.ndarray:
    d = np.linalg.norm(xa[:, None, :] - xb[None, :, :], axis=2)
    r = _SQRT5 * d / hyper.length_scale
    return hyper.signal_var * (1.0 + r + r * r / 3.0) * np.exp(-r)


def _chol_solve(chol, b):
    y = np.linalg.solve(chol, b)
    return np.linalg.solve(chol.T, y)


def _norm_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _norm_cdf(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def _as_log2(alpha) -> np.ndarray:
    if isinstance(alpha, TemporalParams):
        alpha = alpha.alphas
    return np.log2(np.atleast_1d(np.asarray(alpha, dtype=float)))


def gp_fit(history, hyper: GpHyper | None = None) -> GpModel:
    """Fit the surrogate to (scales, score) pairs; duplicates averaged."""
    hyper = hyper or GpHyper()
    xs = []
    ys = []
    for alpha, value in history:
        xs.append(_as_log2(alpha))
        ys.append(float(value))
    if not xs:
        raise ValueError("need at least one observation")
    x = np.asarray(xs)
    y = np.asarray(ys)
    # Average duplicate sites to keep the kernel matrix well posed.
    keys = [tuple(np.round(row, 12)) for row in x]
    seen = {}
    for i, key in enumerate(keys):
        seen.setdefault(key, []).append(i)
    if len(seen) < len(keys):
        x = np.asarray([x[idx[0]] for idx in seen.values()])
        y = np.asarray([float(np.mean(y[idx])) for idx in seen.values()])
    return GpModel(x, y, hyper)


def ei_acquire(gp: GpModel, candidate, incumbent_best: float, xi: float = 0.01) -> float:
    """Expected improvement of a candidate over the incumbent mean.

    The deterministic limit (zero predictive deviation) degrades to
    ``max(gain, 0)``; the value is nonnegative everywhere.
    """
    mean, var = gp.predict(_as_log2(candidate))
    sigma = math.sqrt(var)
    gain = mean - incumbent_best + xi
    if sigma < 1e-15:
        return max(gain, 0.0)
    z = gain / sigma
    return gain * _norm_cdf(z) + sigma * _norm_pdf(z)


def _golden_section(fun, lo: float, hi: float, iters: int = 40):
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    return (a + b) / 2.0


def next_alpha(gp: GpModel, bounds: tuple, rng_seed: int, n_restarts: int = 8,
               xi: float = 0.01, segment_count: int | None = None) -> TemporalParams:
    """Maximize expected improvement by multi-start coordinate search.

    Deterministic for a given seed: uniform restarts in log2 space,
    then cyclic per-coordinate golden-section refinement from the best
    starts.
    """
    s = segment_count or gp.x.shape[1]
    lo, hi = math.log2(bounds[0]), math.log2(bounds[1])
    incumbent_mean = max(gp.predict(row)[0] for row in gp.x)

    def ei_at(vec):
        mean, var = gp.predict(vec)
        sigma = math.sqrt(var)
        gain = mean - incumbent_mean + xi
        if sigma < 1e-15:
            return max(gain, 0.0)
        z = gain / sigma
        return gain * _norm_cdf(z) + sigma * _norm_pdf(z)

    rng = np.random.default_rng(rng_seed)
    starts = [rng.uniform(lo, hi, s) for _ in range(n_restarts)]
    starts.append(np.full(s, (lo + hi) / 2.0))
    starts.extend(list(gp.x))
    scored = sorted(starts, key=ei_at, reverse=True)

    best_vec = scored[0].copy()
    best_val = ei_at(best_vec)
    for start in scored[:3]:
        vec = start.copy()
        for _ in range(2):  # coordinate sweeps
            for axis in range(s):
                def line(v, vec=vec, axis=axis):
                    trial = vec.copy()
                    trial[axis] = v
                    return ei_at(trial)

                # Golden section plus explicit endpoints: the acquisition
                # is often maximal at a bound.
                vec[axis] = max((lo, hi, _golden_section(line, lo, hi)), key=line)
        val = ei_at(vec)
        if val > best_val:
            best_vec, best_val = vec, val
    return TemporalParams(2.0 ** np.clip(best_vec, lo, hi), bounds)


@dataclass
class ScoreBreakdown:
    base_pos_l1: float
    base_rot_l1: float
    iou: float
    reg: float
    penalty: float


def score(
    alpha: TemporalParams,
    retargeted: Motion,
    model,
    weights: ScoreWeights | None = None,
    ddp_opts: OcpOptions | None = None,
    tracking_weights: TrackingWeights | None = None,
    terrain: Heightmap | None = None,
    height_tol: float = 0.01,
    return_breakdown: bool = False,
):
    """Score one time-scale candidate by tracking the warped motion.

    Returns ``(score, solution)``; a diverged tracker yields ``-inf``
    and no solution.  The score rewards contact agreement and penalizes
    mean L1 base position error, mean L1 Euler-angle error, and extreme
    log2 scales.
    """
    weights = weights or ScoreWeights()
    terrain = terrain or Heightmap.flat(0.0)
    problem, targets = build_tracking_problem(model, retargeted, alpha, tracking_weights)
    u_init = initial_controls(model, targets)
    try:
        solution = solve_ocp(problem, u_init, ddp_opts)
    except DdpDivergence:
        return (-np.inf, None) if not return_breakdown else (-np.inf, None, None)

    xs = solution.xs
    n = xs.shape[0]
    d_b = float(np.mean(np.abs(xs[:, 0:3] - targets.pos).sum(axis=1)))
    rot_err = np.empty(n)
    for k in range(n):
        da = quat_to_rpy(xs[k, 3:7] / np.linalg.norm(xs[k, 3:7]))
        db = quat_to_rpy(targets.quat[k])
        diff = np.mod(da - db + np.pi, 2.0 * np.pi) - np.pi
        rot_err[k] = np.abs(diff).sum()
    d_e = float(np.mean(rot_err))

    feet = xs[:, 13:25].reshape(n, 4, 3)
    achieved = np.empty((n, 4), dtype=bool)
    for k in range(n):
        for j in range(4):
            achieved[k, j] = feet[k, j, 2] <= terrain.height_at(
                feet[k, j, 0], feet[k, j, 1]) + height_tol
    iou = contact_iou(targets.contacts, achieved)

    reg = weights.w_reg * float(np.sum(np.log2(alpha.alphas) ** 2))
    value = -d_b - d_e + weights.w_contact * iou - reg
    if return_breakdown:
        penalty = sum(problem.cost._penalty_value(k, solution.us[k])
                      for k in range(problem.horizon))
        return value, solution, ScoreBreakdown(d_b, d_e, iou, reg, penalty)
    return value, solution


@dataclass
class TmrRecord:
    iteration: int
    alphas: np.ndarray
    score: float
    ddp_cost: float
    accepted: bool  # finite score (tracker did not diverge)


@dataclass
class TmrResult:
    best_alpha: TemporalParams
    best_solution: OcpSolution
    best_score: float
    history: list


def tmr(
    motion_smr: Motion,
    model,
    segment_count: int = 1,
    bounds: tuple = (0.5, 2.0),
    budget: tuple = (8, 12),
    seed: int = 0,
    weights: ScoreWeights | None = None,
    ddp_opts: OcpOptions | None = None,
    tracking_weights: TrackingWeights | None = None,
    terrain: Heightmap | None = None,
    hyper: GpHyper | None = None,
    xi: float = 0.01,
    ei_tol: float = 1e-6,
) -> TmrResult:
    """Nested search for time scales: random warm start, then BO steps.

    The identity warp is always part of the warm-start set, so the final
    score can never fall below the unwarped one.  Deterministic for a
    given seed.
    """
    if motion_smr.joint_angles is None or not motion_smr.has_base:
        raise ValueError("temporal retargeting expects a spatially retargeted motion")
    n_warm, n_iter = budget
    if n_warm < 1:
        raise ValueError("warm-start budget must be at least 1")
    weights = weights or ScoreWeights()
    hyper = hyper or GpHyper()
    rng = np.random.default_rng(seed)
    lo, hi = math.log2(bounds[0]), math.log2(bounds[1])

    candidates = [TemporalParams(np.ones(segment_count), bounds)]
    for _ in range(n_warm - 1):
        candidates.append(TemporalParams(2.0 ** rng.uniform(lo, hi, segment_count), bounds))

    history: list[TmrRecord] = []
    best = (-np.inf, None, None)  # score, alpha, solution

    def evaluate(params: TemporalParams, iteration: int):
        nonlocal best
        value, solution = score(params, motion_smr, model, weights, ddp_opts,
                                tracking_weights, terrain)
        cost = solution.cost if solution is not None else float("nan")
        history.append(TmrRecord(iteration, params.alphas.copy(), value, cost,
                                 np.isfinite(value)))
        if value > best[0]:
            best = (value, params, solution)

    for i, params in enumerate(candidates):
        evaluate(params, i)

    for k in range(n_iter):
        finite = [r.score for r in history if np.isfinite(r.score)]
        if not finite:
            raise DdpDivergence("every tracking evaluation diverged")
        floor_value = min(finite) - 1.0
        pairs = [(r.alphas, r.score if np.isfinite(r.score) else floor_value)
                 for r in history]
        gp = gp_fit(pairs, hyper)
        incumbent_mean = gp.predict(_as_log2(best[1]))[0]
        params = next_alpha(gp, bounds, rng_seed=seed + 1000 + k, xi=xi,
                            segment_count=segment_count)
        if ei_acquire(gp, params, incumbent_mean, xi=xi) < ei_tol:
            break
        evaluate(params, n_warm + k)

    if best[2] is None:
        raise DdpDivergence("every tracking evaluation diverged")
    return TmrResult(best[1], best[2], best[0], history)
