"""Fitting 1-mass parameters to a glottal flow with discrete-adjoint gradients.

The loss compares the amplitude-normalized target flow with the model flow
sampled at the target instants. Time normalization maps one target pitch
period onto one measured model period: after a warm-up, the model period T
is the mean spacing of n_per upward zero crossings of x_l + x_r, and the
k-th target sample lands at

    τ_k = c_a + (j / lag_grid + k · f0 / fs) · T

where c_a is the first post-warm-up crossing and j is the phase lag that
maximizes the cross-correlation with the target. Between RK4 nodes the flow
is a cubic Hermite interpolant of x_l + x_r and its velocity v_l + v_r, so
the loss is continuously differentiable in τ. Everything except the integer
choices (j, crossing steps, the argmax sample) is differentiated exactly by
reverse accumulation through each RK4 stage.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.dsp import GlottalFlowSignal, estimate_f0
from core.errors import DegenerateFlowError, NumericalOverflowError, UnvoicedTargetError
from core.fold_models import OneMassParams, TrajectorySet, one_mass_derivative, one_mass_step

ALPHA_BOUNDS = (0.0, 2.0)
BETA_BOUNDS = (1e-3, 2.0)
DELTA_BOUNDS = (-1.0, 1.0)

# Starting asymmetries tried when a mirrored fit would begin at Δ = 0
DELTA_SEEDS = (0.1, 0.2, 0.3, 0.4, 0.6, 0.8)
# Relative forward-difference step of the Gauss–Newton Jacobian
JACOBIAN_EPS = 1e-6
DAMPING_FACTOR = 10.0
DAMPING_FLOOR = 1e-12


class SimConfig(BaseModel):
    """How the model is simulated and sampled against a target"""
    model_config = ConfigDict(frozen=True)

    dt: float = Field(default=0.05, gt=0.0, le=0.2, description="RK4 step in model time")
    warmup: float = Field(default=40.0, ge=0.0, description="Model time discarded before the first crossing")
    n_per: int = Field(default=4, ge=1, le=32, description="Cycles used to measure the model period")
    max_cycles: int = Field(default=8, ge=1, le=200, description="Target is truncated to this many pitch periods")
    lag_grid: int = Field(default=64, ge=1, le=1024, description="Phase offsets tried per cycle")
    search_time: float = Field(default=400.0, gt=0.0, description="Model time searched for crossings after warm-up")
    f0: Optional[float] = Field(default=None, gt=0.0, description="Target f0 in Hz; estimated when None")
    fmin: float = Field(default=60.0, gt=0.0)
    fmax: float = Field(default=400.0, gt=0.0)
    voicing_threshold: float = Field(default=0.3, ge=0.0, le=1.0)


class OptConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_iter: int = Field(default=500, ge=0, description="Descent iterations")
    tol: float = Field(default=1e-6, gt=0.0, description="Projected-gradient norm at which the fit stops")
    armijo_c: float = Field(default=1e-4, gt=0.0, lt=1.0)
    shrink: float = Field(default=0.5, gt=0.0, lt=1.0)
    max_shrinks: int = Field(default=30, ge=1)
    initial_step: float = Field(default=1.0, gt=0.0)
    max_step: float = Field(default=1e3, gt=0.0, description="Cap on the gradient fallback step")
    damping: float = Field(default=1e-3, ge=0.0, description="Initial Levenberg–Marquardt damping μ")
    min_damping: float = Field(default=1e-9, gt=0.0)
    max_damping: float = Field(default=1e6, gt=0.0)


class FitResult(BaseModel):
    params: OneMassParams
    loss_curve: List[float] = Field(default_factory=list)
    grad_norm_final: float = 0.0
    iterations: int = 0
    converged: bool = False
    time_normalization: Tuple[float, float] = Field(description="(f0 in Hz, target samples per cycle)")
    model_period: float = Field(default=0.0, description="Measured model period in model time")

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1] if self.loss_curve else math.nan


@dataclass
class _Forward:
    rows: List[Tuple[float, float, float, float]]
    h: float
    ia: int
    ib: int
    ca: float
    cb: float
    lag: int
    weights: np.ndarray
    seg: np.ndarray
    theta: np.ndarray
    sigma: np.ndarray
    dsigma: np.ndarray
    v: np.ndarray
    u: np.ndarray
    umax: float
    kmax: int
    uhat: np.ndarray
    n_per: int

    @property
    def period(self) -> float:
        return (self.cb - self.ca) / self.n_per


# ---------------------------------------------------------------------------
# Target preparation
# ---------------------------------------------------------------------------

def prepare_target(flow: GlottalFlowSignal) -> GlottalFlowSignal:
    """Shift an inverse-filtered flow so its minimum is 0, then scale its maximum to 1"""
    u = np.asarray(flow.flow, dtype=np.float64)
    if u.size == 0:
        raise DegenerateFlowError("Empty target flow")
    u = u - np.min(u)
    peak = float(np.max(u))
    if peak <= 0.0:
        raise DegenerateFlowError("Target flow is constant")
    return GlottalFlowSignal.from_flow(u / peak, flow.sample_rate, normalize=False)


def target_f0(target: GlottalFlowSignal, sim: SimConfig) -> float:
    if sim.f0 is not None:
        return float(sim.f0)
    f0 = estimate_f0(target.flow, target.sample_rate, sim.fmin, sim.fmax, sim.voicing_threshold)
    if f0 is None:
        raise UnvoicedTargetError("No pitch found in the target flow")
    return float(f0)


def _target_samples(target: GlottalFlowSignal, sim: SimConfig) -> Tuple[np.ndarray, float]:
    f0 = target_f0(target, sim)
    n = min(len(target), int(round(sim.max_cycles * target.sample_rate / f0)))
    if n < 2:
        raise DegenerateFlowError(f"Target too short ({len(target)} samples)")
    return np.asarray(target.flow[:n], dtype=np.float64), f0


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def _crossing_time(sigma_i: float, sigma_next: float, i: int, h: float) -> float:
    return h * (i + sigma_i / (sigma_i - sigma_next))


def _hermite_basis(theta: np.ndarray):
    t2 = theta * theta
    t3 = t2 * theta
    return 2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + theta, 3.0 * t2 - 2.0 * t3, t3 - t2


def _hermite_slope_basis(theta: np.ndarray):
    """d/dθ of _hermite_basis"""
    t2 = theta * theta
    return 6.0 * t2 - 6.0 * theta, 3.0 * t2 - 4.0 * theta + 1.0, 6.0 * theta - 6.0 * t2, 3.0 * t2 - 2.0 * theta


def _forward(p: OneMassParams, sim: SimConfig, n_samples: int, ratio: float,
             y: Optional[np.ndarray], lag: Optional[int] = None) -> _Forward:
    """Simulate, locate crossings and sample the model flow.

    y=None fixes lag 0; an explicit `lag` skips the correlation search.
    """
    h = sim.dt
    k_l, k_r = 1.0 - p.delta / 2.0, 1.0 + p.delta / 2.0
    rows = [(p.x0_l, p.v0_l, p.x0_r, p.v0_r)]

    def advance():
        s = one_mass_step(rows[-1], p.alpha, p.beta, k_l, k_r, h)
        if not all(math.isfinite(v) for v in s):
            partial = TrajectorySet(times=np.arange(len(rows)) * h, states=np.array(rows), dt=h)
            raise NumericalOverflowError(f"Non-finite state at step {len(rows)}", partial=partial)
        rows.append(s)

    i_warm = int(math.ceil(sim.warmup / h))
    max_steps = i_warm + int(math.ceil(sim.search_time / h))
    while len(rows) <= i_warm:
        advance()

    crossings: List[int] = []
    while len(crossings) < sim.n_per + 1:
        if len(rows) > max_steps:
            raise DegenerateFlowError(
                f"Model shows {len(crossings)} sustained cycles; need {sim.n_per + 1} crossings")
        advance()
        i = len(rows) - 2
        s0 = rows[i][0] + rows[i][2]
        s1 = rows[i + 1][0] + rows[i + 1][2]
        if s0 < 0.0 <= s1:
            crossings.append(i)

    ia, ib = crossings[0], crossings[-1]
    sa = (rows[ia][0] + rows[ia][2], rows[ia + 1][0] + rows[ia + 1][2])
    sb = (rows[ib][0] + rows[ib][2], rows[ib + 1][0] + rows[ib + 1][2])
    ca = _crossing_time(sa[0], sa[1], ia, h)
    cb = _crossing_time(sb[0], sb[1], ib, h)

    if y is None:
        lags = np.array([0])
    elif lag is not None:
        if not 0 <= lag < sim.lag_grid:
            raise ValueError(f"lag must lie in [0, {sim.lag_grid}), got {lag}")
        lags = np.array([lag])
    else:
        lags = np.arange(sim.lag_grid)
    offsets = lags[:, None] / sim.lag_grid + (np.arange(n_samples) * ratio)[None, :]
    weights = offsets / sim.n_per
    tau = ca + weights * (cb - ca)

    last_index = int(math.floor(float(np.max(tau)) / h)) + 1
    while len(rows) - 1 < last_index:
        advance()

    states = np.array(rows)
    sigma = states[:, 0] + states[:, 2]
    dsigma = states[:, 1] + states[:, 3]
    seg = np.floor(tau / h).astype(int)
    theta = tau / h - seg
    h00, h10, h01, h11 = _hermite_basis(theta)
    v = p.rest_gap + h00 * sigma[seg] + h10 * h * dsigma[seg] + h01 * sigma[seg + 1] + h11 * h * dsigma[seg + 1]
    u = np.maximum(0.0, v)
    umax = np.max(u, axis=1)

    pick = 0
    if lags.size > 1:
        safe = np.where(umax > 0.0, umax, 1.0)
        corr = (u / safe[:, None]) @ y
        corr = np.where(umax > 0.0, corr, -np.inf)
        pick = int(np.argmax(corr))
    if umax[pick] <= 0.0:
        raise DegenerateFlowError("Model flow is closed at every target instant")

    kmax = int(np.argmax(u[pick]))
    fwd = _Forward(
        rows=rows, h=h, ia=ia, ib=ib, ca=ca, cb=cb, lag=int(lags[pick]),
        weights=weights[pick], seg=seg[pick], theta=theta[pick], sigma=sigma, dsigma=dsigma,
        v=v[pick], u=u[pick], umax=float(umax[pick]), kmax=kmax, uhat=u[pick] / umax[pick], n_per=sim.n_per,
    )
    return fwd


# ---------------------------------------------------------------------------
# Reverse pass
# ---------------------------------------------------------------------------

def _jt_product(s, g, alpha, beta, k_l, k_r):
    """(Jᵀg, F_pᵀg) of the 1-mass right-hand side at state s"""
    xl, vl, xr, vr = s
    g0, g1, g2, g3 = g
    jt = (
        (-2.0 * beta * xl * vl - k_l) * g1,
        g0 + (alpha - beta * (1.0 + xl * xl)) * g1 + alpha * g3,
        (-2.0 * beta * xr * vr - k_r) * g3,
        g2 + alpha * g1 + (alpha - beta * (1.0 + xr * xr)) * g3,
    )
    fp = (
        (vl + vr) * (g1 + g3),
        -(1.0 + xl * xl) * vl * g1 - (1.0 + xr * xr) * vr * g3,
        0.5 * xl * g1 - 0.5 * xr * g3,
    )
    return jt, fp


def _axpy(s, a, k):
    return (s[0] + a * k[0], s[1] + a * k[1], s[2] + a * k[2], s[3] + a * k[3])


def _backward(p: OneMassParams, fwd: _Forward, y: np.ndarray) -> np.ndarray:
    h = fwd.h
    n_samples = y.shape[0]
    sigma = fwd.sigma

    e = 2.0 * (fwd.uhat - y) / n_samples
    g_u = e / fwd.umax
    g_u[fwd.kmax] -= float(np.dot(e, fwd.u)) / (fwd.umax * fwd.umax)
    g_v = np.where(fwd.v > 0.0, g_u, 0.0)

    seg, dsigma = fwd.seg, fwd.dsigma
    h00, h10, h01, h11 = _hermite_basis(fwd.theta)
    lam_sigma = np.zeros(sigma.shape[0])
    lam_dsigma = np.zeros(sigma.shape[0])
    np.add.at(lam_sigma, seg, g_v * h00)
    np.add.at(lam_sigma, seg + 1, g_v * h01)
    np.add.at(lam_dsigma, seg, g_v * h * h10)
    np.add.at(lam_dsigma, seg + 1, g_v * h * h11)

    d00, d10, d01, d11 = _hermite_slope_basis(fwd.theta)
    slope = (d00 * sigma[seg] + d10 * h * dsigma[seg] + d01 * sigma[seg + 1] + d11 * h * dsigma[seg + 1]) / h
    g_tau = g_v * slope
    g_ca = float(np.dot(g_tau, 1.0 - fwd.weights))
    g_cb = float(np.dot(g_tau, fwd.weights))

    for i, g_c in ((fwd.ia, g_ca), (fwd.ib, g_cb)):
        s0, s1 = sigma[i], sigma[i + 1]
        d2 = (s0 - s1) ** 2
        lam_sigma[i] += g_c * (-h * s1 / d2)
        lam_sigma[i + 1] += g_c * (h * s0 / d2)

    alpha, beta = p.alpha, p.beta
    k_l, k_r = 1.0 - p.delta / 2.0, 1.0 + p.delta / 2.0
    grad = [0.0, 0.0, 0.0]
    direct = lam_sigma.tolist()
    direct_v = lam_dsigma.tolist()
    touched = np.nonzero((lam_sigma != 0.0) | (lam_dsigma != 0.0))[0]
    last = int(touched[-1]) if touched.size else 0
    lam = (direct[last], direct_v[last], direct[last], direct_v[last])
    half = 0.5 * h

    for n in range(last - 1, -1, -1):
        s = fwd.rows[n]
        k1 = one_mass_derivative(*s, alpha, beta, k_l, k_r)
        z2 = _axpy(s, half, k1)
        k2 = one_mass_derivative(*z2, alpha, beta, k_l, k_r)
        z3 = _axpy(s, half, k2)
        k3 = one_mass_derivative(*z3, alpha, beta, k_l, k_r)
        z4 = _axpy(s, h, k3)

        gb1 = tuple(h / 6.0 * a for a in lam)
        gb2 = tuple(h / 3.0 * a for a in lam)
        gb3 = gb2
        gb4 = gb1

        w4, fp = _jt_product(z4, gb4, alpha, beta, k_l, k_r)
        grad = [g + f for g, f in zip(grad, fp)]
        gb3 = _axpy(gb3, h, w4)

        w3, fp = _jt_product(z3, gb3, alpha, beta, k_l, k_r)
        grad = [g + f for g, f in zip(grad, fp)]
        gb2 = _axpy(gb2, half, w3)

        w2, fp = _jt_product(z2, gb2, alpha, beta, k_l, k_r)
        grad = [g + f for g, f in zip(grad, fp)]
        gb1 = _axpy(gb1, half, w2)

        w1, fp = _jt_product(s, gb1, alpha, beta, k_l, k_r)
        grad = [g + f for g, f in zip(grad, fp)]

        d, dv = direct[n], direct_v[n]
        lam = (lam[0] + w1[0] + w2[0] + w3[0] + w4[0] + d,
               lam[1] + w1[1] + w2[1] + w3[1] + w4[1] + dv,
               lam[2] + w1[2] + w2[2] + w3[2] + w4[2] + d,
               lam[3] + w1[3] + w2[3] + w3[3] + w4[3] + dv)

    return np.array(grad)


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def _evaluate(p: OneMassParams, target: GlottalFlowSignal, sim: SimConfig, with_grad: bool,
              lag: Optional[int] = None):
    y, f0 = _target_samples(target, sim)
    fwd = _forward(p, sim, y.shape[0], f0 / target.sample_rate, y, lag)
    loss = float(np.mean((fwd.uhat - y) ** 2))
    grad = _backward(p, fwd, y) if with_grad else None
    return loss, grad, fwd


def fit_loss(p: OneMassParams, target: GlottalFlowSignal, sim: Optional[SimConfig] = None) -> float:
    """Mean squared error between the target and the time-normalized model flow"""
    loss, _, _ = _evaluate(p, target, sim or SimConfig(), with_grad=False)
    return loss


def loss_and_grad(p: OneMassParams, target: GlottalFlowSignal,
                  sim: Optional[SimConfig] = None) -> Tuple[float, np.ndarray]:
    loss, grad, _ = _evaluate(p, target, sim or SimConfig(), with_grad=True)
    return loss, grad


def grad_adjoint(p: OneMassParams, target: GlottalFlowSignal, sim: Optional[SimConfig] = None) -> np.ndarray:
    """Exact gradient of fit_loss with respect to (α, β, Δ)"""
    return loss_and_grad(p, target, sim)[1]


def grad_fd(p: OneMassParams, target: GlottalFlowSignal, sim: Optional[SimConfig] = None,
            eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of fit_loss over (α, β, Δ).

    The phase lag is held at its value at p: fit_loss jumps where the best lag
    changes, and a difference quotient across such a jump means nothing.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    sim = sim or SimConfig()
    lag = _evaluate(p, target, sim, with_grad=False)[2].lag
    base = p.decision
    grad = np.zeros(3)
    for i in range(3):
        step = np.zeros(3)
        step[i] = eps
        plus = _evaluate(p.with_decision(base + step), target, sim, with_grad=False, lag=lag)[0]
        minus = _evaluate(p.with_decision(base - step), target, sim, with_grad=False, lag=lag)[0]
        grad[i] = (plus - minus) / (2.0 * eps)
    return grad


def model_target(p: OneMassParams, sim: SimConfig, n_samples: int, sample_rate: float) -> GlottalFlowSignal:
    """Model flow sampled exactly as fit_loss samples it at lag 0; needs sim.f0"""
    if sim.f0 is None:
        raise ValueError("model_target needs an explicit sim.f0")
    if n_samples < 2:
        raise ValueError(f"n_samples must be >= 2, got {n_samples}")
    fwd = _forward(p, sim, n_samples, sim.f0 / sample_rate, None)
    return GlottalFlowSignal.from_flow(fwd.uhat, sample_rate, normalize=False)


def measure_period(p: OneMassParams, sim: Optional[SimConfig] = None) -> float:
    """Limit-cycle period of x_l + x_r in model time"""
    sim = sim or SimConfig()
    return _forward(p, sim, 2, 0.0, None).period


def _project(x: np.ndarray) -> np.ndarray:
    return np.array([
        np.clip(x[0], *ALPHA_BOUNDS),
        np.clip(x[1], *BETA_BOUNDS),
        np.clip(x[2], *DELTA_BOUNDS),
    ])


_FIT_FAILURES = (DegenerateFlowError, NumericalOverflowError)


@dataclass
class _Trial:
    x: np.ndarray
    loss: float
    fwd: _Forward
    t: float


class _Problem:
    """Loss, adjoint gradient and Gauss–Newton matrix over the decision vector"""

    def __init__(self, init: OneMassParams, target: GlottalFlowSignal, sim: SimConfig):
        self.init = init
        self.sim = sim
        self.y, f0 = _target_samples(target, sim)
        self.ratio = f0 / target.sample_rate

    def evaluate(self, x: np.ndarray, lag: Optional[int] = None) -> Tuple[float, _Forward]:
        fwd = _forward(self.init.with_decision(x), self.sim, self.y.shape[0], self.ratio, self.y, lag)
        return float(np.mean((fwd.uhat - self.y) ** 2)), fwd

    def gradient(self, x: np.ndarray, fwd: _Forward) -> np.ndarray:
        return _backward(self.init.with_decision(x), fwd, self.y)

    def gauss_newton(self, x: np.ndarray, fwd: _Forward) -> Optional[np.ndarray]:
        """(2/N) JᵀJ with J from forward differences of the sampled flow at fwd's lag"""
        cols = []
        for i, (lo, hi) in enumerate((ALPHA_BOUNDS, BETA_BOUNDS, DELTA_BOUNDS)):
            eps = JACOBIAN_EPS * max(1.0, abs(x[i]))
            if x[i] + eps > hi:
                eps = -eps
            moved = x.copy()
            moved[i] += eps
            try:
                _, fwd_i = self.evaluate(moved, fwd.lag)
            except _FIT_FAILURES:
                return None
            cols.append((fwd_i.uhat - fwd.uhat) / eps)
        jac = np.stack(cols, axis=1)
        return 2.0 / self.y.shape[0] * (jac.T @ jac)


def _line_search(problem: _Problem, x: np.ndarray, loss: float, grad: np.ndarray,
                 direction: np.ndarray, t: float, opt: OptConfig) -> Optional[_Trial]:
    """Projected Armijo backtracking along `direction`; None when no step is accepted"""
    for _ in range(opt.max_shrinks):
        x_t = _project(x + t * direction)
        if np.array_equal(x_t, x):
            return None
        decrease = float(np.dot(grad, x_t - x))
        if decrease < 0.0:
            try:
                loss_t, fwd_t = problem.evaluate(x_t)
            except _FIT_FAILURES:
                loss_t = math.inf
            if loss_t <= loss + opt.armijo_c * decrease:
                return _Trial(x=x_t, loss=loss_t, fwd=fwd_t, t=t)
        t *= opt.shrink
    return None


def _damped_direction(hess: np.ndarray, grad: np.ndarray, damping: float) -> Optional[np.ndarray]:
    diag = np.diag(hess) + DAMPING_FLOOR
    try:
        direction = np.linalg.solve(hess + damping * np.diag(diag), -grad)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(direction)) or float(np.dot(direction, grad)) >= 0.0:
        return None
    return direction


def _seed_delta(problem: _Problem, x: np.ndarray, loss: float, fwd: _Forward):
    """Best of DELTA_SEEDS when the fit would start on the Δ = 0 mirror plane"""
    for delta in DELTA_SEEDS:
        x_s = np.array([x[0], x[1], delta])
        try:
            loss_s, fwd_s = problem.evaluate(x_s)
        except _FIT_FAILURES:
            continue
        if loss_s < loss:
            x, loss, fwd = x_s, loss_s, fwd_s
    return x, loss, fwd


def estimate_params(target: GlottalFlowSignal, init: Optional[OneMassParams] = None,
                    opt: Optional[OptConfig] = None, sim: Optional[SimConfig] = None) -> FitResult:
    """Projected Levenberg–Marquardt descent with an Armijo line search.

    Each iteration solves (H + μ·diag H) d = −g, where g is the adjoint
    gradient and H the Gauss–Newton matrix of the sampled flow. A full step
    lowers μ; a shortened or failed one raises it, and a failed one falls back
    to a projected gradient step. No step at all ends the fit with
    converged=False. Initial conditions stay at those of `init`; only (α, β, Δ)
    move.

    With mirrored initial conditions the loss is even in Δ, so Δ = 0 is a
    stationary plane: a start on it is moved to the best of DELTA_SEEDS, and
    the reported Δ is made non-negative.
    """
    init = init or OneMassParams()
    opt = opt or OptConfig()
    sim = sim or SimConfig()

    f0 = target_f0(target, sim)
    sim = sim.model_copy(update={"f0": f0})
    problem = _Problem(init, target, sim)

    x = _project(init.decision)
    loss, fwd = problem.evaluate(x)
    if init.mirrored and x[2] == 0.0:
        x, loss, fwd = _seed_delta(problem, x, loss, fwd)
    grad = problem.gradient(x, fwd)
    loss_curve = [loss]
    step = opt.initial_step
    damping = opt.damping
    converged = False
    iterations = 0

    def pg_norm(x_, g_):
        return float(np.linalg.norm(x_ - _project(x_ - g_)))

    gnorm = pg_norm(x, grad)
    while True:
        if gnorm < opt.tol:
            converged = True
            break
        if iterations >= opt.max_iter:
            break

        trial = None
        hess = problem.gauss_newton(x, fwd)
        direction = _damped_direction(hess, grad, damping) if hess is not None else None
        if direction is not None:
            trial = _line_search(problem, x, loss, grad, direction, 1.0, opt)
        if trial is not None and trial.t == 1.0:
            damping = max(damping / DAMPING_FACTOR, opt.min_damping)
        else:
            damping = min(max(damping, opt.min_damping) * DAMPING_FACTOR, opt.max_damping)
        if trial is None:
            trial = _line_search(problem, x, loss, grad, -grad, step, opt)
            if trial is None:
                break
            step = min(2.0 * trial.t, opt.max_step)

        x, loss, fwd = trial.x, trial.loss, trial.fwd
        grad = problem.gradient(x, fwd)
        loss_curve.append(loss)
        iterations += 1
        gnorm = pg_norm(x, grad)

    if init.mirrored and x[2] < 0.0:
        x = np.array([x[0], x[1], -x[2]])
        grad = np.array([grad[0], grad[1], -grad[2]])

    return FitResult(
        params=init.with_decision(x),
        loss_curve=loss_curve,
        grad_norm_final=gnorm,
        iterations=iterations,
        converged=converged,
        time_normalization=(f0, target.sample_rate / f0),
        model_period=fwd.period,
    )
