"""Physical phonation models and the fixed-step RK4 integrator.

The 1-mass model is the asymmetric pair of coupled van der Pol type
oscillators

    ẍ_l + β(1 + x_l²)ẋ_l + (1 − Δ/2)x_l = α(ẋ_l + ẋ_r)
    ẍ_r + β(1 + x_r²)ẋ_r + (1 + Δ/2)x_r = α(ẋ_l + ẋ_r)

in dimensionless time (right fold stiffer for Δ > 0). The 2-mass model follows
the Steinecke-Herzel formulation in the mm / g / ms unit bundle, so a 1e-5 s
step is dt = 0.01.

Phase portraits plot fold displacement against fold velocity.
"""

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from core.dsp import GlottalFlowSignal
from core.errors import DegenerateFlowError, NumericalOverflowError

DEFAULT_INITIAL_STATE = (0.1, 0.0, 0.1, 0.0)
COLLISION_FACTOR = 3.0


class OneMassParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=0.6, description="Glottal coupling / driving pressure")
    beta: float = Field(default=0.32, gt=0.0, description="Nonlinear damping")
    delta: float = Field(default=0.0, description="Left-right stiffness asymmetry")
    x0_l: float = Field(default=DEFAULT_INITIAL_STATE[0])
    v0_l: float = Field(default=DEFAULT_INITIAL_STATE[1])
    x0_r: float = Field(default=DEFAULT_INITIAL_STATE[2])
    v0_r: float = Field(default=DEFAULT_INITIAL_STATE[3])
    rest_gap: float = Field(default=0.1, gt=0.0, description="Baseline glottal half-width")

    @field_validator("*")
    @classmethod
    def _finite(cls, v):
        if not math.isfinite(v):
            raise ValueError("parameters must be finite")
        return v

    @property
    def initial_state(self) -> np.ndarray:
        return np.array([self.x0_l, self.v0_l, self.x0_r, self.v0_r])

    @property
    def decision(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.delta])

    @property
    def mirrored(self) -> bool:
        """Both folds start from the same state, so Δ and −Δ give mirrored runs"""
        return self.x0_l == self.x0_r and self.v0_l == self.v0_r

    def with_decision(self, values) -> "OneMassParams":
        alpha, beta, delta = (float(v) for v in values)
        return self.model_copy(update={"alpha": alpha, "beta": beta, "delta": delta})


class TwoMassParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    m1: float = Field(default=0.125, gt=0.0, description="Lower mass (g)")
    m2: float = Field(default=0.025, gt=0.0, description="Upper mass (g)")
    k1: float = Field(default=0.08, gt=0.0, description="Lower stiffness (g/ms²)")
    k2: float = Field(default=0.008, gt=0.0, description="Upper stiffness (g/ms²)")
    kc: float = Field(default=0.025, gt=0.0, description="Coupling stiffness between the masses")
    zeta1: float = Field(default=0.1, ge=0.0, description="Damping ratio of the lower mass")
    zeta2: float = Field(default=0.1, ge=0.0, description="Damping ratio of the upper mass")
    p_s: float = Field(default=0.008, ge=0.0, description="Subglottal pressure (g/(mm·ms²))")
    q: float = Field(default=1.0, gt=0.0, le=2.0, description="Asymmetry: left fold stiffness × q, mass / q")
    a01: float = Field(default=0.05, gt=0.0, description="Lower rest area (mm²)")
    a02: float = Field(default=0.05, gt=0.0, description="Upper rest area (mm²)")
    length: float = Field(default=1.4, gt=0.0, description="Fold length (mm)")
    d1: float = Field(default=0.25, gt=0.0, description="Lower mass depth (mm)")
    d2: float = Field(default=0.05, gt=0.0, description="Upper mass depth (mm)")

    def fold(self, side: str) -> Tuple[float, float, float, float, float, float, float]:
        """(m1, m2, k1, k2, kc, r1, r2) for one fold"""
        scale = self.q if side == "left" else 1.0
        m1, m2 = self.m1 / scale, self.m2 / scale
        k1, k2, kc = self.k1 * scale, self.k2 * scale, self.kc * scale
        r1 = 2.0 * self.zeta1 * math.sqrt(m1 * k1)
        r2 = 2.0 * self.zeta2 * math.sqrt(m2 * k2)
        return m1, m2, k1, k2, kc, r1, r2


@dataclass(frozen=True)
class TrajectorySet:
    """Uniformly sampled integrator output, state0 included.

    1-mass columns: (x_l, v_l, x_r, v_r).
    2-mass columns: (x1_l, v1_l, x2_l, v2_l, x1_r, v1_r, x2_r, v2_r).
    """
    times: np.ndarray
    states: np.ndarray
    dt: float

    @property
    def n_steps(self) -> int:
        return self.states.shape[0]


# ---------------------------------------------------------------------------
# Right-hand sides
# ---------------------------------------------------------------------------

def one_mass_rhs(state, p: OneMassParams) -> np.ndarray:
    x_l, v_l, x_r, v_r = state
    coupling = p.alpha * (v_l + v_r)
    a_l = coupling - p.beta * (1.0 + x_l * x_l) * v_l - (1.0 - p.delta / 2.0) * x_l
    a_r = coupling - p.beta * (1.0 + x_r * x_r) * v_r - (1.0 + p.delta / 2.0) * x_r
    return np.array([v_l, a_l, v_r, a_r])


def glottal_areas(state, p: TwoMassParams) -> Tuple[float, float]:
    x1l, _, x2l, _, x1r, _, x2r, _ = state
    return p.a01 + p.length * (x1l + x1r), p.a02 + p.length * (x2l + x2r)


def _fold_accelerations(x1, v1, x2, v2, a1, a2, force1, fold):
    m1, m2, k1, k2, kc, r1, r2 = fold
    f1 = -r1 * v1 - k1 * x1 - kc * (x1 - x2) + force1
    f2 = -r2 * v2 - k2 * x2 - kc * (x2 - x1)
    if a1 <= 0.0:
        f1 -= COLLISION_FACTOR * k1 * a1 / 2.0
    if a2 <= 0.0:
        f2 -= COLLISION_FACTOR * k2 * a2 / 2.0
    return f1 / m1, f2 / m2


def two_mass_rhs(state, p: TwoMassParams) -> np.ndarray:
    x1l, v1l, x2l, v2l, x1r, v1r, x2r, v2r = state
    a1, a2 = glottal_areas(state, p)
    a_min = min(a1, a2)

    # Bernoulli pressure on the lower masses only while the glottis is open
    if a_min > 0.0 and a1 > 0.0:
        force1 = p.length * p.d1 * p.p_s * (1.0 - (a_min / a1) ** 2)
    else:
        force1 = 0.0

    acc1l, acc2l = _fold_accelerations(x1l, v1l, x2l, v2l, a1 / p.length, a2 / p.length, force1, p.fold("left"))
    acc1r, acc2r = _fold_accelerations(x1r, v1r, x2r, v2r, a1 / p.length, a2 / p.length, force1, p.fold("right"))
    return np.array([v1l, acc1l, v2l, acc2l, v1r, acc1r, v2r, acc2r])


def mechanical_energy(states: np.ndarray, p: TwoMassParams) -> np.ndarray:
    """Kinetic plus spring energy of both folds along a 2-mass trajectory"""
    total = np.zeros(states.shape[0])
    for side, offset in (("left", 0), ("right", 4)):
        m1, m2, k1, k2, kc, _, _ = p.fold(side)
        x1, v1, x2, v2 = (states[:, offset + i] for i in range(4))
        total += 0.5 * (m1 * v1 ** 2 + m2 * v2 ** 2 + k1 * x1 ** 2 + k2 * x2 ** 2 + kc * (x1 - x2) ** 2)
    return total


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

def integrate_rk4(rhs: Callable[[np.ndarray], np.ndarray], state0, dt: float, n_steps: int) -> TrajectorySet:
    """Classical fixed-step RK4; every step is recorded, state0 included"""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")

    s = np.array(state0, dtype=np.float64)
    states = np.empty((n_steps + 1, s.shape[0]))
    states[0] = s
    half = 0.5 * dt
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(n_steps):
            k1 = rhs(s)
            k2 = rhs(s + half * k1)
            k3 = rhs(s + half * k2)
            k4 = rhs(s + dt * k3)
            s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(s)):
                partial = TrajectorySet(times=np.arange(n + 1) * dt, states=states[:n + 1].copy(), dt=dt)
                raise NumericalOverflowError(f"Non-finite state at step {n + 1}", partial=partial)
            states[n + 1] = s
    return TrajectorySet(times=np.arange(n_steps + 1) * dt, states=states, dt=dt)


def one_mass_derivative(xl, vl, xr, vr, alpha, beta, k_l, k_r):
    """Scalar 1-mass right-hand side; k_l = 1 − Δ/2, k_r = 1 + Δ/2"""
    coupling = alpha * (vl + vr)
    return (vl, coupling - beta * (1.0 + xl * xl) * vl - k_l * xl,
            vr, coupling - beta * (1.0 + xr * xr) * vr - k_r * xr)


def one_mass_step(s, alpha, beta, k_l, k_r, h):
    """One RK4 step of the 1-mass model on plain floats"""
    xl, vl, xr, vr = s
    hh = 0.5 * h
    a = one_mass_derivative(xl, vl, xr, vr, alpha, beta, k_l, k_r)
    b = one_mass_derivative(xl + hh * a[0], vl + hh * a[1], xr + hh * a[2], vr + hh * a[3], alpha, beta, k_l, k_r)
    c = one_mass_derivative(xl + hh * b[0], vl + hh * b[1], xr + hh * b[2], vr + hh * b[3], alpha, beta, k_l, k_r)
    d = one_mass_derivative(xl + h * c[0], vl + h * c[1], xr + h * c[2], vr + h * c[3], alpha, beta, k_l, k_r)
    h6 = h / 6.0
    return (xl + h6 * (a[0] + 2.0 * b[0] + 2.0 * c[0] + d[0]),
            vl + h6 * (a[1] + 2.0 * b[1] + 2.0 * c[1] + d[1]),
            xr + h6 * (a[2] + 2.0 * b[2] + 2.0 * c[2] + d[2]),
            vr + h6 * (a[3] + 2.0 * b[3] + 2.0 * c[3] + d[3]))


def integrate_one_mass(p: OneMassParams, dt: float, n_steps: int) -> TrajectorySet:
    """integrate_rk4 specialised to the 1-mass model, without per-step arrays"""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")

    k_l, k_r = 1.0 - p.delta / 2.0, 1.0 + p.delta / 2.0
    s = (p.x0_l, p.v0_l, p.x0_r, p.v0_r)
    rows = [s]
    for n in range(n_steps):
        try:
            s = one_mass_step(s, p.alpha, p.beta, k_l, k_r, dt)
        except OverflowError:
            s = (math.inf,) * 4
        if not all(math.isfinite(v) for v in s):
            partial = TrajectorySet(times=np.arange(len(rows)) * dt, states=np.array(rows), dt=dt)
            raise NumericalOverflowError(f"Non-finite state at step {n + 1}", partial=partial)
        rows.append(s)
    return TrajectorySet(times=np.arange(n_steps + 1) * dt, states=np.array(rows), dt=dt)


def simulate_one_mass(p: OneMassParams, dt: float = 0.01, n_steps: int = 5000) -> TrajectorySet:
    return integrate_one_mass(p, dt, n_steps)


def simulate_two_mass(p: TwoMassParams, state0=None, dt: float = 0.01, n_steps: int = 20000) -> TrajectorySet:
    s0 = np.zeros(8) if state0 is None else np.asarray(state0, dtype=np.float64)
    return integrate_rk4(lambda s: two_mass_rhs(s, p), s0, dt, n_steps)


# ---------------------------------------------------------------------------
# Model glottal flow
# ---------------------------------------------------------------------------

def model_flow(traj: TrajectorySet, p: OneMassParams) -> GlottalFlowSignal:
    """u(t) = max(0, rest_gap + x_l + x_r), amplitude-normalized"""
    u = np.maximum(0.0, p.rest_gap + traj.states[:, 0] + traj.states[:, 2])
    if not np.any(u > 0.0):
        raise DegenerateFlowError("Folds never open: model flow is identically zero")
    return GlottalFlowSignal.from_flow(u, 1.0 / traj.dt, normalize=True)


def two_mass_flow(traj: TrajectorySet, p: TwoMassParams) -> GlottalFlowSignal:
    """Flow proportional to the minimum of the two mass-level areas, clipped at closure"""
    a1 = p.a01 + p.length * (traj.states[:, 0] + traj.states[:, 4])
    a2 = p.a02 + p.length * (traj.states[:, 2] + traj.states[:, 6])
    u = np.maximum(0.0, np.minimum(a1, a2))
    if not np.any(u > 0.0):
        raise DegenerateFlowError("Glottis never opens: 2-mass flow is identically zero")
    return GlottalFlowSignal.from_flow(u, 1.0 / traj.dt, normalize=True)
