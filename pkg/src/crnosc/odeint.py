"""Adaptive Dormand-Prince 5(4) integration with dense output, variational
equations and section-crossing detection.

The propagated solution is 5th order, the embedded 4th order solution gives the
local error estimate, and step sizes follow a PI controller. Each accepted step
keeps a quartic continuous extension so a trajectory can be evaluated at any
time in its range.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

# Dormand & Prince (1980) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# 5th minus 4th order weights, including the FSAL stage.
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# Quartic dense output (Shampine 1986), coefficients of theta, theta^2, theta^3, theta^4.
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_PI_BETA = 0.04
_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_MAX_POSITIVITY_RETRIES = 10


class IntegrationError(RuntimeError):
    """Base class; ``reason`` is a short machine-readable tag."""

    reason = "integration-failure"

    def __init__(self, message: str, t: float = float("nan")):
        super().__init__(message)
        self.t = t


class StepLimitExceeded(IntegrationError):
    reason = "step-limit"


class PositivityError(IntegrationError):
    reason = "left-positive-orthant"


class StiffnessError(IntegrationError):
    """Step size underflowed; typically the fast/slow split is too extreme."""

    reason = "stiffness"


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-9
    atol: float = 1e-11
    max_step: float = math.inf
    max_steps: int = 5_000_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.max_step > 0 and self.max_steps > 0):
            raise ValueError("rtol, atol, max_step and max_steps must be positive")


@dataclass
class Section:
    """Hyperplane ``<x - point, normal> = 0`` used as an integration event.

    ``direction`` is +1 for crossings where the signed distance increases,
    -1 for decreasing, 0 for both. Crossings before ``t_min`` are ignored and
    integration stops at the ``terminal``-th accepted crossing (0: never).
    """

    point: np.ndarray
    normal: np.ndarray
    direction: int = 1
    t_min: float = 0.0
    terminal: int = 1

    def value(self, x: np.ndarray) -> float:
        return float(np.dot(x[: self.point.size] - self.point, self.normal))


class Trajectory:
    """Accepted steps of one run plus a dense interpolant for each step."""

    def __init__(self, times, states, seg_t, seg_h, seg_y, seg_q, n_state: Optional[int] = None):
        self.times = np.asarray(times, dtype=float)
        self.full_states = np.asarray(states, dtype=float)
        self.n_state = self.full_states.shape[1] if n_state is None else n_state
        self._seg_t = np.asarray(seg_t, dtype=float)
        self._seg_h = np.asarray(seg_h, dtype=float)
        dim = self.full_states.shape[1]
        self._seg_y = np.asarray(seg_y, dtype=float).reshape(len(self._seg_t), dim)
        self._seg_q = np.asarray(seg_q, dtype=float).reshape(len(self._seg_t), dim, 4)
        self.events: list[tuple[float, np.ndarray]] = []

    @property
    def states(self) -> np.ndarray:
        return self.full_states[:, : self.n_state]

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1].copy()

    def __len__(self):
        return len(self.times)

    def full(self, t):
        """Dense evaluation of the complete integrated vector at time(s) ``t``."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        if len(self._seg_t) == 0:
            out = np.repeat(self.full_states[:1], len(t_arr), axis=0)
        else:
            idx = np.clip(np.searchsorted(self._seg_t, t_arr, side="right") - 1, 0, len(self._seg_t) - 1)
            theta = (t_arr - self._seg_t[idx]) / self._seg_h[idx]
            powers = np.stack([theta, theta ** 2, theta ** 3, theta ** 4], axis=1)
            out = self._seg_y[idx] + self._seg_h[idx, None] * np.einsum("kdj,kj->kd", self._seg_q[idx], powers)
        return out[0] if np.ndim(t) == 0 else out

    def __call__(self, t):
        out = self.full(t)
        return out[..., : self.n_state]

    def to_csv(self, path, species) -> None:
        write_trajectory_csv(path, self, species)


class FundamentalPath:
    """Fundamental matrix Phi(t) of the variational equation, Phi(t0) = I."""

    def __init__(self, traj: Trajectory, n: int):
        self._traj = traj
        self.n = n
        self.times = traj.times
        self.matrices = traj.full_states[:, n:].reshape(-1, n, n)

    def __call__(self, t) -> np.ndarray:
        full = self._traj.full(t)
        return full[..., self.n:].reshape(*np.shape(full)[:-1], self.n, self.n)

    @property
    def final(self) -> np.ndarray:
        return self.matrices[-1].copy()


def _initial_step(fun, t0, y0, f0, t_end, rtol, atol):
    # Hairer, Norsett & Wanner, Solving ODEs I, section II.4.
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t_end - t0)
    y1 = y0 + h0 * f0
    f1 = fun(y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, t_end - t0)


def _dopri(fun, y0, t0, t_end, cfg: IntegratorConfig, n_check: int, positive: bool,
           section: Optional[Section]) -> Trajectory:
    y = np.array(y0, dtype=float)
    dim = y.size
    t = float(t0)
    rtol, atol = cfg.rtol, cfg.atol
    times, states = [t], [y.copy()]
    seg_t, seg_h, seg_y, seg_q = [], [], [], []
    events: list[tuple[float, np.ndarray]] = []
    if t_end <= t:
        traj = Trajectory(times, states, seg_t, seg_h, seg_y, seg_q, n_check)
        return traj

    f = fun(y)
    h = min(_initial_step(fun, t, y, f, t_end, rtol, atol), cfg.max_step)
    K = np.empty((7, dim))
    err_old = 1e-4
    rejected = False
    g_old = section.value(y) if section is not None else 0.0
    steps = 0
    shrink = 0

    while t < t_end:
        if steps >= cfg.max_steps:
            raise StepLimitExceeded(f"exceeded {cfg.max_steps} steps at t={t:.6g} "
                                    f"(last step {h:.3g}; a tiny step suggests stiffness)", t)
        min_h = 16 * np.spacing(max(abs(t), 1.0))
        h = min(h, cfg.max_step)
        if h < min_h:
            raise StiffnessError(f"step size underflow at t={t:.6g} (h={h:.3g})", t)
        last = t + h >= t_end or t_end - (t + h) < min_h
        if last:
            h = t_end - t

        K[0] = f
        for s in range(1, 6):
            K[s] = fun(y + h * (_A[s] @ K[:s]))
        y_new = y + h * (_B @ K[:6])
        f_new = fun(y_new)
        K[6] = f_new
        err_vec = h * (_E @ K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        ratio = err_vec / scale
        err = math.sqrt(float(ratio @ ratio) / dim)
        if not math.isfinite(err):
            err = 1e10

        if err > 1.0:
            fac = err ** (0.2 - 0.75 * _PI_BETA)
            h = h / min(1 / _MIN_FACTOR, fac / _SAFETY)
            rejected = True
            continue

        if positive:
            lead = y_new[:n_check]
            low = lead.min() if n_check else 0.0
            if low < -atol:
                # an overshoot across an invariant face is usually a step-size
                # artefact; retry smaller before declaring the state infeasible
                if shrink < _MAX_POSITIVITY_RETRIES:
                    shrink += 1
                    h *= 0.5
                    rejected = True
                    continue
                bad = int(np.argmin(lead))
                raise PositivityError(f"component {bad} reached {lead[bad]:.3g} at t={t + h:.6g}", t + h)
            if low >= 0:
                shrink = 0  # clamped steps keep the retry budget spent
            else:
                np.maximum(lead, atol / 10, out=lead, where=lead < 0)
                f_new = fun(y_new)
        steps += 1

        t_new = t + h
        q = K.T @ _P
        seg_t.append(t)
        seg_h.append(h)
        seg_y.append(y)
        seg_q.append(q)

        stop = False
        if section is not None:
            g_new = section.value(y_new)
            d = section.direction
            crossed = (g_old < 0 <= g_new and d >= 0) or (g_old > 0 >= g_new and d <= 0)
            if crossed and t_new > section.t_min:
                t_ev = _refine_in_step(section, t, h, y, q, g_old, g_new)
                if t_ev > section.t_min:
                    x_ev = y + h * (q @ _powers((t_ev - t) / h))
                    events.append((t_ev, x_ev))
                    if section.terminal and len(events) >= section.terminal:
                        t_new, y_new, stop = t_ev, x_ev, True
            g_old = g_new

        times.append(t_new)
        states.append(y_new)
        t, y, f = t_new, y_new, f_new
        if stop or last:
            break

        fac11 = err ** (0.2 - 0.75 * _PI_BETA)
        fac = fac11 / err_old ** _PI_BETA
        fac = max(1 / _MAX_FACTOR, min(1 / _MIN_FACTOR, fac / _SAFETY))
        h_new = h / fac
        if rejected:
            h_new = min(h_new, h)
        h = h_new
        err_old = max(err, 1e-4)
        rejected = False

    traj = Trajectory(times, states, seg_t, seg_h, seg_y, seg_q, n_check)
    traj.events = events
    return traj


def _powers(theta: float) -> np.ndarray:
    return np.array([theta, theta ** 2, theta ** 3, theta ** 4])


def _refine_in_step(section: Section, t, h, y, q, g_lo, g_hi) -> float:
    if g_hi == 0.0:
        return t + h
    if g_lo == 0.0:
        return t

    def g(theta):
        return section.value(y + h * (q @ _powers(theta)))

    theta = brentq(g, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return t + theta * h


def integrate(field: Callable[[np.ndarray], np.ndarray], x0, t_end: float,
              cfg: Optional[IntegratorConfig] = None, *, t0: float = 0.0, positive: bool = True,
              section: Optional[Section] = None) -> Trajectory:
    """Integrate the autonomous system ``x' = field(x)`` from ``t0`` to ``t_end``.

    With ``positive=True`` the run fails once a component drops below
    ``-atol``; smaller negative excursions are clamped to ``atol/10``.
    """
    cfg = cfg or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    if positive and np.any(x0 < 0):
        raise PositivityError("initial state has negative components", t0)
    return _dopri(field, x0, t0, t_end, cfg, x0.size, positive, section)


def variational_system(field, jacobian, n: int):
    """Right-hand side of the joint state + fundamental-matrix system."""

    def rhs(Y):
        x = Y[:n]
        phi = Y[n:].reshape(n, n)
        out = np.empty_like(Y)
        out[:n] = field(x)
        out[n:] = (jacobian(x) @ phi).ravel()
        return out

    return rhs


def integrate_with_variational(field, jacobian, x0, t_end: float, cfg: Optional[IntegratorConfig] = None,
                               *, t0: float = 0.0, positive: bool = True,
                               section: Optional[Section] = None) -> tuple[Trajectory, FundamentalPath]:
    """Jointly integrate ``x' = F(x)`` and ``Phi' = DF(x) Phi`` with ``Phi(t0) = I``
    under a single error control."""
    cfg = cfg or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if positive and np.any(x0 < 0):
        raise PositivityError("initial state has negative components", t0)
    Y0 = np.concatenate([x0, np.eye(n).ravel()])
    traj = _dopri(variational_system(field, jacobian, n), Y0, t0, t_end, cfg, n, positive, section)
    return traj, FundamentalPath(traj, n)


def find_crossings(traj: Trajectory, plane_point, plane_normal, direction: int = 1) -> list[tuple[float, np.ndarray]]:
    """All times at which the trajectory crosses the hyperplane through
    ``plane_point`` with normal ``plane_normal`` in the requested direction,
    root-refined on the dense output."""
    normal = np.asarray(plane_normal, dtype=float)
    if not np.any(normal):
        raise ValueError("plane normal must be nonzero")
    point = np.asarray(plane_point, dtype=float)
    g = (traj.states - point) @ normal
    out = []

    def value(t):
        return float((traj(t) - point) @ normal)

    for i in range(len(g) - 1):
        lo, hi = g[i], g[i + 1]
        up = lo < 0 <= hi
        down = lo > 0 >= hi
        if not ((up and direction >= 0) or (down and direction <= 0)):
            continue
        t_lo, t_hi = traj.times[i], traj.times[i + 1]
        if hi == 0.0:
            t_ev = t_hi
        else:
            t_ev = brentq(value, t_lo, t_hi, xtol=1e-15 * max(1.0, abs(t_hi)), rtol=4 * np.finfo(float).eps,
                          maxiter=200)
        out.append((float(t_ev), traj(t_ev)))
    return out


def write_trajectory_csv(path, traj: Trajectory, species) -> None:
    """Header ``t,<species...>``, one row per accepted step, 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *species])
        for t, x in zip(traj.times, traj.states):
            writer.writerow([f"{t:.17g}", *(f"{v:.17g}" for v in x)])
