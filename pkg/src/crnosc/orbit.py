"""Periodic orbits: Poincare-section shooting, monodromy, Floquet multipliers
relative to the stoichiometric subspace, and Hausdorff comparison."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .kinetics import compile_system
from .model import Network
from .odeint import IntegratorConfig, Section, integrate, integrate_with_variational
from .stoich import ImageBasis, rank_and_image

log = logging.getLogger(__name__)

STABLE = "nondegenerate-stable"
UNSTABLE = "nondegenerate-unstable"
DEGENERATE = "degenerate"
UNDETERMINED = "undetermined"


class OrbitSearchError(RuntimeError):
    """Orbit search failed; ``reason`` is one of ``no-return``,
    ``converged-to-equilibrium`` or ``max-returns-exceeded``."""

    def __init__(self, reason: str, message: str):
        super().__init__(f"{reason}: {message}")
        self.reason = reason


class FloquetError(ValueError):
    pass


@dataclass(frozen=True)
class OrbitSearchConfig:
    burn_in: float = 150.0
    max_returns: int = 30
    newton_tol: float = 1e-10
    trivial_tol: float = 1e-4
    unit_circle_tol: float = 1e-3
    return_tol: float = 1e-7
    n_samples: int = 512
    equilibrium_tol: float = 1e-8
    max_return_time: float = 1000.0
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        for name in ("burn_in", "newton_tol", "trivial_tol", "unit_circle_tol", "return_tol",
                     "equilibrium_tol", "max_return_time"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_returns < 1 or self.n_samples < 256:
            raise ValueError("max_returns must be >= 1 and n_samples >= 256")


@dataclass
class PeriodicOrbit:
    anchor: np.ndarray
    period: float
    samples: np.ndarray
    monodromy: np.ndarray
    multipliers_relative: np.ndarray
    classification: str
    return_error: float = 0.0
    multipliers: np.ndarray = None
    species: tuple[str, ...] = ()
    newton_steps: int = 0
    transient: object = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.anchor.size

    def report(self, samples_csv_path: Optional[str] = None) -> dict:
        return orbit_report(self, samples_csv_path)


@dataclass
class _OdeSystem:
    field: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    basis: ImageBasis
    positive: bool = True
    species: tuple[str, ...] = ()


def system_for(net: Network) -> _OdeSystem:
    f, j = compile_system(net)
    return _OdeSystem(f, j, rank_and_image(net.stoichiometric_matrix()), True, net.species)


def relative_floquet(monodromy, basis: ImageBasis, cfg: Optional[OrbitSearchConfig] = None):
    """Multipliers of ``B^t M B`` and the orbit classification.

    Valid because the flow preserves cosets of im Gamma, so M maps im Gamma to
    itself. Returns ``(multipliers, classification)`` with the trivial
    multiplier listed first.
    """
    cfg = cfg or OrbitSearchConfig()
    M = np.asarray(monodromy, dtype=float)
    B = basis.B
    if M.shape != (B.shape[0], B.shape[0]):
        raise FloquetError(f"monodromy shape {M.shape} does not match basis dimension {B.shape[0]}")
    m_rel = B.T @ M @ B
    mu = np.linalg.eigvals(m_rel) if basis.rank else np.zeros(0, dtype=complex)
    if mu.size == 0:
        raise FloquetError("stoichiometric subspace is trivial; no multipliers")
    i = int(np.argmin(np.abs(mu - 1)))
    if abs(mu[i] - 1) > cfg.trivial_tol:
        raise FloquetError(f"no multiplier within {cfg.trivial_tol} of 1 (closest {mu[i]:.6g}); "
                           "monodromy is probably inaccurate")
    rest = np.delete(mu, i)
    ordered = np.concatenate([[mu[i]], rest[np.argsort(-np.abs(rest))]])
    if np.any(np.abs(rest - 1) <= cfg.trivial_tol):
        return ordered, DEGENERATE
    mod = np.abs(rest)
    if np.any(np.abs(mod - 1) <= cfg.unit_circle_tol):
        return ordered, UNDETERMINED
    if np.all(mod < 1):
        return ordered, STABLE
    return ordered, UNSTABLE


def _period_estimate(traj, point, normal) -> Optional[float]:
    """Median gap between upward section crossings near ``point`` over the
    second half of a transient run."""
    half = traj.times >= traj.times[0] + 0.5 * (traj.times[-1] - traj.times[0])
    states = traj.states[half]
    g = (states - point) @ normal
    span = np.ptp(states, axis=0).max() if len(states) else 0.0
    times = traj.times[half]
    up = np.flatnonzero((g[:-1] < 0) & (g[1:] >= 0))
    near = [i for i in up if np.linalg.norm(states[i] - point) < 0.25 * span]
    if len(near) < 2:
        return None
    gaps = np.diff(times[near])
    gaps = gaps[gaps > 0]
    return float(np.median(gaps)) if gaps.size else None


def find_periodic_orbit_system(system: _OdeSystem, x0, cfg: Optional[OrbitSearchConfig] = None) -> PeriodicOrbit:
    """Orbit search for an arbitrary vector field with known image basis."""
    cfg = cfg or OrbitSearchConfig()
    icfg = cfg.integrator
    F, J, B = system.field, system.jacobian, system.basis.B
    x0 = np.asarray(x0, dtype=float)

    burn = integrate(F, x0, cfg.burn_in, icfg, positive=system.positive)
    p = burn.final_state
    fp = F(p)
    speed = np.linalg.norm(fp)
    if speed <= cfg.equilibrium_tol * max(1.0, np.linalg.norm(p)):
        raise OrbitSearchError("converged-to-equilibrium",
                               f"field norm {speed:.3g} at the end of the transient")
    normal = fp / speed
    t_est = _period_estimate(burn, p, normal)
    t_min = 0.5 * t_est if t_est else 1e-9
    horizon = min(cfg.max_return_time, 3.0 * t_est) if t_est else cfg.max_return_time

    x = p.copy()
    best = np.inf
    stalls = 0
    last_speeds = []
    for step in range(1, cfg.max_returns + 1):
        sec = Section(p, normal, 1, t_min, 1)
        traj, phi = integrate_with_variational(F, J, x, horizon, icfg, positive=system.positive, section=sec)
        if not traj.events:
            end_speed = np.linalg.norm(F(traj.final_state))
            if end_speed <= cfg.equilibrium_tol * max(1.0, np.linalg.norm(traj.final_state)):
                raise OrbitSearchError("converged-to-equilibrium", "trajectory came to rest without returning")
            raise OrbitSearchError("no-return", f"no return to the section within t={horizon:.4g}")
        T, xT = traj.events[0]
        xT = xT[: x.size]
        M = phi.final
        resid = xT - x
        rnorm = np.linalg.norm(resid)
        scale = max(1.0, np.linalg.norm(x))
        log.debug("return %d: T=%.12g residual=%.3e", step, T, rnorm)
        last_speeds.append(np.linalg.norm(F(xT)))
        if len(last_speeds) >= 4 and last_speeds[-1] < cfg.equilibrium_tol * 1e3 * scale \
                and last_speeds[-1] < 0.1 * last_speeds[0]:
            raise OrbitSearchError("converged-to-equilibrium", "successive returns contract to a rest point")
        if rnorm <= cfg.newton_tol * scale:
            break
        if rnorm < 0.5 * best:
            best, stalls = rnorm, 0
        else:
            stalls += 1
            if rnorm <= cfg.return_tol * scale and stalls >= 2:
                break  # at the noise floor of the integrator
        if not t_est:
            t_est = T
            t_min = 0.5 * T
            horizon = min(cfg.max_return_time, 3.0 * T)

        # Newton in coset coordinates x + B w, unknowns (w, T).
        r = B.shape[1]
        lhs = np.zeros((r + 1, r + 1))
        lhs[:r, :r] = B.T @ (M - np.eye(x.size)) @ B
        lhs[:r, r] = B.T @ F(xT)
        lhs[r, :r] = normal @ B
        rhs = np.concatenate([-(B.T @ resid), [-float(normal @ (x - p))]])
        sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
        dx = B @ sol[:r]
        if np.linalg.norm(dx) > 0.5 * np.linalg.norm(xT - p) + 10 * rnorm or not np.all(np.isfinite(dx)):
            x = xT  # Newton step implausibly large: fall back to a plain return
        else:
            cand = x + dx
            x = cand if (not system.positive or np.all(cand > 0)) else xT
    else:
        raise OrbitSearchError("max-returns-exceeded",
                               f"return residual {rnorm:.3g} after {cfg.max_returns} returns")

    # Re-integrate exactly one period from the converged anchor.
    final, phi = integrate_with_variational(F, J, x, T, icfg, positive=system.positive)
    M = phi.final
    ret_err = float(np.linalg.norm(final.final_state - x))
    ts = np.linspace(0.0, T, cfg.n_samples, endpoint=False)
    samples = final(ts)
    mu_rel, cls = relative_floquet(M, system.basis, cfg)
    return PeriodicOrbit(anchor=x, period=float(T), samples=samples, monodromy=M,
                         multipliers_relative=mu_rel, classification=cls, return_error=ret_err,
                         multipliers=np.linalg.eigvals(M), species=tuple(system.species), newton_steps=step,
                         transient=burn)


def find_periodic_orbit(net: Network, x0, cfg: Optional[OrbitSearchConfig] = None) -> PeriodicOrbit:
    """Let the network settle from ``x0``, then converge onto the periodic orbit
    it approaches by damped Newton shooting on a section transverse to the flow."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (net.n_species,):
        raise ValueError(f"initial state has length {x0.size}, network has {net.n_species} species")
    return find_periodic_orbit_system(system_for(net), x0, cfg)


def spectra_match(a, b, tol: float) -> bool:
    """Multiset equality of two spectra within ``tol`` (optimal pairing)."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return False
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return bool(np.all(cost[rows, cols] <= tol))


def floquet_invariance_check(orbit, A, tol: float = 1e-7) -> bool:
    """True iff ``A M A^-1`` has the spectrum of the monodromy ``M``.

    ``orbit`` may be a :class:`PeriodicOrbit` or a bare monodromy matrix.
    """
    M = orbit.monodromy if isinstance(orbit, PeriodicOrbit) else np.asarray(orbit, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.shape != M.shape:
        raise ValueError("transform and monodromy differ in shape")
    if np.linalg.cond(A) > 1 / np.finfo(float).eps:
        raise np.linalg.LinAlgError("transform matrix is singular")
    conj = A @ M @ np.linalg.inv(A)
    return spectra_match(np.linalg.eigvals(M), np.linalg.eigvals(conj), tol)


def _to_closed_polyline(points: np.ndarray, polyline: np.ndarray) -> np.ndarray:
    """Distance from each point to the closed polyline through ``polyline``."""
    start = polyline
    seg = np.roll(polyline, -1, axis=0) - start
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    seg_len2[seg_len2 == 0] = 1.0
    out = np.empty(len(points))
    for lo in range(0, len(points), 256):
        p = points[lo:lo + 256]
        rel = p[:, None, :] - start[None, :, :]
        s = np.clip(np.einsum("psd,sd->ps", rel, seg) / seg_len2, 0.0, 1.0)
        d = rel - s[..., None] * seg[None, :, :]
        out[lo:lo + 256] = np.sqrt(np.einsum("psd,psd->ps", d, d).min(axis=1))
    return out


def hausdorff_distance(samples_a, samples_b, projection: Optional[Sequence[int]] = None,
                       closed_curves: bool = False) -> float:
    """Symmetric Hausdorff distance between two finite point clouds, optionally
    after restricting both to the coordinates in ``projection``.

    With ``closed_curves=True`` each sample list is read as an ordered closed
    loop and distances are measured to the polygon through the other loop's
    samples instead of to its vertices. This removes the O(spacing) floor of
    the point-cloud distance when comparing two samplings of one curve.
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=float))
    b = np.atleast_2d(np.asarray(samples_b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("Hausdorff distance needs two nonempty sets")
    if projection is not None:
        idx = list(projection)
        a, b = a[:, idx], b[:, idx]
    if closed_curves:
        return float(max(_to_closed_polyline(a, b).max(), _to_closed_polyline(b, a).max()))
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(max(d_ab.max(), d_ba.max()))


def orbit_report(orbit: PeriodicOrbit, samples_csv_path: Optional[str] = None) -> dict:
    return {
        "schema": 1,
        "species": list(orbit.species),
        "anchor": [float(v) for v in orbit.anchor],
        "period": float(orbit.period),
        "multipliers_relative": [{"re": float(m.real), "im": float(m.imag)} for m in orbit.multipliers_relative],
        "classification": orbit.classification,
        "return_error": float(orbit.return_error),
        "samples_csv_path": samples_csv_path,
    }


def write_samples_csv(path, orbit: PeriodicOrbit) -> None:
    ts = np.linspace(0.0, orbit.period, len(orbit.samples), endpoint=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(["t", *orbit.species]) + "\n")
        for t, x in zip(ts, orbit.samples):
            fh.write(",".join(f"{v:.17g}" for v in (t, *x)) + "\n")


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
