"""Extending an oscillating network by reversible reactions on new species.

Given added reactions ``a_i X + b_i Y <-> a_i' X + b_i' Y`` whose net change
``beta = b' - b`` on the new species has full column rank m, the rate
constants

    k_forward_i  = eps^-1 * eta^-(column sum i of b_hat)
    k_backward_i = eps^-1 * eta^-(column sum i of b_hat')

make the new species fast (eps) and small (eta), so that for small enough
eta and then eps the extended network keeps a nondegenerate (resp. linearly
stable) periodic orbit close to the original one. ``b_hat`` are the rows of
``b`` for the m new species whose rows of ``beta`` form the nonsingular block.

This module builds those matrices, synthesizes the rates and the extended
network, evaluates the slow-manifold objects used in the construction, and
numerically checks the whole thing for a given orbit of the base network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kinetics import monomials
from .model import Network, Reaction, parse_network
from .odeint import IntegrationError
from .orbit import (STABLE, FloquetError, OrbitSearchConfig, OrbitSearchError, PeriodicOrbit,
                    find_periodic_orbit, hausdorff_distance)
from .stoich import conservation_laws

_DET_TOL = 1e-8
_RANK_TOL = 1e-10


class ExtensionError(ValueError):
    reason = "invalid-extension"


class RankDeficient(ExtensionError):
    reason = "rank-deficient"

    def __init__(self, beta: np.ndarray, rank: int, m: int, new_species: Sequence[str]):
        self.beta = beta
        self.rank = rank
        super().__init__(
            f"the net-change matrix of the new species {list(new_species)} has rank {rank}, but the "
            f"construction requires rank equal to its number of columns ({m}):\n{beta}")


class NotReversible(ExtensionError):
    reason = "not-reversible"


class NoNewSpecies(ExtensionError):
    reason = "no-new-species"


class SlowManifoldError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Extension:
    """Matrices of an extension. New-species rows are in pivot order: the
    first m rows of ``beta`` form the nonsingular block ``beta_hat``."""

    base: Network
    added: tuple[Reaction, ...]
    new_species: tuple[str, ...]         # pivot order
    permutation: tuple[int, ...]         # pivot order -> first-appearance index
    a: np.ndarray
    a_prime: np.ndarray
    b: np.ndarray
    b_prime: np.ndarray

    @property
    def n(self) -> int:
        return self.base.n_species

    @property
    def m(self) -> int:
        return len(self.added)

    @property
    def k(self) -> int:
        return len(self.new_species) - self.m

    @property
    def alpha(self) -> np.ndarray:
        return self.a_prime - self.a

    @property
    def beta(self) -> np.ndarray:
        return self.b_prime - self.b

    @property
    def beta_hat(self) -> np.ndarray:
        return self.beta[: self.m]

    @property
    def beta_hathat(self) -> np.ndarray:
        return self.beta[self.m:]

    @property
    def rank_beta(self) -> int:
        return int(np.linalg.matrix_rank(self.beta.astype(float), tol=None))

    def _beta_hat_inv(self) -> np.ndarray:
        return np.linalg.inv(self.beta_hat.astype(float))

    @property
    def gamma(self) -> np.ndarray:
        """m x n exponent matrix ``-(alpha beta_hat^-1)^t``."""
        return -(self.alpha @ self._beta_hat_inv()).T

    @property
    def delta(self) -> np.ndarray:
        """m x k exponent matrix ``-(beta_hathat beta_hat^-1)^t`` (k may be 0)."""
        return -(self.beta_hathat @ self._beta_hat_inv()).T

    @property
    def shift(self) -> np.ndarray:
        """n x m matrix ``alpha beta_hat^-1`` with x = z + shift @ y_hat."""
        return self.alpha @ self._beta_hat_inv()

    def rank_report(self) -> dict:
        return {"beta": self.beta.tolist(), "rank": self.rank_beta, "m": self.m,
                "passed": self.rank_beta == self.m}


@dataclass(frozen=True)
class RateSchedule:
    epsilon: float
    eta: float
    sigma_forward: tuple[int, ...]
    sigma_backward: tuple[int, ...]

    @property
    def k_forward(self) -> np.ndarray:
        return np.array([self.eta ** (-s) / self.epsilon for s in self.sigma_forward])

    @property
    def k_backward(self) -> np.ndarray:
        return np.array([self.eta ** (-s) / self.epsilon for s in self.sigma_backward])

    def symbolic(self) -> list[tuple[str, str]]:
        return [(_sym(sf), _sym(sb)) for sf, sb in zip(self.sigma_forward, self.sigma_backward)]


def _sym(power: int) -> str:
    return "eps^-1" if power == 0 else f"eps^-1 * eta^-{power}"


def _pivot_rows(beta: np.ndarray) -> list[int]:
    """Lexicographically first set of linearly independent rows (greedy)."""
    chosen: list[int] = []
    basis = np.zeros((0, beta.shape[1]))
    scale = max(1.0, np.abs(beta).max(initial=0))
    for i, row in enumerate(beta.astype(float)):
        resid = row - (basis.T @ (basis @ row) if len(basis) else 0.0)
        if np.linalg.norm(resid) > _RANK_TOL * scale:
            chosen.append(i)
            basis = np.vstack([basis, resid / np.linalg.norm(resid)])
        if len(chosen) == beta.shape[1]:
            break
    return chosen


def _part(cplx, species) -> np.ndarray:
    """Coefficient vector of ``cplx`` restricted to ``species``."""
    d = cplx.as_dict()
    return np.array([d.get(s, 0) for s in species], dtype=np.int64)


def build_extension(base: Network, added: str | Network) -> Extension:
    """Assemble the extension matrices and check the rank condition.

    ``added`` is either network text (rates optional; they are replaced by
    :func:`synthesize_rates`) or a parsed :class:`Network`.
    """
    if isinstance(added, str):
        added = parse_network(added, require_rates=False, symbols={"eps": 1.0, "eta": 1.0})
    reactions = tuple(added.reactions)
    if not reactions:
        raise ExtensionError("at least one added reaction is required")
    for rxn in reactions:
        if not rxn.reversible:
            raise NotReversible(f"added reaction {rxn.reactant} -> {rxn.product} must be reversible")
    old = set(base.species)
    new = [s for s in added.species if s not in old]
    if not new:
        raise NoNewSpecies("the added reactions involve no species outside the base network")
    m = len(reactions)
    if len(new) < m:
        b_tmp = np.column_stack([_part(r.product, new) - _part(r.reactant, new) for r in reactions])
        raise RankDeficient(b_tmp, int(np.linalg.matrix_rank(b_tmp)), m, new)

    def cols(attr, species):
        return np.column_stack([_part(getattr(r, attr), species) for r in reactions]).astype(np.int64)

    a, a_p = cols("reactant", base.species), cols("product", base.species)
    b, b_p = cols("reactant", new), cols("product", new)
    beta = b_p - b
    rank = int(np.linalg.matrix_rank(beta.astype(float)))
    if rank < m:
        raise RankDeficient(beta, rank, m, new)
    pivots = _pivot_rows(beta)
    perm = pivots + [i for i in range(len(new)) if i not in pivots]
    beta_hat = beta[pivots].astype(float)
    row_norm = np.linalg.norm(beta_hat, axis=1).max()
    if abs(np.linalg.det(beta_hat)) < _DET_TOL * row_norm ** m:
        raise RankDeficient(beta, rank, m, new)
    return Extension(base=base, added=reactions, new_species=tuple(new[i] for i in perm),
                     permutation=tuple(perm), a=a, a_prime=a_p, b=b[perm], b_prime=b_p[perm])


def synthesize_rates(ext: Extension, epsilon: float = 0.2, eta: float = 0.2) -> RateSchedule:
    if not (epsilon > 0 and eta > 0 and math.isfinite(epsilon) and math.isfinite(eta)):
        raise ValueError("epsilon and eta must be positive and finite")
    m = ext.m
    sigma_f = tuple(int(v) for v in ext.b[:m].sum(axis=0))
    sigma_b = tuple(int(v) for v in ext.b_prime[:m].sum(axis=0))
    return RateSchedule(float(epsilon), float(eta), sigma_f, sigma_b)


def extended_network(ext: Extension, sched: RateSchedule) -> Network:
    """Base network plus the added reactions, species ordered old then new
    (pivot order), so its stoichiometric matrix is ``[[Gamma, alpha], [0, beta]]``."""
    kf, kb = sched.k_forward, sched.k_backward
    added = [Reaction(r.reactant, r.product, float(kf[i]), True, float(kb[i])) for i, r in enumerate(ext.added)]
    return Network(ext.base.species + ext.new_species, ext.base.reactions + tuple(added))


# ---------------------------------------------------------------------------
# slow-manifold diagnostics

def f_bar(ext: Extension, x, y, eta: float) -> np.ndarray:
    """Added-reaction net rates with the eps prefactor removed:
    ``eta^-sigma_f x^a y^b - eta^-sigma_b x^a' y^b'`` (y in pivot order)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = ext.m
    sf = ext.b[:m].sum(axis=0)
    sb = ext.b_prime[:m].sum(axis=0)
    fwd = eta ** (-sf.astype(float)) * monomials(x, ext.a.T) * monomials(y, ext.b.T)
    bwd = eta ** (-sb.astype(float)) * monomials(x, ext.a_prime.T) * monomials(y, ext.b_prime.T)
    return fwd - bwd


def _lift(ext: Extension, z, y_hat):
    x = np.asarray(z, dtype=float) + ext.shift @ y_hat
    w = 1.0 - ext.delta.T @ y_hat
    return x, w


def f_star(ext: Extension, z, y_hat, eta: float) -> np.ndarray:
    """``f`` in (z, y_hat) coordinates on the level set delta^t y_hat + y_hathat = 1."""
    x, w = _lift(ext, z, y_hat)
    return f_bar(ext, x, np.concatenate([y_hat, w]), eta)


def g_star(ext: Extension, z, y_hat, eta: float) -> np.ndarray:
    """``y_hat - eta (z + alpha beta_hat^-1 y_hat)^gamma o (1 - delta^t y_hat)^delta``."""
    x, w = _lift(ext, z, y_hat)
    return y_hat - eta * monomials(x, ext.gamma) * monomials(w, ext.delta)


def slow_manifold_point(ext: Extension, z, eta: float, tol: float = 1e-12, max_iter: int = 50,
                        check_tol: float = 1e-8) -> np.ndarray:
    """Point ``y_hat = theta(z, eta)`` of the positive zero set of ``g_*``.

    Newton iteration seeded at the first-order value ``eta z^gamma``. Raises
    :class:`SlowManifoldError` if Newton fails, positivity is lost, or the
    returned point does not also zero ``f_*`` to ``check_tol``.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (ext.n,) or np.any(z <= 0):
        raise ValueError("z must be a positive vector with one entry per base species")
    if not eta > 0:
        raise ValueError("eta must be positive")
    gam, dlt, S = ext.gamma, ext.delta, ext.shift
    y = eta * monomials(z, gam)
    for _ in range(max_iter):
        x, w = _lift(ext, z, y)
        if np.any(x <= 0) or np.any(w <= 0):
            raise SlowManifoldError("left the positive region during Newton iteration; eta too large?")
        h = eta * monomials(x, gam) * monomials(w, dlt)
        resid = y - h
        dlog = gam @ (S / x[:, None]) - dlt @ (dlt.T / w[:, None]) if dlt.size else gam @ (S / x[:, None])
        jac = np.eye(ext.m) - h[:, None] * dlog
        step = np.linalg.solve(jac, -resid)
        y = y + step
        if np.linalg.norm(step) <= tol * max(np.linalg.norm(y), 1e-300) or np.linalg.norm(step) <= 1e-300:
            break
    else:
        raise SlowManifoldError(f"Newton did not converge in {max_iter} iterations (eta={eta})")
    if np.any(y <= 0):
        raise SlowManifoldError("slow-manifold point is not positive")
    x, w = _lift(ext, z, y)
    if np.any(x <= 0) or np.any(w <= 0):
        raise SlowManifoldError("slow-manifold point lifts outside the positive orthant")
    if np.max(np.abs(g_star(ext, z, y, eta)), initial=0) > check_tol:
        raise SlowManifoldError("g_* residual too large")
    if np.max(np.abs(f_star(ext, z, y, eta)), initial=0) > check_tol:
        raise SlowManifoldError("f_* residual too large at a zero of g_*")
    return y


def reduced_jacobian_limit(ext: Extension, z) -> tuple[np.ndarray, np.ndarray]:
    """``W(z, 0) = -beta_hat diag(T(z,0)) beta_hat^t diag(1 / z^gamma)`` with
    ``T(z,0) = z^(a^t) o z^(b_hat^t gamma)``, and its eigenvalues."""
    z = np.asarray(z, dtype=float)
    if z.shape != (ext.n,) or np.any(z <= 0):
        raise ValueError("z must be a positive vector with one entry per base species")
    m = ext.m
    bh = ext.beta_hat.astype(float)
    gam = ext.gamma
    T = monomials(z, ext.a.T) * monomials(z, ext.b[:m].T @ gam)
    W = -(bh * T[None, :]) @ bh.T / monomials(z, gam)[None, :]
    return W, np.linalg.eigvals(W)


def to_zy_coordinates(ext: Extension, x, y):
    """``(z, y_hat, conserved)`` with ``z = x - alpha beta_hat^-1 y_hat`` and
    ``conserved = delta^t y_hat + y_hathat`` (y in pivot order)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != ext.n or y.shape[-1] != ext.m + ext.k:
        raise ValueError("state dimensions do not match the extension")
    y_hat = y[..., : ext.m]
    z = x - y_hat @ ext.shift.T
    conserved = y_hat @ ext.delta + y[..., ext.m:]
    return z, y_hat, conserved


# ---------------------------------------------------------------------------
# end-to-end check

@dataclass
class InheritanceReport:
    rank_check: dict
    permutation: list[str]
    rates: list[dict]
    epsilon: float
    eta: float
    orbit: Optional[PeriodicOrbit] = None
    failure: Optional[dict] = None
    hausdorff_old_species: Optional[float] = None
    new_species_ranges: dict = field(default_factory=dict)
    conservation_drift: Optional[float] = None
    conserved_combination: Optional[dict] = None
    species: tuple[str, ...] = ()

    @property
    def stable(self) -> bool:
        return self.orbit is not None and self.orbit.classification == STABLE

    def to_json(self, samples_csv_path: Optional[str] = None) -> dict:
        return {
            "schema": 1,
            "epsilon": self.epsilon,
            "eta": self.eta,
            "rank_check": self.rank_check,
            "permutation": self.permutation,
            "rates": self.rates,
            "orbit": self.orbit.report(samples_csv_path) if self.orbit is not None else self.failure,
            "hausdorff_old_species": self.hausdorff_old_species,
            "new_species_ranges": self.new_species_ranges,
            "conservation_drift": self.conservation_drift,
            "conserved_combination": self.conserved_combination,
        }


def verify_inheritance(base_orbit: PeriodicOrbit, ext: Extension, epsilon: float = 0.2, eta: float = 0.2,
                       y0: Optional[Sequence[float]] = None,
                       cfg: Optional[OrbitSearchConfig] = None) -> InheritanceReport:
    """Build the extended network, start it at the base orbit's anchor with new
    species at ``y0`` (pivot order), and find and classify the orbit it settles on."""
    if base_orbit.classification != STABLE:
        raise ValueError(f"base orbit is {base_orbit.classification}, expected {STABLE}")
    sched = synthesize_rates(ext, epsilon, eta)
    net = extended_network(ext, sched)
    y0 = np.ones(ext.m + ext.k) if y0 is None else np.asarray(y0, dtype=float)
    if y0.shape != (ext.m + ext.k,):
        raise ValueError(f"y0 needs {ext.m + ext.k} entries, one per new species")
    x0 = np.concatenate([base_orbit.anchor, y0])
    rates = [{"reaction": f"{r.reactant} <-> {r.product}", "kf": float(kf), "kr": float(kb),
              "kf_symbolic": sf, "kr_symbolic": sb}
             for r, kf, kb, (sf, sb) in zip(ext.added, sched.k_forward, sched.k_backward, sched.symbolic())]
    report = InheritanceReport(rank_check=ext.rank_report(), permutation=list(ext.new_species), rates=rates,
                               epsilon=float(epsilon), eta=float(eta), species=net.species)
    try:
        orbit = find_periodic_orbit(net, x0, cfg)
    except OrbitSearchError as exc:
        report.failure = {"status": "failed", "reason": exc.reason, "message": str(exc)}
        return report
    except IntegrationError as exc:
        report.failure = {"status": "failed", "reason": exc.reason, "message": str(exc)}
        return report
    except FloquetError as exc:
        report.failure = {"status": "failed", "reason": "floquet", "message": str(exc)}
        return report
    report.orbit = orbit
    n = ext.n
    report.hausdorff_old_species = hausdorff_distance(orbit.samples[:, :n], base_orbit.samples,
                                                      closed_curves=True)
    report.new_species_ranges = {
        name: {"min": float(orbit.samples[:, n + i].min()), "max": float(orbit.samples[:, n + i].max()),
               "peak_to_peak": float(np.ptp(orbit.samples[:, n + i]))}
        for i, name in enumerate(ext.new_species)}
    L = conservation_laws(net.stoichiometric_matrix()).L
    run = np.vstack([orbit.transient.states, orbit.samples])
    report.conservation_drift = float(np.abs((run - x0) @ L.T).max(initial=0.0))
    if ext.k:
        _, _, start = to_zy_coordinates(ext, x0[:n], x0[n:])
        _, _, along = to_zy_coordinates(ext, run[:, :n], run[:, n:])
        report.conserved_combination = {
            "initial": start.tolist(),
            "max_drift": float(np.abs(along - start).max()),
        }
    return report
