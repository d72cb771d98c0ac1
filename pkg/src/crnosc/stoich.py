"""Rank, image basis and conservation laws of a stoichiometric matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_TOL = 1e-10


@dataclass(frozen=True)
class ImageBasis:
    """Orthonormal basis ``B`` (n x r) of im Gamma."""

    B: np.ndarray
    rank: int

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def projector(self) -> np.ndarray:
        return self.B @ self.B.T


@dataclass(frozen=True)
class ConservationLaws:
    """Orthonormal rows ``L`` spanning the left nullspace of Gamma."""

    L: np.ndarray

    def values(self, x) -> np.ndarray:
        return self.L @ np.asarray(x, dtype=float)


def _svd(gamma) -> tuple[np.ndarray, int]:
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    n = gamma.shape[0]
    if gamma.size == 0:
        return np.eye(n), 0
    u, s, _ = np.linalg.svd(gamma, full_matrices=True)
    rank = int(np.sum(s > RANK_TOL * s[0])) if s.size and s[0] > 0 else 0
    return u, rank


def rank_and_image(gamma) -> ImageBasis:
    u, rank = _svd(gamma)
    return ImageBasis(u[:, :rank].copy(), rank)


def conservation_laws(gamma) -> ConservationLaws:
    u, rank = _svd(gamma)
    return ConservationLaws(u[:, rank:].T.copy())


def class_residual(x, x0, basis: ImageBasis) -> float:
    """Distance of ``x - x0`` from im Gamma; zero iff both lie in one coset."""
    d = np.asarray(x, dtype=float) - np.asarray(x0, dtype=float)
    if d.shape != (basis.n,):
        raise ValueError(f"state length {d.shape} does not match basis dimension {basis.n}")
    return float(np.linalg.norm(d - basis.B @ (basis.B.T @ d)))
