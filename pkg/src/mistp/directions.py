"""Random search-direction distributions.

Every distribution here is normalized so that E ||s||_2^2 = 1 (the raw
isotropic Gaussian is divided by sqrt(d) for that reason), and each one
comes with metadata (mu_d, norm) such that

    E |<g, s>|  >=  mu_d * norm(g)        for all g,

which is the property the complexity bounds consume.  For the coordinate
and orthonormal-set distributions the inequality is an exact equality by
finite enumeration; for the sphere and the scaled Gaussian we report the
closed forms E|<g,s>| = ||g||_2 * Gamma(d/2) / (sqrt(pi) * Gamma((d+1)/2))
and ||g||_2 * sqrt(2/(pi d)), flagged as analytic metadata to be
cross-checked by the Monte-Carlo oracle rather than trusted blindly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class MuDInfo:
    """Lower-bound constant and the norm it pairs with."""

    mu_d: float
    norm_id: str  # "l1" | "l2" | "rotated-l1"
    norm: Callable[[Array], float]
    exact: bool  # True when E|<g,s>| = mu_d * norm(g) holds by enumeration


class DirectionDistribution:
    """Base class; subclasses implement sampling and mu_d metadata."""

    def __init__(self, d: int):
        if d < 1:
            raise ValueError(f"dimension must be >= 1, got {d}")
        self.d = int(d)

    def sample(self, rng: np.random.Generator) -> Array:
        return self.sample_many(rng, 1)[0]

    def sample_many(self, rng: np.random.Generator, count: int) -> Array:
        raise NotImplementedError

    def mu_d_info(self) -> MuDInfo:
        raise NotImplementedError


class UnitSphere(DirectionDistribution):
    """Uniform distribution on the unit sphere: ||s||_2 = 1 exactly."""

    def sample_many(self, rng: np.random.Generator, count: int) -> Array:
        g = rng.standard_normal((count, self.d))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        # Zero draws have probability zero; guard against the pathological case.
        norms[norms == 0.0] = 1.0
        return g / norms

    def mu_d_info(self) -> MuDInfo:
        d = self.d
        mu = math.exp(math.lgamma(d / 2.0) - math.lgamma((d + 1) / 2.0)) / math.sqrt(math.pi)
        return MuDInfo(mu, "l2", lambda g: float(np.linalg.norm(g)), exact=False)


class ScaledGaussian(DirectionDistribution):
    """Standard Gaussian scaled by 1/sqrt(d) so that E ||s||_2^2 = 1."""

    def sample_many(self, rng: np.random.Generator, count: int) -> Array:
        return rng.standard_normal((count, self.d)) / math.sqrt(self.d)

    def mu_d_info(self) -> MuDInfo:
        # <g, s> is Gaussian with std ||g||_2 / sqrt(d); E|N(0,1)| = sqrt(2/pi).
        mu = math.sqrt(2.0 / (math.pi * self.d))
        return MuDInfo(mu, "l2", lambda g: float(np.linalg.norm(g)), exact=False)


class CoordinateBasis(DirectionDistribution):
    """Uniform distribution over the standard basis vectors e_1..e_d."""

    def sample_many(self, rng: np.random.Generator, count: int) -> Array:
        picks = rng.integers(0, self.d, size=count)
        out = np.zeros((count, self.d))
        out[np.arange(count), picks] = 1.0
        return out

    def mu_d_info(self) -> MuDInfo:
        # E|<g, e_i>| = (1/d) * sum_i |g_i| = ||g||_1 / d, an exact equality.
        return MuDInfo(1.0 / self.d, "l1", lambda g: float(np.abs(g).sum()), exact=True)


class OrthonormalSet(DirectionDistribution):
    """Uniform distribution over the columns of an orthonormal d x d matrix."""

    def __init__(self, basis):
        basis = np.asarray(basis, dtype=float)
        if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
            raise ValueError("basis must be a square matrix")
        gram = basis.T @ basis
        if not np.allclose(gram, np.eye(basis.shape[0]), atol=1e-10, rtol=0):
            raise ValueError("basis columns must be orthonormal to 1e-10")
        super().__init__(basis.shape[0])
        self.basis = basis

    def sample_many(self, rng: np.random.Generator, count: int) -> Array:
        picks = rng.integers(0, self.d, size=count)
        return self.basis.T[picks].copy()

    def mu_d_info(self) -> MuDInfo:
        # Coordinate-basis case in the rotated frame: E|<g,s>| = ||Q^T g||_1 / d.
        q = self.basis
        return MuDInfo(
            1.0 / self.d,
            "rotated-l1",
            lambda g: float(np.abs(q.T @ np.asarray(g, dtype=float)).sum()),
            exact=True,
        )


def empirical_mu_d(
    dist: DirectionDistribution, g, samples: int, rng: np.random.Generator
) -> float:
    """Monte-Carlo estimate of E |<g, s>| for s drawn from ``dist``.

    Used as the independent oracle for the directional lower bound: the
    estimate should come out at or above mu_d * norm(g) up to sampling
    noise for every distribution declared here.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    g = np.asarray(g, dtype=float)
    s = dist.sample_many(rng, samples)
    return float(np.mean(np.abs(s @ g)))


def make_distribution(kind: str, d: int, rng: np.random.Generator | None = None) -> DirectionDistribution:
    """Build a distribution from its CLI name: sphere, gaussian, coord, ortho.

    ``ortho`` draws a random orthonormal basis (QR of a Gaussian matrix)
    from ``rng``, so it needs a generator.
    """
    kind = kind.lower()
    if kind == "sphere":
        return UnitSphere(d)
    if kind == "gaussian":
        return ScaledGaussian(d)
    if kind == "coord":
        return CoordinateBasis(d)
    if kind == "ortho":
        if rng is None:
            raise ValueError("ortho needs an rng to draw its basis")
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        return OrthonormalSet(q)
    raise ValueError(f"unknown direction distribution {kind!r}")
