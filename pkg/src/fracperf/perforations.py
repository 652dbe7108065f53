"""Sampling of the random perforation sets at the critical scale.

Each lattice point eps*k inside the boundary box carries an i.i.d. mass
gamma(k) drawn from a user law through a counter-based generator keyed by
(seed, k).  The draw depends on the lattice index and the seed only -- never
on eps -- so one realization can be reused along a whole eps sweep, windows
can be translated without re-rolling (stationarity), and sampling is safe to
parallelize over k.

The physical radius of the perforation at eps*k follows the capacity law

    r_k = (gamma_k / ball_cap_const)^(1/(n-2s)) * eps^(n/(n-2s)),

so that (ball_cap_const) * r_k^(n-2s) = eps^n * gamma_k holds identically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .numerics import FractionalOrder, NormalizationConstants

__all__ = ["GammaLaw", "PerforationSet", "sample", "rasterize", "export_perforations"]


class PerforationConfigError(ValueError):
    pass


_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(z: np.ndarray) -> np.ndarray:
    """One splitmix64 scrambling round on uint64 words."""
    with np.errstate(over="ignore"):
        z = (z + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
        z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
        z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
        return z ^ (z >> np.uint64(31))


_GAMMA64 = np.uint64(0x9E3779B97F4A7C15)


def counter_uniform(seed: int, ks: np.ndarray) -> np.ndarray:
    """Uniform(0,1) variates keyed by (seed, lattice index row).

    Both the seed and every lattice coordinate pass through the scrambler
    before being combined, so small-integer keys cannot collide by xor.
    """
    ks = np.atleast_2d(np.asarray(ks, dtype=np.int64))
    with np.errstate(over="ignore"):
        h = _splitmix64(np.full(ks.shape[0], np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
        for c in range(ks.shape[1]):
            col = ks[:, c].astype(np.int64).view(np.uint64)
            h = _splitmix64(h ^ _splitmix64(col + np.uint64(c + 1) * _GAMMA64))
    return ((h >> np.uint64(11)).astype(np.float64)) * 2.0**-53


@dataclass(frozen=True)
class GammaLaw:
    """Distribution of the capacity mass gamma(k) on [0, gamma_bar].

    kind is one of 'constant', 'uniform', 'bernoulli'.  gamma_lower, when
    set, asserts a strictly positive essential lower bound.
    """

    kind: str
    gamma: float = 0.0           # constant value / bernoulli 'on' value
    lo: float = 0.0              # uniform support
    hi: float = 0.0
    p: float = 0.0               # bernoulli success probability
    gamma_lower: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "uniform", "bernoulli"):
            raise PerforationConfigError(f"unknown law kind {self.kind!r}")
        if self.kind == "constant" and self.gamma < 0.0:
            raise PerforationConfigError("constant mass must be nonnegative")
        if self.kind == "uniform" and not 0.0 <= self.lo <= self.hi:
            raise PerforationConfigError("uniform law needs 0 <= lo <= hi")
        if self.kind == "bernoulli" and not (0.0 <= self.p <= 1.0 and self.gamma >= 0.0):
            raise PerforationConfigError("bernoulli law needs p in [0,1], gamma >= 0")
        if self.gamma_lower is not None:
            if self.gamma_lower <= 0.0:
                raise PerforationConfigError("gamma_lower must be strictly positive")
            if self.essential_inf() < self.gamma_lower - 1e-15:
                raise PerforationConfigError(
                    f"law admits mass below the declared lower bound {self.gamma_lower}"
                )

    @classmethod
    def constant(cls, gamma: float, gamma_lower=None):
        return cls(kind="constant", gamma=gamma, gamma_lower=gamma_lower)

    @classmethod
    def uniform(cls, lo: float, hi: float, gamma_lower=None):
        return cls(kind="uniform", lo=lo, hi=hi, gamma_lower=gamma_lower)

    @classmethod
    def bernoulli(cls, p: float, gamma_on: float):
        return cls(kind="bernoulli", p=p, gamma=gamma_on)

    @property
    def gamma_bar(self) -> float:
        if self.kind == "constant":
            return self.gamma
        if self.kind == "uniform":
            return self.hi
        return self.gamma

    def essential_inf(self) -> float:
        if self.kind == "constant":
            return self.gamma
        if self.kind == "uniform":
            return self.lo
        return 0.0 if self.p < 1.0 else self.gamma

    def mean(self) -> float:
        if self.kind == "constant":
            return self.gamma
        if self.kind == "uniform":
            return 0.5 * (self.lo + self.hi)
        return self.p * self.gamma

    def draw(self, seed: int, ks: np.ndarray) -> np.ndarray:
        """Masses for the given lattice rows; deterministic in (seed, k)."""
        ks = np.atleast_2d(np.asarray(ks, dtype=np.int64))
        if self.kind == "constant":
            return np.full(ks.shape[0], self.gamma)
        u = counter_uniform(seed, ks)
        if self.kind == "uniform":
            return self.lo + u * (self.hi - self.lo)
        return np.where(u < self.p, self.gamma, 0.0)


@dataclass
class PerforationSet:
    """One realization of the perforations inside a boundary box."""

    eps: float
    ks: np.ndarray        # (m, n) lattice indices
    gammas: np.ndarray    # (m,)
    radii: np.ndarray     # (m,) physical radii
    centers: np.ndarray   # (m, n) physical centers eps * k
    envelope: float       # M with r_k <= M * eps^crit_exp
    seed: int

    def __len__(self):
        return self.ks.shape[0]


def _lattice_in_box(eps: float, x_lo, x_hi) -> np.ndarray:
    axes = []
    for lo, hi in zip(x_lo, x_hi):
        k_lo = int(np.ceil(lo / eps - 1e-12))
        k_hi = int(np.floor(hi / eps + 1e-12))
        axes.append(np.arange(k_lo, k_hi + 1, dtype=np.int64))
    if len(axes) == 1:
        return axes[0][:, None]
    g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
    return np.stack([g0.ravel(), g1.ravel()], axis=-1)


def sample(
    law: GammaLaw,
    eps: float,
    domain,
    order: FractionalOrder,
    constants: NormalizationConstants,
    seed: int,
    envelope: float | None = None,
) -> PerforationSet:
    """Draw the perforation set for one realization.

    domain is (x_lo, x_hi) with scalars for n = 1 or length-2 tuples for
    n = 2.  ``envelope`` optionally caps the admissible radius factor; the
    law must respect it.
    """
    if eps <= 0.0:
        raise PerforationConfigError("eps must be positive")
    x_lo, x_hi = domain
    if np.ndim(x_lo) == 0:
        x_lo, x_hi = (float(x_lo),), (float(x_hi),)
    if len(x_lo) != order.n:
        raise PerforationConfigError(f"domain dimension {len(x_lo)} != n = {order.n}")

    ks = _lattice_in_box(eps, x_lo, x_hi)
    gammas = law.draw(seed, ks)
    factor = (gammas / constants.ball_cap_const) ** (1.0 / order.ext_exp)
    max_factor = (law.gamma_bar / constants.ball_cap_const) ** (1.0 / order.ext_exp)
    if envelope is None:
        envelope = max_factor
    elif max_factor > envelope * (1.0 + 1e-12):
        worst = law.gamma_bar
        raise PerforationConfigError(
            f"law admits mass {worst} whose radius factor {max_factor:.6g} "
            f"exceeds the envelope constant {envelope:.6g}"
        )
    radii = factor * eps**order.crit_exp
    centers = ks.astype(float) * eps
    return PerforationSet(
        eps=eps, ks=ks, gammas=gammas, radii=radii, centers=centers,
        envelope=float(envelope), seed=int(seed),
    )


def rasterize(pset: PerforationSet, grid, obstacle=None):
    """Constrained boundary nodes and obstacle values for a perforation set.

    A node is constrained iff it lies within some perforation ball.  Requires
    the grid to resolve every nonzero ball: dx <= r_min / 2.

    obstacle is a callable phi(points) -> values over boundary coordinates
    (defaults to zero).
    """
    live = pset.radii > 0.0
    plane = grid.shape[:-1]
    mask = np.zeros(plane, dtype=bool)
    if not np.any(live):
        return mask, np.zeros(plane)
    r_min = float(pset.radii[live].min())
    dx_max = max(grid.dx)
    if dx_max > 0.5 * r_min + 1e-15:
        need = tuple(
            int(np.ceil((hi - lo) / (0.5 * r_min))) for lo, hi in zip(grid.x_lo, grid.x_hi)
        )
        raise PerforationConfigError(
            f"grid spacing {dx_max:.3e} cannot resolve radius {r_min:.3e}; "
            f"need at least nx = {need}"
        )
    pts = grid.sigma_points()
    for center, r in zip(pset.centers[live], pset.radii[live]):
        d2 = np.sum((pts - center[None, ...].reshape((1,) * (pts.ndim - 1) + (-1,))) ** 2, axis=-1)
        mask |= d2 <= r * r * (1.0 + 1e-12)
    values = np.zeros(plane)
    if obstacle is not None:
        coords = pts[mask]
        values[mask] = obstacle(coords[:, 0] if grid.n == 1 else coords)
    return mask, values


def export_perforations(pset: PerforationSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        n = pset.ks.shape[1]
        w.writerow([f"k{c}" for c in range(n)] + ["gamma", "radius"] + [f"center{c}" for c in range(n)])
        for row in range(len(pset)):
            w.writerow(
                [int(v) for v in pset.ks[row]]
                + [repr(float(pset.gammas[row])), repr(float(pset.radii[row]))]
                + [repr(float(v)) for v in pset.centers[row]]
            )
