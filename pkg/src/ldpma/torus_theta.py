"""Lattice points and sharply-peaked Gaussian-sum kernels on the unit torus.

For a lattice parameter n there are n^d lattice points p_i (coordinates are
multiples of 1/n, row-major order). The kernel attached to p_i is

    phi_i(x) = sum over integer shifts m of exp(-n |x - p_i - m|^2),

truncated to shifts in {-R..R}^d. Its normalized log is pinched between the
squared torus distance and that distance minus (1/n) log((2R+1)^d), which is
what the rate-error sweep measures.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .measures import EmpiricalConfig
from .transport import cost_matrix, sqdist_torus


@dataclass(frozen=True)
class TorusLattice:
    """The n^d lattice points of [0,1)^d, coordinates k/n, row-major."""

    n: int
    d: int

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("lattice needs n >= 1 and d >= 1")

    @property
    def size(self) -> int:
        return self.n ** self.d

    @property
    def points(self) -> np.ndarray:
        axes = [np.arange(self.n) / self.n] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def point(self, i: int) -> np.ndarray:
        if not 0 <= i < self.size:
            raise ValueError("lattice index out of range")
        # row-major: decode from the least significant axis up
        coords = []
        rest = i
        for axis in range(self.d - 1, -1, -1):
            coords.append((rest % self.n) / self.n)
            rest //= self.n
        return np.array(coords[::-1])


@dataclass(frozen=True)
class ThetaParams:
    """Sharpness n and truncation radius R of the kernel sums.

    The omitted tail is controlled by exp(-n (R-1)^2) per shifted term;
    ``tail_bound`` records it for every evaluation.
    """

    n: int
    truncation_radius: int = 2

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("sharpness n must be >= 1")
        if self.truncation_radius < 1:
            raise ValueError("truncation radius must be >= 1")

    @property
    def tail_bound(self) -> float:
        r = self.truncation_radius
        return float(np.exp(-self.n * (r - 1) ** 2))

    def bracket_width(self, d: int) -> float:
        """(1/n) log((2R+1)^d), the two-sided bracket width of the rates."""
        return d * np.log(2 * self.truncation_radius + 1) / self.n


def _shift_offsets(d: int, radius: int) -> np.ndarray:
    rng = range(-radius, radius + 1)
    return np.array(list(itertools.product(rng, repeat=d)), dtype=float)


def log_theta_grid(params: ThetaParams, centers: np.ndarray,
                   points: np.ndarray) -> np.ndarray:
    """log phi matrix: rows over kernel centers, columns over points.

    Computed with log-sum-exp at every sharpness, so the result is finite
    and deterministic even when the raw sums underflow.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = centers.shape[1]
    offsets = _shift_offsets(d, params.truncation_radius)
    # exponents[o, i, j] = -n |x_j - p_i - m_o|^2
    diff = points[None, :, :] - centers[:, None, :]
    exps = np.empty((len(offsets), len(centers), len(points)))
    for o, m in enumerate(offsets):
        shifted = diff - m[None, None, :]
        exps[o] = -params.n * np.sum(shifted * shifted, axis=2)
    return logsumexp(exps, axis=0)


def torus_sq_dist(x: np.ndarray, y: np.ndarray) -> float:
    """Squared torus distance; shift minimum truncated to {-1,0,1}^d."""
    return sqdist_torus(x, y)


def theta(i: int, params: ThetaParams, x: np.ndarray,
          lattice: TorusLattice = None) -> float:
    """Kernel value phi_i(x) for lattice index i.

    Strictly positive and at least exp(-n d(p_i, x)^2) (the dominant term).
    The lattice defaults to the one with the sharpness n of ``params`` and
    the dimension of ``x``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0) or np.any(x >= 1):
        raise ValueError("evaluation points must lie in [0,1)^d")
    if lattice is None:
        lattice = TorusLattice(n=params.n, d=len(x))
    p = lattice.point(i)
    return float(np.exp(log_theta_grid(params, p[None, :], x[None, :])[0, 0]))


def log_theta(i: int, params: ThetaParams, x: np.ndarray,
              lattice: TorusLattice = None) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if lattice is None:
        lattice = TorusLattice(n=params.n, d=len(x))
    p = lattice.point(i)
    return float(log_theta_grid(params, p[None, :], x[None, :])[0, 0])


def phi_matrix(lattice: TorusLattice, params: ThetaParams,
               config: EmpiricalConfig) -> np.ndarray:
    """Matrix [phi_i(x_j)] over lattice rows and configuration columns."""
    return np.exp(log_phi_matrix(lattice, params, config))


def log_phi_matrix(lattice: TorusLattice, params: ThetaParams,
                   config: EmpiricalConfig) -> np.ndarray:
    if config.size != lattice.size:
        raise ValueError(
            f"configuration has {config.size} points, lattice needs {lattice.size}"
        )
    if config.dim != lattice.d:
        raise ValueError("configuration dimension does not match the lattice")
    return log_theta_grid(params, lattice.points, config.points)


def theta_rate_error(params: ThetaParams, lattice: TorusLattice,
                     grid_resolution: int) -> float:
    """sup over a grid of x and all centers of the normalized-log defect.

    The defect is |-(1/n) log phi_i(x) - d(p_i, x)^2|; it is a nonnegative
    shift (the log never exceeds the squared distance) bounded by
    (1/n) log((2R+1)^d) plus the truncation tail.
    """
    if lattice.d > 2:
        raise ValueError("rate sweep supports dimensions 1 and 2")
    axes = [np.arange(grid_resolution) / grid_resolution] * lattice.d
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    logs = log_theta_grid(params, lattice.points, grid)
    rates = -logs / params.n
    sq = cost_matrix(lattice.points, grid, "sqdist_torus")
    return float(np.max(np.abs(rates - sq)))
