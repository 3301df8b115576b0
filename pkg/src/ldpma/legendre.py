"""Discrete Legendre conjugates on grids and the entropy duality check.

Contents:

- ``GridFunction``: scalar samples on a regular grid, with an explicit
  +infinity sentinel mask (never -infinity).
- ``legendre_transform``: conjugate f*(y) = max over nodes of <x,y> - f(x),
  direct scan, exact per-axis decomposition in dimension 2.
- ``conjugate_at``: the same scan evaluated at arbitrary dual points.
- ``duality_gap``: the two-point Young inequality residual.
- ``biconjugate_check``: double-transform sanity report.
- ``ent_dual_check``: relative entropy against the supremum of
  <theta, nu> - log integral exp(theta) d mu0 over a refined theta grid.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .measures import DiscreteMeasure

MAX_DIM = 2


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Scalar function sampled at the cell centers of a regular grid.

    Parameters
    ----------
    dim : int
        1 or 2.
    resolution : int
        Nodes per axis, >= 2.
    values : np.ndarray
        Shape (resolution,) * dim. Entries under the infinity mask are
        ignored by every scan.
    is_inf : np.ndarray
        Boolean mask of +infinity nodes. -infinity is never representable.
    kind : str
        ``"box"`` or ``"torus"``; torus nodes are (i + 0.5)/resolution.
    bounds : tuple of (float, float)
        Per-axis intervals for boxes.
    """

    dim: int
    resolution: int
    values: np.ndarray
    is_inf: np.ndarray = None  # type: ignore[assignment]
    kind: str = "box"
    bounds: tuple = ()

    def __post_init__(self):
        if not 1 <= self.dim <= MAX_DIM:
            raise ValueError(f"supported up to dimension {MAX_DIM}")
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2 per axis")
        values = np.asarray(self.values, dtype=float)
        expected = (self.resolution,) * self.dim
        if values.shape != expected:
            raise ValueError(f"values shape {values.shape} != {expected}")
        mask = self.is_inf
        if mask is None:
            mask = np.zeros(expected, dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != expected:
                raise ValueError("infinity mask shape mismatch")
        if np.any(np.isinf(values) & ~mask):
            raise ValueError("use the is_inf mask for infinite nodes")
        if np.any(np.isneginf(values)):
            raise ValueError("-infinity nodes are not representable")
        if not np.all(np.isfinite(values[~mask])):
            raise ValueError("unmasked values must be finite")
        clean = values.copy()
        clean[mask] = 0.0  # sentinel payload is ignored everywhere
        object.__setattr__(self, "values", clean)
        object.__setattr__(self, "is_inf", mask)
        bounds = self.bounds
        if self.kind == "torus":
            bounds = tuple((0.0, 1.0) for _ in range(self.dim))
        elif self.kind == "box":
            bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
            if len(bounds) != self.dim:
                raise ValueError("box grid needs one (lo, hi) pair per axis")
        else:
            raise ValueError("kind must be 'box' or 'torus'")
        object.__setattr__(self, "bounds", bounds)

    # ---- geometry ----

    def axis_nodes(self, axis: int) -> np.ndarray:
        lo, hi = self.bounds[axis]
        step = (hi - lo) / self.resolution
        return lo + (np.arange(self.resolution) + 0.5) * step

    def nodes(self) -> np.ndarray:
        axes = [self.axis_nodes(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def step(self, axis: int = 0) -> float:
        lo, hi = self.bounds[axis]
        return (hi - lo) / self.resolution

    # ---- values ----

    def finite_count(self) -> int:
        return int(np.sum(~self.is_inf))

    def value_at_node(self, index: tuple) -> float:
        if self.is_inf[index]:
            return float("inf")
        return float(self.values[index])

    def nearest_node_index(self, point: np.ndarray) -> tuple:
        point = np.atleast_1d(np.asarray(point, dtype=float))
        idx = []
        for a in range(self.dim):
            nodes = self.axis_nodes(a)
            coordinate = point[a] % 1.0 if self.kind == "torus" else point[a]
            idx.append(int(np.argmin(np.abs(nodes - coordinate))))
        return tuple(idx)

    def shifted(self, constant: float) -> "GridFunction":
        return dataclasses.replace(self, values=self.values + constant,
                                   is_inf=self.is_inf)

    @staticmethod
    def from_callable(fn, dim: int, resolution: int, kind: str = "box",
                      bounds: tuple = ()) -> "GridFunction":
        probe = GridFunction(dim=dim, resolution=resolution,
                             values=np.zeros((resolution,) * dim),
                             kind=kind, bounds=bounds)
        points = probe.nodes()
        values = np.asarray([fn(p) for p in points], dtype=float)
        return dataclasses.replace(probe,
                                   values=values.reshape((resolution,) * dim))


# ---------------------------------------------------------------------------
# Conjugation
# ---------------------------------------------------------------------------


def _masked_values(f: GridFunction) -> np.ndarray:
    # -inf marks excluded nodes inside max scans only; it never leaves them
    out = f.values.copy()
    out[f.is_inf] = -np.inf
    return out


def conjugate_at(f: GridFunction, points: np.ndarray) -> np.ndarray:
    """max over finite nodes of <x, y> - f(x), for each query row y.

    The scan is the correctness oracle for :func:`legendre_transform`; both
    share the node-exclusion rule for +infinity entries.
    """
    if f.finite_count() == 0:
        raise ValueError("empty effective domain")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != f.dim:
        raise ValueError("query points have the wrong dimension")
    nodes = f.nodes()
    neg_f = -(_masked_values(f).reshape(-1))
    out = np.empty(len(points))
    chunk = max(1, 2 ** 22 // max(len(nodes), 1))
    for start in range(0, len(points), chunk):
        block = points[start:start + chunk]
        pairings = block @ nodes.T  # (q, nodes)
        out[start:start + chunk] = np.max(pairings + neg_f[None, :], axis=1)
    return out


def interpolate_at(f: GridFunction, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of grid values at arbitrary points.

    Exact at grid nodes. Torus grids wrap; box queries clamp to the node
    hull. Raises if any participating corner is flagged infinite.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != f.dim:
        raise ValueError("query points have the wrong dimension")
    k = f.resolution
    low_idx = []
    fracs = []
    for a in range(f.dim):
        lo, hi = f.bounds[a]
        step = f.step(a)
        first = lo + 0.5 * step
        coords = points[:, a]
        if f.kind == "torus":
            t = (coords - first) / step
            i0 = np.floor(t).astype(np.int64)
            frac = t - i0
            i0 = np.mod(i0, k)
        else:
            t = np.clip((coords - first) / step, 0.0, k - 1.0)
            i0 = np.minimum(np.floor(t).astype(np.int64), k - 2)
            frac = t - i0
        low_idx.append(i0)
        fracs.append(frac)

    out = np.zeros(len(points))
    for corner in itertools.product((0, 1), repeat=f.dim):
        idx = []
        weight = np.ones(len(points))
        for a, bit in enumerate(corner):
            ia = low_idx[a] + bit
            if f.kind == "torus":
                ia = np.mod(ia, k)
            idx.append(ia)
            weight = weight * (fracs[a] if bit else (1.0 - fracs[a]))
        corner_inf = f.is_inf[tuple(idx)]
        if np.any(corner_inf & (weight > 0)):
            raise ValueError("interpolation touches an infinite node")
        out += weight * f.values[tuple(idx)]
    return out


def default_dual_box(f: GridFunction, padding: float = 0.1) -> tuple:
    """Heuristic dual domain: discrete gradient range padded by 10%."""
    bounds = []
    values = _masked_values(f)
    for axis in range(f.dim):
        step = f.step(axis)
        diffs = np.diff(values, axis=axis) / step
        finite = diffs[np.isfinite(diffs)]
        if finite.size == 0:
            lo, hi = -1.0, 1.0
        else:
            lo, hi = float(np.min(finite)), float(np.max(finite))
        width = max(hi - lo, 1e-9)
        bounds.append((lo - padding * width, hi + padding * width))
    return tuple(bounds)


def legendre_transform(f: GridFunction, dual_bounds: Optional[tuple] = None,
                       dual_resolution: Optional[int] = None) -> GridFunction:
    """Discrete conjugate of ``f`` on a box grid of dual points.

    f*(y_j) = max over grid nodes x_i of <x_i, y_j> - f(x_i). Nodes under
    the infinity mask never participate. In dimension 2 the scan runs
    per axis (exact two-pass decomposition of the joint maximum).
    """
    if f.finite_count() == 0:
        raise ValueError("empty effective domain")
    if dual_bounds is None:
        dual_bounds = default_dual_box(f)
    if dual_resolution is None:
        dual_resolution = f.resolution
    dual = GridFunction(dim=f.dim, resolution=dual_resolution,
                        values=np.zeros((dual_resolution,) * f.dim),
                        kind="box", bounds=dual_bounds)
    if f.dim == 1:
        x = f.axis_nodes(0)
        y = dual.axis_nodes(0)
        scores = np.outer(y, x) - _masked_values(f)[None, :]
        values = np.max(scores, axis=1)
        return dataclasses.replace(dual, values=values)

    # dimension 2: conjugate along axis 1 first, then axis 0
    x0 = f.axis_nodes(0)
    x1 = f.axis_nodes(1)
    y0 = dual.axis_nodes(0)
    y1 = dual.axis_nodes(1)
    masked = _masked_values(f)
    # partial[i0, j1] = max_{x1} (x1 * y1_j - f(x0_i, x1))
    partial = np.max(x1[None, :, None] * y1[None, None, :] -
                     masked[:, :, None], axis=1)
    if np.any(np.isneginf(partial)):
        # rows that are entirely infinite drop out of the outer maximum
        partial = np.where(np.isneginf(partial), -np.inf, partial)
    values = np.max(x0[:, None, None] * y0[None, :, None] +
                    partial[:, None, :], axis=0)
    if np.any(~np.isfinite(values)):
        raise ValueError("empty effective domain")
    return dataclasses.replace(dual, values=values.reshape(dual.values.shape))


def duality_gap(f: GridFunction, fstar: GridFunction, x, y) -> float:
    """f(x) + f*(y) - <x, y> at grid nodes x of f and y of f*.

    Nonnegative up to discretization slack of order Lipschitz(f) * step.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    fx = f.value_at_node(f.nearest_node_index(x))
    fy = fstar.value_at_node(fstar.nearest_node_index(y))
    return float(fx + fy - float(np.dot(x, y)))


def is_midpoint_convex(f: GridFunction, tol: float = 1e-9) -> bool:
    """Discrete midpoint convexity along every grid axis."""
    values = f.values.copy()
    values[f.is_inf] = np.inf
    for axis in range(f.dim):
        v = np.moveaxis(values, axis, 0)
        left, mid, right = v[:-2], v[1:-1], v[2:]
        with np.errstate(invalid="ignore"):
            bad = mid > (left + right) / 2.0 + tol
        bad &= np.isfinite(left) & np.isfinite(mid) & np.isfinite(right)
        if np.any(bad):
            return False
    return True


@dataclass(frozen=True)
class BiconjugateReport:
    """Sup-norm gaps between f and its double conjugate.

    ``above`` is max(0, f** - f) in sup norm (must be grid slack only);
    ``below`` is the sup norm of f - f** and is reported only when f passes
    the discrete midpoint convexity test; ``total`` is their sum.
    """

    above: float
    below: Optional[float]
    dual_bounds: tuple

    @property
    def total(self) -> float:
        return self.above + (self.below or 0.0)

    def __float__(self) -> float:
        return self.total


def biconjugate_check(f: GridFunction, dual_bounds: Optional[tuple] = None,
                      dual_resolution: Optional[int] = None) -> BiconjugateReport:
    """Double-transform report; records the dual truncation box it used."""
    if dual_resolution is None:
        dual_resolution = 4 * f.resolution
    fstar = legendre_transform(f, dual_bounds=dual_bounds,
                               dual_resolution=dual_resolution)
    back = conjugate_at(fstar, f.nodes()).reshape(f.values.shape)
    finite = ~f.is_inf
    above = float(np.max(np.maximum(back[finite] - f.values[finite], 0.0),
                         initial=0.0))
    below = None
    if is_midpoint_convex(f):
        below = float(np.max(f.values[finite] - back[finite], initial=0.0))
    return BiconjugateReport(above=above, below=below,
                             dual_bounds=fstar.bounds)


# ---------------------------------------------------------------------------
# Entropy / log-MGF duality on finite alphabets
# ---------------------------------------------------------------------------


def _alphabet_log_mgf(theta: np.ndarray, log_mu0: np.ndarray) -> float:
    return float(logsumexp(theta + log_mu0))


def ent_dual_check(mu0: DiscreteMeasure, nu: DiscreteMeasure,
                   rounds: int = 8, span: float = 8.0) -> Tuple[float, float]:
    """Relative entropy vs the dual supremum on a refined theta grid.

    Returns ``(entropy, grid_sup)`` where grid_sup is the maximum of
    <theta, nu> - log integral exp(theta) d mu0 over a shrinking lattice of
    potentials theta (gauge-fixed so the last coordinate is 0; the pairing
    is shift invariant). When nu is strictly positive, the closed-form
    maximizer theta = log(nu / mu0) is also evaluated and must attain the
    entropy to within 1e-12, else this raises.
    """
    from .measures import entropy as entropy_fn

    if mu0.domain.kind != "alphabet" or nu.domain.kind != "alphabet":
        raise ValueError("duality check runs on finite alphabets")
    if mu0.domain.size > 16:
        raise ValueError("alphabet size capped at 16")
    if np.any(mu0.weights <= 0):
        raise ValueError("reference measure must be strictly positive")

    ent = entropy_fn(mu0, nu)
    log_mu0 = np.log(mu0.weights)
    nu_w = nu.weights
    k = mu0.domain.size

    def pairing_value(free_theta: np.ndarray) -> float:
        theta = np.append(free_theta, 0.0)
        return float(np.dot(theta, nu_w)) - _alphabet_log_mgf(theta, log_mu0)

    if np.all(nu_w > 0):
        closed = np.log(nu_w / mu0.weights)
        attained = float(np.dot(closed, nu_w)) - _alphabet_log_mgf(closed, log_mu0)
        if abs(attained - ent) > 1e-12:
            raise RuntimeError(
                f"closed-form maximizer off by {attained - ent!r}"
            )

    if k == 1:
        return ent, 0.0

    center = np.zeros(k - 1)
    width = span
    best = pairing_value(center)
    offsets = np.array(list(itertools.product(range(-4, 5), repeat=k - 1)),
                       dtype=float) / 4.0
    for _ in range(rounds):
        candidates = center[None, :] + width * offsets
        values = np.fromiter((pairing_value(c) for c in candidates),
                             dtype=float, count=len(candidates))
        at = int(np.argmax(values))
        if values[at] > best:
            best = float(values[at])
            center = candidates[at]
        width /= 4.0
    return ent, best
