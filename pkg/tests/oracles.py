"""Independent reference implementations used only by the tests.

Everything here is deliberately naive: permutation sums, dense scans,
closed forms. The package must agree with these, not the other way
around, so nothing imports from ldpma.
"""

import itertools
import math

import numpy as np


def permanent_naive(matrix: np.ndarray) -> float:
    """Permutation-sum permanent, O(n! n)."""
    n = matrix.shape[0]
    total = 0.0
    for perm in itertools.permutations(range(n)):
        prod = 1.0
        for i, j in enumerate(perm):
            prod *= matrix[i, j]
        total += prod
    return total


def tropical_naive(matrix: np.ndarray) -> float:
    """Max over permutations of the product, the permanent's tropical twin."""
    n = matrix.shape[0]
    best = -math.inf
    for perm in itertools.permutations(range(n)):
        prod = 1.0
        for i, j in enumerate(perm):
            prod *= matrix[i, j]
        best = max(best, prod)
    return best


def assignment_brute(cost: np.ndarray):
    """(best permutation, min total cost) by exhaustive search."""
    n = cost.shape[0]
    best_perm, best_cost = None, math.inf
    for perm in itertools.permutations(range(n)):
        value = sum(cost[i, perm[i]] for i in range(n))
        if value < best_cost:
            best_perm, best_cost = perm, value
    return best_perm, best_cost


def theta_kernel_naive(n: int, center: float, x: float,
                       radius: int = 12) -> float:
    """1-d Gaussian periodization by direct summation over many images."""
    return sum(
        math.exp(-n * (x - center - m) ** 2)
        for m in range(-radius, radius + 1)
    )


def multinomial_type_prob(counts, weights) -> float:
    """Exact probability of a type class from factorials."""
    n = sum(counts)
    coeff = math.factorial(n)
    for c in counts:
        coeff //= math.factorial(c)
    prob = float(coeff)
    for c, w in zip(counts, weights):
        prob *= float(w) ** c
    return prob


def relative_entropy(mu0, nu) -> float:
    """sum nu log(nu / mu0) with the 0 log 0 = 0 convention."""
    total = 0.0
    for p, q in zip(mu0, nu):
        if q > 0.0:
            total += q * math.log(q / p)
    return total


def torus_cell_masses_1d(values: np.ndarray) -> np.ndarray:
    """Exact per-node cell widths of a 1-d torus potential vs uniform.

    The power cell of node i under potential f has width
    h (1 + (f_{i-1} - 2 f_i + f_{i+1}) / (2 h^2)); the formula holds while
    every width stays positive.
    """
    k = len(values)
    h = 1.0 / k
    second = np.roll(values, 1) - 2.0 * values + np.roll(values, -1)
    return h * (1.0 + second / (2.0 * h * h))


def w2_circle_atoms_brute(points_a, weights_a, points_b, weights_b,
                          cuts: int = 4096) -> float:
    """Squared transport cost on the circle by cut enumeration.

    For each candidate cut the circle unrolls to an interval and the
    optimal coupling is the monotone quantile one; the circle optimum is
    the minimum over cuts. Dense cut sampling brackets the true value.
    """
    def unrolled_cost(shift: float) -> float:
        a = np.sort((np.asarray(points_a) - shift) % 1.0)
        order_a = np.argsort((np.asarray(points_a) - shift) % 1.0,
                             kind="stable")
        b = np.sort((np.asarray(points_b) - shift) % 1.0)
        order_b = np.argsort((np.asarray(points_b) - shift) % 1.0,
                             kind="stable")
        wa = np.asarray(weights_a)[order_a]
        wb = np.asarray(weights_b)[order_b]
        ia = ib = 0
        ra, rb = wa[0], wb[0]
        total = 0.0
        while True:
            m = min(ra, rb)
            total += m * (a[ia] - b[ib]) ** 2
            ra -= m
            rb -= m
            if ra <= 1e-15:
                ia += 1
                if ia == len(a):
                    break
                ra = wa[ia]
            if rb <= 1e-15:
                ib += 1
                if ib == len(b):
                    break
                rb = wb[ib]
        return total

    return min(unrolled_cost(c / cuts) for c in range(cuts))
