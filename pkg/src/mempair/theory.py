"""Closed-form regret, capacity and sample-complexity bounds."""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass

import numpy as np

UNLIMITED = sys.maxsize


@dataclass(frozen=True)
class BoundInputs:
    G: float = 1.0
    lam: float = 1.0
    c: float = 1.0
    C: float = 1.0
    D: float = 1.0
    gamma: float = 1.0
    delta_B: float = 0.05
    sigma_step: float = 0.0
    T: int = 1
    N: int = 1
    m: int = 0
    S_N: float = 0.0
    P_T: float = 0.0


def noise_unit(b: BoundInputs) -> float:
    """Regret charged per deletion: G * sigma_step * sqrt(2 ln(1/delta_B))."""
    return b.G * b.sigma_step * math.sqrt(2.0 * math.log(1.0 / b.delta_B))


def deletion_term(b: BoundInputs) -> float:
    return b.m * noise_unit(b)


def static_regret_bound(b: BoundInputs) -> float:
    if b.T < 1:
        raise ValueError("T must be >= 1")
    return (b.G ** 2 / (b.lam * b.c)) * (1.0 + math.log(b.T)) + deletion_term(b)


def dynamic_regret_bound(b: BoundInputs) -> float:
    if b.P_T < 0:
        raise ValueError("P_T must be >= 0")
    static = static_regret_bound(BoundInputs(G=b.G, lam=b.lam, c=b.c, T=b.T))
    return static + b.G * b.P_T


def adagrad_regret_bound(b: BoundInputs) -> float:
    if b.S_N < 0:
        raise ValueError("S_N must be >= 0")
    return b.G * b.D * math.sqrt(b.c * b.C * b.S_N)


def _floor_capacity(numerator: float, unit: float) -> int:
    if numerator <= 0:
        return 0
    if unit <= 0:
        return UNLIMITED
    k = math.floor(numerator / unit)
    # keep the integer consistent with the multiplied-out inequality
    if (k + 1) * unit <= numerator:
        k += 1
    elif k > 0 and k * unit > numerator:
        k -= 1
    return max(0, int(k))


def deletion_capacity(b: BoundInputs) -> int:
    """Largest m with (adaptive regret + m deletion terms) / N <= gamma, floored at 0."""
    if b.N < 1 or b.S_N < 0:
        raise ValueError("need N >= 1 and S_N >= 0")
    numerator = b.gamma * b.N - b.G * b.D * math.sqrt(b.c * b.C * b.S_N)
    return _floor_capacity(numerator, noise_unit(b))


def deletion_capacity_worstcase(b: BoundInputs) -> int:
    """Capacity with S_N replaced by its worst case G^2 N."""
    if b.N < 1:
        raise ValueError("N must be >= 1")
    root_n = math.sqrt(b.N)
    numerator = root_n * (b.gamma * root_n - b.G ** 2 * b.D * math.sqrt(b.c * b.C))
    return _floor_capacity(numerator, noise_unit(b))


def capacity_real(b: BoundInputs, worst_case: bool = False) -> float:
    """Unclamped right-hand side of the capacity inequality (for identity checks)."""
    unit = noise_unit(b)
    if worst_case:
        root_n = math.sqrt(b.N)
        return root_n * (b.gamma * root_n - b.G ** 2 * b.D * math.sqrt(b.c * b.C)) / unit
    return (b.gamma * b.N - b.G * b.D * math.sqrt(b.c * b.C * b.S_N)) / unit


def sample_complexity_terms(b: BoundInputs) -> tuple[float, float]:
    A = b.G ** 2 * b.D * math.sqrt(b.c * b.C)
    return A, deletion_term(b)


def master_inequality(N: int, A: float, B: float, gamma: float) -> bool:
    return A * math.sqrt(N) + B <= gamma * N


def sample_complexity(b: BoundInputs) -> int:
    """Smallest N >= 1 with A sqrt(N) + B <= gamma N, starting from the positive root."""
    if not b.gamma > 0:
        raise ValueError("gamma must be > 0")
    A, B = sample_complexity_terms(b)
    x_star = (A + math.sqrt(A * A + 4.0 * b.gamma * B)) / (2.0 * b.gamma)
    N = max(1, math.ceil(x_star * x_star))
    while not master_inequality(N, A, B, b.gamma):
        N += 1
    while N > 1 and master_inequality(N - 1, A, B, b.gamma):
        N -= 1
    return N


def path_length(path) -> float:
    """Sum of consecutive Euclidean distances along a comparator path."""
    pts = np.asarray(path, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[0] == 0:
        raise ValueError("path must contain at least one point")
    if pts.shape[0] == 1:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
