"""Reference online learners: OGD, diagonal AdaGrad and the Online Newton Step."""

from __future__ import annotations

from typing import Protocol

import numpy as np
from scipy.optimize import brentq

from .model import LossModel, loss_gradient, project


class OnlineLearner(Protocol):
    name: str
    w: np.ndarray

    def step(self, x, y: float): ...


def ogd_step(w, g, t: int, lam: float, D: float = np.inf) -> np.ndarray:
    if t < 1:
        raise ValueError("t must be >= 1")
    w_new = np.asarray(w, dtype=float) - np.asarray(g, dtype=float) / (lam * t)
    return project(w_new, D) if np.isfinite(D) else w_new


def adagrad_step(w, g, acc, D: float, eps_num: float = 1e-12):
    """Diagonal AdaGrad step. Returns ``(w_new, acc_new)``; the accumulator is updated first."""
    g = np.asarray(g, dtype=float)
    acc = np.asarray(acc, dtype=float)
    if np.any(acc < 0):
        raise ValueError("accumulator must be elementwise >= 0")
    acc_new = acc + g * g
    w_new = np.asarray(w, dtype=float) - D * g / np.sqrt(acc_new + eps_num)
    return project(w_new, D), acc_new


def a_norm_projection(u, A, radius: float) -> np.ndarray:
    """argmin over the ball ||z|| <= radius of (z - u)' A (z - u)."""
    u = np.asarray(u, dtype=float)
    if np.linalg.norm(u) <= radius:
        return u
    evals, Q = np.linalg.eigh(A)
    c = Q.T @ (A @ u)

    # z(mu) = (A + mu I)^{-1} A u, with ||z(mu)|| decreasing in mu
    def excess(mu):
        return float(np.linalg.norm(c / (evals + mu))) - radius

    hi = 1.0
    while excess(hi) > 0:
        hi *= 2.0
    mu = brentq(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    z = Q @ (c / (evals + mu))
    # guard against landing a hair outside the ball
    return project(z, 2 * radius)


def ons_step(w, g, A, gamma_ons: float, D: float = np.inf):
    """Online Newton Step. Returns ``(w_new, A_new)``."""
    g = np.asarray(g, dtype=float)
    A_new = np.asarray(A, dtype=float) + np.outer(g, g)
    u = np.asarray(w, dtype=float) - np.linalg.solve(A_new, g) / gamma_ons
    if not np.isfinite(D):
        return u, A_new
    return a_norm_projection(u, A_new, 0.5 * D), A_new


class OGD:
    name = "ogd"

    def __init__(self, d: int, model: LossModel, lam: float, D: float):
        self.model = model
        self.lam = lam
        self.D = D
        self.w = np.zeros(d)
        self.t = 0

    def step(self, x, y):
        g = loss_gradient(self.model, self.w, x, y)
        self.t += 1
        self.w = ogd_step(self.w, g, self.t, self.lam, self.D)
        return self


class AdaGrad:
    name = "adagrad"

    def __init__(self, d: int, model: LossModel, D: float, eps_num: float = 1e-12):
        self.model = model
        self.D = D
        self.eps_num = eps_num
        self.w = np.zeros(d)
        self.acc = np.zeros(d)
        self.S = 0.0

    def step(self, x, y):
        g = loss_gradient(self.model, self.w, x, y)
        self.S += float(g @ g)
        self.w, self.acc = adagrad_step(self.w, g, self.acc, self.D, self.eps_num)
        return self


class ONS:
    name = "ons"

    def __init__(self, d: int, model: LossModel, D: float, gamma_ons: float = 1.0, eps_init: float = 1.0):
        self.model = model
        self.D = D
        self.gamma_ons = gamma_ons
        self.w = np.zeros(d)
        self.A = eps_init * np.eye(d)

    def step(self, x, y):
        g = loss_gradient(self.model, self.w, x, y)
        self.w, self.A = ons_step(self.w, g, self.A, self.gamma_ons, self.D)
        return self
