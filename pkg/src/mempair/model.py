"""Per-sample losses, clipped gradients, domain projection and hyperparameters."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionMismatch

LOSS_KINDS = ("squared", "logistic")


@dataclass(frozen=True)
class LossModel:
    """L2-regularised per-sample loss.

    ``clip_G`` caps the gradient norm (rescaling, direction kept). The
    default of ``inf`` disables clipping.
    """

    kind: str = "squared"
    reg_lambda: float = 0.0
    clip_G: float = math.inf

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")
        if not self.clip_G > 0:
            raise ValueError("clip_G must be > 0")


def _check_dims(w, x):
    if w.shape != x.shape:
        raise DimensionMismatch(f"dim(x)={x.shape} does not match dim(w)={w.shape}")


def _log1pexp(z):
    # numerically stable log(1 + e^z)
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(z):
    if np.ndim(z) == 0:
        return float(_sigmoid(np.array([z]))[0])
    return _sigmoid(z)


def loss_value(model: LossModel, w, x, y) -> float:
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_dims(w, x)
    score = float(w @ x)
    if model.kind == "squared":
        base = 0.5 * (score - y) ** 2
    else:
        base = float(_log1pexp(-y * score))
    return base + 0.5 * model.reg_lambda * float(w @ w)


def raw_gradient(model: LossModel, w, x, y) -> np.ndarray:
    """Analytic gradient of :func:`loss_value`, without clipping."""
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_dims(w, x)
    score = float(w @ x)
    if model.kind == "squared":
        g = (score - y) * x
    else:
        g = -y * sigmoid(-y * score) * x
    if model.reg_lambda:
        g = g + model.reg_lambda * w
    return g


def clip(g: np.ndarray, G: float) -> np.ndarray:
    norm = float(np.linalg.norm(g))
    if norm > G:
        return g * (G / norm)
    return g


def loss_gradient(model: LossModel, w, x, y) -> np.ndarray:
    g = raw_gradient(model, w, x, y)
    if math.isfinite(model.clip_G):
        g = clip(g, model.clip_G)
    return g


def predict_value(model: LossModel, w, x) -> float:
    score = float(np.asarray(w, dtype=float) @ np.asarray(x, dtype=float))
    if model.kind == "squared":
        return score
    return sigmoid(score)


def project(w, D: float) -> np.ndarray:
    """Euclidean projection onto the origin-centred ball of diameter ``D``."""
    if not D > 0:
        raise ValueError("D must be > 0")
    w = np.asarray(w, dtype=float)
    radius = 0.5 * D
    norm = float(np.linalg.norm(w))
    if norm <= radius:
        return w
    scale = radius / norm
    out = w * scale
    # rounding can leave the result an ulp outside; shrink until it lands inside so projection is idempotent
    while float(np.linalg.norm(out)) > radius:
        scale = np.nextafter(scale, 0.0)
        out = w * scale
    return out


# Batch helpers used by the offline comparator and regret accounting.

def batch_losses(model: LossModel, w, X, Y) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    scores = X @ w
    if model.kind == "squared":
        base = 0.5 * (scores - Y) ** 2
    else:
        base = _log1pexp(-Y * scores)
    return base + 0.5 * model.reg_lambda * float(w @ w)


def batch_objective(model: LossModel, w, X, Y):
    """Mean loss over the rows of ``X`` with its gradient and Hessian (unclipped)."""
    w = np.asarray(w, dtype=float)
    n = X.shape[0]
    scores = X @ w
    lam = model.reg_lambda
    if model.kind == "squared":
        r = scores - Y
        f = 0.5 * float(r @ r) / n
        grad = X.T @ r / n
        hess = X.T @ X / n
    else:
        z = -Y * scores
        f = float(np.sum(_log1pexp(z))) / n
        p = _sigmoid(z)
        grad = X.T @ (-Y * p) / n
        weights = p * (1.0 - p)
        hess = (X * weights[:, None]).T @ X / n
    f += 0.5 * lam * float(w @ w)
    grad = grad + lam * w
    hess = hess + lam * np.eye(X.shape[1])
    return f, grad, hess


def gradient_bound(model: LossModel, X, Y, D: float) -> float:
    """Largest per-sample gradient norm attainable anywhere in the ball of diameter D.

    Uses the triangle inequality per row, so it is a valid G for the
    bounded-gradient assumption on this data.
    """
    radius = 0.5 * D
    xn = np.linalg.norm(X, axis=1)
    if model.kind == "squared":
        per_row = xn * (radius * xn + np.abs(Y))
    else:
        per_row = xn
    return float(np.max(per_row, initial=0.0)) + model.reg_lambda * radius


@dataclass
class HyperParams:
    """Every constant the bounds and the learner refer to."""

    d: int
    D: float = 10.0
    G: float = 1.0
    lam: float = 1.0
    c: float = 1.0
    C: float = 1.0
    m_tilde: float = 1e-8
    M_tilde: float = 1.0
    tau: int = 10
    gamma: float = 1.0
    delta_B: float = 0.05
    eps_star: float = 1.0
    delta_star: float = 1e-5
    rho_tot: float = 1.0
    m_max: int = 10

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not (self.D > 0 and self.G > 0):
            raise ValueError("D and G must be > 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 0 < self.c <= self.C:
            raise ValueError("need 0 < c <= C")
        if not 0 < self.m_tilde <= self.M_tilde:
            raise ValueError("need 0 < m_tilde <= M_tilde")
        if self.tau < 1 or self.m_max < 1:
            raise ValueError("tau and m_max must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        for name in ("delta_B", "delta_star"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not 0 < self.eps_star:
            raise ValueError("eps_star must be > 0")
        if not self.rho_tot > 0:
            raise ValueError("rho_tot must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)
