"""Limited-memory inverse-Hessian estimate built from curvature pairs."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DenseTooLarge, DimensionMismatch

DEFAULT_M_TILDE = 1e-8
DEFAULT_DENSE_CAP = 64


@dataclass(frozen=True)
class CurvaturePair:
    s: np.ndarray
    y: np.ndarray
    rho: float


@dataclass(frozen=True)
class Admission:
    admitted: bool
    reason: str | None = None

    def __bool__(self):
        return self.admitted


@dataclass(frozen=True)
class SpectralDiagnostics:
    trace_est: float
    logdet_est: float
    min_eig: float
    max_eig: float
    within_bounds: bool


class LbfgsMemory:
    """FIFO window of at most ``tau`` admitted curvature pairs.

    ``b0_mode`` selects the seed matrix of the recursion: ``"identity"`` uses
    ``b0_scale * I``; ``"scaled"`` uses ``(s'y / y'y) * I`` from the newest
    pair (falling back to ``b0_scale`` while the window is empty).
    """

    def __init__(self, d: int, tau: int = 10, b0_scale: float = 1.0, b0_mode: str = "identity"):
        if d < 1 or tau < 1:
            raise ValueError("d and tau must be >= 1")
        if not b0_scale > 0:
            raise ValueError("b0_scale must be > 0")
        if b0_mode not in ("identity", "scaled"):
            raise ValueError(f"unknown b0_mode {b0_mode!r}")
        self.d = d
        self.tau = tau
        self.b0_scale = float(b0_scale)
        self.b0_mode = b0_mode
        self.window: deque[CurvaturePair] = deque()

    def __len__(self):
        return len(self.window)

    @property
    def initial_scale(self) -> float:
        if self.b0_mode == "scaled" and self.window:
            newest = self.window[-1]
            return float(newest.s @ newest.y) / float(newest.y @ newest.y)
        return self.b0_scale

    def _check(self, v, name):
        v = np.asarray(v, dtype=float)
        if v.shape != (self.d,):
            raise DimensionMismatch(f"{name} has shape {v.shape}, expected ({self.d},)")
        return v

    def direction(self, g) -> np.ndarray:
        """Return ``H g`` where H is the limited-memory inverse-Hessian estimate.

        Two-loop recursion, newest pair first on the way down.
        """
        q = self._check(g, "g").copy()
        alphas = []
        for pair in reversed(self.window):
            a = pair.rho * float(pair.s @ q)
            alphas.append(a)
            q -= a * pair.y
        r = self.initial_scale * q
        for pair, a in zip(self.window, reversed(alphas)):
            b = pair.rho * float(pair.y @ r)
            r += (a - b) * pair.s
        return r

    def try_add_pair(self, s, y, m_tilde: float | None = None) -> Admission:
        s = self._check(s, "s")
        y = self._check(y, "y")
        threshold = DEFAULT_M_TILDE if m_tilde is None else m_tilde
        ss = float(s @ s)
        if not ss > 0:
            return Admission(False, "degenerate step")
        sy = float(s @ y)
        if sy <= 0:
            return Admission(False, "negative curvature")
        if sy < threshold * ss:
            return Admission(False, "curvature below m_tilde")
        if len(self.window) == self.tau:
            self.window.popleft()
        self.window.append(CurvaturePair(s.copy(), y.copy(), 1.0 / sy))
        return Admission(True)

    def downdate(self) -> bool:
        """Evict the oldest pair without adding one. Returns whether a pair was removed."""
        if self.window:
            self.window.popleft()
            return True
        return False

    def dense_inverse(self, max_dim: int = DEFAULT_DENSE_CAP) -> np.ndarray:
        """Materialise the inverse-Hessian estimate via the V-form recursion."""
        if self.d > max_dim:
            raise DenseTooLarge(f"d={self.d} exceeds dense cap {max_dim}")
        eye = np.eye(self.d)
        H = self.initial_scale * eye
        for pair in self.window:
            V = eye - pair.rho * np.outer(pair.y, pair.s)
            H = V.T @ H @ V + pair.rho * np.outer(pair.s, pair.s)
        return 0.5 * (H + H.T)

    def copy(self) -> "LbfgsMemory":
        new = LbfgsMemory(self.d, self.tau, self.b0_scale, self.b0_mode)
        new.window = deque(self.window)
        return new

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "tau": self.tau,
            "b0_scale": self.b0_scale.hex(),
            "b0_mode": self.b0_mode,
            "pairs": [
                {"s": [v.hex() for v in p.s.tolist()], "y": [v.hex() for v in p.y.tolist()], "rho": p.rho.hex()}
                for p in self.window
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LbfgsMemory":
        mem = cls(data["d"], data["tau"], float.fromhex(data["b0_scale"]), data["b0_mode"])
        for p in data["pairs"]:
            s = np.array([float.fromhex(v) for v in p["s"]])
            y = np.array([float.fromhex(v) for v in p["y"]])
            mem.window.append(CurvaturePair(s, y, float.fromhex(p["rho"])))
        return mem


def spectral_diagnostics(mem: LbfgsMemory, hp, max_dim: int = DEFAULT_DENSE_CAP) -> SpectralDiagnostics:
    """Trace / log-determinant of the Hessian estimate against the window bounds.

    ``min_eig`` and ``max_eig`` are the extreme eigenvalues of the inverse
    estimate (the preconditioner actually applied to gradients).
    """
    H = mem.dense_inverse(max_dim)
    eig = np.linalg.eigvalsh(H)
    lo, hi = float(eig[0]), float(eig[-1])
    if lo <= 0:
        return SpectralDiagnostics(math.inf, -math.inf, lo, hi, False)
    trace_B = float(np.sum(1.0 / eig))
    logdet_B = -float(np.sum(np.log(eig)))
    n_tau = mem.d + hp.tau
    trace_cap = n_tau * hp.M_tilde
    logdet_floor = n_tau * math.log(hp.m_tilde) - hp.tau * math.log(n_tau * hp.M_tilde)
    ok = trace_B <= trace_cap * (1 + 1e-12) and logdet_B >= logdet_floor - 1e-12 * abs(logdet_floor)
    return SpectralDiagnostics(trace_B, logdet_B, lo, hi, bool(ok))
