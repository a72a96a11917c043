"""Deletion-capacity odometer: zCDP ledger, Gaussian noise calibration, capacity recomputation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import theory
from .errors import CapacityExhausted, ModeError

# (k+1)*rho_step may exceed rho_tot by a rounding ulp when k+1 == m_max.
_BUDGET_RTOL = 1e-12


def zcdp_to_eps(rho: float, delta: float) -> float:
    """Standard zCDP to (eps, delta) conversion: eps = rho + 2 sqrt(rho ln(1/delta))."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if rho <= 0:
        return 0.0
    return rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))


def gaussian_sigma_zcdp(sensitivity: float, rho: float) -> float:
    return sensitivity / math.sqrt(2.0 * rho)


def gaussian_sigma_eps_delta(sensitivity: float, eps: float, delta: float) -> float:
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / eps


@dataclass
class Odometer:
    """Budget state owned by one learner.

    Build with :meth:`zcdp` or :meth:`eps_delta` rather than directly.
    ``per_event`` switches noise calibration to the norm of the realised
    update direction; this is a heuristic without a composition guarantee.
    """

    mode: str
    m_max: int
    sensitivity: float
    sigma_step: float
    rho_tot: float = math.nan
    rho_step: float = math.nan
    eps_star: float = math.nan
    delta_star: float = math.nan
    eps_step: float = math.nan
    delta_step: float = math.nan
    deletions: int = 0
    per_event: bool = False
    utility_capacity: int | None = field(default=None)

    @classmethod
    def zcdp(cls, rho_tot: float, m_max: int, sensitivity: float, per_event: bool = False) -> "Odometer":
        if not rho_tot > 0:
            raise ValueError("rho_tot must be > 0")
        if int(m_max) != m_max or m_max < 1:
            raise ValueError("m_max must be an integer >= 1")
        if not sensitivity > 0:
            raise ValueError("sensitivity must be > 0")
        rho_step = rho_tot / m_max
        return cls(
            mode="zcdp",
            m_max=int(m_max),
            sensitivity=float(sensitivity),
            sigma_step=gaussian_sigma_zcdp(sensitivity, rho_step),
            rho_tot=float(rho_tot),
            rho_step=rho_step,
            per_event=per_event,
        )

    @classmethod
    def eps_delta(
        cls, eps_star: float, delta_star: float, m_max: int, G: float, lam: float, per_event: bool = False
    ) -> "Odometer":
        if not 0 < eps_star <= 1 or not 0 < delta_star <= 1:
            raise ValueError("eps_star and delta_star must lie in (0, 1]")
        if int(m_max) != m_max or m_max < 1:
            raise ValueError("m_max must be an integer >= 1")
        if not (G > 0 and lam > 0):
            raise ValueError("G and lam must be > 0")
        eps_step = eps_star / m_max
        delta_step = delta_star / m_max
        sensitivity = G / lam
        return cls(
            mode="eps_delta",
            m_max=int(m_max),
            sensitivity=sensitivity,
            sigma_step=gaussian_sigma_eps_delta(sensitivity, eps_step, delta_step),
            eps_star=float(eps_star),
            delta_star=float(delta_star),
            eps_step=eps_step,
            delta_step=delta_step,
            per_event=per_event,
        )

    @property
    def rho_spent(self) -> float:
        if self.mode != "zcdp":
            return 0.0
        return self.deletions * self.rho_step

    @property
    def remaining_privacy(self) -> int:
        return self.m_max - self.deletions

    def can_spend(self) -> bool:
        if self.mode == "zcdp":
            return (self.deletions + 1) * self.rho_step <= self.rho_tot * (1 + _BUDGET_RTOL)
        return self.deletions < self.m_max

    def spend(self) -> float:
        """Charge one deletion and return the noise scale; raises when exhausted."""
        if not self.can_spend():
            raise CapacityExhausted(
                f"deletion budget exhausted after {self.deletions} deletions (m_max={self.m_max})"
            )
        self.deletions += 1
        return self.sigma_step

    def noise_scale(self, direction_norm: float | None = None) -> float:
        """Noise scale for the next delete. Per-event mode rescales by the direction norm."""
        if not self.per_event or direction_norm is None:
            return self.sigma_step
        return self.sigma_step * (direction_norm / self.sensitivity)

    def report_eps_delta(self, delta: float) -> float:
        if self.mode != "zcdp":
            raise ModeError("zCDP conversion requires a zcdp-mode odometer")
        return zcdp_to_eps(self.rho_spent, delta)

    def recompute_capacity(self, hp, N: int, S_N: float) -> int:
        """Utility capacity from the adaptive regret bound; never touches the privacy cap."""
        inputs = theory.BoundInputs(
            G=hp.G, lam=hp.lam, c=hp.c, C=hp.C, D=hp.D, gamma=hp.gamma,
            delta_B=hp.delta_B, sigma_step=self.sigma_step, N=N, S_N=S_N,
        )
        self.utility_capacity = theory.deletion_capacity(inputs)
        return self.utility_capacity

    @property
    def remaining_deletions(self) -> int:
        privacy_left = self.m_max - self.deletions
        if self.utility_capacity is None:
            return privacy_left
        return max(0, min(self.utility_capacity - self.deletions, privacy_left))

    def budget_report(self, delta: float) -> dict:
        return {
            "mode": self.mode,
            "rho_tot": self.rho_tot if self.mode == "zcdp" else None,
            "rho_spent": self.rho_spent if self.mode == "zcdp" else None,
            "deletions": self.deletions,
            "m_max": self.m_max,
            "sigma_step": self.sigma_step,
            "utility_capacity": self.utility_capacity,
            "eps_reported": self.report_eps_delta(delta) if self.mode == "zcdp" else self.deletions * self.eps_step,
        }

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.hex() if isinstance(v, float) else v
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Odometer":
        kwargs = {}
        for k, v in data.items():
            kwargs[k] = float.fromhex(v) if isinstance(v, str) and k not in ("mode",) else v
        return cls(**kwargs)
