"""Coupled online L-BFGS learner and its symmetric, noise-calibrated unlearner.

Both operations run the same step: gradient at the current point,
quasi-Newton direction from the shared window, signed step, optional
Gaussian noise, projection, and curvature bookkeeping. Inserts add the
realised curvature pair; deletes spend odometer budget instead.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass

import numpy as np

from . import theory
from .errors import CapacityExhausted, DimensionMismatch, EmptyMemory
from .lbfgs import LbfgsMemory, spectral_diagnostics
from .model import HyperParams, LossModel, loss_gradient, predict_value, project
from .odometer import Odometer

SNAPSHOT_VERSION = "mempair-state/1"
SCHEDULES = ("strongly_convex", "adagrad")


@dataclass
class GradientStats:
    S: float = 0.0
    last_grad_norm: float = 0.0


@dataclass(frozen=True)
class Prediction:
    ready: bool
    value: float | None = None
    samples_needed: int = 0


def default_gate_threshold(hp: HyperParams, odometer: Odometer | None) -> int:
    """Sample count needed for average regret <= gamma with m_max deletions, worst-case S_N."""
    sigma = odometer.sigma_step if odometer is not None else 0.0
    m = odometer.m_max if odometer is not None else 0
    b = theory.BoundInputs(G=hp.G, c=hp.c, C=hp.C, D=hp.D, gamma=hp.gamma,
                           delta_B=hp.delta_B, sigma_step=sigma, m=m)
    return theory.sample_complexity(b)


class MemoryPair:
    """Coupled learner/unlearner sharing one weight vector and one L-BFGS window.

    ``unlearn_direction="gradient"`` is an ablation that unlearns with the raw
    gradient instead of the quasi-Newton direction. ``noise=False`` forces
    zero deletion noise while still charging the odometer.
    """

    name = "memory_pair"

    def __init__(
        self,
        hp: HyperParams,
        model: LossModel,
        *,
        schedule: str = "strongly_convex",
        odometer: Odometer | None = None,
        seed: int = 0,
        gate_threshold: int | None = None,
        b0_scale: float = 1.0,
        b0_mode: str = "identity",
        downdate_on_delete: bool = False,
        unlearn_direction: str = "lbfgs",
        noise: bool = True,
        track_spectrum: bool = False,
        w0=None,
    ):
        if schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {schedule!r}")
        if schedule == "strongly_convex" and not hp.lam > 0:
            raise ValueError("strongly_convex schedule needs lam > 0")
        if unlearn_direction not in ("lbfgs", "gradient"):
            raise ValueError(f"unknown unlearn_direction {unlearn_direction!r}")
        self.hp = hp
        self.model = model
        self.schedule = schedule
        self.odometer = odometer if odometer is not None else Odometer.zcdp(hp.rho_tot, hp.m_max, hp.G / hp.lam)
        self.seed = int(seed)
        self.rng = np.random.Generator(np.random.PCG64(self.seed))
        self.mem = LbfgsMemory(hp.d, hp.tau, b0_scale, b0_mode)
        self.w = project(np.zeros(hp.d) if w0 is None else np.array(w0, dtype=float), hp.D)
        self.t = 0
        self.n_inserts = 0
        self.n_deletes = 0
        self.stats = GradientStats()
        self.gate_threshold = (
            default_gate_threshold(hp, self.odometer) if gate_threshold is None else int(gate_threshold)
        )
        self.downdate_on_delete = downdate_on_delete
        self.unlearn_direction = unlearn_direction
        self.noise = noise
        self.track_spectrum = track_spectrum
        self.min_eig = math.inf
        self.max_eig = 0.0
        self.last_admission = None
        if track_spectrum:
            self._update_spectrum()

    # -- schedule -----------------------------------------------------------

    def step_size(self, grad_sq: float) -> float:
        if self.schedule == "strongly_convex":
            return 1.0 / (self.hp.lam * (self.t + 1))
        S = self.stats.S + grad_sq
        return self.hp.D / math.sqrt(S) if S > 0 else 0.0

    # -- events -------------------------------------------------------------

    def _as_point(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.hp.d,):
            raise DimensionMismatch(f"x has shape {x.shape}, expected ({self.hp.d},)")
        return x

    def pair_step(self, op: str, x, y: float) -> "MemoryPair":
        x = self._as_point(x)
        if op == "delete":
            if not self.odometer.can_spend():
                raise CapacityExhausted(
                    f"deletion capacity exhausted ({self.odometer.deletions}/{self.odometer.m_max})"
                )
            if len(self.mem) == 0:
                raise EmptyMemory("delete requires at least one admitted curvature pair")
        elif op != "insert":
            raise ValueError(f"unknown op {op!r}")

        g_pre = loss_gradient(self.model, self.w, x, y)
        grad_sq = float(g_pre @ g_pre)
        if op == "delete" and self.unlearn_direction == "gradient":
            d = -self.mem.b0_scale * g_pre
        else:
            d = -self.mem.direction(g_pre)
        alpha = self.step_size(grad_sq)
        sign = 1.0 if op == "insert" else -1.0

        w_new = self.w + sign * alpha * d
        if op == "delete" and self.noise:
            sigma = self.odometer.noise_scale(float(np.linalg.norm(d)))
            if sigma > 0:
                w_new = w_new + self.rng.normal(0.0, sigma, size=self.hp.d)
        w_new = project(w_new, self.hp.D)

        g_post = loss_gradient(self.model, w_new, x, y)
        s = w_new - self.w
        y_vec = g_post - g_pre
        self.w = w_new

        if op == "insert":
            self.last_admission = self.mem.try_add_pair(s, y_vec, self.hp.m_tilde)
            self.n_inserts += 1
        else:
            self.odometer.spend()
            self.n_deletes += 1
            self.last_admission = None
            if self.downdate_on_delete:
                self.mem.downdate()

        self.stats.S += grad_sq
        self.stats.last_grad_norm = math.sqrt(grad_sq)
        self.t += 1
        if self.track_spectrum:
            self._update_spectrum()
        return self

    def insert(self, x, y: float) -> "MemoryPair":
        return self.pair_step("insert", x, y)

    def delete(self, x, y: float) -> "MemoryPair":
        return self.pair_step("delete", x, y)

    step = insert

    def predict(self, x) -> Prediction:
        x = self._as_point(x)
        if self.n_inserts < self.gate_threshold:
            return Prediction(False, None, self.gate_threshold - self.n_inserts)
        return Prediction(True, predict_value(self.model, self.w, x), 0)

    # -- diagnostics --------------------------------------------------------

    def _update_spectrum(self):
        diag = spectral_diagnostics(self.mem, self.hp)
        self.min_eig = min(self.min_eig, diag.min_eig)
        self.max_eig = max(self.max_eig, diag.max_eig)

    def spectral_diagnostics(self):
        return spectral_diagnostics(self.mem, self.hp)

    def update_capacity(self) -> int:
        return self.odometer.recompute_capacity(self.hp, max(1, self.n_inserts), self.stats.S)

    def copy(self) -> "MemoryPair":
        return copy.deepcopy(self)

    def reseed(self, seed: int):
        self.seed = int(seed)
        self.rng = np.random.Generator(np.random.PCG64(self.seed))

    # -- snapshot -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "hp": self.hp.to_dict(),
            "model": {"kind": self.model.kind, "reg_lambda": float(self.model.reg_lambda).hex(),
                      "clip_G": float(self.model.clip_G).hex()},
            "schedule": self.schedule,
            "w": [v.hex() for v in self.w.tolist()],
            "mem": self.mem.to_dict(),
            "t": self.t,
            "n_inserts": self.n_inserts,
            "n_deletes": self.n_deletes,
            "stats": {"S": self.stats.S.hex(), "last_grad_norm": self.stats.last_grad_norm.hex()},
            "odometer": self.odometer.to_dict(),
            "seed": self.seed,
            "rng_state": self.rng.bit_generator.state,
            "gate_threshold": self.gate_threshold,
            "downdate_on_delete": self.downdate_on_delete,
            "unlearn_direction": self.unlearn_direction,
            "noise": self.noise,
            "track_spectrum": self.track_spectrum,
            "min_eig": float(self.min_eig).hex(),
            "max_eig": float(self.max_eig).hex(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "MemoryPair":
        if data.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {data.get('version')!r}")
        hp = HyperParams(**data["hp"])
        m = data["model"]
        model = LossModel(m["kind"], float.fromhex(m["reg_lambda"]), float.fromhex(m["clip_G"]))
        obj = cls.__new__(cls)
        obj.hp = hp
        obj.model = model
        obj.schedule = data["schedule"]
        obj.odometer = Odometer.from_dict(data["odometer"])
        obj.seed = data["seed"]
        obj.rng = np.random.Generator(np.random.PCG64())
        obj.rng.bit_generator.state = data["rng_state"]
        obj.mem = LbfgsMemory.from_dict(data["mem"])
        obj.w = np.array([float.fromhex(v) for v in data["w"]])
        obj.t = data["t"]
        obj.n_inserts = data["n_inserts"]
        obj.n_deletes = data["n_deletes"]
        obj.stats = GradientStats(float.fromhex(data["stats"]["S"]), float.fromhex(data["stats"]["last_grad_norm"]))
        obj.gate_threshold = data["gate_threshold"]
        obj.downdate_on_delete = data["downdate_on_delete"]
        obj.unlearn_direction = data["unlearn_direction"]
        obj.noise = data["noise"]
        obj.track_spectrum = data["track_spectrum"]
        obj.min_eig = float.fromhex(data["min_eig"])
        obj.max_eig = float.fromhex(data["max_eig"])
        obj.last_admission = None
        return obj

    @classmethod
    def from_json(cls, text: str) -> "MemoryPair":
        return cls.from_dict(json.loads(text))
