"""Replay, exact regret accounting, the fidelity experiment and the experiment runner."""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import theory
from .baselines import ONS, OGD, AdaGrad
from .errors import CapacityExhausted, ComparatorError, ConfigError
from .model import (
    HyperParams,
    LossModel,
    batch_losses,
    batch_objective,
    gradient_bound,
    loss_gradient,
    loss_value,
    predict_value,
    project,
)
from .odometer import Odometer
from .pair import MemoryPair
from .streams import (
    Stream,
    gen_delete_schedule,
    gen_drift,
    gen_stationary,
    oscillating_segments,
    read_stream,
    validate_stream,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "cumulative_regret", "instantaneous_regret", "bound_overlay")


# -- offline comparator ---------------------------------------------------

def _gradient_mapping(w, grad, D, L):
    return L * float(np.linalg.norm(w - project(w - grad / L, D)))


def _newton_unconstrained(model, X, Y, mu, w0, tol, max_iter=100):
    """Damped Newton on mean loss + (mu/2)||w||^2. Returns (w, converged)."""
    w = w0.copy()
    d = X.shape[1]
    for _ in range(max_iter):
        f, g, H = batch_objective(model, w, X, Y)
        f += 0.5 * mu * float(w @ w)
        g = g + mu * w
        if np.linalg.norm(g) <= tol:
            return w, True
        H = H + mu * np.eye(d)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            return w, False
        t = 1.0
        while t > 1e-12:
            w_try = w - t * step
            f_try = batch_objective(model, w_try, X, Y)[0] + 0.5 * mu * float(w_try @ w_try)
            if f_try <= f - 1e-4 * t * float(g @ step):
                break
            t *= 0.5
        w_next = w - t * step
        if np.array_equal(w_next, w):
            gn = np.linalg.norm(g)
            return w, gn <= max(tol, 1e-13 * (1 + abs(f)))
        w = w_next
        if np.linalg.norm(w) > 1e8:
            return w, False
    g = batch_objective(model, w, X, Y)[1] + mu * w
    return w, bool(np.linalg.norm(g) <= tol)


def _solve_newton(model, X, Y, D, tol):
    radius = 0.5 * D
    d = X.shape[1]
    w, ok = _newton_unconstrained(model, X, Y, 0.0, np.zeros(d), tol)
    if ok and np.linalg.norm(w) <= radius:
        return w
    # boundary solution: find mu >= 0 with ||w(mu)|| = radius
    lo, hi = 0.0, 1.0
    w_hi, _ = _newton_unconstrained(model, X, Y, hi, np.zeros(d), tol)
    while np.linalg.norm(w_hi) > radius:
        lo, hi = hi, hi * 2.0
        w_hi, _ = _newton_unconstrained(model, X, Y, hi, w_hi, tol)
        if hi > 1e300:
            raise ComparatorError("could not bracket the boundary multiplier")
    w_mid = w_hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        w_mid, _ = _newton_unconstrained(model, X, Y, mid, w_mid, tol * 1e-2)
        if np.linalg.norm(w_mid) > radius:
            lo = mid
        else:
            hi = mid
            w_hi = w_mid
    return project(w_hi, D)


def _lipschitz(model, X):
    n = X.shape[0]
    top = float(np.linalg.eigvalsh(X.T @ X / n)[-1]) if n else 0.0
    if model.kind == "logistic":
        top *= 0.25
    return top + model.reg_lambda


def _solve_gradient(model, X, Y, D, tol, max_iter=500_000):
    """Accelerated projected gradient with adaptive restart."""
    L = max(_lipschitz(model, X), 1e-12)
    d = X.shape[1]
    w = np.zeros(d)
    z = w.copy()
    k = 1.0
    for _ in range(max_iter):
        g = batch_objective(model, z, X, Y)[1]
        w_next = project(z - g / L, D)
        gw = batch_objective(model, w_next, X, Y)[1]
        if _gradient_mapping(w_next, gw, D, L) <= tol:
            return w_next
        k_next = 0.5 * (1 + math.sqrt(1 + 4 * k * k))
        if float((z - w_next) @ (w_next - w)) > 0:
            k_next = 1.0
            z = w_next
        else:
            z = w_next + ((k - 1) / k_next) * (w_next - w)
        w, k = w_next, k_next
    raise ComparatorError(f"projected gradient did not reach tolerance {tol} in {max_iter} iterations")


def offline_comparator(X, Y, model: LossModel, D: float, method: str = "newton", tol: float = 1e-10,
                       max_iter: int = 500_000) -> np.ndarray:
    """Minimiser over the ball of diameter D of the summed losses on the rows of X.

    ``tol`` applies to the projected-gradient mapping of the mean objective;
    ``max_iter`` caps the accelerated-gradient method.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ComparatorError("comparator needs at least one insert")
    d = X.shape[1]
    g0 = batch_objective(model, np.zeros(d), X, Y)[1]
    L = max(_lipschitz(model, X), 1e-12)
    if _gradient_mapping(np.zeros(d), g0, D, L) <= tol:
        return np.zeros(d)
    if method == "newton":
        w = _solve_newton(model, X, Y, D, tol)
    elif method == "gradient":
        w = _solve_gradient(model, X, Y, D, tol, max_iter)
    else:
        raise ValueError(f"unknown comparator method {method!r}")
    residual = _gradient_mapping(w, batch_objective(model, w, X, Y)[1], D, L)
    if residual > tol:
        raise ComparatorError(f"{method} comparator residual {residual:.3e} exceeds {tol:.1e}")
    return w


# -- replay ---------------------------------------------------------------

@dataclass
class ReplayTrace:
    losses: np.ndarray
    diagnostics: dict
    predictions: list = field(default_factory=list)
    rejected_deletes: int = 0


def _learner_diagnostics(learner) -> dict:
    info = {}
    if isinstance(learner, MemoryPair):
        info.update(
            min_eig=learner.min_eig,
            max_eig=learner.max_eig,
            n_deletes=learner.n_deletes,
            S=learner.stats.S,
            sigma_step=learner.odometer.sigma_step,
            utility_capacity=learner.update_capacity(),
        )
    elif isinstance(learner, AdaGrad):
        info["S"] = learner.S
    return info


def replay(stream: Stream, learner, checkpoints=(), halt_on_exhaustion: bool = True) -> ReplayTrace:
    """Feed every event to ``learner``; loss is charged at the pre-update weights of each insert."""
    wanted = set(int(t) for t in checkpoints)
    losses = []
    diagnostics = {}
    predictions = []
    rejected = 0
    can_delete = hasattr(learner, "delete")
    for e in stream.events:
        if e.op == "insert":
            losses.append(loss_value(learner.model, learner.w, e.x, e.y))
            learner.step(e.x, e.y)
            if len(losses) in wanted:
                diagnostics[len(losses)] = _learner_diagnostics(learner)
        elif e.op == "delete":
            if not can_delete:
                continue
            try:
                learner.delete(e.x, e.y)
            except CapacityExhausted:
                if halt_on_exhaustion:
                    raise
                rejected += 1
        else:
            if hasattr(learner, "predict"):
                p = learner.predict(e.x)
                predictions.append((e.t_index, p.value if p.ready else None))
            else:
                predictions.append((e.t_index, predict_value(learner.model, learner.w, e.x)))
    return ReplayTrace(np.array(losses), diagnostics, predictions, rejected)


# -- regret ---------------------------------------------------------------

@dataclass
class BoundSetup:
    G: float
    lam: float
    D: float
    delta_B: float = 0.05


@dataclass
class RegretReport:
    algorithm: str
    checkpoints: list
    cumulative: list
    instantaneous: list
    bound_overlay: list
    path_lengths: list
    comparator: dict
    diagnostics: dict
    trace: ReplayTrace | None = None

    @property
    def average(self) -> list:
        return [r / t for r, t in zip(self.cumulative, self.checkpoints)]


def _segments(stream: Stream, comparator):
    n = sum(1 for e in stream.events if e.op == "insert")
    if comparator == "segments":
        lengths = stream.manifest.get("generator", {}).get("segment_lengths")
        if lengths:
            if sum(lengths) != n:
                raise ValueError("segment lengths do not match the number of inserts")
            return list(np.cumsum([0] + list(lengths)))
    return [0, n]


def bound_overlay(learner, info: dict, T: int, P_T: float, setup: BoundSetup | None):
    if setup is None:
        return None
    if isinstance(learner, MemoryPair):
        if learner.schedule == "adagrad":
            b = theory.BoundInputs(G=setup.G, D=setup.D, c=info["min_eig"], C=info["max_eig"],
                                   S_N=info["S"], sigma_step=info["sigma_step"], m=info["n_deletes"],
                                   delta_B=setup.delta_B)
            return theory.adagrad_regret_bound(b) + theory.deletion_term(b) + setup.G * P_T
        b = theory.BoundInputs(G=setup.G, lam=setup.lam, c=info["min_eig"], T=T, P_T=P_T,
                               m=info["n_deletes"], sigma_step=info["sigma_step"], delta_B=setup.delta_B)
        return theory.static_regret_bound(b) + setup.G * P_T
    if isinstance(learner, OGD):
        return theory.dynamic_regret_bound(theory.BoundInputs(G=setup.G, lam=setup.lam, c=1.0, T=T, P_T=P_T))
    if isinstance(learner, AdaGrad):
        b = theory.BoundInputs(G=setup.G, D=setup.D, S_N=info["S"])
        return theory.adagrad_regret_bound(b) + setup.G * P_T
    return None


def regret_series(stream: Stream, learner, comparator="static", checkpoints=None, setup: BoundSetup | None = None,
                  solver: str = "newton", halt_on_exhaustion: bool = True, D: float | None = None) -> RegretReport:
    """Replay ``stream`` through ``learner`` and measure regret at each checkpoint.

    ``comparator`` is ``"static"`` (prefix minimiser at each checkpoint),
    ``"segments"`` (per-segment prefix minimisers, i.e. the oracle path of a
    drift stream) or an explicit weight vector held fixed.
    """
    X, Y = stream.insert_arrays()
    n = X.shape[0]
    if X.shape[1] != learner.w.shape[0]:
        raise ValueError("stream and learner dimensions differ")
    cps = sorted(set(int(t) for t in (checkpoints or [n]) if 1 <= int(t) <= n))
    if D is None:
        D = setup.D if setup is not None else getattr(learner, "D", None) or learner.hp.D
    trace = replay(stream, learner, cps, halt_on_exhaustion)
    for t in cps:
        trace.diagnostics.setdefault(t, {})
    model = learner.model
    cumulative, instantaneous, overlay, plens = [], [], [], []
    fixed = None if isinstance(comparator, str) else np.asarray(comparator, dtype=float)
    bounds = _segments(stream, comparator) if fixed is None else [0, n]
    for T in cps:
        learner_loss = float(np.sum(trace.losses[:T]))
        if fixed is not None:
            path = [fixed]
            comp_loss = float(np.sum(batch_losses(model, fixed, X[:T], Y[:T])))
            last_w = fixed
        else:
            path, comp_loss = [], 0.0
            for a, b in zip(bounds[:-1], bounds[1:]):
                b = min(b, T)
                if a >= b:
                    break
                w_star = offline_comparator(X[a:b], Y[a:b], model, D, solver)
                path.append(w_star)
                comp_loss += float(np.sum(batch_losses(model, w_star, X[a:b], Y[a:b])))
            last_w = path[-1]
        P_T = theory.path_length(path)
        cumulative.append(learner_loss - comp_loss)
        instantaneous.append(float(trace.losses[T - 1]) - loss_value(model, last_w, X[T - 1], Y[T - 1]))
        plens.append(P_T)
        overlay.append(bound_overlay(learner, trace.diagnostics[T], T, P_T, setup))
    desc = {"kind": "fixed" if fixed is not None else comparator, "solver": solver}
    return RegretReport(getattr(learner, "name", type(learner).__name__), cps, cumulative, instantaneous,
                        overlay, plens, desc, trace.diagnostics, trace)


# -- fidelity -------------------------------------------------------------

def _fresh_pair(hp, model, seed, pair_kwargs, **overrides):
    kwargs = dict(pair_kwargs)
    kwargs.update(overrides)
    return MemoryPair(hp, model, seed=seed, **kwargs)


def retrain_without(X, Y, drop, hp, model, seed=0, **pair_kwargs) -> np.ndarray:
    """Replay the inserts in order, skipping the indices in ``drop``."""
    drop = set(drop)
    pair = _fresh_pair(hp, model, seed, pair_kwargs, noise=False)
    for i in range(len(Y)):
        if i not in drop:
            pair.insert(X[i], Y[i])
    return pair.w.copy()


def fidelity_experiment(X, Y, delete_index: int, hp: HyperParams, model: LossModel, trials: int = 1,
                        noise: bool = False, seed: int = 0, **pair_kwargs) -> dict:
    """Insert everything, delete one point, and compare with retraining without it.

    With ``noise`` on, each trial reseeds the deletion noise and the report
    carries the empirical per-coordinate spread of the deleted models.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n, d = X.shape
    if not 0 <= delete_index < n:
        raise IndexError(f"delete_index {delete_index} outside [0, {n})")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    base = _fresh_pair(hp, model, seed, pair_kwargs, noise=noise)
    for i in range(n):
        base.insert(X[i], Y[i])
    target = retrain_without(X, Y, [delete_index], hp, model, seed, **pair_kwargs)
    w_dels = np.empty((trials, d))
    for k in range(trials):
        pair = copy.deepcopy(base)
        pair.reseed(seed + k)
        pair.delete(X[delete_index], Y[delete_index])
        w_dels[k] = pair.w
    distances = np.linalg.norm(w_dels - target, axis=1)
    report = {
        "delete_index": delete_index,
        "trials": trials,
        "noise": noise,
        "unlearn_direction": base.unlearn_direction,
        "sigma_step": base.odometer.sigma_step,
        "distances": distances.tolist(),
        "mean_distance": float(np.mean(distances)),
        "retrain_w": target.tolist(),
    }
    if noise and trials > 1:
        std = np.std(w_dels, axis=0, ddof=1)
        report["empirical_std_per_coord"] = std.tolist()
        report["empirical_std"] = float(np.mean(std))
        report["std_rel_error"] = float(np.max(np.abs(std - base.odometer.sigma_step)) / base.odometer.sigma_step)
    return report


def insert_then_delete(hp: HyperParams, model: LossModel, x, y, seed: int = 0, **pair_kwargs) -> dict:
    """Fresh pair, insert one point and delete it straight away with noise off.

    The triangle inequality over the two steps gives the oracle
    ``alpha_1 C G + alpha_2 C G`` with C the largest inverse-curvature
    eigenvalue seen and G the clip bound of the model (or ``hp.G``).
    """
    pair = _fresh_pair(hp, model, seed, pair_kwargs, noise=False, track_spectrum=True)
    w0 = pair.w.copy()
    alpha_1 = pair.step_size(0.0) if pair.schedule == "strongly_convex" else None
    g1 = float(np.linalg.norm(loss_gradient(model, pair.w, x, y)))
    if alpha_1 is None:
        alpha_1 = pair.step_size(g1 * g1)
    pair.insert(x, y)
    g2 = float(np.linalg.norm(loss_gradient(model, pair.w, x, y)))
    alpha_2 = pair.step_size(g2 * g2)
    pair.delete(x, y)
    G = model.clip_G if math.isfinite(model.clip_G) else hp.G
    C = pair.max_eig
    return {
        "distance": float(np.linalg.norm(pair.w - w0)),
        "alpha_1": alpha_1,
        "alpha_2": alpha_2,
        "C": C,
        "G": G,
        "bound": alpha_1 * C * G + alpha_2 * C * G,
    }


def unlearner_ablation(X, Y, delete_index, hp, model, seed=0, **pair_kwargs) -> dict:
    """Noise-free delete-vs-retrain distance for the L-BFGS and gradient-only unlearners."""
    out = {}
    for mode in ("lbfgs", "gradient"):
        r = fidelity_experiment(X, Y, delete_index, hp, model, trials=1, noise=False, seed=seed,
                                unlearn_direction=mode, **pair_kwargs)
        out[mode] = r["mean_distance"]
    return out


# -- experiment config ----------------------------------------------------

DEFAULTS = {
    "stream": None,
    "generate": {"kind": "stationary", "n": 1000, "d": 10, "noise_std": 0.1, "w_radius": 1.0,
                 "path_length": 0.0, "hop": 5.0},
    "loss": {"kind": "squared", "reg_lambda": 0.1},
    "D": 4.0,
    "G": "auto",
    "deletions": {"m": 0, "pattern": "uniform"},
    "privacy": {"mode": "zcdp", "rho_tot": 1.0, "m_max": None, "eps_star": 1.0, "delta_star": 1e-5,
                "report_delta": None, "per_event": False},
    "theory": {"c": 1.0, "C": 1.0, "gamma": 0.5, "delta_B": 0.05},
    "algorithms": [{"name": "memory_pair"}, {"name": "ogd"}, {"name": "adagrad"}, {"name": "ons"}],
    "checkpoints": [100, 1000],
    "seeds": [0],
    "comparator": "static",
    "solver": "newton",
    "halt_on_exhaustion": False,
    "workers": 1,
    "out": "out",
    "format": "csv",
}

ALGORITHM_OPTIONS = {
    "memory_pair": {"schedule": "strongly_convex", "tau": 10, "b0_scale": 1.0, "b0_mode": "identity",
                    "m_tilde": "auto", "downdate_on_delete": False, "unlearn_direction": "lbfgs",
                    "noise": True, "gate_threshold": 0},
    "ogd": {},
    "adagrad": {"eps_num": 1e-12},
    "ons": {"gamma_ons": 1.0, "eps_init": 1.0},
}


def _merge(defaults: dict, given: dict, where: str) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where or 'config'}")
    out = {}
    for k, v in defaults.items():
        if k in given:
            g = given[k]
            if isinstance(v, dict) and v and isinstance(g, dict):
                out[k] = _merge(v, g, f"{where}.{k}" if where else k)
            else:
                out[k] = g
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULTS, raw, "")
    algos = []
    for a in cfg["algorithms"]:
        if isinstance(a, str):
            a = {"name": a}
        name = a.get("name")
        if name not in ALGORITHM_OPTIONS:
            raise ConfigError(f"unknown algorithm {name!r}")
        opts = _merge({"name": name, "label": name, **ALGORITHM_OPTIONS[name]}, a, f"algorithms.{name}")
        algos.append(opts)
    labels = [a["label"] for a in algos]
    if len(set(labels)) != len(labels):
        raise ConfigError("algorithm labels must be unique")
    cfg["algorithms"] = algos
    cps = cfg["checkpoints"]
    if not cps or any(not isinstance(t, int) or t < 1 for t in cps) or list(cps) != sorted(set(cps)):
        raise ConfigError("checkpoints must be strictly ascending positive integers")
    if not cfg["seeds"] or any(not isinstance(s, int) for s in cfg["seeds"]):
        raise ConfigError("need at least one integer seed")
    if cfg["comparator"] not in ("static", "segments"):
        raise ConfigError("comparator must be 'static' or 'segments'")
    if cfg["format"] not in ("csv", "json"):
        raise ConfigError("format must be 'csv' or 'json'")
    if cfg["loss"]["kind"] not in ("squared", "logistic"):
        raise ConfigError("unknown loss kind")
    if cfg["privacy"]["mode"] not in ("zcdp", "eps_delta"):
        raise ConfigError("privacy.mode must be 'zcdp' or 'eps_delta'")
    if cfg["privacy"]["m_max"] is None:
        cfg["privacy"]["m_max"] = max(1, int(cfg["deletions"]["m"]))
    if cfg["privacy"]["report_delta"] is None:
        cfg["privacy"]["report_delta"] = cfg["privacy"]["delta_star"]
    return cfg


def build_stream(cfg: dict, seed: int) -> Stream:
    if cfg["stream"]:
        try:
            stream = read_stream(cfg["stream"])
        except OSError as exc:
            raise ConfigError(f"cannot read stream {cfg['stream']}: {exc}") from exc
    else:
        g = cfg["generate"]
        loss = cfg["loss"]["kind"]
        if g["kind"] == "stationary":
            stream = gen_stationary(seed, g["n"], g["d"], g["noise_std"], loss, g["w_radius"])
        elif g["kind"] == "drift":
            segs = oscillating_segments(seed, g["d"], g["n"], g["path_length"], g["hop"])
            stream = gen_drift(seed, segs, g["noise_std"], loss)
        else:
            raise ConfigError(f"unknown generator kind {g['kind']!r}")
        m = int(cfg["deletions"]["m"])
        if m:
            stream = gen_delete_schedule(stream, m, cfg["deletions"]["pattern"], seed)
    validate_stream(stream)
    return stream


def measured_constants(cfg: dict, stream: Stream) -> tuple[LossModel, HyperParams, dict]:
    X, Y = stream.insert_arrays()
    lam = float(cfg["loss"]["reg_lambda"])
    D = float(cfg["D"])
    base = LossModel(cfg["loss"]["kind"], lam)
    G = gradient_bound(base, X, Y, D) if cfg["G"] == "auto" else float(cfg["G"])
    model = LossModel(base.kind, lam, G)
    xsq = float(np.max(np.sum(X * X, axis=1), initial=0.0))
    M_tilde = (xsq if base.kind == "squared" else 0.25 * xsq) + lam
    th = cfg["theory"]
    pv = cfg["privacy"]
    hp_kwargs = dict(d=stream.manifest["d"], D=D, G=G, lam=lam, c=th["c"], C=th["C"], M_tilde=max(M_tilde, 1e-8),
                     gamma=th["gamma"], delta_B=th["delta_B"], eps_star=pv["eps_star"],
                     delta_star=pv["delta_star"], rho_tot=pv["rho_tot"], m_max=int(pv["m_max"]))
    return model, hp_kwargs, {"G": G, "D": D, "lam": lam, "M_tilde": M_tilde}


def make_learner(algo: dict, cfg: dict, model: LossModel, hp_kwargs: dict, seed: int):
    d, D, lam = hp_kwargs["d"], hp_kwargs["D"], hp_kwargs["lam"]
    name = algo["name"]
    if name == "memory_pair":
        m_tilde = algo["m_tilde"]
        if m_tilde == "auto":
            m_tilde = lam if lam > 0 else 1e-8
        hp = HyperParams(tau=int(algo["tau"]), m_tilde=min(float(m_tilde), hp_kwargs["M_tilde"]), **hp_kwargs)
        pv = cfg["privacy"]
        if pv["mode"] == "zcdp":
            od = Odometer.zcdp(hp.rho_tot, hp.m_max, hp.G / hp.lam, per_event=pv["per_event"])
        else:
            od = Odometer.eps_delta(hp.eps_star, hp.delta_star, hp.m_max, hp.G, hp.lam, per_event=pv["per_event"])
        learner = MemoryPair(
            hp, model, schedule=algo["schedule"], odometer=od, seed=seed, gate_threshold=algo["gate_threshold"],
            b0_scale=algo["b0_scale"], b0_mode=algo["b0_mode"], downdate_on_delete=algo["downdate_on_delete"],
            unlearn_direction=algo["unlearn_direction"], noise=algo["noise"], track_spectrum=True,
        )
    elif name == "ogd":
        learner = OGD(d, model, lam, D)
    elif name == "adagrad":
        learner = AdaGrad(d, model, D, algo["eps_num"])
    else:
        learner = ONS(d, model, D, algo["gamma_ons"], algo["eps_init"])
    learner.name = algo["label"]
    return learner


def run_cell(cfg: dict, algo: dict, seed: int) -> dict:
    """One (algorithm, seed) cell: replay, regret, overlays and summary."""
    stream = build_stream(cfg, seed)
    model, hp_kwargs, consts = measured_constants(cfg, stream)
    learner = make_learner(algo, cfg, model, hp_kwargs, seed)
    setup = BoundSetup(consts["G"], consts["lam"], consts["D"], cfg["theory"]["delta_B"])
    n = len(stream.inserts)
    cps = [t for t in cfg["checkpoints"] if t <= n] or [n]
    report = regret_series(stream, learner, cfg["comparator"], cps, setup, cfg["solver"],
                           cfg["halt_on_exhaustion"], consts["D"])
    rows = list(zip(report.checkpoints, report.cumulative, report.instantaneous, report.bound_overlay))
    summary = {
        "algorithm": algo["label"],
        "seed": seed,
        "n_events": len(stream.events),
        "n_inserts": n,
        "G": consts["G"],
        "D": consts["D"],
        "lambda": consts["lam"],
        "checkpoints": report.checkpoints,
        "cumulative_regret": report.cumulative,
        "average_regret": report.average,
        "path_length": report.path_lengths,
        "final_average_regret": report.average[-1] if report.average else None,
        "rejected_deletes": report.trace.rejected_deletes,
        "predictions": len(report.trace.predictions),
    }
    if isinstance(learner, MemoryPair):
        summary["deletions"] = learner.n_deletes
        summary["rho_spent"] = learner.odometer.rho_spent
        summary["c_min"] = learner.min_eig
        summary["C_max"] = learner.max_eig
        summary["budget"] = learner.odometer.budget_report(cfg["privacy"]["report_delta"])
        summary["capacity_trace"] = [
            {"t": t, "utility_capacity": report.diagnostics[t].get("utility_capacity")} for t in report.checkpoints
        ]
    return {"label": algo["label"], "seed": seed, "rows": rows, "summary": summary}


def _run_cell_args(args):
    return run_cell(*args)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def series_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def series_json(rows) -> str:
    data = [dict(zip(CSV_COLUMNS, row)) for row in rows]
    return json.dumps(data, indent=1) + "\n"


def run_experiment(config: dict, out: str | os.PathLike | None = None, workers: int | None = None) -> dict:
    """Run every (algorithm, seed) cell and write series files, a summary and the resolved config.

    Returns a dict of written paths. Nothing is left on disk when any cell fails.
    """
    cfg = resolve_config(config)
    if out is not None:
        cfg["out"] = str(out)
    if workers is not None:
        cfg["workers"] = int(workers)
    cells = [(cfg, algo, seed) for seed in cfg["seeds"] for algo in cfg["algorithms"]]
    if cfg["workers"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            results = list(pool.map(_run_cell_args, cells))
    else:
        results = [run_cell(*c) for c in cells]

    out_dir = Path(cfg["out"])
    ext = cfg["format"]
    files = {}
    for r in results:
        body = series_csv(r["rows"]) if ext == "csv" else series_json(r["rows"])
        files[f"{r['label']}_seed{r['seed']}.{ext}"] = body
    summary = {"cells": [r["summary"] for r in results]}
    files["summary.json"] = json.dumps(summary, indent=1, sort_keys=True, default=float) + "\n"
    resolved = dict(cfg)
    resolved.pop("workers")
    files["config.resolved.json"] = json.dumps(resolved, indent=1, sort_keys=True) + "\n"

    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, body in files.items():
            path = out_dir / name
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(body)
            written.append(path)
    except Exception:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    log.info("wrote %d files to %s", len(written), out_dir)
    return {"out": str(out_dir), "files": [str(p) for p in written], "summary": summary}
