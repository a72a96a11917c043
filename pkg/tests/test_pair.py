import numpy as np
import pytest

from mempair.errors import CapacityExhausted, DimensionMismatch, EmptyMemory
from mempair.harness import offline_comparator
from mempair.lbfgs import LbfgsMemory
from mempair.model import HyperParams, LossModel, gradient_bound, loss_gradient, project
from mempair.odometer import Odometer
from mempair.pair import MemoryPair, default_gate_threshold
from mempair.streams import gen_stationary


def fixture(n=200, d=4, lam=0.5, seed=0, m_max=5, **kw):
    s = gen_stationary(seed, n, d, 0.1)
    X, Y = s.insert_arrays()
    base = LossModel("squared", lam)
    G = gradient_bound(base, X, Y, 4.0)
    hp = HyperParams(d=d, D=4.0, G=G, lam=lam, m_tilde=lam, M_tilde=1 + lam, tau=5, m_max=m_max)
    model = LossModel("squared", lam, G)
    pair = MemoryPair(hp, model, seed=seed, gate_threshold=0, **kw)
    return pair, X, Y


def test_delete_before_any_pair():
    pair, X, Y = fixture()
    with pytest.raises(EmptyMemory):
        pair.delete(X[0], Y[0])
    assert pair.t == 0 and pair.odometer.deletions == 0


def test_zero_gradient_insert_is_degenerate():
    hp = HyperParams(d=2, lam=1.0)
    pair = MemoryPair(hp, LossModel("squared", 0.0), gate_threshold=0)
    pair.insert(np.array([1.0, 0.0]), 0.0)
    assert np.array_equal(pair.w, np.zeros(2))
    assert not pair.last_admission and pair.last_admission.reason == "degenerate step"
    assert pair.n_inserts == 1 and pair.t == 1


def test_insert_then_delete_matches_hand_replay():
    lam = 0.5
    hp = HyperParams(d=3, D=10.0, G=10.0, lam=lam, m_tilde=1e-8)
    model = LossModel("squared", lam)
    x, y = np.array([0.6, -0.8, 0.0]), 1.5
    pair = MemoryPair(hp, model, noise=False, gate_threshold=0)
    pair.insert(x, y)
    pair.delete(x, y)

    # independent trace of the two steps
    mem = LbfgsMemory(3)
    w0 = np.zeros(3)
    g1 = loss_gradient(model, w0, x, y)
    w1 = project(w0 - (1 / lam) * mem.direction(g1), hp.D)
    g1b = loss_gradient(model, w1, x, y)
    mem.try_add_pair(w1 - w0, g1b - g1, 1e-8)
    w2 = project(w1 + (1 / (2 * lam)) * mem.direction(g1b), hp.D)
    assert np.allclose(pair.w, w2, rtol=0, atol=1e-14)

    C = max(1.0, max(np.linalg.eigvalsh(mem.dense_inverse())))
    G = max(np.linalg.norm(g1), np.linalg.norm(g1b))
    assert np.linalg.norm(pair.w - w0) <= (1 / lam) * C * G


def test_insert_converges_to_offline_minimiser():
    pair, X, Y = fixture(n=1000, d=5, lam=0.5)
    w_star = offline_comparator(X, Y, pair.model, pair.hp.D)
    dist = {}
    for i in range(1000):
        pair.insert(X[i], Y[i])
        if i + 1 in (100, 250, 500, 1000):
            dist[i + 1] = np.linalg.norm(pair.w - w_star)
    vals = [dist[k] for k in sorted(dist)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_capacity_exhaustion_leaves_state_unchanged():
    pair, X, Y = fixture(m_max=2)
    for i in range(20):
        pair.insert(X[i], Y[i])
    pair.delete(X[0], Y[0])
    assert pair.odometer.rho_spent == pair.odometer.rho_step
    pair.delete(X[1], Y[1])
    before = pair.to_json()
    with pytest.raises(CapacityExhausted):
        pair.delete(X[2], Y[2])
    assert pair.to_json() == before
    assert pair.n_deletes == 2 and pair.n_inserts + pair.n_deletes == pair.t


def test_dimension_mismatch():
    pair, _, _ = fixture()
    with pytest.raises(DimensionMismatch):
        pair.insert(np.zeros(3), 0.0)
    with pytest.raises(DimensionMismatch):
        pair.predict(np.zeros(5))


def test_prediction_gate():
    hp = HyperParams(d=2)
    pair = MemoryPair(hp, LossModel(), gate_threshold=10)
    p = pair.predict(np.ones(2))
    assert not p.ready and p.samples_needed == 10
    pair = MemoryPair(hp, LossModel(), gate_threshold=0)
    assert pair.predict(np.ones(2)).ready

    hp = HyperParams(d=2, G=1.0, D=1.0, c=1.0, C=1.0, gamma=0.5)
    assert default_gate_threshold(hp, None) == 4
    pair = MemoryPair(hp, LossModel("logistic", 1.0), gate_threshold=default_gate_threshold(hp, None))
    for k in range(1, 5):
        assert not pair.predict(np.ones(2)).ready
        pair.insert(np.array([1.0, 0.0]), 1.0)
    p = pair.predict(np.ones(2))
    assert p.ready and 0.0 < p.value < 1.0


def test_default_gate_counts_privacy_cap():
    hp = HyperParams(d=2, G=1.0, D=1.0, gamma=0.5, m_max=3)
    od = Odometer.zcdp(1.0, 3, 1.0)
    assert MemoryPair(hp, LossModel(), odometer=od).gate_threshold > default_gate_threshold(hp, None)


def run_mixed(pair, X, Y, dels=(10, 30, 60)):
    for i in range(len(Y)):
        pair.insert(X[i], Y[i])
        if i in dels:
            pair.delete(X[i // 2], Y[i // 2])
    return pair


def test_determinism_and_domain():
    runs = []
    for _ in range(2):
        pair, X, Y = fixture()
        runs.append(run_mixed(pair, X, Y))
    assert runs[0].to_json() == runs[1].to_json()
    assert np.linalg.norm(runs[0].w) <= runs[0].hp.D / 2
    other, X, Y = fixture()
    other.reseed(99)
    assert not np.array_equal(run_mixed(other, X, Y).w, runs[0].w)


def test_snapshot_roundtrip_bit_exact():
    pair, X, Y = fixture(n=120)
    for i in range(60):
        pair.insert(X[i], Y[i])
    pair.delete(X[3], Y[3])
    clone = MemoryPair.from_json(pair.to_json())
    assert clone.to_json() == pair.to_json()
    for p in (pair, clone):
        for i in range(60, 120):
            p.insert(X[i], Y[i])
        p.delete(X[70], Y[70])
        p.delete(X[80], Y[80])
    assert np.array_equal(pair.w, clone.w)
    assert clone.to_json() == pair.to_json()
    with pytest.raises(ValueError):
        MemoryPair.from_dict({**pair.to_dict(), "version": "other"})


def test_noise_free_delete_still_charges():
    pair, X, Y = fixture(noise=False)
    for i in range(10):
        pair.insert(X[i], Y[i])
    pair.delete(X[0], Y[0])
    assert pair.odometer.deletions == 1


def test_downdate_on_delete():
    pair, X, Y = fixture(downdate_on_delete=True)
    for i in range(10):
        pair.insert(X[i], Y[i])
    n = len(pair.mem)
    oldest = pair.mem.window[1].s.copy()
    pair.delete(X[0], Y[0])
    assert len(pair.mem) == n - 1
    assert np.array_equal(pair.mem.window[0].s, oldest)


def test_delete_pair_not_added_by_default():
    pair, X, Y = fixture()
    for i in range(10):
        pair.insert(X[i], Y[i])
    window = [p.s.copy() for p in pair.mem.window]
    pair.delete(X[0], Y[0])
    assert [p.s.tolist() for p in pair.mem.window] == [s.tolist() for s in window]


def test_adagrad_schedule_and_stats():
    pair, X, Y = fixture(schedule="adagrad")
    S_prev = 0.0
    for i in range(100):
        pair.insert(X[i], Y[i])
        assert pair.stats.S >= S_prev
        S_prev = pair.stats.S
    assert np.linalg.norm(pair.w) <= pair.hp.D / 2
    with pytest.raises(ValueError):
        MemoryPair(HyperParams(d=2, lam=0.0), LossModel(), schedule="strongly_convex")
    with pytest.raises(ValueError):
        MemoryPair(HyperParams(d=2), LossModel(), schedule="momentum")


def test_track_spectrum_bounds():
    pair, X, Y = fixture(track_spectrum=True)
    for i in range(50):
        pair.insert(X[i], Y[i])
    d = pair.spectral_diagnostics()
    assert pair.min_eig <= d.min_eig and pair.max_eig >= d.max_eig
    assert 0 < pair.min_eig <= pair.max_eig
