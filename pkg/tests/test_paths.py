import math

import numpy as np
import pytest
from scipy import stats

from openkpz import fields as F
from openkpz import kernels as K
from openkpz import paths as P


GRID = F.GridSpec(nx=32, nt=256, t_final=1.0)


def test_sample_path_basic_statistics():
    n = 10_000
    ends = np.array([P.sample_path(0.3, GRID, seed=i).positions[-1] for i in range(n)])
    assert abs(np.mean(ends) - 0.3) < 3 / math.sqrt(n)
    assert np.var(ends) == pytest.approx(GRID.t_final, rel=0.05)
    p = P.sample_path(0.3, GRID, seed=0)
    assert p.positions[0] == 0.3
    r = K.reflect(p.positions)
    assert np.all((r >= 0) & (r <= 1))


def test_sample_ensemble_matches_per_path_streams():
    pos = P.sample_ensemble(0.5, GRID, seed=7, n_paths=4)
    assert pos.shape == (4, GRID.nt + 1)
    # the ensemble is exactly the stack of per-index streams
    for i in range(4):
        rng = P.stream_rng(7, i)
        inc = math.sqrt(GRID.dt) * rng.standard_normal(GRID.nt)
        np.testing.assert_allclose(pos[i, 1:], 0.5 + np.cumsum(inc), atol=1e-15)


def test_stopping_index_cases():
    # starts on the lattice
    assert P.stopping_index(np.array([0.0, 0.5, 1.0])) == 0
    assert P.stopping_index(np.array([2.0, 2.5])) == 0
    # no crossing
    assert P.stopping_index(np.array([0.5, 0.6, 0.7])) == 2
    # crossing 0 between indices 1 and 2
    assert P.stopping_index(np.array([0.5, 0.3, -0.2, 0.4])) == 2
    # crossing 2 upward
    assert P.stopping_index(np.array([1.5, 1.9, 2.1])) == 2
    # exact landing on the lattice
    assert P.stopping_index(np.array([1.5, 2.0, 1.8])) == 1
    # odd integers are not stopping points
    assert P.stopping_index(np.array([0.5, 1.0, 1.5])) == 2


def test_stopping_indices_vectorized_agrees():
    rng = np.random.default_rng(0)
    diffs = np.cumsum(rng.normal(0, 0.3, (200, 50)), axis=1) + rng.uniform(-3, 3, (200, 1))
    batch = P.stopping_indices(diffs)
    single = np.array([P.stopping_index(d) for d in diffs])
    np.testing.assert_array_equal(batch, single)


def test_stopped_pair_and_zero_increment_integral():
    p1 = P.Path(x0=0.3, positions=np.full(11, 0.3), dt=0.1)
    p2 = P.Path(x0=0.1, positions=np.full(11, 0.1), dt=0.1)
    pair = P.stopped_pair(p1, p2)
    assert pair.tau_index == 10
    assert P.ito_integral_R(pair, eps=0.01) == 0.0


def test_ito_integral_martingale_mean_zero():
    n = 4000
    vals = np.empty(n)
    for i in range(n):
        p1 = P.sample_path(0.3, GRID, seed=2 * i)
        p2 = P.sample_path(0.7, GRID, seed=2 * i + 1)
        vals[i] = P.ito_integral_R(P.stopped_pair(p1, p2), eps=0.05)
    se = np.std(vals) / math.sqrt(n)
    assert abs(np.mean(vals)) < 3 * se


def test_ito_integral_sum_mode_is_difference_after_negation():
    for i in range(20):
        p1 = P.sample_path(0.3, GRID, seed=100 + 2 * i)
        p2 = P.sample_path(0.6, GRID, seed=101 + 2 * i)
        p2_neg = P.Path(x0=-p2.x0, positions=-p2.positions, dt=p2.dt)
        a = P.ito_integral_R(P.stopped_pair(p1, p2_neg), eps=0.05, mode="sum")
        b = P.ito_integral_R(P.stopped_pair(p1, p2), eps=0.05, mode="difference")
        # negating path2 swaps the sum and difference series; the stop index of
        # the pair built on the negated path uses X1 - (-X2) = X1 + X2, so
        # compare against the difference-mode stop of the original pair
        pair = P.stopped_pair(p1, p2)
        neg_pair = P.StoppedPair(path1=p1, path2=p2_neg, tau_index=pair.tau_index)
        a = P.ito_integral_R(neg_pair, eps=0.05, mode="sum")
        assert a == pytest.approx(b, abs=1e-12)


def test_ito_sum_stopped_batch_matches_single():
    pos1 = P.sample_ensemble(0.2, GRID, seed=5, n_paths=50)
    pos2 = P.sample_ensemble(0.9, GRID, seed=6, n_paths=50)
    diff = pos1 - pos2
    tau = P.stopping_indices(diff)
    batch = P.ito_sum_stopped(diff, tau, eps=0.05)
    for i in range(0, 50, 7):
        p1 = P.Path(0.2, pos1[i], GRID.dt)
        p2 = P.Path(0.9, pos2[i], GRID.dt)
        pair = P.StoppedPair(p1, p2, int(tau[i]))
        assert batch[i] == pytest.approx(P.ito_integral_R(pair, 0.05), abs=1e-12)


def test_local_time_occupation_identity():
    # sum_k f(rho(X_k)) dt = int f(y) L(y) dy with L from narrow kernels
    p = P.sample_path(0.4, GRID, seed=3)
    eps = 1e-4
    y = np.linspace(0, 1, 401)
    L = np.array([P.local_time_smooth(p, eps, yi) for yi in y])
    f = lambda z: np.cos(2 * np.pi * z) + 0.5
    lhs = float(np.sum(f(K.reflect(p.positions[:-1]))) * GRID.dt)
    rhs = float(np.trapezoid(f(y) * L, y))
    assert rhs == pytest.approx(lhs, rel=0.02)


def test_local_time_far_from_point_is_small():
    # a path pinned near 0.8 has no local time at 0 for tiny eps
    positions = np.full(GRID.nt + 1, 0.8)
    p = P.Path(0.8, positions, GRID.dt)
    assert P.local_time_smooth(p, 1e-4, 0.0) < 1e-12


def test_local_time_stability_in_eps():
    n = 2000
    means = []
    for eps in (1e-2, 1e-3, 1e-4):
        vals = [
            P.local_time_smooth(P.sample_path(0.5, GRID, seed=i), eps, 0.0)
            for i in range(n)
        ]
        means.append(np.mean(vals))
    m = np.asarray(means)
    assert np.max(m) / np.min(m) < 1.10


def test_fourth_moment_trivial_start_on_lattice():
    rep = P.fourth_moment_experiment(0.0, 0.01, GRID, n_paths=1000, seed=0)
    assert rep.estimate == 0.0
    assert rep.extras["second_moment_R2"] == 0.0


def test_fourth_moment_decreasing_in_eps():
    grid = F.GridSpec(nx=32, nt=512, t_final=1.0)
    ests = []
    for eps in (1e-1, 1e-2, 1e-3):
        rep = P.fourth_moment_experiment(1.0, eps, grid, n_paths=4000, seed=1)
        ests.append(rep.estimate)
    assert ests[0] > ests[1] > ests[2]


def test_exchangeability_of_regenerated_tails():
    # After the stop, swapping which stream continues which path leaves the
    # joint law of the reflected endpoints unchanged.
    n = 10_000
    grid = F.GridSpec(nx=16, nt=64, t_final=1.0)
    end_a = []
    end_b = []
    for i in range(n):
        pos1 = P.sample_ensemble(0.2, grid, seed=10 * i, n_paths=1)[0]
        pos2 = P.sample_ensemble(0.9, grid, seed=10 * i + 1, n_paths=1)[0]
        tau = P.stopping_index(pos1 - pos2)
        if tau >= grid.nt:
            continue
        inc1 = np.diff(pos1)
        inc2 = np.diff(pos2)
        # original continuation
        a1 = pos1[tau] + np.sum(inc1[tau:])
        # exchanged continuation: tails swapped between the two paths
        b1 = pos1[tau] + np.sum(inc2[tau:])
        end_a.append(K.reflect(a1))
        end_b.append(K.reflect(b1))
    assert len(end_a) > 1000
    ks = stats.ks_2samp(end_a, end_b)
    assert ks.pvalue > 0.01


def test_ito_refinement_rate():
    # halving dt changes the Ito sum by O(sqrt(dt)) in RMS
    base_seed = 9
    n = 600
    eps = 0.2
    n_fine = 2048
    dts = []
    rms = []
    for nt in (64, 128, 256, 512):
        diffs = np.empty(n)
        for i in range(n):
            rng = P.stream_rng(base_seed, i)
            inc = math.sqrt(1.0 / n_fine) * rng.standard_normal(n_fine)
            fine = 1.0 + np.concatenate([[0.0], np.cumsum(inc)])
            stride = n_fine // nt
            coarse = fine[::stride]
            coarse2 = fine[:: stride // 2]
            tau_c = P.stopping_index(coarse)
            tau_f = P.stopping_index(coarse2)
            ic = P.ito_sum_stopped(coarse[None, :], np.array([tau_c]), eps)[0]
            if_ = P.ito_sum_stopped(coarse2[None, :], np.array([tau_f]), eps)[0]
            diffs[i] = ic - if_
        dts.append(1.0 / nt)
        rms.append(float(np.sqrt(np.mean(diffs**2))))
    slope = np.polyfit(np.log(dts), np.log(rms), 1)[0]
    assert 0.3 <= slope <= 0.7
