import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy import optimize

from mdplab.divergence import kl_bernoulli, kl_kernel
from mdplab.errors import LPInfeasible
from mdplab.lp import solve_lp
from mdplab.model import RewardDist
from mdplab.tilting import bernoulli_tilt, class_reward_tilt, joint_tilt, kernel_tilt

seeds = st.integers(0, 2**32 - 1)


class TestSimplex:
    def test_single_bound(self):
        res = solve_lp([1.0], A_ub=[[-1.0]], b_ub=[-3.0])
        assert res.value == pytest.approx(3.0) and res.x == pytest.approx([3.0])

    def test_infeasible(self):
        with pytest.raises(LPInfeasible):
            solve_lp([0.0], A_ub=[[1.0]], b_ub=[-1.0])

    @given(seeds)
    def test_matches_scipy(self, seed):
        rng = np.random.default_rng(seed)
        n, m_ub, m_eq = int(rng.integers(2, 6)), int(rng.integers(1, 5)), int(rng.integers(0, 3))
        c = rng.uniform(0.1, 2.0, n)   # positive costs keep the problem bounded on x >= 0
        A_ub = rng.normal(size=(m_ub, n))
        x0 = rng.uniform(0.0, 2.0, n)  # a feasible point by construction
        b_ub = A_ub @ x0 + rng.uniform(0.0, 1.0, m_ub)
        A_eq = rng.normal(size=(m_eq, n)) if m_eq else None
        b_eq = A_eq @ x0 if m_eq else None
        ref = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, method="highs")
        ours = solve_lp(c, A_ub, b_ub, A_eq, b_eq)
        assert ours.value == pytest.approx(ref.fun, rel=1e-7, abs=1e-8)

    def test_two_state_cut_lp(self):
        # one cut u12 m12 + u21 m21 >= 1 with m12 = m21: by hand m = 1 / (u12 + u21)
        u12, u21 = 0.08, 0.05
        res = solve_lp([0.0, 1 / 3, 0.0], A_ub=[[0.0, -u12, -u21]], b_ub=[-1.0],
                       A_eq=[[0.0, 1.0, -1.0]], b_eq=[0.0])
        m = 1 / (u12 + u21)
        assert res.x[1:] == pytest.approx([m, m], rel=1e-8)
        assert res.value == pytest.approx(m / 3, rel=1e-8)


class TestTilts:
    @given(st.floats(0.0, 0.99), st.floats(0.0, 50.0))
    def test_bernoulli_tilt_is_maximiser(self, r, t):
        a = bernoulli_tilt(r, t)
        grid = np.linspace(r, 1 - 1e-9, 4001)
        best = max(t * g - kl_bernoulli(r, g) for g in grid)
        assert t * a - kl_bernoulli(r, a) >= best - 1e-6

    @given(seeds, st.floats(0.01, 20.0))
    def test_kernel_tilt_is_minimiser(self, seed, lam):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 4))
        p = rng.dirichlet(np.ones(k))
        p[rng.integers(k)] *= rng.integers(0, 2)   # sometimes a hole in the support
        p /= p.sum()
        h = rng.normal(size=k)
        q = kernel_tilt(p, h, lam)
        assert q.sum() == pytest.approx(1.0) and (q >= 0).all()
        obj = kl_kernel(p, q) - lam * q @ h
        for _ in range(300):
            other = rng.dirichlet(np.ones(k))
            assert obj <= kl_kernel(p, other) - lam * other @ h + 1e-9

    def test_kernel_tilt_moves_mass_outside_support(self):
        q = kernel_tilt(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 5.0)
        assert q[1] > 0.5

    def test_joint_tilt_reaches_threshold(self):
        dist = RewardDist.bernoulli(1 / 3)
        p, h = np.array([0.0, 1.0]), np.zeros(2)
        jt = joint_tilt(dist, p, h, 2 / 3)
        assert jt.reward.mean() == pytest.approx(2 / 3, abs=1e-12)
        assert jt.cost == pytest.approx(math.log(2) / 3, rel=1e-9)

    def test_joint_tilt_out_of_reach(self):
        assert joint_tilt(RewardDist.bernoulli(0.5), np.array([1.0]), np.zeros(1), 1.5) is None

    @given(st.floats(0.05, 0.6), st.floats(0.05, 0.6), st.floats(0.2, 3.0), st.floats(0.2, 3.0))
    def test_class_tilt_matches_grid(self, r1, r2, w1, w2):
        """Two free Bernoulli pairs with equal flow: inf w1 kl + w2 kl s.t. a + b >= target."""
        target = (r1 + r2) + 0.5 * (2.0 - r1 - r2)
        assume(target < 1.98)
        nu = np.array([0.5, 0.5])
        tilt = class_reward_tilt([0, 1], [RewardDist.bernoulli(r1), RewardDist.bernoulli(r2)], nu,
                                 np.array([w1, w2]), np.array([True, True]), target / 2)
        a = np.linspace(r1, 1 - 1e-12, 20001)
        b = np.clip(target - a, r2, 1 - 1e-12)
        grid = [w1 * kl_bernoulli(r1, x) + w2 * kl_bernoulli(r2, y) for x, y in zip(a, b) if x + y >= target - 1e-12]
        assert tilt.cost <= min(grid) + 1e-9
        assert tilt.cost >= min(grid) - 1e-3
