import itertools

import numpy as np
import pytest

import setgen.autodiff as ad
from setgen.autodiff import Rng, Tensor, backward, gradcheck
from setgen.errors import ContractError, ShapeError
from setgen.losses import (chamfer, hungarian, kl_diag_gauss, ot_uniform,
                           pairwise_sqdist, reg_min_dist, reg_valency,
                           vae_total_loss, w2_equal)


def _gc(f, x):
    rep = gradcheck(f, Tensor(np.array(x), requires_grad=True))
    assert rep.passed, rep


class TestFrozenValues:
    def test_chamfer_hand_value(self):
        x = np.array([[0.0, 0.0], [3.0, 4.0]])
        y = np.array([[0.0, 0.0], [0.0, 8.0]])
        # x0->y0: 0; x1->y1: 9+16=25 vs y0: 25 -> 25; y1->x1: 16+9=25
        assert float(chamfer(x, y).data) == pytest.approx(25.0)

    def test_w2_hand_value(self):
        x = np.array([[0.0], [2.0]])
        y = np.array([[2.0], [0.0]])
        assert float(w2_equal(x, y).data) == pytest.approx(0.0)
        y2 = np.array([[4.0], [0.0]])
        # optimal pairing: (0,0),(2,4) -> (0+4)/2... matching is (x0->y1=0, x1->y0=4)/2
        assert float(w2_equal(x, y2).data) == pytest.approx(2.0)

    def test_kl_hand_value(self):
        mu = np.array([1.0, 0.0])
        logvar = np.zeros(2)
        assert float(kl_diag_gauss(mu, logvar).data) == pytest.approx(0.5)

    def test_reg_min_dist_hand_value(self):
        x = np.array([[0.0, 0.0], [0.5, 0.0]])
        assert float(reg_min_dist(x, 1.0).data) == pytest.approx(0.5)

    def test_reg_valency_two_points_at_bond_distance(self):
        x = np.array([[0.0, 0.0, 0.0], [1.1, 0.0, 0.0]])
        # soft count is sigmoid(0) = 0.5 each; under-penalty 0.5 per point
        assert float(reg_valency(x, 1.1, 4, 0.11).data) == pytest.approx(1.0)

    def test_ot_uniform_unequal_hand_value(self):
        x = np.array([[0.0], [2.0]])
        y = np.array([[0.0], [1.0], [2.0]])
        plan = ot_uniform(x, y)
        assert np.allclose(plan.plan.sum(axis=1), 0.5)
        assert np.allclose(plan.plan.sum(axis=0), 1.0 / 3)
        # optimal: x0 covers y0 fully + half of y1; x1 covers y2 + half of y1
        assert plan.cost == pytest.approx((0 + 1 / 6 * 1 + 0 + 1 / 6 * 1))


class TestHungarian:
    def test_lexicographic_among_optima(self):
        cost = np.zeros((3, 3))
        assert hungarian(cost).perm == [0, 1, 2]
        cost = np.array([[1.0, 1.0], [1.0, 1.0]])
        assert hungarian(cost).perm == [0, 1]

    def test_brute_force_with_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 6))
            cost = np.round(rng.random((n, n)) * 4) / 4.0
            got = hungarian(cost)
            best, best_perm = np.inf, None
            for perm in itertools.permutations(range(n)):
                total = cost[np.arange(n), perm].sum()
                if total < best - 1e-12 or (abs(total - best) <= 1e-12
                                            and list(perm) < best_perm):
                    best, best_perm = total, list(perm)
            assert got.perm == best_perm
            assert got.cost == pytest.approx(best, abs=1e-9)

    def test_rejects_bad_input(self):
        with pytest.raises(ShapeError):
            hungarian(np.zeros((2, 3)))
        with pytest.raises(ContractError):
            hungarian(np.array([[np.inf, 0.0], [0.0, 1.0]]))


class TestPermutationInvariance:
    @pytest.mark.parametrize("loss", [chamfer, w2_equal])
    def test_equal_size(self, loss):
        rng = Rng(1)
        for _ in range(10):
            n = int(rng.integers(2, 9))
            x, y = rng.normal((n, 3)), rng.normal((n, 3))
            base = float(loss(x, y).data)
            px, py = rng.permutation(n), rng.permutation(n)
            assert float(loss(x[px], y[py]).data) == pytest.approx(base, rel=1e-12)

    def test_ot(self):
        rng = Rng(2)
        for _ in range(10):
            n, m = int(rng.integers(2, 8)), int(rng.integers(2, 8))
            x, y = rng.normal((n, 3)), rng.normal((m, 3))
            base = ot_uniform(x, y).cost
            got = ot_uniform(x[rng.permutation(n)], y[rng.permutation(m)]).cost
            assert got == pytest.approx(base, rel=1e-12)

    def test_ot_agrees_with_w2_on_equal_sizes(self):
        rng = Rng(3)
        for _ in range(20):
            n = int(rng.integers(2, 9))
            x, y = rng.normal((n, 3)), rng.normal((n, 3))
            assert ot_uniform(x, y).cost == pytest.approx(
                float(w2_equal(x, y).data), abs=1e-9)


class TestGradients:
    def test_all_losses_gradcheck(self):
        rng = Rng(4)
        for _ in range(10):
            n = int(rng.integers(2, 7))
            x = rng.normal((n, 3))
            y = rng.normal((n, 3))
            _gc(lambda t: chamfer(x, t), y)
            _gc(lambda t: w2_equal(x, t), y)
            _gc(lambda t: reg_min_dist(t, 1.0), y)
            _gc(lambda t: reg_valency(t, 1.1, 4, 0.11), y)
        mu, lv = rng.normal(6), rng.normal(6)
        _gc(lambda t: kl_diag_gauss(t, Tensor(lv)), mu)
        _gc(lambda t: kl_diag_gauss(Tensor(mu), t), lv)

    def test_w2_envelope_gradient_matches_fixed_assignment(self):
        rng = Rng(5)
        x, y = rng.normal((5, 3)), rng.normal((5, 3))
        yt = Tensor(y.copy(), requires_grad=True)
        backward(w2_equal(x, yt))
        from setgen._kernels import solve_assignment
        d2 = ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
        perm, _ = solve_assignment(d2)
        manual = np.zeros_like(y)
        for i, j in enumerate(perm):
            manual[j] += 2.0 * (y[j] - x[i]) / 5
        assert np.allclose(yt.grad, manual, atol=1e-12)

    def test_vae_total_loss_composition(self):
        rng = Rng(6)
        x, xh = rng.normal((4, 3)), rng.normal((4, 3))
        mu, lv = rng.normal(5), rng.normal(5)
        total = float(vae_total_loss(x, xh, mu, lv).data)
        parts = (float(w2_equal(x, xh).data)
                 + 1e-3 * float(kl_diag_gauss(mu, lv).data)
                 + 0.1 * float(reg_min_dist(xh).data)
                 + 0.1 * float(reg_valency(xh, 1.1, 4, 0.11).data))
        assert total == pytest.approx(parts, rel=1e-12)
        _gc(lambda t: vae_total_loss(x, t, Tensor(mu), Tensor(lv)), xh)


class TestBatched:
    def test_pairwise_sqdist_rank3_matches_rank2(self):
        rng = Rng(7)
        xb, yb = rng.normal((3, 4, 2)), rng.normal((3, 5, 2))
        batched = pairwise_sqdist(Tensor(xb), Tensor(yb)).data
        for i in range(3):
            single = pairwise_sqdist(Tensor(xb[i]), Tensor(yb[i])).data
            assert np.allclose(batched[i], single, atol=1e-12)

    def test_regs_rank3_sum_over_batch(self):
        rng = Rng(8)
        xb = rng.normal((3, 4, 3))
        batched = float(reg_min_dist(Tensor(xb)).data)
        single = sum(float(reg_min_dist(Tensor(xb[i])).data) for i in range(3))
        assert batched == pytest.approx(single, rel=1e-12)
        batched_v = float(reg_valency(Tensor(xb), 1.1, 4, 0.11).data)
        single_v = sum(float(reg_valency(Tensor(xb[i]), 1.1, 4, 0.11).data)
                       for i in range(3))
        assert batched_v == pytest.approx(single_v, rel=1e-12)
