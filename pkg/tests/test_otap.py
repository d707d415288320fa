import itertools
import math

import numpy as np
import pytest
import torch

from jcmocap.otap import (
    OtapParams, TransportPlan, otap_aggregate, otap_transport_plan, sinkhorn,
)


def make_params(n_slots, width, epsilon=0.1, seed=0, std=1.0):
    p = OtapParams(n_slots, width, epsilon=epsilon)
    g = torch.Generator()
    g.manual_seed(seed)
    p.init_weights(g, std=std)
    return p


class TestSinkhorn:
    def test_constant_cost_uniform_plan(self):
        plan = sinkhorn(np.full((3, 4), 7.0), 1.0, 50)
        assert torch.allclose(plan.plan,
                              torch.full((3, 4), 1 / 12, dtype=torch.float64))

    def test_two_by_two_concentrates_on_diagonal(self):
        plan = sinkhorn([[0.0, 10.0], [10.0, 0.0]], 0.01, 100)
        P = plan.plan
        off = float(P[0, 1] + P[1, 0])
        assert off < 1e-3 * float(P.sum())

    def test_marginals_match(self, rng):
        for _ in range(20):
            R, C = int(rng.integers(2, 13)), int(rng.integers(2, 13))
            cost = rng.uniform(0, 100, size=(R, C))
            eps = float(rng.choice([0.01, 0.1, 1.0]))
            plan = sinkhorn(cost, eps, 100)
            assert float((plan.rescaled_row_sums() - 1).abs().max()) < 1e-4
            assert float((plan.rescaled_col_sums() - 1).abs().max()) < 1e-4

    def test_custom_marginals(self, rng):
        cost = rng.uniform(0, 5, size=(3, 4))
        r = np.array([0.5, 0.3, 0.2])
        c = np.array([0.25, 0.25, 0.25, 0.25])
        plan = sinkhorn(cost, 0.1, 100, row_marginal=r, col_marginal=c)
        assert np.allclose(plan.plan.sum(dim=1).numpy(), r, atol=1e-6)
        assert np.allclose(plan.plan.sum(dim=0).numpy(), c, atol=1e-6)

    def test_validation(self):
        with pytest.raises(ValueError):
            sinkhorn(np.zeros((2, 2)), -1.0, 10)
        with pytest.raises(ValueError):
            sinkhorn(np.zeros((2, 2)), 0.1, 0)
        with pytest.raises(ValueError):
            sinkhorn(np.array([[np.inf, 0.0], [0.0, 1.0]]), 0.1, 10)
        with pytest.raises(ValueError):
            sinkhorn(np.zeros((2, 2)), 0.1, 10,
                     row_marginal=[0.5, 0.5], col_marginal=[0.9, 0.3])

    def test_plan_nonnegative(self, rng):
        plan = sinkhorn(rng.uniform(0, 50, size=(5, 7)), 0.05, 100)
        assert torch.all(plan.plan >= 0)


class TestOtapAggregate:
    def test_single_candidate_passthrough(self, rng):
        values = torch.tensor(rng.normal(size=(3, 1, 4)))
        params = make_params(3, 4)
        pooled, empty = otap_aggregate(values, params)
        assert torch.allclose(pooled, values[:, 0], atol=1e-12)
        assert not empty.any()

    def test_identical_candidates_returned_unchanged(self, rng):
        base = torch.tensor(rng.normal(size=(2, 1, 5)))
        values = base.repeat(1, 4, 1)
        params = make_params(2, 5)
        pooled, _ = otap_aggregate(values, params)
        assert torch.allclose(pooled, base[:, 0], atol=1e-12)

    def test_epsilon_limit_matches_brute_force(self, rng):
        for trial in range(30):
            k1 = int(rng.integers(1, 4))
            k2 = int(rng.integers(1, 5))
            k3 = int(rng.integers(2, 6))
            values = torch.tensor(rng.normal(size=(k1, k2, k3)))
            params = make_params(k1, k3, epsilon=1e-4, seed=trial)
            pooled, _ = otap_aggregate(values, params)
            refs = params.references.detach()
            cost = -torch.einsum("abk,ak->ab", values, refs) / math.sqrt(k3)
            best, best_cost = None, np.inf
            for sel in itertools.product(range(k2), repeat=k1):
                total = sum(float(cost[j, sel[j]]) for j in range(k1))
                if total < best_cost:
                    best_cost, best = total, sel
            oracle = torch.stack([values[j, best[j]] for j in range(k1)])
            rel = float((pooled.detach() - oracle).norm() / oracle.norm())
            assert rel < 1e-3

    def test_permutation_consistency(self, rng):
        values = torch.tensor(rng.normal(size=(2, 4, 3)))
        mask = torch.tensor(rng.random((2, 4)) > 0.3)
        mask[:, 0] = True
        params = make_params(2, 3, seed=2)
        base, _ = otap_aggregate(values, params, mask)
        perm = torch.tensor(rng.permutation(4))
        permuted, _ = otap_aggregate(values[:, perm], params, mask[:, perm])
        assert torch.allclose(base, permuted, atol=1e-9)

    def test_masked_rows_get_no_mass(self, rng):
        values = torch.tensor(rng.normal(size=(1, 3, 4)))
        # put an otherwise-overwhelming candidate behind the mask
        values[0, 2] = 100.0
        mask = torch.tensor([[True, True, False]])
        params = make_params(1, 4, seed=1)
        pooled, _ = otap_aggregate(values, params, mask)
        unmasked_only, _ = otap_aggregate(values[:, :2], params,
                                          mask[:, :2])
        assert torch.allclose(pooled, unmasked_only, atol=1e-12)

    def test_empty_slot_flag_and_zero_output(self, rng):
        values = torch.tensor(rng.normal(size=(2, 3, 4)))
        mask = torch.tensor([[True, False, True], [False, False, False]])
        params = make_params(2, 4)
        pooled, empty = otap_aggregate(values, params, mask)
        assert empty.tolist() == [False, True]
        assert torch.all(pooled[1] == 0)

    def test_shared_reference_broadcast(self, rng):
        values = torch.tensor(rng.normal(size=(5, 3, 4)))
        params = make_params(1, 4, seed=3)
        pooled, _ = otap_aggregate(values, params)
        assert pooled.shape == (5, 4)

    def test_batched_matches_loop(self, rng):
        values = torch.tensor(rng.normal(size=(3, 2, 4, 5)))
        mask = torch.tensor(rng.random((3, 2, 4)) > 0.3)
        mask[..., 0] = True
        params = make_params(2, 5, seed=4)
        pooled, empty = otap_aggregate(values, params, mask)
        for b in range(3):
            single, se = otap_aggregate(values[b], params, mask[b])
            assert torch.allclose(pooled[b], single, atol=1e-12)
            assert torch.equal(empty[b], se)

    def test_finite_difference_gradients(self, rng):
        values = torch.tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        mask = torch.tensor([[True, True, False], [True, True, True]])
        params = make_params(2, 4, epsilon=0.05, seed=5)
        weights = torch.tensor(rng.normal(size=(2, 4)))

        def scalar(v):
            pooled, _ = otap_aggregate(v, params, mask)
            return (pooled * weights).sum()

        loss = scalar(values)
        loss.backward()
        grad = values.grad.detach().numpy()
        h = 1e-6
        for _ in range(12):
            idx = tuple(int(rng.integers(s)) for s in values.shape)
            if not mask[idx[:2]]:
                continue
            plus = values.detach().clone()
            plus[idx] += h
            minus = values.detach().clone()
            minus[idx] -= h
            fd = (float(scalar(plus)) - float(scalar(minus))) / (2 * h)
            if abs(fd) > 1e-8:
                assert abs(fd - grad[idx]) / max(abs(fd), 1e-12) < 1e-4

    def test_reference_width_checked(self, rng):
        values = torch.tensor(rng.normal(size=(2, 3, 4)))
        with pytest.raises(ValueError):
            otap_aggregate(values, make_params(2, 5))
        with pytest.raises(ValueError):
            otap_aggregate(values, make_params(3, 4))


class TestTransportPlanView:
    def test_plan_reproduces_aggregate(self, rng):
        values = torch.tensor(rng.normal(size=(3, 4, 5)))
        mask = torch.tensor(rng.random((3, 4)) > 0.3)
        mask[:, 1] = True
        params = make_params(3, 5, seed=6)
        pooled, _ = otap_aggregate(values, params, mask)
        tp = otap_transport_plan(values, params, mask)
        recon = math.sqrt(4) * tp.plan.T @ values.reshape(12, 5)
        assert torch.allclose(recon, pooled, atol=1e-12)

    def test_slot_marginals(self, rng):
        values = torch.tensor(rng.normal(size=(2, 4, 3)))
        params = make_params(2, 3, seed=7)
        tp = otap_transport_plan(values, params)
        cols = tp.plan.sum(dim=0)
        assert torch.allclose(cols, torch.full((2,), 1 / math.sqrt(4),
                                               dtype=torch.float64),
                              atol=1e-12)
        # cross-slot mass is exactly zero by admissibility
        assert float(tp.plan[4:, 0].abs().sum()) == 0.0
        assert float(tp.plan[:4, 1].abs().sum()) == 0.0

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            TransportPlan(torch.tensor([[-0.1, 0.2]]), 0.1, 10,
                          torch.ones(1), torch.ones(2))
