import math

import numpy as np
import pytest
import torch

from tempgen.model import ModelConfig, init_model
from tempgen.topk_copy import (CopyConfig, CopyError, CopyMode,
                               copy_distribution, final_distribution,
                               generation_prob, head_scores,
                               mixture_from_trace, nll_loss, scatter_to_vocab,
                               select_topk)
from tempgen.training import collate, compute_batch_loss
from tempgen.vocab import PAD_ID

from test_model import SMALL, V, rand_batch


class TestHeadScores:
    def test_ones_and_zeros_blocks(self):
        w = torch.zeros(4, 2)  # h=2, d_v=2, d_model=2
        w[:2] = 1.0
        assert head_scores(w, 2).tolist() == [4.0, 0.0]

    def test_mixed_signs(self):
        w = torch.tensor([[1.0, -1.0], [-2.0, 0.5]])
        assert head_scores(w, 1).tolist() == [4.5]

    def test_all_zero(self):
        assert head_scores(torch.zeros(6, 3), 3).tolist() == [0.0, 0.0, 0.0]

    def test_bad_shape(self):
        with pytest.raises(CopyError):
            head_scores(torch.zeros(5, 3), 2)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(0)
        h, d_v, d_model = 4, 3, 5
        w = torch.from_numpy(rng.normal(size=(h * d_v, d_model)))
        scores = head_scores(w, h)
        perm = [2, 0, 3, 1]
        w_perm = w.reshape(h, d_v, d_model)[perm].reshape(h * d_v, d_model)
        assert torch.equal(head_scores(w_perm, h), scores[perm])


class TestSelectTopk:
    def test_argmax(self):
        assert select_topk(torch.tensor([4.0, 0.0]), 1) == (0,)

    def test_k_equals_h(self):
        assert select_topk(torch.tensor([1.0, 3.0, 2.0]), 3) == (0, 1, 2)

    def test_tie_prefers_lower_index(self):
        assert select_topk(torch.tensor([2.0, 2.0, 1.0]), 1) == (0,)
        assert select_topk(torch.tensor([1.0, 2.0, 2.0]), 2) == (1, 2)

    def test_k_out_of_range(self):
        with pytest.raises(CopyError):
            select_topk(torch.tensor([1.0, 2.0]), 3)
        with pytest.raises(CopyError):
            select_topk(torch.tensor([1.0, 2.0]), 0)

    def test_invariant_under_positive_rescaling(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            scores = torch.from_numpy(rng.uniform(0, 5, size=8))
            k = int(rng.integers(1, 9))
            assert select_topk(scores, k) == select_topk(scores * 3.7, k)


class TestCopyDistribution:
    def test_topk_equals_naive_when_k_is_h(self):
        rng = np.random.default_rng(2)
        alpha = torch.from_numpy(rng.dirichlet(np.ones(6), size=(3, 4, 5)))
        # (batch, heads, steps, source) -> put heads third from right
        alpha = alpha.permute(0, 1, 2, 3)  # (3, 4, 5, 6): heads dim is 4
        scores = torch.from_numpy(rng.uniform(0, 1, size=4))
        topk = copy_distribution(alpha.transpose(1, 2).transpose(1, 2),
                                 CopyConfig(CopyMode.TOPK, k=4), scores)
        naive = copy_distribution(alpha,
                                  CopyConfig(CopyMode.NAIVE), scores)
        assert torch.equal(topk, naive)

    def test_mean_of_two_heads(self):
        alpha = torch.tensor([[1.0, 0.0], [0.0, 1.0]])  # (H=2, S=2)
        out = copy_distribution(alpha, CopyConfig(CopyMode.TOPK, k=2),
                                torch.tensor([1.0, 1.0]))
        assert torch.allclose(out, torch.tensor([0.5, 0.5]))

    def test_singleton_selection(self):
        alpha = torch.tensor([[0.9, 0.1], [0.5, 0.5]])
        out = copy_distribution(alpha, CopyConfig(CopyMode.TOPK, k=1),
                                torch.tensor([7.0, 1.0]))
        assert torch.allclose(out, torch.tensor([0.9, 0.1]))

    def test_off_mode_rejected(self):
        with pytest.raises(CopyError):
            copy_distribution(torch.ones(1, 1), CopyConfig(CopyMode.OFF),
                              torch.ones(1))

    def test_output_normalized(self):
        rng = np.random.default_rng(3)
        alpha = torch.from_numpy(rng.dirichlet(np.ones(9), size=(2, 8, 4)))
        out = copy_distribution(alpha, CopyConfig(CopyMode.TOPK, k=3),
                                torch.from_numpy(rng.uniform(0, 1, 8)))
        sums = out.sum(-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


class TestScatter:
    def test_aggregates_repeated_ids(self):
        p = torch.tensor([0.2, 0.5, 0.3])
        ids = torch.tensor([5, 9, 5])
        out = scatter_to_vocab(p, ids, 12)
        assert out[5].item() == pytest.approx(0.5)
        assert out[9].item() == pytest.approx(0.5)
        assert out.sum().item() == pytest.approx(1.0)

    def test_distinct_ids_identity(self):
        p = torch.tensor([0.1, 0.6, 0.3])
        out = scatter_to_vocab(p, torch.tensor([2, 4, 7]), 9)
        assert out[2].item() == pytest.approx(0.1)
        assert out[4].item() == pytest.approx(0.6)
        assert out[7].item() == pytest.approx(0.3)

    def test_mass_conserved_random(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            s = int(rng.integers(1, 30))
            p = torch.from_numpy(rng.dirichlet(np.ones(s)))
            ids = torch.from_numpy(rng.integers(0, 40, size=s))
            out = scatter_to_vocab(p, ids, 40)
            assert abs(out.sum().item() - 1.0) <= 1e-9

    def test_batched_ids_broadcast(self):
        p = torch.ones(2, 3, 4) / 4.0  # (B, T, S)
        ids = torch.tensor([[0, 1, 1, 2], [3, 3, 3, 3]])
        out = scatter_to_vocab(p, ids, 5)
        assert torch.allclose(out[0, 0],
                              torch.tensor([0.25, 0.5, 0.25, 0.0, 0.0]))
        assert torch.allclose(out[1, 2],
                              torch.tensor([0.0, 0.0, 0.0, 1.0, 0.0]))


class TestGenerationProb:
    def test_zero_dot_gives_half(self):
        enc = torch.zeros(1, 3, 4)
        dec = torch.randn(1, 2, 4)
        mask = torch.zeros(1, 3, dtype=torch.bool)
        p = generation_prob(enc, mask, dec)
        assert torch.allclose(p, torch.full((1, 2), 0.5))

    def test_log3_gives_three_quarters(self):
        enc = torch.zeros(2, 2, 3)
        enc[:, :, 0] = math.log(3.0)
        dec = torch.zeros(2, 1, 3)
        dec[:, :, 0] = 1.0
        mask = torch.zeros(2, 2, dtype=torch.bool)
        p = generation_prob(enc, mask, dec)
        assert torch.allclose(p, torch.full((2, 1), 0.75), atol=1e-6)

    def test_mean_excludes_padding(self):
        enc = torch.zeros(1, 2, 3)
        enc[0, 0, 0] = math.log(3.0)
        enc[0, 1, 0] = 999.0  # masked out
        mask = torch.tensor([[False, True]])
        dec = torch.zeros(1, 1, 3)
        dec[0, 0, 0] = 1.0
        p = generation_prob(enc, mask, dec)
        assert torch.allclose(p, torch.tensor([[0.75]]), atol=1e-6)

    def test_strictly_inside_unit_interval(self):
        enc = torch.full((1, 1, 4), 100.0)
        dec = torch.full((1, 1, 4), 100.0)
        mask = torch.zeros(1, 1, dtype=torch.bool)
        p = generation_prob(enc, mask, dec)
        assert 0.0 < p.item() < 1.0
        p = generation_prob(-enc, mask, dec)
        assert 0.0 < p.item() < 1.0


class TestFinalDistribution:
    def test_hand_mixture(self):
        p_vocab = torch.tensor([[0.8, 0.2]])
        p_copy = torch.tensor([[0.2, 0.8]])
        out = final_distribution(p_vocab, p_copy, torch.tensor([0.25]))
        assert torch.allclose(out, torch.tensor([[0.35, 0.65]]))

    def test_fixed_point_when_equal(self):
        p = torch.tensor([[0.3, 0.7]])
        out = final_distribution(p, p, torch.tensor([0.5]))
        assert torch.allclose(out, p)

    def test_normalized(self):
        rng = np.random.default_rng(5)
        pv = torch.from_numpy(rng.dirichlet(np.ones(11), size=(2, 3)))
        pc = torch.from_numpy(rng.dirichlet(np.ones(11), size=(2, 3)))
        g = torch.from_numpy(rng.uniform(0.01, 0.99, size=(2, 3)))
        out = final_distribution(pv, pc, g)
        sums = out.sum(-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


class TestNllLoss:
    def test_perfect_probability_zero_loss(self):
        p = torch.zeros(1, 3, 4)
        targets = torch.tensor([[1, 2, 3]])
        p[0, 0, 1] = p[0, 1, 2] = p[0, 2, 3] = 1.0
        loss, floored = nll_loss(p, targets)
        assert loss.item() == pytest.approx(0.0)
        assert floored == 0

    def test_uniform_gives_log_v(self):
        vocab = 12
        p = torch.full((1, 4, vocab), 1.0 / vocab)
        targets = torch.tensor([[3, 5, 7, 9]])
        loss, _ = nll_loss(p, targets)
        assert loss.item() == pytest.approx(math.log(vocab), rel=1e-6)

    def test_hand_average(self):
        p = torch.zeros(1, 2, 4)
        p[0, 0, 1] = 0.5
        p[0, 1, 2] = 0.25
        loss, _ = nll_loss(p, torch.tensor([[1, 2]]))
        assert loss.item() == pytest.approx(1.5 * math.log(2.0), rel=1e-6)

    def test_pad_steps_excluded(self):
        p = torch.zeros(1, 2, 4)
        p[0, 0, 1] = 0.5
        p[0, 1, 2] = 1e-30  # PAD step, must not count
        loss, floored = nll_loss(p, torch.tensor([[1, PAD_ID]]))
        assert loss.item() == pytest.approx(math.log(2.0), rel=1e-6)
        assert floored == 0

    def test_floor_engages_and_counts(self):
        p = torch.zeros(1, 1, 4)  # gold token has probability 0
        loss, floored = nll_loss(p, torch.tensor([[2]]))
        assert floored == 1
        assert loss.item() == pytest.approx(-math.log(1e-12), rel=1e-6)


class TestMixtureIntegration:
    def test_off_equals_bare_seq2seq(self):
        rng = np.random.default_rng(6)
        model = init_model(SMALL, V, seed=1).eval()
        src, tgt = rand_batch(rng, SMALL, V)
        trace = model(src, tgt)
        mixture = mixture_from_trace(trace, src, CopyConfig(CopyMode.OFF),
                                     model)
        assert torch.equal(mixture.p_final, trace.p_vocab)
        targets = torch.from_numpy(rng.integers(4, V, size=tgt.shape)).long()
        loss_a, _ = nll_loss(mixture.p_final, targets)
        bare = -trace.p_vocab.gather(-1, targets.unsqueeze(-1)).squeeze(-1) \
            .clamp_min(1e-12).log().mean()
        assert abs(loss_a.item() - bare.item()) <= 1e-7

    def test_topk_full_equals_naive_bitwise(self):
        rng = np.random.default_rng(7)
        model = init_model(SMALL, V, seed=2).eval()
        src, tgt = rand_batch(rng, SMALL, V, pad_tail=2)
        trace = model(src, tgt)
        topk = mixture_from_trace(trace, src,
                                  CopyConfig(CopyMode.TOPK, k=SMALL.n_heads),
                                  model)
        naive = mixture_from_trace(trace, src, CopyConfig(CopyMode.NAIVE),
                                   model)
        assert torch.equal(topk.p_final, naive.p_final)
        assert torch.equal(topk.p_copy, naive.p_copy)

    def test_mass_conservation_through_pipeline(self):
        rng = np.random.default_rng(8)
        model = init_model(SMALL, V, seed=3).eval()
        src, tgt = rand_batch(rng, SMALL, V, batch=4, pad_tail=3)
        trace = model(src, tgt)
        mixture = mixture_from_trace(trace, src, CopyConfig(CopyMode.TOPK, k=2),
                                     model)
        sums = mixture.p_final.sum(-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)
        copy_sums = mixture.p_copy_vocab.sum(-1)
        assert torch.allclose(copy_sums, torch.ones_like(copy_sums),
                              atol=1e-6)
        assert (mixture.p_gen.gt(0) & mixture.p_gen.lt(1)).all()

    def test_k_exceeding_heads_rejected(self):
        rng = np.random.default_rng(9)
        model = init_model(SMALL, V, seed=0).eval()
        src, tgt = rand_batch(rng, SMALL, V)
        trace = model(src, tgt)
        with pytest.raises(CopyError):
            mixture_from_trace(trace, src,
                               CopyConfig(CopyMode.TOPK, k=SMALL.n_heads + 1),
                               model)


class TestCopyConfig:
    def test_default_k_for_twelve_heads(self):
        assert CopyConfig.for_heads(CopyMode.TOPK, 12).k == 10

    def test_default_k_scales(self):
        assert CopyConfig.for_heads(CopyMode.TOPK, 8).k == 6
        assert CopyConfig.for_heads(CopyMode.TOPK, 2).k == 1

    def test_explicit_k_kept(self):
        assert CopyConfig.for_heads(CopyMode.TOPK, 8, k=3).k == 3

    def test_k_meaningless_off_topk(self):
        with pytest.raises(CopyError):
            CopyConfig(mode=CopyMode.NAIVE, k=2)
