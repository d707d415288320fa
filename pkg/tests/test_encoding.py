import math

import numpy as np
import pytest
import torch

from jcmocap.encoding import (
    DimensionMismatch, FourierParams, FourierSet, TokenTensor,
    compose_positions, fourier_encode, project_tokens,
)


def make_params(d_in, d_out, seed=0, sigma=1.0):
    g = torch.Generator()
    g.manual_seed(seed)
    return FourierParams.random(d_in, d_out, sigma, g)


def make_set(width=8, view_width=4, seed=0, **kw):
    g = torch.Generator()
    g.manual_seed(seed)
    return FourierSet.random(width, view_width, n_frames=4, n_joint_types=5,
                             n_view_pairs=3, sigma=1.0, generator=g, **kw)


class TestFourierEncode:
    def test_zero_input_gives_ones_then_zeros(self):
        fp = make_params(3, 6)
        out = fourier_encode(torch.zeros(3), fp)
        assert torch.equal(out[:6], torch.ones(6, dtype=torch.float64))
        assert torch.equal(out[6:], torch.zeros(6, dtype=torch.float64))

    def test_output_bounded(self, rng):
        fp = make_params(3, 16, sigma=3.0)
        for _ in range(20):
            x = torch.tensor(rng.normal(scale=10, size=3))
            out = fourier_encode(x, fp)
            assert out.abs().max() <= 1.0

    def test_matches_direct_recomputation(self, rng):
        fp = make_params(1, 5, seed=3)
        x = torch.tensor([0.5], dtype=torch.float64)
        out = fourier_encode(x, fp).numpy()
        B = fp.matrix.numpy()
        phases = 2 * math.pi * (B @ np.array([0.5]))
        expected = np.concatenate([np.cos(phases), np.sin(phases)])
        assert np.allclose(out, expected, atol=1e-12)

    def test_trig_identity(self, rng):
        fp = make_params(3, 8, seed=2)
        x = torch.tensor(rng.normal(size=3))
        out = fourier_encode(x, fp)
        assert torch.allclose(out[:8] ** 2 + out[8:] ** 2,
                              torch.ones(8, dtype=torch.float64), atol=1e-12)

    def test_dimension_mismatch(self):
        fp = make_params(3, 4)
        with pytest.raises(DimensionMismatch):
            fourier_encode(torch.zeros(2), fp)

    def test_output_length(self):
        fp = make_params(2, 7)
        assert fourier_encode(torch.zeros(2), fp).shape == (14,)
        assert fp.width == 14

    def test_deterministic_given_matrix(self, rng):
        fp = make_params(3, 8, seed=5)
        x = torch.tensor(rng.normal(size=3))
        assert torch.equal(fourier_encode(x, fp), fourier_encode(x, fp))

    def test_distinct_frames_distinct_codes(self):
        fs = make_set()
        a = fourier_encode(fs.normalize_frame(0).squeeze(0), fs.frame)
        b = fourier_encode(fs.normalize_frame(1).squeeze(0), fs.frame)
        assert not torch.allclose(a, b)


class TestComposePositions:
    def test_zero_coord_zero_frame(self):
        fs = make_set(bbox_min=(0, 0, 0), bbox_max=(1, 1, 1))
        pos_t, pos_s, pos_v = compose_positions(
            torch.zeros(3), 0, 0, 0, fs)
        half = fs.coord.d_out
        # both summands encode zero input: cos parts 1+1, sin parts 0+0
        assert torch.equal(pos_t[:half], 2 * torch.ones(half, dtype=torch.float64))
        assert torch.equal(pos_t[half:], torch.zeros(half, dtype=torch.float64))

    def test_frame_changes_only_pos_t(self, rng):
        fs = make_set()
        j = torch.tensor(rng.normal(size=3))
        t0 = compose_positions(j, 0, 2, 1, fs)
        t1 = compose_positions(j, 3, 2, 1, fs)
        assert not torch.allclose(t0[0], t1[0])
        assert torch.equal(t0[1], t1[1])
        assert torch.equal(t0[2], t1[2])

    def test_compositional_oracle(self, rng):
        fs = make_set(seed=9)
        j = torch.tensor(rng.normal(size=3))
        n, i, v = 2, 4, 1
        pos_t, pos_s, pos_v = compose_positions(j, n, i, v, fs)
        enc_j = fourier_encode(fs.normalize_coords(j), fs.coord)
        assert torch.allclose(
            pos_t, enc_j + fourier_encode(fs.normalize_frame(n).squeeze(0),
                                          fs.frame))
        assert torch.allclose(
            pos_s, enc_j + fourier_encode(fs.normalize_joint(i).squeeze(0),
                                          fs.joint_type))
        assert torch.allclose(
            pos_v, fourier_encode(fs.normalize_pair(v).squeeze(0),
                                  fs.view_pair))

    def test_bounds(self, rng):
        fs = make_set(seed=4)
        for _ in range(10):
            j = torch.tensor(rng.normal(size=3))
            pos_t, pos_s, pos_v = compose_positions(
                j, int(rng.integers(4)), int(rng.integers(5)),
                int(rng.integers(3)), fs)
            assert pos_t.abs().max() <= 2.0
            assert pos_s.abs().max() <= 2.0
            assert pos_v.abs().max() <= 1.0


class TestProjectTokens:
    def test_zero_weights_zero_tokens(self, rng):
        lin = torch.nn.Linear(3, 8, dtype=torch.float64)
        with torch.no_grad():
            lin.weight.zero_()
            lin.bias.zero_()
        data = torch.tensor(rng.normal(size=(2, 3, 4, 5, 3)))
        mask = torch.ones((2, 3, 4, 5), dtype=torch.bool)
        tokens = project_tokens(data, mask, lin)
        assert torch.equal(tokens.values,
                           torch.zeros(2, 3, 4, 5, 8, dtype=torch.float64))

    def test_masked_candidates_stay_zero(self, rng):
        lin = torch.nn.Linear(3, 8, dtype=torch.float64)
        data = torch.zeros((1, 2, 2, 2, 3), dtype=torch.float64)
        mask = torch.zeros((1, 2, 2, 2), dtype=torch.bool)
        mask[0, 0, 0, 0] = True
        tokens = project_tokens(data, mask, lin)
        assert torch.equal(tokens.mask, mask)
        assert torch.all(tokens.values[~mask] == 0)

    def test_matches_matmul_oracle(self, rng):
        lin = torch.nn.Linear(3, 6, dtype=torch.float64)
        data = torch.tensor(rng.normal(size=(4, 5, 3)))
        mask = torch.tensor(rng.random((4, 5)) > 0.5)
        tokens = project_tokens(data, mask, lin)
        W = lin.weight.detach().numpy()
        b = lin.bias.detach().numpy()
        expected = (data.numpy() @ W.T + b) * mask.numpy()[..., None]
        assert np.allclose(tokens.values.detach().numpy(), expected, atol=1e-12)

    def test_dimension_mismatch(self):
        lin = torch.nn.Linear(4, 8, dtype=torch.float64)
        with pytest.raises(DimensionMismatch):
            project_tokens(torch.zeros(2, 3), torch.ones(2, dtype=torch.bool),
                           lin)


def test_token_tensor_shape_check():
    with pytest.raises(ValueError):
        TokenTensor(values=torch.zeros(2, 3, 8),
                    mask=torch.zeros(3, 2, dtype=torch.bool))
