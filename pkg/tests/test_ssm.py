#!/usr/bin/env python3
"""
Tests for the selective scan, the Mamba mixer and the VisionMamba block
"""
import numpy as np
import pytest

from models import ssm
from models.ssm import MambaMixer, SSMParams, VisionMambaBlock, discretize, selective_scan, selective_scan_kernel
from nn import functional as F
from nn.gradcheck import check_gradients
from nn.tensor import GradTape, Tensor, default_dtype, no_grad, set_debug_numerics
from utils.errors import DimensionError, NumericError


def dense_scan_oracle(u, delta, A, B, C, D):
    """Materialize the lower-triangular kernel K[t, s] per (batch, channel) and apply it."""
    batch, length, channels = u.shape
    y = np.zeros_like(u)
    for b in range(batch):
        for d in range(channels):
            kernel = np.zeros((length, length))
            for t in range(length):
                for s in range(t + 1):
                    decay = np.exp(delta[b, s + 1:t + 1, d].sum() * A[d])
                    kernel[t, s] = np.sum(C[b, t] * decay * delta[b, s, d] * B[b, s])
            y[b, :, d] = kernel @ u[b, :, d] + D[d] * u[b, :, d]
    return y


def random_scan_inputs(rng, batch, length, channels, state):
    u = rng.normal(size=(batch, length, channels))
    delta = np.logaddexp(0.0, rng.normal(-1.0, 1.0, size=(batch, length, channels)))
    A = -rng.uniform(0.1, 3.0, size=(channels, state))
    B = rng.normal(size=(batch, length, state))
    C = rng.normal(size=(batch, length, state))
    D = rng.normal(size=channels)
    return u, delta, A, B, C, D


def run_kernel(arrays, mode='sequential', chunk=16, requires_grad=False):
    tensors = [Tensor(a, requires_grad=requires_grad) for a in arrays]
    return selective_scan_kernel(*tensors, mode=mode, chunk=chunk), tensors


class TestSelectiveScanKernel:
    """Recurrence h_t = exp(delta A) h_{t-1} + delta B u, y = C h + D u"""

    @pytest.fixture(autouse=True)
    def float64(self):
        with default_dtype(np.float64):
            yield

    def test_matches_dense_kernel_oracle(self):
        rng = np.random.default_rng(2024)
        for _ in range(120):
            shape = (int(rng.integers(1, 3)), int(rng.integers(1, 17)), int(rng.integers(1, 5)),
                     int(rng.integers(1, 5)))
            arrays = random_scan_inputs(rng, *shape)
            out, _ = run_kernel(arrays)
            np.testing.assert_allclose(out.data, dense_scan_oracle(*arrays), atol=1e-10, rtol=0)

    @pytest.mark.parametrize('chunk', [1, 3, 5, 16])
    def test_chunked_matches_sequential(self, rng, chunk):
        arrays = random_scan_inputs(rng, 2, 13, 4, 3)
        sequential, _ = run_kernel(arrays)
        chunked, _ = run_kernel(arrays, mode='chunked', chunk=chunk)
        np.testing.assert_allclose(chunked.data, sequential.data, atol=1e-10, rtol=0)

    def test_chunked_falls_back_to_sequential_when_tracking(self, rng):
        arrays = random_scan_inputs(rng, 1, 6, 2, 2)
        with GradTape() as tape:
            out, tensors = run_kernel(arrays, mode='chunked', chunk=2, requires_grad=True)
            loss = F.sum_all(out)
        tape.backward(loss)
        np.testing.assert_allclose(out.data, dense_scan_oracle(*arrays), atol=1e-10)
        assert all(t.grad is not None for t in tensors)

    def test_gradients(self, rng):
        arrays = random_scan_inputs(rng, 2, 5, 3, 2)
        tensors = dict(zip(('u', 'delta', 'A', 'B', 'C', 'D'), (Tensor(a, requires_grad=True) for a in arrays)))
        weights = rng.normal(size=(2, 5, 3))
        report = check_gradients(
            lambda: F.sum_all(F.mul(selective_scan_kernel(*tensors.values()), weights)), tensors, step=1e-5
        )
        assert max(row[4] for row in report) < 1e-4

    def test_zero_input_gives_zero_output(self, rng):
        u, delta, A, B, C, D = random_scan_inputs(rng, 1, 8, 3, 4)
        out, _ = run_kernel((np.zeros_like(u), delta, A, B, C, D))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_long_sequence_stays_bounded(self, rng):
        u, delta, A, B, C, D = random_scan_inputs(rng, 1, 1000, 2, 4)
        u = np.ones_like(u)
        decay = discretize(delta, A)
        assert np.all((decay > 0) & (decay < 1))
        out, _ = run_kernel((u, delta, A, B, C, D))
        assert np.all(np.isfinite(out.data))
        # steady-state bound |h| <= max|delta B u| / (1 - max decay)
        bound = np.abs(delta).max() * np.abs(B).max() / (1.0 - decay.max())
        assert np.abs(out.data).max() <= np.abs(C).max() * bound * A.shape[1] + np.abs(D).max() + 1e-9

    def test_shape_mismatch(self, rng):
        u, delta, A, B, C, D = random_scan_inputs(rng, 1, 4, 2, 3)
        with pytest.raises(DimensionError):
            run_kernel((u, delta, A, B[:, :, :2], C, D))

    def test_debug_numerics_reports_token(self, rng):
        u, delta, A, B, C, D = random_scan_inputs(rng, 1, 6, 2, 2)
        u[0, 3, 1] = np.inf
        set_debug_numerics(True)
        try:
            with pytest.raises(NumericError) as info:
                run_kernel((u, delta, A, B, C, D))
        finally:
            set_debug_numerics(False)
        assert info.value.token_index == 3


class TestSSMParams:
    """Initialization of the per-block state-space parameters"""

    def test_state_matrix_is_negative_s4d_real(self, rng):
        params = SSMParams(32, 16, 2, rng)
        A = params.state_matrix().data
        assert A.shape == (32, 16)
        np.testing.assert_allclose(A[0], -np.arange(1, 17), rtol=1e-6)
        assert np.all(A < 0)

    def test_initial_step_sizes_in_range(self, rng):
        params = SSMParams(8, 4, 2, rng, dt_min=1e-3, dt_max=1e-1)
        delta, b_t, c_t = params.step_sizes(Tensor(np.zeros((1, 5, 8))))
        assert delta.shape == (1, 5, 8) and b_t.shape == (1, 5, 4) and c_t.shape == (1, 5, 4)
        assert np.all(delta.data >= 1e-3 * 0.999) and np.all(delta.data <= 1e-1 * 1.001)

    def test_state_parameters_skip_weight_decay(self, rng):
        params = SSMParams(4, 2, 1, rng)
        assert not params.A_log.decay and not params.D_skip.decay
        assert params.x_proj.weight.decay and params.x_proj.bias is None

    def test_delta_override(self, rng):
        params = SSMParams(3, 2, 1, rng)
        x = Tensor(rng.normal(size=(1, 4, 3)))
        out = selective_scan(x, params, delta_override=0.5)
        assert out.shape == (1, 4, 3)

    def test_wrong_width(self, rng):
        with pytest.raises(DimensionError):
            selective_scan(Tensor(np.zeros((1, 4, 5))), SSMParams(3, 2, 1, rng))


class TestMambaBlock:
    """Mixer causality and the residual wrapper"""

    def test_mixer_shapes(self, rng):
        mixer = MambaMixer(32, 32, 16, 2, 4, rng)
        assert mixer(Tensor(rng.normal(size=(1, 64, 32)))).shape == (1, 64, 32)

    def test_mixer_is_causal(self, rng):
        mixer = MambaMixer(8, 8, 4, 1, 4, rng)
        x = rng.normal(size=(1, 12, 8))
        base = mixer(Tensor(x)).data
        changed = x.copy()
        changed[:, 7:] += 5.0
        out = mixer(Tensor(changed)).data
        np.testing.assert_allclose(out[:, :7], base[:, :7], atol=1e-6)
        assert not np.allclose(out[:, 7:], base[:, 7:])

    def test_residual_identity_when_output_projection_is_zero(self, rng):
        block = VisionMambaBlock(8, 8, 4, 1, 4, rng)
        block.mixer.out_proj.weight.data[:] = 0.0
        block.mixer.out_proj.bias.data[:] = 0.0
        x = Tensor(rng.normal(size=(2, 10, 8)))
        np.testing.assert_array_equal(block(x).data, x.data)

    def test_chunked_mixer_matches_sequential(self, rng, monkeypatch):
        calls = []
        chunked_forward = ssm._chunked_forward

        def counting_forward(*args):
            calls.append(args[-1])
            return chunked_forward(*args)

        monkeypatch.setattr(ssm, '_chunked_forward', counting_forward)
        sequential = MambaMixer(8, 8, 4, 1, 4, np.random.default_rng(5))
        chunked = MambaMixer(8, 8, 4, 1, 4, np.random.default_rng(5), scan_mode='chunked', scan_chunk=4).eval()
        x = Tensor(rng.normal(size=(2, 18, 8)))
        with no_grad():
            expected = sequential(x).data
            assert calls == []
            out = chunked(x).data
        assert calls == [4]
        np.testing.assert_allclose(out, expected, atol=1e-5)

    def test_chunked_mixer_uses_sequential_scan_on_a_tape(self, rng, monkeypatch):
        monkeypatch.setattr(ssm, '_chunked_forward', lambda *args: pytest.fail('chunked scan ran while recording'))
        mixer = MambaMixer(8, 8, 4, 1, 4, rng, scan_mode='chunked', scan_chunk=4)
        with GradTape() as tape:
            loss = F.sum_all(mixer(Tensor(rng.normal(size=(1, 9, 8)))))
        tape.backward(loss)
        assert np.any(mixer.out_proj.weight.grad != 0)

    def test_block_gradients(self):
        with default_dtype(np.float64):
            rng = np.random.default_rng(11)
            block = VisionMambaBlock(4, 4, 2, 1, 3, rng)
            x = Tensor(rng.normal(size=(2, 5, 4)), requires_grad=True)
            weights = rng.normal(size=(2, 5, 4))
            tensors = {'x': x}
            tensors.update(dict(block.named_parameters()))
            report = check_gradients(lambda: F.sum_all(F.mul(block(x), weights)), tensors, step=1e-5)
        assert max(row[4] for row in report) < 1e-4
